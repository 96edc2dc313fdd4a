#include "mtsstrat/transform.hpp"

#include <gtest/gtest.h>

using namespace mtsstrat;
namespace fs = std::filesystem;

namespace {

Matrix random_matrix(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    Rng rng(seed);
    Matrix X(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            X(i, j) = rng.normal() * (1.0 + j);
        }
    }
    return X;
}

// Columns equal up to a per-column sign.
double signed_column_gap(const Matrix& A, const Matrix& B) {
    double worst = 0.0;
    for (Eigen::Index c = 0; c < A.cols(); ++c) {
        const double plus = (A.col(c) - B.col(c)).cwiseAbs().maxCoeff();
        const double minus = (A.col(c) + B.col(c)).cwiseAbs().maxCoeff();
        worst = std::max(worst, std::min(plus, minus));
    }
    return worst;
}

} // namespace

TEST(Kernels, DistanceKernelsEntrywise) {
    DistanceMatrix D;
    D.values = Matrix(2, 2);
    D.values << 0.0, 2.0, 2.0, 0.0;
    const auto e = distance_kernel(D, KernelKind::Exponential, 0.5);
    EXPECT_DOUBLE_EQ(e.values(0, 1), std::exp(-1.0));
    EXPECT_DOUBLE_EQ(e.values(0, 0), 1.0);
    const auto r = distance_kernel(D, KernelKind::Rbf, 0.5);
    EXPECT_DOUBLE_EQ(r.values(1, 0), std::exp(-2.0));
    EXPECT_THROW(distance_kernel(D, KernelKind::Linear, 1.0), ConfigError);
    EXPECT_THROW(distance_kernel(D, KernelKind::Exponential, 0.0), ConfigError);
    D.values(0, 1) = -1.0;
    EXPECT_THROW(distance_kernel(D, KernelKind::Exponential, 1.0), DataError);
}

TEST(Kernels, VectorKernelsMatchDoubleLoop) {
    const Matrix A = random_matrix(5, 3, 1), B = random_matrix(4, 3, 2);
    for (auto kind : {KernelKind::Linear, KernelKind::Exponential, KernelKind::Rbf}) {
        const Matrix K = kernel_matrix(A, B, {kind, 0.3});
        for (Eigen::Index i = 0; i < 5; ++i) {
            for (Eigen::Index j = 0; j < 4; ++j) {
                const double dot = A.row(i).dot(B.row(j));
                const double dist = (A.row(i) - B.row(j)).norm();
                const double ref = kind == KernelKind::Linear        ? dot
                                   : kind == KernelKind::Exponential ? std::exp(-0.3 * dist)
                                                                     : std::exp(-0.3 * dist * dist);
                EXPECT_NEAR(K(i, j), ref, 1e-12) << to_string(kind);
            }
        }
    }
    EXPECT_EQ(parse_kernel_kind("exp"), KernelKind::Exponential);
    EXPECT_THROW(parse_kernel_kind("poly"), ConfigError);
}

TEST(Kernels, PsdClipRemovesNegativeSpectrum) {
    Matrix K(3, 3);
    K << 1, 0.9, -0.9, 0.9, 1, 0.9, -0.9, 0.9, 1;
    ASSERT_LT(symmetric_eigen(K).eigenvalues().minCoeff(), 0.0);
    bool clipped = false;
    const auto before = log::warning_count();
    const Matrix P = clip_to_psd(K, &clipped);
    EXPECT_TRUE(clipped);
    EXPECT_GT(log::warning_count(), before);
    EXPECT_GE(symmetric_eigen(P).eigenvalues().minCoeff(), -1e-12);
    EXPECT_TRUE(P.isApprox(P.transpose()));
    const Matrix I = Matrix::Identity(3, 3);
    clipped = true;
    EXPECT_TRUE(clip_to_psd(I, &clipped).isApprox(I));
    EXPECT_FALSE(clipped);
}

TEST(Pca, MatchesDirectEigenSolve) {
    const Matrix X = random_matrix(40, 4, 3);
    const auto m = pca_fit(X, 1.0);
    ASSERT_EQ(m.components.rows(), 4);
    const Matrix Xc = X.rowwise() - X.colwise().mean();
    const Matrix cov = Xc.transpose() * Xc / 39.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    for (int k = 0; k < 4; ++k) {
        EXPECT_NEAR(m.explained_variance(k), es.eigenvalues()(3 - k), 1e-10);
        const double align = std::abs(m.components.row(k).dot(es.eigenvectors().col(3 - k)));
        EXPECT_NEAR(align, 1.0, 1e-8);
    }
    EXPECT_NEAR(m.explained_variance_ratio.sum(), 1.0, 1e-12);
    const Matrix Z = pca_transform(m, X);
    EXPECT_NEAR((pca_reconstruct(m, Z) - X).cwiseAbs().maxCoeff(), 0.0, 1e-10);
}

TEST(Pca, VarianceTargetPicksSmallestRank) {
    const Matrix X = random_matrix(60, 5, 4);
    const auto full = pca_fit(X, 1.0);
    for (double target : {0.5, 0.9, 0.99}) {
        const auto m = pca_fit(X, target);
        const auto r = m.components.rows();
        EXPECT_GE(full.explained_variance_ratio.head(r).sum(), target - 1e-12);
        if (r > 1) {
            EXPECT_LT(full.explained_variance_ratio.head(r - 1).sum(), target);
        }
    }
    EXPECT_THROW(pca_fit(X, 0.0), ConfigError);
}

TEST(Kpca, LinearKernelReproducesPcaScores) {
    const Matrix X = random_matrix(30, 3, 5);
    const auto pca = pca_fit(X, 1.0);
    const auto kp = kpca_fit(X, {KernelKind::Linear, 1.0}, 3);
    EXPECT_LT(signed_column_gap(kp.train_projection, pca_transform(pca, X)), 1e-8);
    const Matrix Y = random_matrix(7, 3, 6);
    EXPECT_LT(signed_column_gap(kpca_transform(kp, Y), pca_transform(pca, Y)), 1e-8);
    EXPECT_NEAR(kp.relative_reconstruction_error, 0.0, 1e-10);
}

TEST(Kpca, TransformOfTrainingDataMatchesProjection) {
    const Matrix X = random_matrix(25, 3, 8);
    const auto kp = kpca_fit(X, {KernelKind::Rbf, 0.2}, 5);
    EXPECT_NEAR((kpca_transform(kp, X) - kp.train_projection).cwiseAbs().maxCoeff(), 0.0, 1e-9);
    EXPECT_THROW(kpca_fit(X, {KernelKind::Rbf, 0.2}, 26), ConfigError);
}

TEST(Kpca, ErrorShrinksWithRankAndSelectionMinimizes) {
    const Matrix X = random_matrix(30, 4, 9);
    double prev = 2.0;
    for (Eigen::Index r : {1, 3, 6, 12}) {
        const double e = kpca_fit(X, {KernelKind::Rbf, 0.1}, r).relative_reconstruction_error;
        EXPECT_LE(e, prev + 1e-15);
        prev = e;
    }
    const auto sel = kpca_select(X, {KernelKind::Rbf, KernelKind::Exponential}, {0.01, 0.1, 1.0}, {2, 5});
    for (auto kind : {KernelKind::Rbf, KernelKind::Exponential}) {
        for (double g : {0.01, 0.1, 1.0}) {
            for (Eigen::Index r : {2, 5}) {
                EXPECT_LE(sel.error, kpca_fit(X, {kind, g}, r).relative_reconstruction_error + 1e-15);
            }
        }
    }
}

TEST(Representation, CsvRoundTrip) {
    RepresentationSet rep;
    rep.ids = {"a", "b", "c"};
    rep.vectors = random_matrix(3, 4, 10);
    rep.labels = {0, 1, 1};
    const auto dir = fs::temp_directory_path() / "mtsstrat_rep";
    fs::create_directories(dir);
    save_representation(rep, dir / "rep.csv");
    const auto back = load_representation(dir / "rep.csv");
    EXPECT_EQ(back.ids, rep.ids);
    EXPECT_EQ(back.labels, rep.labels);
    EXPECT_EQ((back.vectors - rep.vectors).cwiseAbs().maxCoeff(), 0.0);
}
