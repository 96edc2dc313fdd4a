#include "mtsstrat/dtw.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace mtsstrat;

namespace {

LocalDistanceSpec gower_for(const Dataset& ds) { return gower_spec_from(ds); }

} // namespace

TEST(Dtw, PathCountMatchesDelannoy) {
    // Central Delannoy numbers: 1, 3, 13, 63.
    EXPECT_EQ(oracle::all_paths(1, 1).size(), 1u);
    EXPECT_EQ(oracle::all_paths(2, 2).size(), 3u);
    EXPECT_EQ(oracle::all_paths(3, 3).size(), 13u);
    EXPECT_EQ(oracle::all_paths(4, 4).size(), 63u);
}

TEST(Dtw, ScalarMatchesEnumeration) {
    Rng rng(3);
    for (int rep = 0; rep < 100; ++rep) {
        const int T = 1 + static_cast<int>(rng.index(4));
        Vector a(T), b(T);
        for (int t = 0; t < T; ++t) {
            a(t) = rng.uniform(-1, 1);
            b(t) = rng.uniform(-1, 1);
        }
        const double ref = oracle::brute_dtw(T, T, [&](int i, int j) { return std::fabs(a(i) - b(j)); });
        EXPECT_NEAR(dtw_1d(a, b, abs_diff), ref, 1e-10);
    }
}

TEST(Dtw, IdenticalSeriesHaveZeroDistance) {
    Vector a(5);
    a << 1, 3, 2, 2, 0;
    EXPECT_EQ(dtw_1d(a, a, abs_diff), 0.0);
}

TEST(Dtw, ShiftedStepAbsorbsWarp) {
    Vector a(4), b(4);
    a << 0, 1, 1, 1;
    b << 0, 0, 1, 1;
    EXPECT_EQ(dtw_1d(a, b, abs_diff), 0.0);
}

TEST(Dtw, LengthMismatchIsShapeError) {
    Vector a(3), b(4);
    a.setZero();
    b.setZero();
    EXPECT_THROW(dtw_1d(a, b, abs_diff), DataError);
}

TEST(Dtw, MultivariateMatchesEnumerationAllLocalDistances) {
    for (int rep = 0; rep < 60; ++rep) {
        const Eigen::Index F = 1 + rep % 3, T = 1 + (rep / 3) % 4;
        const auto ds = oracle::random_mixed_dataset(6, F, T, 100 + rep);
        const auto g = gower_for(ds);
        const auto& X1 = ds.records[0].values;
        const auto& X2 = ds.records[1].values;
        auto local = [&](int i, int j, LocalDistanceKind kind) {
            double s = 0.0;
            for (Eigen::Index f = 0; f < F; ++f) {
                const double d = X1(f, i) - X2(f, j);
                if (kind == LocalDistanceKind::AbsDiff) {
                    s += std::fabs(d);
                } else if (kind == LocalDistanceKind::Euclidean) {
                    s += d * d;
                } else {
                    s += oracle::gower_scalar(X1(f, i), X2(f, j), g.feature_kinds[f], g.ranges[f]);
                }
            }
            if (kind == LocalDistanceKind::Euclidean) {
                return std::sqrt(s);
            }
            return kind == LocalDistanceKind::Gower ? s / static_cast<double>(F) : s;
        };
        for (auto kind : {LocalDistanceKind::AbsDiff, LocalDistanceKind::Euclidean, LocalDistanceKind::Gower}) {
            const LocalDistanceSpec spec = kind == LocalDistanceKind::Gower ? g : LocalDistanceSpec{kind, {}, {}};
            const double ref = oracle::brute_dtw(static_cast<int>(T), static_cast<int>(T),
                                                 [&](int i, int j) { return local(i, j, kind); });
            EXPECT_NEAR(dtw_dependent(X1, X2, spec), ref, 1e-10) << to_string(kind);
        }
        double ref_i = 0.0;
        for (Eigen::Index f = 0; f < F; ++f) {
            ref_i += oracle::brute_dtw(static_cast<int>(T), static_cast<int>(T), [&](int i, int j) {
                return oracle::gower_scalar(X1(f, i), X2(f, j), g.feature_kinds[f], g.ranges[f]);
            });
        }
        EXPECT_NEAR(dtw_independent(X1, X2, g), ref_i, 1e-10);
    }
}

TEST(Dtw, SingleFeatureVariantsAgree) {
    const auto ds = oracle::random_mixed_dataset(2, 1, 4, 9, true);
    const auto spec = LocalDistanceSpec::abs_diff();
    EXPECT_NEAR(dtw_dependent(ds.records[0].values, ds.records[1].values, spec),
                dtw_independent(ds.records[0].values, ds.records[1].values, spec), 1e-12);
}

TEST(Dtw, GowerLocalDistanceInUnitInterval) {
    const auto ds = oracle::random_mixed_dataset(10, 5, 3, 21);
    const auto g = gower_for(ds);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (Eigen::Index t = 0; t < 3; ++t) {
            const double d = gower_distance(ds.records[0].values.col(t), ds.records[i].values.col(t), g);
            EXPECT_GE(d, 0.0);
            EXPECT_LE(d, 1.0);
        }
    }
}

TEST(Dtw, GowerZeroRangeWarnsAndUsesOne) {
    Dataset ds;
    ds.T = 2;
    ds.feature_names = {"c"};
    ds.kinds = {FeatureKind::Numeric};
    for (int i = 0; i < 3; ++i) {
        Matrix v = Matrix::Constant(1, 2, 4.0);
        ds.records.push_back(make_record("r" + std::to_string(i), v, i % 2));
    }
    const auto before = log::warning_count();
    const auto g = gower_spec_from(ds);
    EXPECT_GT(log::warning_count(), before);
    EXPECT_EQ(g.ranges[0], 1.0);
}

TEST(Dtw, PairwiseMatrixSymmetricZeroDiagonal) {
    const auto ds = oracle::random_mixed_dataset(8, 3, 4, 5);
    const auto g = gower_for(ds);
    for (auto v : {DtwVariant::Dependent, DtwVariant::Independent}) {
        const auto D = pairwise_distance_matrix(ds, v, g, 3);
        ASSERT_EQ(D.values.rows(), 8);
        EXPECT_TRUE(D.values.isApprox(D.values.transpose(), 0.0));
        EXPECT_EQ(D.values.diagonal().cwiseAbs().maxCoeff(), 0.0);
        for (int i = 0; i < 8; ++i) {
            for (int j = 0; j < 8; ++j) {
                EXPECT_DOUBLE_EQ(D.values(i, j), dtw_distance(ds.records[i].values, ds.records[j].values, v, g));
            }
        }
        EXPECT_EQ(D.row_ids, ds.ids());
    }
}

TEST(Dtw, WorkerCountDoesNotChangeMatrix) {
    const auto ds = oracle::random_mixed_dataset(12, 4, 5, 8);
    const auto g = gower_for(ds);
    const auto a = pairwise_distance_matrix(ds, DtwVariant::Dependent, g, 1);
    const auto b = pairwise_distance_matrix(ds, DtwVariant::Dependent, g, 4);
    EXPECT_TRUE((a.values.array() == b.values.array()).all());
}

TEST(Dtw, CrossMatrixMatchesPairwise) {
    const auto ds = oracle::random_mixed_dataset(6, 2, 4, 31);
    const auto g = gower_for(ds);
    const auto P = pairwise_distance_matrix(ds, DtwVariant::Independent, g);
    const auto C = cross_distance_matrix(ds, ds, DtwVariant::Independent, g);
    EXPECT_TRUE(P.values.isApprox(C.values, 1e-14));
}

TEST(Dtw, UnobservedCellsRejectedWithPairContext) {
    auto ds = oracle::random_mixed_dataset(3, 2, 3, 4);
    ds.records[1].mask(0, 1) = false;
    ds.records[1].values(0, 1) = 0.0;
    try {
        pairwise_distance_matrix(ds, DtwVariant::Dependent, LocalDistanceSpec::euclidean());
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("r1"), std::string::npos) << e.what();
    }
}
