#ifndef MTSSTRAT_TRANSFORM_HPP
#define MTSSTRAT_TRANSFORM_HPP

#include "matrix_io.hpp"

#include <unordered_map>

namespace mtsstrat {

enum class KernelKind { Linear, Exponential, Rbf };

inline std::string to_string(KernelKind k) {
    switch (k) {
    case KernelKind::Linear:
        return "linear";
    case KernelKind::Exponential:
        return "exp";
    case KernelKind::Rbf:
        return "rbf";
    }
    return "linear";
}

inline KernelKind parse_kernel_kind(std::string_view s) {
    if (s == "linear") {
        return KernelKind::Linear;
    }
    if (s == "exp" || s == "exponential") {
        return KernelKind::Exponential;
    }
    if (s == "rbf") {
        return KernelKind::Rbf;
    }
    throw ConfigError("unknown kernel '" + std::string(s) + "'");
}

/// exp(-gamma * d) entrywise.
inline SimilarityMatrix exp_kernel(const DistanceMatrix& D, double gamma) {
    if (!(gamma > 0.0)) {
        throw ConfigError("exp_kernel: gamma must be positive");
    }
    if ((D.values.array() < 0.0).any()) {
        throw DataError("exp_kernel: negative distance");
    }
    SimilarityMatrix S;
    S.values = (-gamma * D.values.array()).exp().matrix();
    S.row_ids = D.row_ids;
    S.col_ids = D.col_ids;
    S.provenance = {{"kind", "similarity"}, {"kernel", "exp"}, {"gamma", gamma}, {"source", D.provenance}};
    return S;
}

/// exp(-gamma * d^2) entrywise.
inline SimilarityMatrix rbf_kernel(const DistanceMatrix& D, double gamma) {
    if (!(gamma > 0.0)) {
        throw ConfigError("rbf_kernel: gamma must be positive");
    }
    if ((D.values.array() < 0.0).any()) {
        throw DataError("rbf_kernel: negative distance");
    }
    SimilarityMatrix S;
    S.values = (-gamma * D.values.array().square()).exp().matrix();
    S.row_ids = D.row_ids;
    S.col_ids = D.col_ids;
    S.provenance = {{"kind", "similarity"}, {"kernel", "rbf"}, {"gamma", gamma}, {"source", D.provenance}};
    return S;
}

inline SimilarityMatrix distance_kernel(const DistanceMatrix& D, KernelKind kind, double gamma) {
    switch (kind) {
    case KernelKind::Exponential:
        return exp_kernel(D, gamma);
    case KernelKind::Rbf:
        return rbf_kernel(D, gamma);
    case KernelKind::Linear:
        break;
    }
    throw ConfigError("distance_kernel: the linear kernel does not apply to distances");
}

/// Zeroes the negative part of the spectrum of a symmetric matrix.
inline Matrix clip_to_psd(const Matrix& K, bool* clipped = nullptr) {
    const Matrix sym = 0.5 * (K + K.transpose());
    const auto eig = symmetric_eigen(sym);
    const Vector lambda = eig.eigenvalues();
    const double trace = std::max(std::abs(sym.trace()), 1e-300);
    const bool negative = lambda.minCoeff() < -1e-12 * trace;
    if (clipped) {
        *clipped = negative;
    }
    if (!negative) {
        return sym;
    }
    log::warn("kernel is indefinite (min eigenvalue " + format_double(lambda.minCoeff()) + "); clipping spectrum");
    const Matrix& V = eig.eigenvectors();
    Matrix out = V * lambda.cwiseMax(0.0).asDiagonal() * V.transpose();
    return 0.5 * (out + out.transpose());
}

/// Per-record vectors with labels and the provenance of their source matrix.
struct RepresentationSet {
    std::vector<std::string> ids;
    Matrix vectors;
    std::vector<int> labels;
    std::string provenance;
};

/// Selects the anchor columns (in anchor order) of a records-by-reference
/// matrix; row i becomes the representation of record row_ids[i].
inline RepresentationSet anchor_representation(const LabeledMatrix& M, const std::vector<std::string>& anchors,
                                               const std::vector<int>& labels = {}) {
    std::unordered_map<std::string, Eigen::Index> col;
    for (std::size_t j = 0; j < M.col_ids.size(); ++j) {
        col.emplace(M.col_ids[j], static_cast<Eigen::Index>(j));
    }
    RepresentationSet rep;
    rep.ids = M.row_ids;
    rep.labels = labels;
    rep.vectors.resize(M.values.rows(), static_cast<Eigen::Index>(anchors.size()));
    for (std::size_t p = 0; p < anchors.size(); ++p) {
        auto it = col.find(anchors[p]);
        if (it == col.end()) {
            throw DataError("anchor_representation: anchor id '" + anchors[p] + "' not among matrix columns");
        }
        rep.vectors.col(static_cast<Eigen::Index>(p)) = M.values.col(it->second);
    }
    if (!rep.labels.empty() && rep.labels.size() != rep.ids.size()) {
        throw DataError("anchor_representation: labels do not align with rows");
    }
    if (!rep.vectors.allFinite()) {
        throw NumericError("anchor_representation: non-finite entries");
    }
    rep.provenance = M.provenance.is_object() && M.provenance.contains("method") ? M.provenance["method"].dump() : "";
    return rep;
}

/// Representation CSV: `id,v1..vP,label`.
inline void save_representation(const RepresentationSet& rep, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("write error: cannot open " + path.string());
    }
    out << "id";
    for (Eigen::Index j = 0; j < rep.vectors.cols(); ++j) {
        out << ",v" << (j + 1);
    }
    out << ",label\n";
    for (std::size_t i = 0; i < rep.ids.size(); ++i) {
        out << rep.ids[i];
        for (Eigen::Index j = 0; j < rep.vectors.cols(); ++j) {
            out << ',' << format_double(rep.vectors(static_cast<Eigen::Index>(i), j));
        }
        out << ',' << (rep.labels.empty() ? -1 : rep.labels[i]) << '\n';
    }
}

inline RepresentationSet load_representation(const std::filesystem::path& path) {
    const auto table = read_csv_table(path);
    if (table.header.size() < 2 || table.header.front() != "id" || table.header.back() != "label") {
        throw DataError(path.filename().string() + ": representation header must be id,v1..vP,label");
    }
    RepresentationSet rep;
    const auto P = static_cast<Eigen::Index>(table.header.size() - 2);
    rep.vectors.resize(static_cast<Eigen::Index>(table.rows.size()), P);
    bool any_label = false;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        rep.ids.push_back(row[0]);
        for (Eigen::Index j = 0; j < P; ++j) {
            double v;
            if (!parse_double(row[static_cast<std::size_t>(j) + 1], v)) {
                throw DataError(path.filename().string() + ": row " + std::to_string(i + 2) + " column " +
                                table.header[static_cast<std::size_t>(j) + 1] + ": not a number");
            }
            rep.vectors(static_cast<Eigen::Index>(i), j) = v;
        }
        double lab;
        if (!parse_double(row.back(), lab) || (lab != 0.0 && lab != 1.0 && lab != -1.0)) {
            throw DataError(path.filename().string() + ": row " + std::to_string(i + 2) + ": bad label");
        }
        rep.labels.push_back(static_cast<int>(lab));
        any_label = any_label || lab >= 0.0;
    }
    if (!any_label) {
        rep.labels.clear();
    }
    return rep;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
    Vector mean;
    Matrix components; // r x d, orthonormal rows
    Vector explained_variance;
    Vector explained_variance_ratio;
};

namespace detail {

/// Flips each eigenvector so its largest-magnitude entry is positive.
inline void canonical_signs(Matrix& vectors_as_columns) {
    for (Eigen::Index c = 0; c < vectors_as_columns.cols(); ++c) {
        Eigen::Index idx = 0;
        vectors_as_columns.col(c).cwiseAbs().maxCoeff(&idx);
        if (vectors_as_columns(idx, c) < 0.0) {
            vectors_as_columns.col(c) *= -1.0;
        }
    }
}

} // namespace detail

/// Keeps the fewest components whose cumulative variance ratio reaches the target.
inline PcaModel pca_fit(const Matrix& X, double variance_target = 0.99) {
    if (X.rows() < 2) {
        throw DataError("pca: need at least 2 samples");
    }
    if (!(variance_target > 0.0 && variance_target <= 1.0)) {
        throw ConfigError("pca: variance_target must lie in (0, 1]");
    }
    PcaModel m;
    m.mean = X.colwise().mean().transpose();
    const Matrix Xc = X.rowwise() - m.mean.transpose();
    const Matrix cov = (Xc.transpose() * Xc) / static_cast<double>(X.rows() - 1);
    const auto eig = symmetric_eigen(cov);
    const Eigen::Index d = X.cols();
    Vector lambda = eig.eigenvalues().reverse().cwiseMax(0.0);
    Matrix V = eig.eigenvectors().rowwise().reverse();
    const double total = lambda.sum();
    if (!(total > 0.0) || lambda(0) <= 1e-12 * std::max(1.0, X.cwiseAbs().maxCoeff())) {
        throw DataError("pca: data has zero variance (r = 0)");
    }
    Eigen::Index r = 0;
    double cum = 0.0;
    while (r < d) {
        cum += lambda(r);
        ++r;
        if (cum / total >= variance_target - 1e-12) {
            break;
        }
    }
    Matrix Vr = V.leftCols(r);
    detail::canonical_signs(Vr);
    m.components = Vr.transpose();
    m.explained_variance = lambda.head(r);
    m.explained_variance_ratio = lambda.head(r) / total;
    return m;
}

inline Matrix pca_transform(const PcaModel& m, const Matrix& X) {
    if (X.cols() != m.mean.size()) {
        throw DataError("pca_transform: width mismatch");
    }
    return (X.rowwise() - m.mean.transpose()) * m.components.transpose();
}

inline Matrix pca_reconstruct(const PcaModel& m, const Matrix& Z) {
    if (Z.cols() != m.components.rows()) {
        throw DataError("pca_reconstruct: width mismatch");
    }
    return (Z * m.components).rowwise() + m.mean.transpose();
}

/// Mean squared entrywise difference.
inline double reconstruction_error(const Matrix& original, const Matrix& reconstructed) {
    if (original.rows() != reconstructed.rows() || original.cols() != reconstructed.cols()) {
        throw DataError("reconstruction_error: shape mismatch");
    }
    if (original.size() == 0) {
        return 0.0;
    }
    return (original - reconstructed).squaredNorm() / static_cast<double>(original.size());
}

// ---------------------------------------------------------------------------
// Kernel PCA

struct KernelSpec {
    KernelKind kind = KernelKind::Rbf;
    double gamma = 1.0;
};

/// Kernel between the rows of A and the rows of B.
inline Matrix kernel_matrix(const Matrix& A, const Matrix& B, const KernelSpec& spec) {
    if (A.cols() != B.cols()) {
        throw DataError("kernel_matrix: width mismatch");
    }
    const Matrix G = A * B.transpose();
    if (spec.kind == KernelKind::Linear) {
        return G;
    }
    if (!(spec.gamma > 0.0)) {
        throw ConfigError("kernel gamma must be positive");
    }
    const Vector a2 = A.rowwise().squaredNorm();
    const Vector b2 = B.rowwise().squaredNorm();
    Matrix sq = (-2.0 * G).colwise() + a2;
    sq.rowwise() += b2.transpose();
    sq = sq.cwiseMax(0.0);
    if (spec.kind == KernelKind::Rbf) {
        return (-spec.gamma * sq.array()).exp().matrix();
    }
    return (-spec.gamma * sq.array().sqrt()).exp().matrix();
}

struct KpcaModel {
    Matrix train_vectors;
    KernelSpec kernel;
    Matrix alphas;       // n x r, scaled so train projections have variance lambda / n
    Vector eigenvalues;  // r, of the centered train kernel
    Vector train_kernel_col_mean;
    double train_kernel_mean = 0.0;
    Matrix train_projection;
    double relative_reconstruction_error = 0.0;
};

namespace detail {

inline Matrix double_center(const Matrix& K) {
    const Vector col_mean = K.colwise().mean().transpose();
    const Vector row_mean = K.rowwise().mean();
    const double all = K.mean();
    Matrix Kc = K;
    Kc.colwise() -= row_mean;
    Kc.rowwise() -= col_mean.transpose();
    Kc.array() += all;
    return 0.5 * (Kc + Kc.transpose());
}

} // namespace detail

/// Kernel PCA on the doubly-centered train kernel. `r` is clamped (with a
/// warning) to the number of positive eigenvalues.
inline KpcaModel kpca_fit(const Matrix& X, const KernelSpec& spec, Eigen::Index r) {
    if (X.rows() < 2) {
        throw DataError("kpca: need at least 2 samples");
    }
    if (r < 1) {
        throw ConfigError("kpca: r must be at least 1");
    }
    if (r > X.rows()) {
        throw ConfigError("kpca: r exceeds the number of samples");
    }
    KpcaModel m;
    m.train_vectors = X;
    m.kernel = spec;
    const Matrix K = kernel_matrix(X, X, spec);
    m.train_kernel_col_mean = K.colwise().mean().transpose();
    m.train_kernel_mean = K.mean();
    const Matrix Kc = detail::double_center(K);
    const auto eig = symmetric_eigen(Kc);
    const Vector lambda = eig.eigenvalues().reverse();
    Matrix V = eig.eigenvectors().rowwise().reverse();
    const double tol = 1e-10 * std::max(1.0, std::abs(lambda(0)));
    Eigen::Index positive = 0;
    while (positive < lambda.size() && lambda(positive) > tol) {
        ++positive;
    }
    if (positive == 0) {
        throw NumericError("kpca: centered kernel has no positive eigenvalues");
    }
    if (r > positive) {
        log::warn("kpca: r=" + std::to_string(r) + " exceeds the " + std::to_string(positive) +
                  " positive eigenvalues; clamped");
        r = positive;
    }
    Matrix Vr = V.leftCols(r);
    detail::canonical_signs(Vr);
    m.eigenvalues = lambda.head(r);
    m.alphas = Vr * m.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal();
    m.train_projection = Kc * m.alphas;
    const double total = lambda.cwiseMax(0.0).squaredNorm();
    const double kept = m.eigenvalues.squaredNorm();
    m.relative_reconstruction_error = total > 0.0 ? std::max(0.0, 1.0 - kept / total) : 0.0;
    return m;
}

inline Matrix kpca_transform(const KpcaModel& m, const Matrix& Y) {
    if (Y.cols() != m.train_vectors.cols()) {
        throw DataError("kpca_transform: width mismatch");
    }
    Matrix Kt = kernel_matrix(Y, m.train_vectors, m.kernel);
    const Vector row_mean = Kt.rowwise().mean();
    Kt.rowwise() -= m.train_kernel_col_mean.transpose();
    Kt.colwise() -= row_mean;
    Kt.array() += m.train_kernel_mean;
    return Kt * m.alphas;
}

/// Relative error of the rank-r approximation of the centered train kernel:
/// ||Kc - V_r L_r V_r^T||_F^2 / ||Kc||_F^2. Scale-free, so it compares across gamma.
inline double kpca_kernel_reconstruction_error(const KpcaModel& m) { return m.relative_reconstruction_error; }

struct KpcaSelection {
    KernelSpec kernel;
    Eigen::Index r = 0;
    double error = 0.0;
};

/// Grid search over kernel kind x gamma x r minimizing the relative kernel
/// reconstruction error. Ties keep the earliest grid point.
inline KpcaSelection kpca_select(const Matrix& X, const std::vector<KernelKind>& kinds,
                                 const std::vector<double>& gammas, const std::vector<Eigen::Index>& ranks) {
    if (kinds.empty() || gammas.empty() || ranks.empty()) {
        throw ConfigError("kpca_select: empty grid");
    }
    KpcaSelection best;
    best.error = std::numeric_limits<double>::infinity();
    for (auto kind : kinds) {
        for (double g : gammas) {
            for (auto r : ranks) {
                const auto rr = std::min<Eigen::Index>(r, X.rows());
                KpcaModel m;
                try {
                    m = kpca_fit(X, {kind, g}, rr);
                } catch (const NumericError&) {
                    continue;
                }
                const double err = kpca_kernel_reconstruction_error(m);
                if (err < best.error) {
                    best = {{kind, g}, m.alphas.cols(), err};
                }
            }
        }
    }
    if (!std::isfinite(best.error)) {
        throw NumericError("kpca_select: no grid point produced a usable kernel");
    }
    return best;
}

inline nlohmann::json pca_model_to_json(const PcaModel& m) {
    return {{"format", "mts-pca-model"},
            {"version", 1},
            {"mean", vector_to_json(m.mean)},
            {"components", matrix_to_json(m.components)},
            {"explained_variance", vector_to_json(m.explained_variance)},
            {"explained_variance_ratio", vector_to_json(m.explained_variance_ratio)}};
}

inline nlohmann::json kpca_model_to_json(const KpcaModel& m) {
    return {{"format", "mts-kpca-model"},
            {"version", 1},
            {"kernel", {{"kind", to_string(m.kernel.kind)}, {"gamma", m.kernel.gamma}}},
            {"train_vectors", matrix_to_json(m.train_vectors)},
            {"alphas", matrix_to_json(m.alphas)},
            {"eigenvalues", vector_to_json(m.eigenvalues)},
            {"train_kernel_col_mean", vector_to_json(m.train_kernel_col_mean)},
            {"train_kernel_mean", m.train_kernel_mean},
            {"relative_reconstruction_error", m.relative_reconstruction_error}};
}

} // namespace mtsstrat

#endif
