#ifndef MTSSTRAT_DTW_HPP
#define MTSSTRAT_DTW_HPP

#include "dataset.hpp"
#include "matrix_io.hpp"

namespace mtsstrat {

enum class LocalDistanceKind { AbsDiff, Euclidean, Gower };

enum class DtwVariant { Dependent, Independent };

inline std::string to_string(LocalDistanceKind k) {
    switch (k) {
    case LocalDistanceKind::AbsDiff:
        return "absdiff";
    case LocalDistanceKind::Euclidean:
        return "euclidean";
    case LocalDistanceKind::Gower:
        return "gower";
    }
    return "gower";
}

inline LocalDistanceKind parse_local_distance(std::string_view s) {
    if (s == "absdiff") {
        return LocalDistanceKind::AbsDiff;
    }
    if (s == "euclidean") {
        return LocalDistanceKind::Euclidean;
    }
    if (s == "gower") {
        return LocalDistanceKind::Gower;
    }
    throw ConfigError("unknown local distance '" + std::string(s) + "'");
}

inline std::string to_string(DtwVariant v) { return v == DtwVariant::Dependent ? "dependent" : "independent"; }

inline DtwVariant parse_dtw_variant(std::string_view s) {
    if (s == "dependent" || s == "DTW_D" || s == "dep") {
        return DtwVariant::Dependent;
    }
    if (s == "independent" || s == "DTW_I" || s == "indep") {
        return DtwVariant::Independent;
    }
    throw ConfigError("unknown DTW variant '" + std::string(s) + "'");
}

/// Local (per time-pair) distance. Gower needs a kind per feature and a
/// positive range for every numeric feature; other entries of `ranges` are ignored.
struct LocalDistanceSpec {
    LocalDistanceKind kind = LocalDistanceKind::Euclidean;
    std::vector<FeatureKind> feature_kinds;
    std::vector<double> ranges;

    static LocalDistanceSpec abs_diff() { return {LocalDistanceKind::AbsDiff, {}, {}}; }
    static LocalDistanceSpec euclidean() { return {LocalDistanceKind::Euclidean, {}, {}}; }
    static LocalDistanceSpec gower(std::vector<FeatureKind> kinds, std::vector<double> ranges) {
        return {LocalDistanceKind::Gower, std::move(kinds), std::move(ranges)};
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"kind", to_string(kind)}};
        if (kind == LocalDistanceKind::Gower) {
            auto kinds = nlohmann::json::array();
            for (auto k : feature_kinds) {
                kinds.push_back(to_string(k));
            }
            j["feature_kinds"] = kinds;
            j["ranges"] = ranges;
        }
        return j;
    }
};

/// Gower spec with numeric ranges (max - min) taken from observed training cells.
/// A zero-range feature gets range 1 with a warning.
inline LocalDistanceSpec gower_spec_from(const Dataset& train) {
    const auto F = train.num_features();
    std::vector<double> lo(F, std::numeric_limits<double>::infinity());
    std::vector<double> hi(F, -std::numeric_limits<double>::infinity());
    for (const auto& r : train.records) {
        for (Eigen::Index f = 0; f < F; ++f) {
            for (Eigen::Index t = 0; t < r.values.cols(); ++t) {
                if (r.mask(f, t)) {
                    lo[f] = std::min(lo[f], r.values(f, t));
                    hi[f] = std::max(hi[f], r.values(f, t));
                }
            }
        }
    }
    std::vector<double> ranges(F, 1.0);
    for (Eigen::Index f = 0; f < F; ++f) {
        if (train.kinds[f] != FeatureKind::Numeric) {
            continue;
        }
        if (hi[f] > lo[f]) {
            ranges[f] = hi[f] - lo[f];
        } else {
            log::warn("gower: feature '" + train.feature_names[f] + "' has zero training range; using 1");
        }
    }
    return LocalDistanceSpec::gower(train.kinds, std::move(ranges));
}

namespace detail {

inline void check_gower_spec(const LocalDistanceSpec& spec, std::size_t F) {
    if (spec.feature_kinds.size() != F || spec.ranges.size() != F) {
        throw DataError("gower: spec covers " + std::to_string(spec.feature_kinds.size()) + " features, inputs have " +
                        std::to_string(F));
    }
    for (std::size_t f = 0; f < F; ++f) {
        if (spec.feature_kinds[f] == FeatureKind::Numeric && !(spec.ranges[f] > 0.0)) {
            throw DataError("gower: numeric feature " + std::to_string(f) + " has nonpositive range");
        }
    }
}

} // namespace detail

/// Per-feature Gower dissimilarity in [0, 1].
inline double gower_term(double a, double b, FeatureKind kind, double range) {
    if (kind == FeatureKind::Numeric) {
        return std::min(1.0, std::abs(a - b) / range);
    }
    return a == b ? 0.0 : 1.0;
}

template <typename U, typename V>
double gower_distance(const Eigen::MatrixBase<U>& u, const Eigen::MatrixBase<V>& v, const LocalDistanceSpec& spec) {
    if (u.size() != v.size()) {
        throw DataError("gower: vector lengths differ");
    }
    detail::check_gower_spec(spec, static_cast<std::size_t>(u.size()));
    if (u.size() == 0) {
        return 0.0;
    }
    double sum = 0.0;
    for (Eigen::Index f = 0; f < u.size(); ++f) {
        sum += gower_term(u(f), v(f), spec.feature_kinds[f], spec.ranges[f]);
    }
    return sum / static_cast<double>(u.size());
}

/// The (n+1) x (m+1) accumulated-cost table with infinite sentinels in row 0
/// and column 0 and M(0,0) = 0.
struct CumulativeMatrix {
    Matrix M;

    double distance() const { return M(M.rows() - 1, M.cols() - 1); }
};

/// Fills the table with M(i,j) = cost(i-1, j-1) + min(M(i-1,j-1), M(i-1,j), M(i,j-1)).
template <typename Cost>
CumulativeMatrix cumulative_matrix(Eigen::Index n, Eigen::Index m, Cost&& cost) {
    if (n == 0 || m == 0) {
        throw DataError("dtw: empty series");
    }
    constexpr double inf = std::numeric_limits<double>::infinity();
    CumulativeMatrix c;
    c.M = Matrix::Constant(n + 1, m + 1, inf);
    c.M(0, 0) = 0.0;
    for (Eigen::Index j = 1; j <= m; ++j) {
        for (Eigen::Index i = 1; i <= n; ++i) {
            const double best = std::min({c.M(i - 1, j - 1), c.M(i - 1, j), c.M(i, j - 1)});
            c.M(i, j) = cost(i - 1, j - 1) + best;
        }
    }
    return c;
}

/// Scalar DTW with a caller-supplied local distance delta(a, b).
template <typename X1, typename X2, typename Delta>
double dtw_1d(const Eigen::DenseBase<X1>& x1, const Eigen::DenseBase<X2>& x2, Delta&& delta) {
    if (x1.size() == 0 || x2.size() == 0) {
        throw DataError("dtw: empty series");
    }
    if (x1.size() != x2.size()) {
        throw DataError("dtw: series lengths differ (" + std::to_string(x1.size()) + " vs " +
                        std::to_string(x2.size()) + ")");
    }
    return cumulative_matrix(x1.size(), x2.size(), [&](Eigen::Index i, Eigen::Index j) {
               return delta(x1(i), x2(j));
           }).distance();
}

inline double abs_diff(double a, double b) { return std::abs(a - b); }

namespace detail {

inline void check_shapes(const Matrix& X1, const Matrix& X2) {
    if (X1.rows() != X2.rows() || X1.cols() != X2.cols()) {
        throw DataError("dtw: shape mismatch " + std::to_string(X1.rows()) + "x" + std::to_string(X1.cols()) + " vs " +
                        std::to_string(X2.rows()) + "x" + std::to_string(X2.cols()));
    }
}

} // namespace detail

/// Local distance between two F-vectors (time columns) under `spec`.
template <typename U, typename V>
double column_distance(const Eigen::MatrixBase<U>& a, const Eigen::MatrixBase<V>& b, const LocalDistanceSpec& spec) {
    switch (spec.kind) {
    case LocalDistanceKind::AbsDiff:
        return (a - b).cwiseAbs().sum();
    case LocalDistanceKind::Euclidean:
        return (a - b).norm();
    case LocalDistanceKind::Gower: {
        double sum = 0.0;
        for (Eigen::Index f = 0; f < a.size(); ++f) {
            sum += gower_term(a(f), b(f), spec.feature_kinds[f], spec.ranges[f]);
        }
        return a.size() ? sum / static_cast<double>(a.size()) : 0.0;
    }
    }
    return 0.0;
}

/// DTW over whole time columns (DTW_D).
inline double dtw_dependent(const Matrix& X1, const Matrix& X2, const LocalDistanceSpec& spec) {
    detail::check_shapes(X1, X2);
    if (spec.kind == LocalDistanceKind::Gower) {
        detail::check_gower_spec(spec, static_cast<std::size_t>(X1.rows()));
    }
    return cumulative_matrix(X1.cols(), X2.cols(), [&](Eigen::Index i, Eigen::Index j) {
               return column_distance(X1.col(i), X2.col(j), spec);
           }).distance();
}

/// Sum of per-feature scalar DTW distances (DTW_I), each using `delta`.
template <typename Delta>
double dtw_independent(const Matrix& X1, const Matrix& X2, Delta&& delta) {
    detail::check_shapes(X1, X2);
    double sum = 0.0;
    for (Eigen::Index f = 0; f < X1.rows(); ++f) {
        sum += dtw_1d(X1.row(f), X2.row(f), delta);
    }
    return sum;
}

/// DTW_I where feature f uses the scalar restriction of `spec` (Gower term of
/// feature f, or |a - b| for AbsDiff/Euclidean).
inline double dtw_independent(const Matrix& X1, const Matrix& X2, const LocalDistanceSpec& spec) {
    detail::check_shapes(X1, X2);
    if (spec.kind != LocalDistanceKind::Gower) {
        return dtw_independent(X1, X2, abs_diff);
    }
    detail::check_gower_spec(spec, static_cast<std::size_t>(X1.rows()));
    double sum = 0.0;
    for (Eigen::Index f = 0; f < X1.rows(); ++f) {
        const auto kind = spec.feature_kinds[f];
        const double range = spec.ranges[f];
        sum += dtw_1d(X1.row(f), X2.row(f), [&](double a, double b) { return gower_term(a, b, kind, range); });
    }
    return sum;
}

inline double dtw_distance(const Matrix& X1, const Matrix& X2, DtwVariant variant, const LocalDistanceSpec& spec) {
    return variant == DtwVariant::Dependent ? dtw_dependent(X1, X2, spec) : dtw_independent(X1, X2, spec);
}

namespace detail {

inline void require_complete(const Dataset& ds, const char* what) {
    for (const auto& r : ds.records) {
        if (!r.mask.all()) {
            throw DataError(std::string(what) + ": record '" + r.id +
                            "' has unobserved cells; impute before computing DTW");
        }
    }
}

inline nlohmann::json dtw_provenance(DtwVariant variant, const LocalDistanceSpec& spec) {
    return {{"kind", "distance"}, {"method", variant == DtwVariant::Dependent ? "DTW_D" : "DTW_I"},
            {"variant", to_string(variant)}, {"local_distance", spec.to_json()}};
}

} // namespace detail

/// Symmetric DTW matrix over all records. Only i < j is computed; workers
/// never share intermediate state, so the result does not depend on `workers`.
inline DistanceMatrix pairwise_distance_matrix(const Dataset& ds, DtwVariant variant, const LocalDistanceSpec& spec,
                                               std::size_t workers = 1) {
    if (ds.records.empty()) {
        throw DataError("pairwise_distance_matrix: empty dataset");
    }
    detail::require_complete(ds, "pairwise_distance_matrix");
    const auto n = static_cast<Eigen::Index>(ds.size());
    DistanceMatrix out;
    out.values = Matrix::Zero(n, n);
    out.row_ids = ds.ids();
    out.col_ids = out.row_ids;
    out.provenance = detail::dtw_provenance(variant, spec);
    // Row i owns pairs (i, j > i).
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t ii) {
        const auto i = static_cast<Eigen::Index>(ii);
        for (Eigen::Index j = i + 1; j < n; ++j) {
            try {
                out.values(i, j) = dtw_distance(ds.records[i].values, ds.records[j].values, variant, spec);
            } catch (const Error& e) {
                throw DataError("dtw pair ('" + ds.records[i].id + "', '" + ds.records[j].id + "'): " + e.what());
            }
        }
    });
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            out.values(j, i) = out.values(i, j);
        }
    }
    return out;
}

/// Distances from every record of A (rows) to every record of B (columns).
inline DistanceMatrix cross_distance_matrix(const Dataset& A, const Dataset& B, DtwVariant variant,
                                            const LocalDistanceSpec& spec, std::size_t workers = 1) {
    if (!A.same_schema(B)) {
        throw DataError("cross_distance_matrix: datasets have different schemas");
    }
    detail::require_complete(A, "cross_distance_matrix");
    detail::require_complete(B, "cross_distance_matrix");
    DistanceMatrix out;
    out.values = Matrix::Zero(static_cast<Eigen::Index>(A.size()), static_cast<Eigen::Index>(B.size()));
    out.row_ids = A.ids();
    out.col_ids = B.ids();
    out.provenance = detail::dtw_provenance(variant, spec);
    parallel_for(A.size(), workers, [&](std::size_t i) {
        for (std::size_t j = 0; j < B.size(); ++j) {
            try {
                out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    dtw_distance(A.records[i].values, B.records[j].values, variant, spec);
            } catch (const Error& e) {
                throw DataError("dtw pair ('" + A.records[i].id + "', '" + B.records[j].id + "'): " + e.what());
            }
        }
    });
    return out;
}

} // namespace mtsstrat

#endif
