#ifndef MTSSTRAT_FE_HPP
#define MTSSTRAT_FE_HPP

#include "dataset.hpp"

namespace mtsstrat {

enum class Stat { Mean = 0, Median = 1, Mode = 2, Min = 3, Max = 4 };

inline constexpr std::array<const char*, 5> kStatNames = {"mean", "median", "mode", "min", "max"};

/// Five descriptive statistics per feature row: an F x 5 matrix whose columns
/// follow the order of `Stat`.
struct EngineeredFeatures {
    std::string id;
    Matrix stats;

    /// Row-major flattening: feature f, statistic s sits at 5 * f + s.
    Vector flattened() const {
        Vector v(stats.size());
        for (Eigen::Index f = 0; f < stats.rows(); ++f) {
            for (Eigen::Index s = 0; s < stats.cols(); ++s) {
                v(stats.cols() * f + s) = stats(f, s);
            }
        }
        return v;
    }
};

namespace detail {

/// Most frequent exact value; ties go to the smallest value. Input must be sorted.
inline double sorted_mode(const std::vector<double>& sorted) {
    double best = sorted.front();
    std::size_t best_count = 0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) {
            ++j;
        }
        if (j - i > best_count) {
            best_count = j - i;
            best = sorted[i];
        }
        i = j;
    }
    return best;
}

} // namespace detail

/// Observed cells only. Even-count medians average the two central values.
inline EngineeredFeatures engineer_features(const MtsRecord& rec, const std::vector<std::string>* feature_names = nullptr) {
    EngineeredFeatures out;
    out.id = rec.id;
    const auto F = rec.values.rows();
    out.stats = Matrix::Zero(F, 5);
    std::vector<double> row;
    for (Eigen::Index f = 0; f < F; ++f) {
        row.clear();
        for (Eigen::Index t = 0; t < rec.values.cols(); ++t) {
            if (rec.mask(f, t)) {
                row.push_back(rec.values(f, t));
            }
        }
        if (row.empty()) {
            const std::string name = feature_names ? (*feature_names)[f] : "#" + std::to_string(f);
            throw DataError("feature engineering: record '" + rec.id + "' feature '" + name + "' has no observed entries");
        }
        std::sort(row.begin(), row.end());
        const std::size_t m = row.size();
        double sum = 0.0;
        for (double v : row) {
            sum += v;
        }
        out.stats(f, static_cast<int>(Stat::Mean)) = sum / static_cast<double>(m);
        out.stats(f, static_cast<int>(Stat::Median)) = m % 2 ? row[m / 2] : 0.5 * (row[m / 2 - 1] + row[m / 2]);
        out.stats(f, static_cast<int>(Stat::Mode)) = detail::sorted_mode(row);
        out.stats(f, static_cast<int>(Stat::Min)) = row.front();
        out.stats(f, static_cast<int>(Stat::Max)) = row.back();
    }
    return out;
}

inline std::vector<EngineeredFeatures> engineer_features(const Dataset& ds) {
    std::vector<EngineeredFeatures> out;
    out.reserve(ds.size());
    for (const auto& r : ds.records) {
        out.push_back(engineer_features(r, &ds.feature_names));
    }
    return out;
}

/// Stacks flattened feature vectors as rows.
inline Matrix feature_matrix(const std::vector<EngineeredFeatures>& feats) {
    if (feats.empty()) {
        return Matrix(0, 0);
    }
    Matrix X(static_cast<Eigen::Index>(feats.size()), feats.front().stats.size());
    for (std::size_t i = 0; i < feats.size(); ++i) {
        if (feats[i].stats.size() != X.cols()) {
            throw DataError("engineered features of '" + feats[i].id + "' have a different width");
        }
        X.row(static_cast<Eigen::Index>(i)) = feats[i].flattened().transpose();
    }
    return X;
}

/// Euclidean inner products of the flattened statistics; a Gram matrix when A == B.
inline Matrix fe_similarity_matrix(const std::vector<EngineeredFeatures>& A, const std::vector<EngineeredFeatures>& B) {
    if (!A.empty() && !B.empty() && A.front().stats.size() != B.front().stats.size()) {
        throw DataError("fe_similarity_matrix: feature widths differ");
    }
    const Matrix XA = feature_matrix(A);
    const Matrix XB = feature_matrix(B);
    if (A.empty() || B.empty()) {
        return Matrix::Zero(static_cast<Eigen::Index>(A.size()), static_cast<Eigen::Index>(B.size()));
    }
    return XA * XB.transpose();
}

} // namespace mtsstrat

#endif
