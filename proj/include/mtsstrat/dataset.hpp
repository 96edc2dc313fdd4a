#ifndef MTSSTRAT_DATASET_HPP
#define MTSSTRAT_DATASET_HPP

#include "common.hpp"

#include <array>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <variant>

namespace mtsstrat {

enum class FeatureKind { Binary, Categorical, Numeric };

inline std::string to_string(FeatureKind k) {
    switch (k) {
    case FeatureKind::Binary:
        return "binary";
    case FeatureKind::Categorical:
        return "categorical";
    case FeatureKind::Numeric:
        return "numeric";
    }
    return "numeric";
}

inline FeatureKind parse_feature_kind(std::string_view s) {
    if (s == "binary") {
        return FeatureKind::Binary;
    }
    if (s == "categorical") {
        return FeatureKind::Categorical;
    }
    if (s == "numeric") {
        return FeatureKind::Numeric;
    }
    throw DataError("unknown feature kind '" + std::string(s) + "'");
}

/// Numeric statics (age, severity scores) are doubles, categorical ones strings.
using StaticValue = std::variant<double, std::string>;

/// One subject: an F x T matrix of values plus observation and padding masks.
/// Cells with mask == false are unobserved and hold 0. Padded cells are zero
/// and observed by default; `padded` only records where they came from.
struct MtsRecord {
    std::string id;
    Matrix values;
    BoolMatrix mask;
    BoolMatrix padded;
    int label = 0;
    std::map<std::string, StaticValue> statics;

    Eigen::Index num_features() const { return values.rows(); }
    Eigen::Index length() const { return values.cols(); }

    bool operator==(const MtsRecord& o) const {
        return id == o.id && label == o.label && statics == o.statics && values.rows() == o.values.rows() &&
               values.cols() == o.values.cols() && (values.array() == o.values.array()).all() &&
               (mask.array() == o.mask.array()).all() && (padded.array() == o.padded.array()).all();
    }
};

/// Builds a fully observed, unpadded record.
inline MtsRecord make_record(std::string id, Matrix values, int label) {
    MtsRecord r;
    r.id = std::move(id);
    r.mask = BoolMatrix::Constant(values.rows(), values.cols(), true);
    r.padded = BoolMatrix::Constant(values.rows(), values.cols(), false);
    r.values = std::move(values);
    r.label = label;
    return r;
}

struct Dataset {
    std::vector<MtsRecord> records;
    std::vector<std::string> feature_names;
    std::vector<FeatureKind> kinds;
    Eigen::Index T = 0;
    std::string schema_version = "1";

    std::size_t size() const { return records.size(); }
    Eigen::Index num_features() const { return static_cast<Eigen::Index>(feature_names.size()); }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(records.size());
        for (const auto& r : records) {
            out.push_back(r.id);
        }
        return out;
    }

    std::vector<int> labels() const {
        std::vector<int> out;
        out.reserve(records.size());
        for (const auto& r : records) {
            out.push_back(r.label);
        }
        return out;
    }

    /// Same schema, no records.
    Dataset empty_like() const {
        Dataset d;
        d.feature_names = feature_names;
        d.kinds = kinds;
        d.T = T;
        d.schema_version = schema_version;
        return d;
    }

    /// Records in the order given by `ids`.
    Dataset subset(const std::vector<std::string>& subset_ids) const {
        std::unordered_map<std::string, std::size_t> pos;
        for (std::size_t i = 0; i < records.size(); ++i) {
            pos.emplace(records[i].id, i);
        }
        Dataset d = empty_like();
        d.records.reserve(subset_ids.size());
        for (const auto& id : subset_ids) {
            auto it = pos.find(id);
            if (it == pos.end()) {
                throw DataError("record id '" + id + "' not in dataset");
            }
            d.records.push_back(records[it->second]);
        }
        return d;
    }

    bool same_schema(const Dataset& o) const { return feature_names == o.feature_names && kinds == o.kinds && T == o.T; }

    bool operator==(const Dataset& o) const = default;
};

inline bool value_respects_kind(double v, FeatureKind kind) {
    switch (kind) {
    case FeatureKind::Binary:
        return v == 0.0 || v == 1.0;
    case FeatureKind::Categorical:
        return std::isfinite(v) && v >= 0.0 && v == std::floor(v);
    case FeatureKind::Numeric:
        return std::isfinite(v);
    }
    return false;
}

/// Throws DataError describing the first violated invariant.
inline void validate(const Dataset& ds) {
    if (ds.kinds.size() != ds.feature_names.size()) {
        throw DataError("kinds and feature_names differ in length");
    }
    if (ds.T <= 0 && !ds.records.empty()) {
        throw DataError("dataset length T must be positive");
    }
    std::set<std::string> seen_names(ds.feature_names.begin(), ds.feature_names.end());
    if (seen_names.size() != ds.feature_names.size()) {
        throw DataError("duplicate feature names");
    }
    std::set<std::string> seen;
    const auto F = ds.num_features();
    for (const auto& r : ds.records) {
        if (!seen.insert(r.id).second) {
            throw DataError("duplicate record id '" + r.id + "'");
        }
        if (r.values.rows() != F || r.values.cols() != ds.T) {
            throw DataError("shape error: record '" + r.id + "' is " + std::to_string(r.values.rows()) + "x" +
                            std::to_string(r.values.cols()) + ", expected " + std::to_string(F) + "x" +
                            std::to_string(ds.T));
        }
        if (r.mask.rows() != F || r.mask.cols() != ds.T || r.padded.rows() != F || r.padded.cols() != ds.T) {
            throw DataError("shape error: record '" + r.id + "' mask shape differs from values");
        }
        if (r.label != 0 && r.label != 1) {
            throw DataError("record '" + r.id + "' has label " + std::to_string(r.label) + ", expected 0 or 1");
        }
        for (Eigen::Index f = 0; f < F; ++f) {
            for (Eigen::Index t = 0; t < ds.T; ++t) {
                if (r.mask(f, t) && !value_respects_kind(r.values(f, t), ds.kinds[f])) {
                    throw DataError("record '" + r.id + "' feature '" + ds.feature_names[f] + "' t=" +
                                    std::to_string(t) + ": value " + format_double(r.values(f, t)) +
                                    " violates kind " + to_string(ds.kinds[f]));
                }
            }
        }
    }
}

enum class WindowAnchor { EventEnd, AdmissionStart };

/// Default anchor for a label: positives end on the event day, negatives start at admission.
inline WindowAnchor anchor_for_label(int label) { return label == 1 ? WindowAnchor::EventEnd : WindowAnchor::AdmissionStart; }

/// Crops or zero-pads a record of any native length to exactly T columns.
/// EventEnd keeps the last T slots and pads on the left; AdmissionStart keeps
/// the first T slots and pads on the right.
inline MtsRecord align_window(const MtsRecord& rec, Eigen::Index T, WindowAnchor anchor) {
    if (T <= 0) {
        throw ConfigError("align_window: T must be positive");
    }
    const Eigen::Index F = rec.values.rows();
    const Eigen::Index L = rec.values.cols();
    MtsRecord out;
    out.id = rec.id;
    out.label = rec.label;
    out.statics = rec.statics;
    out.values = Matrix::Zero(F, T);
    out.mask = BoolMatrix::Constant(F, T, true);
    out.padded = BoolMatrix::Constant(F, T, true);
    const Eigen::Index keep = std::min(L, T);
    const Eigen::Index src = anchor == WindowAnchor::EventEnd ? L - keep : 0;
    const Eigen::Index dst = anchor == WindowAnchor::EventEnd ? T - keep : 0;
    out.values.middleCols(dst, keep) = rec.values.middleCols(src, keep);
    out.mask.middleCols(dst, keep) = rec.mask.middleCols(src, keep);
    if (rec.padded.size() == rec.values.size()) {
        out.padded.middleCols(dst, keep) = rec.padded.middleCols(src, keep);
    } else {
        out.padded.middleCols(dst, keep).setConstant(false);
    }
    return out;
}

/// Marks padded cells as unobserved, for consumers that should ignore padding.
inline Dataset mask_padding(Dataset ds) {
    for (auto& r : ds.records) {
        for (Eigen::Index i = 0; i < r.values.size(); ++i) {
            if (r.padded.data()[i]) {
                r.mask.data()[i] = false;
                r.values.data()[i] = 0.0;
            }
        }
    }
    return ds;
}

inline std::size_t count_unobserved(const Dataset& ds) {
    std::size_t n = 0;
    for (const auto& r : ds.records) {
        n += static_cast<std::size_t>((!r.mask.array()).count());
    }
    return n;
}

// ---------------------------------------------------------------------------
// Normalization and imputation

struct NormParams {
    std::vector<double> min;
    std::vector<double> max;
    std::vector<bool> active; // numeric feature with a nonzero range
};

namespace detail {

inline NormParams fit_minmax(const Dataset& train) {
    const auto F = train.num_features();
    NormParams p;
    p.min.assign(F, std::numeric_limits<double>::infinity());
    p.max.assign(F, -std::numeric_limits<double>::infinity());
    p.active.assign(F, false);
    for (const auto& r : train.records) {
        for (Eigen::Index f = 0; f < F; ++f) {
            for (Eigen::Index t = 0; t < r.values.cols(); ++t) {
                if (r.mask(f, t)) {
                    p.min[f] = std::min(p.min[f], r.values(f, t));
                    p.max[f] = std::max(p.max[f], r.values(f, t));
                }
            }
        }
    }
    for (Eigen::Index f = 0; f < F; ++f) {
        if (train.kinds[f] != FeatureKind::Numeric) {
            continue;
        }
        if (!(p.max[f] > p.min[f])) {
            log::warn("min-max: feature '" + train.feature_names[f] + "' is constant on the training set; mapped to 0");
            if (!std::isfinite(p.min[f])) {
                p.min[f] = 0.0;
                p.max[f] = 0.0;
            }
        } else {
            p.active[f] = true;
        }
    }
    return p;
}

} // namespace detail

/// Min-max scales numeric features using the given parameters. Values outside
/// the fitted range are not clipped. Binary and categorical features pass through.
inline Dataset minmax_apply(Dataset ds, const NormParams& p) {
    const auto F = ds.num_features();
    if (p.min.size() != static_cast<std::size_t>(F)) {
        throw DataError("minmax_apply: parameters cover " + std::to_string(p.min.size()) + " features, dataset has " +
                        std::to_string(F));
    }
    for (auto& r : ds.records) {
        for (Eigen::Index f = 0; f < F; ++f) {
            if (ds.kinds[f] != FeatureKind::Numeric) {
                continue;
            }
            for (Eigen::Index t = 0; t < r.values.cols(); ++t) {
                if (!r.mask(f, t)) {
                    continue;
                }
                r.values(f, t) = p.active[f] ? (r.values(f, t) - p.min[f]) / (p.max[f] - p.min[f]) : 0.0;
            }
        }
    }
    return ds;
}

inline std::pair<Dataset, NormParams> minmax_fit_transform(const Dataset& train) {
    if (train.records.empty()) {
        throw DataError("min-max normalization needs a nonempty training set");
    }
    NormParams p = detail::fit_minmax(train);
    return {minmax_apply(train, p), std::move(p)};
}

/// Per-feature means over observed training cells.
inline std::vector<double> fit_feature_means(const Dataset& train) {
    const auto F = train.num_features();
    std::vector<double> sum(F, 0.0);
    std::vector<std::size_t> count(F, 0);
    for (const auto& r : train.records) {
        for (Eigen::Index f = 0; f < F; ++f) {
            for (Eigen::Index t = 0; t < r.values.cols(); ++t) {
                if (r.mask(f, t)) {
                    sum[f] += r.values(f, t);
                    ++count[f];
                }
            }
        }
    }
    for (Eigen::Index f = 0; f < F; ++f) {
        sum[f] = count[f] ? sum[f] / static_cast<double>(count[f]) : 0.0;
    }
    return sum;
}

/// Fills unobserved cells with the supplied means and marks them observed.
inline Dataset impute_missing(Dataset ds, const std::vector<double>& means) {
    std::size_t filled = 0;
    for (auto& r : ds.records) {
        for (Eigen::Index f = 0; f < r.values.rows(); ++f) {
            for (Eigen::Index t = 0; t < r.values.cols(); ++t) {
                if (!r.mask(f, t)) {
                    r.values(f, t) = means.at(f);
                    r.mask(f, t) = true;
                    ++filled;
                }
            }
        }
    }
    if (filled > 0) {
        log::warn("mean-imputed " + std::to_string(filled) + " unobserved cells");
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
    std::uint64_t seed = 0;

    bool operator==(const SplitSpec&) const = default;
};

namespace detail {

inline std::array<std::vector<std::size_t>, 2> by_class(const std::vector<int>& labels) {
    std::array<std::vector<std::size_t>, 2> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) {
            throw DataError("labels must be 0 or 1");
        }
        out[labels[i]].push_back(i);
    }
    return out;
}

} // namespace detail

/// Label-stratified random split; both parts keep at least one record per class.
inline SplitSpec split_train_test(const Dataset& ds, double test_frac, std::uint64_t seed) {
    if (!(test_frac > 0.0 && test_frac < 1.0)) {
        throw ConfigError("test_frac must lie in (0, 1)");
    }
    auto classes = detail::by_class(ds.labels());
    Rng rng(mix_seed(seed, 0x5117));
    std::vector<bool> in_test(ds.size(), false);
    for (int c = 0; c < 2; ++c) {
        auto& members = classes[c];
        if (members.size() < 2) {
            throw DataError("stratified split needs at least 2 records of class " + std::to_string(c));
        }
        rng.shuffle(members);
        auto n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(members.size())));
        n_test = std::clamp<std::size_t>(n_test, 1, members.size() - 1);
        for (std::size_t i = 0; i < n_test; ++i) {
            in_test[members[i]] = true;
        }
    }
    SplitSpec s;
    s.seed = seed;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        (in_test[i] ? s.test_ids : s.train_ids).push_back(ds.records[i].id);
    }
    return s;
}

/// Random undersampling of the majority class down to the minority count.
inline std::vector<std::string> undersample(const std::vector<std::string>& ids, const std::vector<int>& labels,
                                            std::uint64_t seed) {
    if (ids.size() != labels.size()) {
        throw DataError("undersample: ids and labels differ in length");
    }
    auto classes = detail::by_class(labels);
    if (classes[0].empty() || classes[1].empty()) {
        throw DataError("undersample: both classes must be present");
    }
    Rng rng(mix_seed(seed, 0x0d5a));
    const std::size_t m = std::min(classes[0].size(), classes[1].size());
    std::vector<std::size_t> chosen;
    for (int c = 0; c < 2; ++c) {
        auto members = classes[c];
        rng.shuffle(members);
        chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(m));
    }
    rng.shuffle(chosen);
    std::vector<std::string> out;
    out.reserve(chosen.size());
    for (auto i : chosen) {
        out.push_back(ids[i]);
    }
    return out;
}

struct Fold {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
};

/// Stratified k-fold partition. Within each class, shuffled members are dealt
/// round-robin so per-class fold sizes differ by at most one.
inline std::vector<Fold> kfold(const std::vector<std::string>& ids, const std::vector<int>& labels, std::size_t k,
                               std::uint64_t seed) {
    if (k < 2) {
        throw ConfigError("kfold: k must be at least 2");
    }
    if (ids.size() != labels.size()) {
        throw DataError("kfold: ids and labels differ in length");
    }
    auto classes = detail::by_class(labels);
    for (int c = 0; c < 2; ++c) {
        if (classes[c].size() < k) {
            throw DataError("kfold: k=" + std::to_string(k) + " exceeds the size of class " + std::to_string(c) + " (" +
                            std::to_string(classes[c].size()) + ")");
        }
    }
    Rng rng(mix_seed(seed, 0xf01d));
    std::vector<std::size_t> fold_of(ids.size(), 0);
    std::size_t offset = 0;
    for (int c = 0; c < 2; ++c) {
        auto members = classes[c];
        rng.shuffle(members);
        for (std::size_t i = 0; i < members.size(); ++i) {
            fold_of[members[i]] = (i + offset) % k;
        }
        // Staggering the second class evens out total fold sizes.
        offset = members.size() % k;
    }
    std::vector<Fold> folds(k);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t f = 0; f < k; ++f) {
            (f == fold_of[i] ? folds[f].val_ids : folds[f].train_ids).push_back(ids[i]);
        }
    }
    return folds;
}

} // namespace mtsstrat

#endif
