#ifndef MTSSTRAT_SYNTHETIC_HPP
#define MTSSTRAT_SYNTHETIC_HPP

#include "dataset.hpp"

#include <array>

namespace mtsstrat {

/// Antibiotic family codes, in the order the generator emits them.
inline constexpr std::array<const char*, 23> kAntibioticFamilies = {
    "AMG", "ATF", "CAR", "CF1", "CF2", "CF3", "CF4", "GCC", "GLI", "LIN", "LIP", "MAC",
    "MON", "NTI", "OTR", "OXA", "PAP", "PEN", "POL", "QUI", "SUL", "TTC", "Others"};

/// Shape and effect knobs for the synthetic ICU-like cohort. The full schema is
/// one binary MV series, 23 binary antibiotic series, and 25 numeric
/// environmental counts (total co-patients, positive co-patients, and
/// co-patients on each antibiotic family).
struct SynthConfig {
    std::size_t n_negative = 100;
    std::size_t n_positive = 100;
    bool include_mv = true;
    std::size_t n_antibiotics = 23;
    std::size_t n_environmental = 25;
    Eigen::Index T = 7;
    /// Class separation in [0, 1]; 0 makes the classes exchangeable.
    double separation = 1.0;
    /// Probability that any single cell is unobserved.
    double missing_rate = 0.0;
    /// Native series lengths are drawn from [min_length, max_length] and then
    /// aligned to T. Leaving both at 0 means native length T, i.e. no padding.
    Eigen::Index min_length = 0;
    Eigen::Index max_length = 0;
    bool with_statics = true;
};

inline void validate(const SynthConfig& cfg) {
    if (cfg.n_negative == 0 || cfg.n_positive == 0) {
        throw ConfigError("synthetic: class counts must be positive");
    }
    if (cfg.T <= 0) {
        throw ConfigError("synthetic: T must be positive");
    }
    if (cfg.n_antibiotics > kAntibioticFamilies.size()) {
        throw ConfigError("synthetic: at most 23 antibiotic features");
    }
    if (cfg.n_environmental > 2 + kAntibioticFamilies.size()) {
        throw ConfigError("synthetic: at most 25 environmental features");
    }
    if ((cfg.include_mv ? 1 : 0) + cfg.n_antibiotics + cfg.n_environmental == 0) {
        throw ConfigError("synthetic: no features requested");
    }
    if (!(cfg.separation >= 0.0 && cfg.separation <= 1.0)) {
        throw ConfigError("synthetic: separation must lie in [0, 1]");
    }
    if (!(cfg.missing_rate >= 0.0 && cfg.missing_rate < 1.0)) {
        throw ConfigError("synthetic: missing_rate must lie in [0, 1)");
    }
    if (cfg.min_length < 0 || cfg.max_length < cfg.min_length) {
        throw ConfigError("synthetic: need 0 <= min_length <= max_length");
    }
    if (cfg.max_length > 0 && cfg.min_length == 0) {
        throw ConfigError("synthetic: min_length must be positive when max_length is set");
    }
}

/// Seeded synthetic cohort. Positives show rising late-window antibiotic use,
/// more ventilation, and growing exposure to positive co-patients; every effect
/// is scaled by `separation`. Records are emitted negatives first.
inline Dataset generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    Dataset ds;
    ds.T = cfg.T;
    if (cfg.include_mv) {
        ds.feature_names.emplace_back("MV");
        ds.kinds.push_back(FeatureKind::Binary);
    }
    for (std::size_t a = 0; a < cfg.n_antibiotics; ++a) {
        ds.feature_names.emplace_back(kAntibioticFamilies[a]);
        ds.kinds.push_back(FeatureKind::Binary);
    }
    for (std::size_t e = 0; e < cfg.n_environmental; ++e) {
        if (e == 0) {
            ds.feature_names.emplace_back("n_copatients");
        } else if (e == 1) {
            ds.feature_names.emplace_back("n_positive_copatients");
        } else {
            ds.feature_names.emplace_back(std::string("n_copatients_") + kAntibioticFamilies[e - 2]);
        }
        ds.kinds.push_back(FeatureKind::Numeric);
    }
    const auto F = ds.num_features();
    const double s = cfg.separation;
    const std::size_t mv_row = 0;
    const std::size_t ab_row = cfg.include_mv ? 1 : 0;
    const std::size_t env_row = ab_row + cfg.n_antibiotics;

    static constexpr std::array<const char*, 4> kOrigins = {"emergency", "ward", "surgery", "other"};
    static constexpr std::array<const char*, 4> kDestinations = {"ward", "home", "exitus", "transfer"};

    const std::size_t n = cfg.n_negative + cfg.n_positive;
    ds.records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = i < cfg.n_negative ? 0 : 1;
        const double effect = label == 1 ? s : 0.0;
        Rng rng(mix_seed(seed, i));

        Eigen::Index L = cfg.T;
        if (cfg.max_length > 0) {
            L = cfg.min_length + static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(cfg.max_length - cfg.min_length + 1)));
        }
        // Late-window ramp in [0, 1] measured from the anchored end.
        auto ramp = [&](Eigen::Index t) {
            const Eigen::Index from_end = L - 1 - t;
            return cfg.T > 1 ? std::max(0.0, 1.0 - static_cast<double>(from_end) / static_cast<double>(cfg.T - 1)) : 1.0;
        };
        const double frailty = rng.uniform();

        MtsRecord rec;
        rec.id = (label == 1 ? "pos" : "neg") + std::to_string(i);
        rec.label = label;
        rec.values = Matrix::Zero(F, L);
        rec.mask = BoolMatrix::Constant(F, L, true);
        rec.padded = BoolMatrix::Constant(F, L, false);

        if (cfg.include_mv) {
            for (Eigen::Index t = 0; t < L; ++t) {
                const double p = 0.25 + 0.2 * frailty + effect * 0.4 * ramp(t);
                rec.values(mv_row, t) = rng.bernoulli(std::min(p, 0.95)) ? 1.0 : 0.0;
            }
        }
        for (std::size_t a = 0; a < cfg.n_antibiotics; ++a) {
            // Every third family is "risk-associated" for positives.
            const bool risk = a % 3 == 2;
            const double base = 0.04 + 0.12 * static_cast<double>(a % 4) / 3.0;
            bool on = false;
            for (Eigen::Index t = 0; t < L; ++t) {
                double p_start = base + (risk ? effect * 0.45 * ramp(t) : 0.0);
                const double p_stay = 0.6 + (risk ? effect * 0.3 : 0.0);
                on = on ? rng.bernoulli(p_stay) : rng.bernoulli(std::min(p_start, 0.95));
                rec.values(ab_row + a, t) = on ? 1.0 : 0.0;
            }
        }
        const double unit_load = rng.uniform(6.0, 12.0);
        for (std::size_t e = 0; e < cfg.n_environmental; ++e) {
            for (Eigen::Index t = 0; t < L; ++t) {
                double rate;
                if (e == 0) {
                    rate = unit_load;
                } else if (e == 1) {
                    rate = 0.8 + effect * 3.0 * ramp(t);
                } else {
                    const bool risk = (e - 2) % 3 == 2;
                    rate = 0.15 * unit_load * (0.5 + 0.5 * static_cast<double>((e - 2) % 4) / 3.0) +
                           (risk ? effect * 2.0 * ramp(t) : 0.0);
                }
                rec.values(env_row + e, t) = static_cast<double>(rng.poisson(rate));
            }
        }
        if (cfg.missing_rate > 0.0) {
            for (Eigen::Index f = 0; f < F; ++f) {
                for (Eigen::Index t = 0; t < L; ++t) {
                    if (rng.bernoulli(cfg.missing_rate)) {
                        rec.mask(f, t) = false;
                        rec.values(f, t) = 0.0;
                    }
                }
            }
        }
        if (cfg.with_statics) {
            rec.statics["age"] = std::round(std::clamp(rng.normal(62.0 + effect * 6.0, 14.0), 18.0, 95.0));
            rec.statics["saps3"] = std::round(std::clamp(rng.normal(48.0 + effect * 9.0, 12.0), 10.0, 110.0));
            auto pick = [&](const auto& options, double tilt) {
                // Tilted distribution favors the first option for positives.
                const double u = rng.uniform();
                const double first = 0.25 + 0.35 * tilt;
                if (u < first) {
                    return std::string(options[0]);
                }
                const auto rest = static_cast<std::size_t>((u - first) / (1.0 - first) * 3.0);
                return std::string(options[1 + std::min<std::size_t>(rest, 2)]);
            };
            rec.statics["origin"] = pick(kOrigins, effect);
            rec.statics["destination"] = pick(kDestinations, effect * 0.5);
        }
        ds.records.push_back(L == cfg.T ? std::move(rec) : align_window(rec, cfg.T, anchor_for_label(label)));
    }
    validate(ds);
    return ds;
}

} // namespace mtsstrat

#endif
