#ifndef MTSSTRAT_TCK_HPP
#define MTSSTRAT_TCK_HPP

#include "dataset.hpp"
#include "matrix_io.hpp"

namespace mtsstrat {

inline constexpr double kTckVarianceFloor = 1e-4;

/// Diagonal-covariance mixture over the flattened cells (feature_idx x time_idx)
/// of a record. Dimension d maps to feature feature_idx[d / T'] and time
/// time_idx[d % T'].
struct GmmParams {
    Matrix means;     // N_C x D
    Matrix variances; // N_C x D
    Vector weights;   // N_C
    std::vector<Eigen::Index> feature_idx;
    std::vector<Eigen::Index> time_idx;

    Eigen::Index num_components() const { return means.rows(); }
    Eigen::Index dim() const { return means.cols(); }

    bool operator==(const GmmParams& o) const {
        return feature_idx == o.feature_idx && time_idx == o.time_idx && means.rows() == o.means.rows() &&
               means.cols() == o.means.cols() && (means.array() == o.means.array()).all() &&
               (variances.array() == o.variances.array()).all() && (weights.array() == o.weights.array()).all();
    }
};

/// Records, features, and time instants selected for one mixture.
struct SubsetView {
    const Dataset* data = nullptr;
    std::vector<std::size_t> records;
    std::vector<Eigen::Index> features;
    std::vector<Eigen::Index> times;
    bool padding_as_missing = false;

    Eigen::Index dim() const { return static_cast<Eigen::Index>(features.size() * times.size()); }

    /// Full view over a dataset.
    static SubsetView all(const Dataset& ds) {
        SubsetView v;
        v.data = &ds;
        v.records.resize(ds.size());
        std::iota(v.records.begin(), v.records.end(), 0);
        v.features.resize(static_cast<std::size_t>(ds.num_features()));
        std::iota(v.features.begin(), v.features.end(), 0);
        v.times.resize(static_cast<std::size_t>(ds.T));
        std::iota(v.times.begin(), v.times.end(), 0);
        return v;
    }
};

struct EmOptions {
    int max_iters = 50;
    double rel_tol = 1e-5;
    double variance_floor = kTckVarianceFloor;
};

/// A fitted mixture plus its EM diagnostics. `loglik` holds the observed-data
/// log-likelihood after every E-step; `restarts` lists trace positions whose
/// change from the previous entry follows a component re-seed or prune.
struct GmmFit {
    GmmParams params;
    std::vector<double> loglik;
    std::vector<std::size_t> restarts;
};

namespace detail {

inline void flatten_record(const MtsRecord& r, const std::vector<Eigen::Index>& features,
                           const std::vector<Eigen::Index>& times, bool padding_as_missing, double* x, double* m) {
    std::size_t d = 0;
    for (auto f : features) {
        for (auto t : times) {
            const bool observed = r.mask(f, t) && !(padding_as_missing && r.padded(f, t));
            x[d] = observed ? r.values(f, t) : 0.0;
            m[d] = observed ? 1.0 : 0.0;
            ++d;
        }
    }
}

/// Row-wise log p(x_i, component c) under masked diagonal Gaussians.
inline Matrix joint_log_density(const Matrix& X, const Matrix& M, const GmmParams& g) {
    const Eigen::Index n = X.rows();
    const Eigen::Index C = g.num_components();
    Matrix out(n, C);
    const double log2pi = std::log(2.0 * M_PI);
    for (Eigen::Index c = 0; c < C; ++c) {
        const Eigen::RowVectorXd mu = g.means.row(c);
        const Eigen::RowVectorXd inv_var = g.variances.row(c).cwiseInverse();
        const Eigen::RowVectorXd log_norm = (g.variances.row(c).array().log() + log2pi).matrix();
        const double logw = g.weights(c) > 0.0 ? std::log(g.weights(c)) : -std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < n; ++i) {
            double s = 0.0;
            for (Eigen::Index d = 0; d < X.cols(); ++d) {
                if (M(i, d) != 0.0) {
                    const double diff = X(i, d) - mu(d);
                    s += log_norm(d) + diff * diff * inv_var(d);
                }
            }
            out(i, c) = logw - 0.5 * s;
        }
    }
    return out;
}

/// Normalizes rows of log-joint into responsibilities; returns per-row log-likelihood.
inline Vector log_normalize_rows(Matrix& logp) {
    Vector ll(logp.rows());
    for (Eigen::Index i = 0; i < logp.rows(); ++i) {
        const double mx = logp.row(i).maxCoeff();
        if (!std::isfinite(mx)) {
            logp.row(i).setConstant(1.0 / static_cast<double>(logp.cols()));
            ll(i) = mx;
            continue;
        }
        double s = 0.0;
        for (Eigen::Index c = 0; c < logp.cols(); ++c) {
            s += std::exp(logp(i, c) - mx);
        }
        const double lse = mx + std::log(s);
        for (Eigen::Index c = 0; c < logp.cols(); ++c) {
            logp(i, c) = std::exp(logp(i, c) - lse);
        }
        ll(i) = lse;
    }
    return ll;
}

inline double masked_sqdist(const Matrix& X, const Matrix& M, Eigen::Index i, const Vector& center,
                            const Vector& center_mask) {
    double s = 0.0;
    for (Eigen::Index d = 0; d < X.cols(); ++d) {
        if (M(i, d) != 0.0 && center_mask(d) != 0.0) {
            const double diff = X(i, d) - center(d);
            s += diff * diff;
        }
    }
    return s;
}

} // namespace detail

/// EM for a diagonal GMM on the masked cells of `view`. Missing cells enter
/// neither responsibilities nor parameter updates. Components start at data
/// points picked by a seeded farthest-point sweep.
inline GmmFit fit_gmm_em(const SubsetView& view, Eigen::Index num_components, std::uint64_t seed,
                         const EmOptions& opt = {}) {
    if (view.data == nullptr || view.records.empty() || view.features.empty() || view.times.empty()) {
        throw ConfigError("fit_gmm_em: empty subset");
    }
    const auto n = static_cast<Eigen::Index>(view.records.size());
    if (num_components < 1 || num_components > n) {
        throw ConfigError("fit_gmm_em: N_C=" + std::to_string(num_components) + " must lie in [1, " +
                          std::to_string(n) + "]");
    }
    const Eigen::Index D = view.dim();
    Matrix X(n, D), M(n, D);
    {
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> Xr(n, D), Mr(n, D);
        for (Eigen::Index i = 0; i < n; ++i) {
            detail::flatten_record(view.data->records[view.records[i]], view.features, view.times,
                                   view.padding_as_missing, Xr.row(i).data(), Mr.row(i).data());
        }
        X = Xr;
        M = Mr;
    }

    // Observed-cell mean and variance per dimension.
    Vector dim_mean = Vector::Zero(D), dim_var = Vector::Ones(D);
    for (Eigen::Index d = 0; d < D; ++d) {
        const double cnt = M.col(d).sum();
        if (cnt > 0) {
            dim_mean(d) = X.col(d).cwiseProduct(M.col(d)).sum() / cnt;
            const double ss = ((X.col(d).array() - dim_mean(d)).square() * M.col(d).array()).sum();
            dim_var(d) = std::max(ss / cnt, opt.variance_floor);
        }
    }

    GmmFit fit;
    GmmParams& g = fit.params;
    g.feature_idx = view.features;
    g.time_idx = view.times;
    const Eigen::Index C = num_components;
    g.means.resize(C, D);
    g.variances = dim_var.transpose().replicate(C, 1);
    g.weights = Vector::Constant(C, 1.0 / static_cast<double>(C));

    auto center_from_point = [&](Eigen::Index i) {
        Vector c(D);
        for (Eigen::Index d = 0; d < D; ++d) {
            c(d) = M(i, d) != 0.0 ? X(i, d) : dim_mean(d);
        }
        return c;
    };

    Rng rng(seed);
    {
        std::vector<Eigen::Index> chosen{static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)))};
        Vector nearest = Vector::Constant(n, std::numeric_limits<double>::infinity());
        const Vector ones = Vector::Ones(D);
        while (static_cast<Eigen::Index>(chosen.size()) < C) {
            const Vector last = center_from_point(chosen.back());
            for (Eigen::Index i = 0; i < n; ++i) {
                nearest(i) = std::min(nearest(i), detail::masked_sqdist(X, M, i, last, ones));
            }
            for (auto c : chosen) {
                nearest(c) = -1.0;
            }
            Eigen::Index best = 0;
            nearest.maxCoeff(&best);
            chosen.push_back(best);
        }
        for (Eigen::Index c = 0; c < C; ++c) {
            g.means.row(c) = center_from_point(chosen[c]).transpose();
        }
    }

    std::vector<bool> reseeded(static_cast<std::size_t>(C), false);
    for (int iter = 0;; ++iter) {
        Matrix resp = detail::joint_log_density(X, M, g);
        const Vector ll_rows = detail::log_normalize_rows(resp);
        const double ll = ll_rows.sum();
        fit.loglik.push_back(ll);
        const std::size_t k = fit.loglik.size();
        const bool restart_pending = !fit.restarts.empty() && fit.restarts.back() == k - 1;
        if (k >= 2 && !restart_pending &&
            std::abs(ll - fit.loglik[k - 2]) < opt.rel_tol * std::max(1.0, std::abs(fit.loglik[k - 2]))) {
            break;
        }
        if (iter >= opt.max_iters) {
            break;
        }

        // M-step.
        const Vector Nc = resp.colwise().sum().transpose();
        bool structural_change = false;
        std::vector<Eigen::Index> keep;
        for (Eigen::Index c = 0; c < g.num_components(); ++c) {
            const double w = Nc(c) / static_cast<double>(n);
            if (w >= 1e-8) {
                keep.push_back(c);
                continue;
            }
            structural_change = true;
            if (!reseeded[c]) {
                reseeded[c] = true;
                Eigen::Index worst = 0;
                ll_rows.minCoeff(&worst);
                g.means.row(c) = center_from_point(worst).transpose();
                g.variances.row(c) = dim_var.transpose();
                resp.col(c).setZero();
                resp(worst, c) = 1.0;
                keep.push_back(c);
            } else {
                log::warn("gmm: pruning degenerate component " + std::to_string(c));
            }
        }
        if (static_cast<Eigen::Index>(keep.size()) != g.num_components()) {
            Matrix r2(n, static_cast<Eigen::Index>(keep.size()));
            GmmParams h;
            h.feature_idx = g.feature_idx;
            h.time_idx = g.time_idx;
            h.means.resize(r2.cols(), D);
            h.variances.resize(r2.cols(), D);
            std::vector<bool> rs;
            for (std::size_t q = 0; q < keep.size(); ++q) {
                r2.col(static_cast<Eigen::Index>(q)) = resp.col(keep[q]);
                h.means.row(static_cast<Eigen::Index>(q)) = g.means.row(keep[q]);
                h.variances.row(static_cast<Eigen::Index>(q)) = g.variances.row(keep[q]);
                rs.push_back(reseeded[keep[q]]);
            }
            resp = std::move(r2);
            g = std::move(h);
            reseeded = std::move(rs);
        }
        const Vector Nk = resp.colwise().sum().transpose();
        g.weights = Nk / Nk.sum();
        const Matrix RM = resp.transpose() * M;                         // C x D observed mass
        const Matrix RX = resp.transpose() * X.cwiseProduct(M);         // C x D weighted sums
        const Matrix RXX = resp.transpose() * X.cwiseProduct(X).cwiseProduct(M);
        for (Eigen::Index c = 0; c < g.num_components(); ++c) {
            for (Eigen::Index d = 0; d < D; ++d) {
                const double mass = RM(c, d);
                if (mass <= 1e-300) {
                    continue;
                }
                const double mu = RX(c, d) / mass;
                const double var = RXX(c, d) / mass - mu * mu;
                g.means(c, d) = mu;
                g.variances(c, d) = std::max(var, opt.variance_floor);
            }
        }
        if (structural_change) {
            fit.restarts.push_back(fit.loglik.size());
        }
    }
    return fit;
}

/// Posterior component probabilities of one record under `g`. A record with
/// none of the selected cells observed gets the uniform vector and a warning.
inline Vector posterior(const GmmParams& g, const MtsRecord& rec, bool padding_as_missing = false) {
    const Eigen::Index D = g.dim();
    Eigen::Matrix<double, 1, Eigen::Dynamic> x(D), m(D);
    detail::flatten_record(rec, g.feature_idx, g.time_idx, padding_as_missing, x.data(), m.data());
    const Eigen::Index C = g.num_components();
    if (m.sum() == 0.0) {
        log::warn("tck: record '" + rec.id + "' has no observed cells in a mixture subset; uniform posterior");
        return Vector::Constant(C, 1.0 / static_cast<double>(C));
    }
    Matrix logp = detail::joint_log_density(x, m, g);
    detail::log_normalize_rows(logp);
    return logp.row(0).transpose();
}

struct TckConfig {
    std::size_t K = 30;
    Eigen::Index N_C = 40;
    double record_fraction = 0.8;
    double min_dim_fraction = 0.6;
    double max_dim_fraction = 1.0;
    EmOptions em;
    bool padding_as_missing = false;
    std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const TckConfig& c) {
    return {{"K", c.K},
            {"N_C", c.N_C},
            {"record_fraction", c.record_fraction},
            {"min_dim_fraction", c.min_dim_fraction},
            {"max_dim_fraction", c.max_dim_fraction},
            {"em_iters", c.em.max_iters},
            {"em_rel_tol", c.em.rel_tol},
            {"variance_floor", c.em.variance_floor},
            {"padding_as_missing", c.padding_as_missing},
            {"seed", c.seed}};
}

struct TckModel {
    std::vector<GmmParams> gmms;
    TckConfig config;
    std::vector<std::string> feature_names;
    Eigen::Index T = 0;

    /// Diagnostics from fitting; not serialized.
    std::vector<GmmFit> fits;
};

namespace detail {

/// Size of a random coordinate subset: strictly fewer than n when n >= 2.
inline std::size_t subset_size(std::size_t n, double lo, double hi, Rng& rng) {
    if (n <= 1) {
        return n;
    }
    const double u = rng.uniform(lo, hi);
    auto k = static_cast<std::size_t>(std::floor(u * static_cast<double>(n)));
    return std::clamp<std::size_t>(k, 1, n - 1);
}

template <typename T>
std::vector<T> sorted_sample(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<T> all(n);
    std::iota(all.begin(), all.end(), T{0});
    rng.shuffle(all);
    all.resize(k);
    std::sort(all.begin(), all.end());
    return all;
}

} // namespace detail

/// Fits K mixtures, each on a random subset of records, features, and times.
inline TckModel fit_tck(const Dataset& train, const TckConfig& cfg, std::size_t workers = 1) {
    if (cfg.K < 1) {
        throw ConfigError("tck: K must be at least 1");
    }
    if (cfg.N_C < 1) {
        throw ConfigError("tck: N_C must be at least 1");
    }
    if (!(cfg.record_fraction > 0.0 && cfg.record_fraction <= 1.0) ||
        !(cfg.min_dim_fraction > 0.0 && cfg.min_dim_fraction <= cfg.max_dim_fraction && cfg.max_dim_fraction <= 1.0)) {
        throw ConfigError("tck: subsample fractions must lie in (0, 1]");
    }
    if (train.size() < 2 || train.num_features() < 1 || train.T < 1) {
        throw ConfigError("tck: training set must have at least 2 records");
    }
    const auto n_sub = std::max<std::size_t>(
        2, static_cast<std::size_t>(std::llround(cfg.record_fraction * static_cast<double>(train.size()))));
    if (n_sub > train.size()) {
        throw ConfigError("tck: subsample larger than the training set");
    }
    Eigen::Index nc = cfg.N_C;
    if (static_cast<std::size_t>(nc) > n_sub) {
        log::warn("tck: N_C=" + std::to_string(nc) + " exceeds the subsample size " + std::to_string(n_sub) +
                  "; clamped");
        nc = static_cast<Eigen::Index>(n_sub);
    }

    TckModel model;
    model.config = cfg;
    model.feature_names = train.feature_names;
    model.T = train.T;
    std::vector<SubsetView> views(cfg.K);
    for (std::size_t k = 0; k < cfg.K; ++k) {
        Rng rng(mix_seed(cfg.seed, k));
        auto& v = views[k];
        v.data = &train;
        v.padding_as_missing = cfg.padding_as_missing;
        v.records = detail::sorted_sample<std::size_t>(train.size(), n_sub, rng);
        const auto F = static_cast<std::size_t>(train.num_features());
        const auto T = static_cast<std::size_t>(train.T);
        v.features = detail::sorted_sample<Eigen::Index>(
            F, detail::subset_size(F, cfg.min_dim_fraction, cfg.max_dim_fraction, rng), rng);
        v.times = detail::sorted_sample<Eigen::Index>(
            T, detail::subset_size(T, cfg.min_dim_fraction, cfg.max_dim_fraction, rng), rng);
    }
    model.fits.resize(cfg.K);
    parallel_for(cfg.K, workers, [&](std::size_t k) {
        model.fits[k] = fit_gmm_em(views[k], nc, mix_seed(cfg.seed, 0x6d6d0000ULL + k), cfg.em);
    });
    for (const auto& f : model.fits) {
        model.gmms.push_back(f.params);
    }
    return model;
}

/// n x N_C posterior matrix of every record under mixture k.
inline Matrix posterior_matrix(const GmmParams& g, const Dataset& ds, bool padding_as_missing) {
    Matrix P(static_cast<Eigen::Index>(ds.size()), g.num_components());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        P.row(static_cast<Eigen::Index>(i)) = posterior(g, ds.records[i], padding_as_missing).transpose();
    }
    return P;
}

/// K(i, j) = sum over mixtures of <posterior_i, posterior_j>. When A and B hold
/// the same ids the result is exactly symmetric.
inline SimilarityMatrix tck_kernel_matrix(const TckModel& model, const Dataset& A, const Dataset& B,
                                          std::size_t workers = 1) {
    if (A.feature_names != model.feature_names || B.feature_names != model.feature_names || A.T != model.T ||
        B.T != model.T) {
        throw DataError("tck_kernel_matrix: dataset schema differs from the training schema");
    }
    const std::size_t K = model.gmms.size();
    const bool square = A.ids() == B.ids();
    std::vector<Matrix> PA(K), PB(K);
    parallel_for(K, workers, [&](std::size_t k) {
        PA[k] = posterior_matrix(model.gmms[k], A, model.config.padding_as_missing);
        if (!square) {
            PB[k] = posterior_matrix(model.gmms[k], B, model.config.padding_as_missing);
        }
    });
    SimilarityMatrix out;
    out.values = Matrix::Zero(static_cast<Eigen::Index>(A.size()), static_cast<Eigen::Index>(B.size()));
    for (std::size_t k = 0; k < K; ++k) {
        out.values.noalias() += PA[k] * (square ? PA[k] : PB[k]).transpose();
    }
    if (square) {
        const Matrix sym = 0.5 * (out.values + out.values.transpose());
        out.values = sym;
    }
    out.row_ids = A.ids();
    out.col_ids = B.ids();
    out.provenance = {{"kind", "similarity"}, {"method", "TCK"}, {"config", to_json(model.config)}};
    return out;
}

inline nlohmann::json tck_model_to_json(const TckModel& m) {
    nlohmann::json j;
    j["format"] = "mts-tck-model";
    j["version"] = 1;
    j["config"] = to_json(m.config);
    j["feature_names"] = m.feature_names;
    j["T"] = m.T;
    j["gmms"] = nlohmann::json::array();
    for (const auto& g : m.gmms) {
        j["gmms"].push_back({{"feature_idx", g.feature_idx},
                             {"time_idx", g.time_idx},
                             {"weights", vector_to_json(g.weights)},
                             {"means", matrix_to_json(g.means)},
                             {"variances", matrix_to_json(g.variances)}});
    }
    return j;
}

inline TckModel tck_model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "mts-tck-model" || j.at("version") != 1) {
            throw DataError("not a version-1 TCK model document");
        }
        TckModel m;
        const auto& c = j.at("config");
        m.config.K = c.at("K").get<std::size_t>();
        m.config.N_C = c.at("N_C").get<Eigen::Index>();
        m.config.record_fraction = c.at("record_fraction").get<double>();
        m.config.min_dim_fraction = c.at("min_dim_fraction").get<double>();
        m.config.max_dim_fraction = c.at("max_dim_fraction").get<double>();
        m.config.em.max_iters = c.at("em_iters").get<int>();
        m.config.em.rel_tol = c.at("em_rel_tol").get<double>();
        m.config.em.variance_floor = c.at("variance_floor").get<double>();
        m.config.padding_as_missing = c.at("padding_as_missing").get<bool>();
        m.config.seed = c.at("seed").get<std::uint64_t>();
        m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        m.T = j.at("T").get<Eigen::Index>();
        for (const auto& jg : j.at("gmms")) {
            GmmParams g;
            g.feature_idx = jg.at("feature_idx").get<std::vector<Eigen::Index>>();
            g.time_idx = jg.at("time_idx").get<std::vector<Eigen::Index>>();
            g.weights = vector_from_json(jg.at("weights"));
            g.means = matrix_from_json(jg.at("means"));
            g.variances = matrix_from_json(jg.at("variances"));
            if (g.means.rows() != g.weights.size() || g.variances.rows() != g.weights.size() ||
                g.means.cols() != static_cast<Eigen::Index>(g.feature_idx.size() * g.time_idx.size())) {
                throw DataError("TCK model: inconsistent mixture shapes");
            }
            m.gmms.push_back(std::move(g));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("TCK model JSON: ") + e.what());
    }
}

} // namespace mtsstrat

#endif
