#ifndef MTSSTRAT_CLASSIFY_HPP
#define MTSSTRAT_CLASSIFY_HPP

#include "dataset.hpp"
#include "transform.hpp"

#include <optional>

namespace mtsstrat {

/// Hyperparameter grids used by the reference protocol.
inline const std::vector<double> kLrLambdaGrid = {1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1,
                                                  5e-1, 7.5e-1, 1, 3, 5, 8, 10, 12, 15};
inline const std::vector<double> kNuGrid = {1e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 5e-1, 7.5e-1, 9e-1};
inline const std::vector<double> kGammaGrid = {1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 5e-2, 1e-1, 1};

namespace detail {

inline void check_binary_labels(const std::vector<int>& y, std::size_t n, const char* who) {
    if (y.size() != n) {
        throw DataError(std::string(who) + ": labels do not align with samples");
    }
    bool pos = false, neg = false;
    for (int v : y) {
        if (v != 0 && v != 1) {
            throw DataError(std::string(who) + ": labels must be 0 or 1");
        }
        (v ? pos : neg) = true;
    }
    if (!pos || !neg) {
        throw DataError(std::string(who) + ": both classes must be present");
    }
}

inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double z) {
    if (z >= 0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Logistic regression

struct LrModel {
    Vector weights;
    double bias = 0.0;
    double lambda = 0.0;
    int iterations = 0;
    double gradient_norm = 0.0;
    std::vector<double> objective_trace;
};

/// Mean binary cross-entropy plus (lambda / 2) ||w||^2; the bias is not penalized.
inline double lr_objective(const Matrix& X, const std::vector<int>& y, double lambda, const Vector& w, double b) {
    const Vector z = (X * w).array() + b;
    double s = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        s += detail::softplus(z(i)) - y[i] * z(i);
    }
    return s / static_cast<double>(X.rows()) + 0.5 * lambda * w.squaredNorm();
}

/// Gradient of lr_objective; the last entry is d/db.
inline Vector lr_gradient(const Matrix& X, const std::vector<int>& y, double lambda, const Vector& w, double b) {
    const Vector z = (X * w).array() + b;
    Vector resid(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        resid(i) = detail::sigmoid(z(i)) - y[i];
    }
    Vector g(w.size() + 1);
    const double inv_n = 1.0 / static_cast<double>(X.rows());
    g.head(w.size()) = inv_n * (X.transpose() * resid) + lambda * w;
    g(w.size()) = inv_n * resid.sum();
    return g;
}

struct LrOptions {
    int max_iters = 3000;
    double tol = 1e-6;
};

/// Gradient descent from zero with Armijo backtracking. Each line search
/// starts from the Barzilai-Borwein step when it is defined.
inline LrModel train_lr(const Matrix& X, const std::vector<int>& y, double lambda, const LrOptions& opt = {}) {
    if (X.rows() < 2) {
        throw DataError("train_lr: need at least 2 samples");
    }
    detail::check_binary_labels(y, static_cast<std::size_t>(X.rows()), "train_lr");
    if (!X.allFinite()) {
        throw DataError("train_lr: non-finite features");
    }
    if (!(lambda >= 0.0)) {
        throw ConfigError("train_lr: lambda must be nonnegative");
    }
    const Eigen::Index d = X.cols();
    LrModel m;
    m.lambda = lambda;
    Vector theta = Vector::Zero(d + 1);
    double f = lr_objective(X, y, lambda, theta.head(d), theta(d));
    m.objective_trace.push_back(f);
    Vector g = lr_gradient(X, y, lambda, theta.head(d), theta(d));
    Vector theta_prev, g_prev;
    double step = 1.0;
    int it = 0;
    for (; it < opt.max_iters; ++it) {
        const double gn2 = g.squaredNorm();
        if (std::sqrt(gn2) < opt.tol) {
            break;
        }
        step = std::min(step * 2.0, 1e10);
        if (it > 0) {
            const Vector s = theta - theta_prev;
            const double sy = s.dot(g - g_prev);
            if (sy > 0.0) {
                step = std::clamp(s.squaredNorm() / sy, 1e-10, 1e10);
            }
        }
        bool accepted = false;
        Vector trial;
        double f_trial = f;
        while (step >= 1e-20) {
            trial = theta - step * g;
            f_trial = lr_objective(X, y, lambda, trial.head(d), trial(d));
            if (f_trial <= f - 1e-4 * step * gn2) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            break;
        }
        theta_prev = theta;
        g_prev = g;
        theta = trial;
        f = f_trial;
        m.objective_trace.push_back(f);
        g = lr_gradient(X, y, lambda, theta.head(d), theta(d));
    }
    m.weights = theta.head(d);
    m.bias = theta(d);
    m.iterations = it;
    m.gradient_norm = g.norm();
    return m;
}

inline Vector lr_decision(const LrModel& m, const Matrix& X) {
    if (X.cols() != m.weights.size()) {
        throw DataError("predict_lr: width mismatch (" + std::to_string(X.cols()) + " vs " +
                        std::to_string(m.weights.size()) + ")");
    }
    return (X * m.weights).array() + m.bias;
}

/// Probabilities logistic(w.x + b).
inline Vector predict_lr(const LrModel& m, const Matrix& X) {
    Vector z = lr_decision(m, X);
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        z(i) = detail::sigmoid(z(i));
    }
    return z;
}

// ---------------------------------------------------------------------------
// nu-SVM

struct SvmOptions {
    double eps = 1e-3;
    long max_iters = 100000;
    bool clip_indefinite = true;
};

/// Decision function sum_j coef_j k(x, x_j) + bias over all training points;
/// coef_j is zero outside `support`.
struct SvmModel {
    Vector coef;
    double bias = 0.0;
    double nu = 0.0;
    std::vector<std::size_t> support;
    std::vector<std::string> support_ids;
    std::optional<KernelSpec> kernel; // empty: precomputed kernel
    Matrix train_vectors;

    // Solver diagnostics.
    Vector alpha; // dual variables in [0, 1], sum = nu * n
    double r = 1.0;
    long iterations = 0;
    double max_violation = 0.0;
    Vector train_decision;
};

/// Largest feasible nu for the class balance.
inline double nu_upper_bound(const std::vector<int>& y) {
    std::size_t pos = 0;
    for (int v : y) {
        pos += v == 1;
    }
    const double n = static_cast<double>(y.size());
    return 2.0 * static_cast<double>(std::min(pos, y.size() - pos)) / n;
}

/// Solves min 1/2 a'Qa s.t. 0 <= a_i <= 1, sum_{y=+1} a = sum_{y=-1} a = nu n / 2
/// by SMO on maximal violating pairs within a class.
inline SvmModel train_nusvm(const Matrix& K_in, const std::vector<int>& y01, double nu, const SvmOptions& opt = {}) {
    const Eigen::Index n = K_in.rows();
    if (K_in.cols() != n) {
        throw DataError("train_nusvm: kernel must be square");
    }
    detail::check_binary_labels(y01, static_cast<std::size_t>(n), "train_nusvm");
    if (!(nu > 0.0 && nu <= 1.0)) {
        throw ConfigError("train_nusvm: nu must lie in (0, 1]");
    }
    const double bound = nu_upper_bound(y01);
    if (nu > bound + 1e-12) {
        throw ConfigError("train_nusvm: nu=" + format_double(nu) + " is infeasible; must be <= 2 min(n+, n-)/n = " +
                          format_double(bound));
    }
    if (!K_in.allFinite()) {
        throw DataError("train_nusvm: non-finite kernel");
    }
    Matrix K = opt.clip_indefinite ? clip_to_psd(K_in) : K_in;

    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        y(i) = y01[i] ? 1.0 : -1.0;
    }
    Vector alpha = Vector::Zero(n);
    for (double cls : {1.0, -1.0}) {
        double remaining = nu * static_cast<double>(n) / 2.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (y(i) == cls) {
                alpha(i) = std::min(1.0, remaining);
                remaining -= alpha(i);
            }
        }
    }
    auto Qcol = [&](Eigen::Index i) -> Vector { return (y * y(i)).cwiseProduct(K.col(i)); };
    Vector G = Vector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (alpha(i) != 0.0) {
            G += alpha(i) * Qcol(i);
        }
    }

    SvmModel m;
    m.nu = nu;
    long it = 0;
    double max_viol = 0.0;
    // SMO within each class: i is the maximal violator from below, j the
    // partner with the largest second-order decrease; max_viol is the
    // first-order gap used for stopping.
    auto smo = [&](double tol, long limit) {
        for (; it < limit; ++it) {
            Eigen::Index best_i = -1, best_j = -1;
            double best_gain = 0.0;
            max_viol = 0.0;
            for (double cls : {1.0, -1.0}) {
                Eigen::Index i_up = -1;
                double g_up = std::numeric_limits<double>::infinity();
                double g_dn = -std::numeric_limits<double>::infinity();
                for (Eigen::Index t = 0; t < n; ++t) {
                    if (y(t) != cls) {
                        continue;
                    }
                    if (alpha(t) < 1.0 && G(t) < g_up) {
                        g_up = G(t);
                        i_up = t;
                    }
                    if (alpha(t) > 0.0) {
                        g_dn = std::max(g_dn, G(t));
                    }
                }
                if (i_up < 0 || !(g_dn > g_up)) {
                    continue;
                }
                max_viol = std::max(max_viol, g_dn - g_up);
                for (Eigen::Index t = 0; t < n; ++t) {
                    if (y(t) != cls || !(alpha(t) > 0.0) || !(G(t) > g_up)) {
                        continue;
                    }
                    const double diff = G(t) - g_up;
                    const double curv = std::max(K(i_up, i_up) + K(t, t) - 2.0 * K(i_up, t), 1e-12);
                    const double gain = diff * diff / curv;
                    if (gain > best_gain) {
                        best_gain = gain;
                        best_i = i_up;
                        best_j = t;
                    }
                }
            }
            if (max_viol < tol || best_i < 0) {
                break;
            }
            const Eigen::Index i = best_i, j = best_j;
            const double curvature = std::max(K(i, i) + K(j, j) - 2.0 * K(i, j), 1e-12);
            double step = (G(j) - G(i)) / curvature;
            step = std::min({step, 1.0 - alpha(i), alpha(j)});
            if (step <= 0.0) {
                break;
            }
            alpha(i) += step;
            alpha(j) -= step;
            if (alpha(i) > 1.0 - 1e-15) {
                alpha(i) = 1.0;
            }
            if (alpha(j) < 1e-15) {
                alpha(j) = 0.0;
            }
            G += step * (Qcol(i) - Qcol(j));
        }
    };

    // Per-class thresholds from free variables, or the bound midpoint.
    auto thresholds = [&](double& rho_out, double& r_out) {
        double r_cls[2];
        for (int c = 0; c < 2; ++c) {
            const double cls = c == 0 ? 1.0 : -1.0;
            double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity();
            double sum_free = 0.0;
            int nr_free = 0;
            for (Eigen::Index t = 0; t < n; ++t) {
                if (y(t) != cls) {
                    continue;
                }
                if (alpha(t) >= 1.0) {
                    lb = std::max(lb, G(t));
                } else if (alpha(t) <= 0.0) {
                    ub = std::min(ub, G(t));
                } else {
                    sum_free += G(t);
                    ++nr_free;
                }
            }
            if (nr_free > 0) {
                r_cls[c] = sum_free / nr_free;
            } else if (std::isfinite(ub) && std::isfinite(lb)) {
                r_cls[c] = 0.5 * (ub + lb);
            } else {
                r_cls[c] = std::isfinite(ub) ? ub : lb;
            }
        }
        rho_out = 0.5 * (r_cls[0] - r_cls[1]);
        r_out = 0.5 * (r_cls[0] + r_cls[1]);
    };

    // Active-set polish: minimize exactly over the face fixed by the current
    // bounded variables, stepping back onto the box when a free variable
    // would leave it. G is recomputed from scratch, discarding drift.
    auto polish = [&]() {
        for (Eigen::Index round = 0; round < n; ++round) {
            std::vector<Eigen::Index> free_idx;
            for (Eigen::Index t = 0; t < n; ++t) {
                if (alpha(t) > 0.0 && alpha(t) < 1.0) {
                    free_idx.push_back(t);
                }
            }
            const auto f = static_cast<Eigen::Index>(free_idx.size());
            if (f == 0) {
                return;
            }
            Matrix A = Matrix::Zero(f + 2, f + 2);
            Vector rhs = Vector::Zero(f + 2);
            for (Eigen::Index a = 0; a < f; ++a) {
                const Eigen::Index i = free_idx[a];
                for (Eigen::Index b = 0; b < f; ++b) {
                    A(a, b) = y(i) * y(free_idx[b]) * K(i, free_idx[b]);
                }
                const Eigen::Index c = y(i) > 0 ? 0 : 1;
                A(a, f + c) = 1.0;
                A(f + c, a) = 1.0;
                for (Eigen::Index t = 0; t < n; ++t) {
                    if (alpha(t) >= 1.0) {
                        rhs(a) -= y(i) * y(t) * K(i, t);
                    }
                }
            }
            for (Eigen::Index c = 0; c < 2; ++c) {
                const double cls = c == 0 ? 1.0 : -1.0;
                double fixed = 0.0;
                for (Eigen::Index t = 0; t < n; ++t) {
                    if (y(t) == cls && alpha(t) >= 1.0) {
                        fixed += 1.0;
                    }
                }
                rhs(f + c) = nu * static_cast<double>(n) / 2.0 - fixed;
            }
            const Vector sol = A.completeOrthogonalDecomposition().solve(rhs);
            if (!sol.allFinite()) {
                return;
            }
            double step = 1.0;
            Eigen::Index blocking = -1;
            for (Eigen::Index a = 0; a < f; ++a) {
                const double cur = alpha(free_idx[a]);
                const double d = sol(a) - cur;
                const double limit = d < 0.0 ? cur / -d : d > 0.0 ? (1.0 - cur) / d : 1.0;
                if (limit < step) {
                    step = limit;
                    blocking = a;
                }
            }
            for (Eigen::Index a = 0; a < f; ++a) {
                const Eigen::Index i = free_idx[a];
                alpha(i) = std::clamp(alpha(i) + step * (sol(a) - alpha(i)), 0.0, 1.0);
            }
            if (blocking >= 0) {
                const Eigen::Index i = free_idx[blocking];
                alpha(i) = sol(blocking) < alpha(i) ? 0.0 : 1.0;
            }
            G = Vector::Zero(n);
            for (Eigen::Index t = 0; t < n; ++t) {
                if (alpha(t) != 0.0) {
                    G += alpha(t) * Qcol(t);
                }
            }
            if (blocking < 0) {
                return;
            }
        }
    };

    // The gradient scales with nu n, so a fixed tolerance can leave the sign
    // of a small margin scale unresolved; tighten and resume until it is.
    constexpr double kTightestTol = 1e-12;
    double tol = opt.eps;
    double rho = 0.0, r = 0.0;
    smo(tol, opt.max_iters);
    thresholds(rho, r);
    while (!(r > 10.0 * tol) && tol > kTightestTol && it < opt.max_iters) {
        tol = std::max(tol * 1e-3, kTightestTol);
        // Alternate exact face solves with short SMO bursts that change the face.
        for (;;) {
            polish();
            const long before = it;
            smo(tol, std::min(opt.max_iters, it + 10 * static_cast<long>(n)));
            if (max_viol < tol || it == before || it >= opt.max_iters) {
                break;
            }
        }
        thresholds(rho, r);
    }
    if (it >= opt.max_iters) {
        log::warn("train_nusvm: iteration limit reached (max violation " + format_double(max_viol) + ")");
    }
    // At the optimum r = a'Qa / (nu n) >= 0; r that stays at the solver's noise
    // level means the reduced class hulls overlap and the optimum is w = 0.
    if (!(r > 10.0 * tol)) {
        throw ConfigError("train_nusvm: nu=" + format_double(nu) + " gives a trivial solution (margin scale r=" +
                          format_double(r) + "); nu is below the smallest usable value for these data");
    }
    m.alpha = alpha;
    m.r = r;
    m.iterations = it;
    m.max_violation = max_viol;
    m.coef = alpha.cwiseProduct(y) / r;
    m.bias = -rho / r;
    for (Eigen::Index t = 0; t < n; ++t) {
        if (alpha(t) > 0.0) {
            m.support.push_back(static_cast<std::size_t>(t));
        }
    }
    m.train_decision = K * m.coef + Vector::Constant(n, m.bias);
    return m;
}

/// nu-SVM with a kernel evaluated on feature vectors.
inline SvmModel train_nusvm(const Matrix& X, const std::vector<int>& y, const KernelSpec& spec, double nu,
                            const SvmOptions& opt = {}) {
    auto m = train_nusvm(kernel_matrix(X, X, spec), y, nu, opt);
    m.kernel = spec;
    m.train_vectors = X;
    return m;
}

/// Scores from a precomputed cross kernel whose columns are either all training
/// points or only the support vectors, in model order.
inline Vector predict_svm_precomputed(const SvmModel& m, const Matrix& K_cross) {
    if (K_cross.cols() == m.coef.size()) {
        return (K_cross * m.coef).array() + m.bias;
    }
    if (K_cross.cols() == static_cast<Eigen::Index>(m.support.size())) {
        Vector c(static_cast<Eigen::Index>(m.support.size()));
        for (std::size_t s = 0; s < m.support.size(); ++s) {
            c(static_cast<Eigen::Index>(s)) = m.coef(static_cast<Eigen::Index>(m.support[s]));
        }
        return (K_cross * c).array() + m.bias;
    }
    throw DataError("predict_svm: cross kernel has " + std::to_string(K_cross.cols()) +
                    " columns; expected training or support-vector count");
}

inline Vector predict_svm(const SvmModel& m, const Matrix& X) {
    if (!m.kernel) {
        return predict_svm_precomputed(m, X);
    }
    return predict_svm_precomputed(m, kernel_matrix(X, m.train_vectors, *m.kernel));
}

/// Fractions used by the nu-property: margin errors (y f < 1 beyond the
/// solver tolerance) and support vectors (alpha > 0).
struct NuProperty {
    double margin_error_fraction = 0.0;
    double support_fraction = 0.0;
};

inline NuProperty nu_property(const SvmModel& m, const std::vector<int>& y01, double eps = 1e-3) {
    NuProperty p;
    const auto n = static_cast<double>(y01.size());
    const double slack = eps / m.r;
    for (std::size_t i = 0; i < y01.size(); ++i) {
        const double yi = y01[i] ? 1.0 : -1.0;
        if (yi * m.train_decision(static_cast<Eigen::Index>(i)) < 1.0 - slack) {
            p.margin_error_fraction += 1.0;
        }
        if (m.alpha(static_cast<Eigen::Index>(i)) > 0.0) {
            p.support_fraction += 1.0;
        }
    }
    p.margin_error_fraction /= n;
    p.support_fraction /= n;
    return p;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Mann-Whitney AUC via average ranks; ties count one half.
inline double roc_auc(const Vector& scores, const std::vector<int>& labels) {
    const auto n = static_cast<std::size_t>(scores.size());
    if (labels.size() != n) {
        throw DataError("roc_auc: scores and labels differ in length");
    }
    std::size_t n_pos = 0;
    for (int v : labels) {
        if (v != 0 && v != 1) {
            throw DataError("roc_auc: labels must be 0 or 1");
        }
        n_pos += v;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw DataError("roc_auc: undefined with a single class");
    }
    if (!scores.allFinite()) {
        throw NumericError("roc_auc: non-finite scores");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores(a) < scores(b); });
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores(order[j]) == scores(order[i])) {
            ++j;
        }
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) {
                rank_sum += avg_rank;
            }
        }
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

struct SummaryStats {
    double median = 0, q25 = 0, q75 = 0, min = 0, max = 0, mean = 0;
};

/// Quantiles by linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) {
        throw DataError("quantile of an empty sample");
    }
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline SummaryStats summarize(const std::vector<double>& v) {
    SummaryStats s;
    s.median = quantile(v, 0.5);
    s.q25 = quantile(v, 0.25);
    s.q75 = quantile(v, 0.75);
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    return s;
}

// ---------------------------------------------------------------------------
// Grid search

/// One hyperparameter combination; unset knobs are NaN.
struct GridPoint {
    double lambda = std::numeric_limits<double>::quiet_NaN();
    double nu = std::numeric_limits<double>::quiet_NaN();
    double gamma = std::numeric_limits<double>::quiet_NaN();

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        if (!std::isnan(lambda)) {
            j["lambda"] = lambda;
        }
        if (!std::isnan(nu)) {
            j["nu"] = nu;
        }
        if (!std::isnan(gamma)) {
            j["gamma"] = gamma;
        }
        return j;
    }
};

/// Cartesian product; an empty list leaves that knob unset.
inline std::vector<GridPoint> expand_grid(const std::vector<double>& lambdas, const std::vector<double>& nus,
                                          const std::vector<double>& gammas) {
    const std::vector<double> none{std::numeric_limits<double>::quiet_NaN()};
    std::vector<GridPoint> out;
    for (double l : lambdas.empty() ? none : lambdas) {
        for (double v : nus.empty() ? none : nus) {
            for (double g : gammas.empty() ? none : gammas) {
                out.push_back({l, v, g});
            }
        }
    }
    return out;
}

struct GridResult {
    GridPoint point;
    std::vector<double> fold_aucs;
    double mean_auc = std::numeric_limits<double>::quiet_NaN();
    bool feasible = false;
    std::string error;
};

struct GridSearchResult {
    std::size_t best = 0;
    std::vector<GridResult> results;

    const GridResult& best_result() const { return results.at(best); }
};

/// True when a should win over b at equal mean AUC: larger lambda, then
/// larger nu, then smaller gamma.
inline bool more_regularized(const GridPoint& a, const GridPoint& b) {
    auto cmp = [](double x, double y) { return std::isnan(x) || std::isnan(y) ? 0 : (x > y) - (x < y); };
    if (int c = cmp(a.lambda, b.lambda)) {
        return c > 0;
    }
    if (int c = cmp(a.nu, b.nu)) {
        return c > 0;
    }
    if (int c = cmp(a.gamma, b.gamma)) {
        return c < 0;
    }
    return false;
}

/// `evaluate(point, fold_index)` returns the validation AUC, or throws
/// ConfigError when the point is infeasible for that fold. Points run in
/// parallel; within a point folds run in order.
template <typename Evaluate>
GridSearchResult grid_search_cv(const std::vector<GridPoint>& grid, std::size_t num_folds, Evaluate&& evaluate,
                                std::size_t workers = 1) {
    if (grid.empty()) {
        throw ConfigError("grid_search_cv: empty grid");
    }
    if (num_folds == 0) {
        throw ConfigError("grid_search_cv: no folds");
    }
    GridSearchResult out;
    out.results.resize(grid.size());
    parallel_for(grid.size(), workers, [&](std::size_t g) {
        auto& res = out.results[g];
        res.point = grid[g];
        try {
            for (std::size_t f = 0; f < num_folds; ++f) {
                res.fold_aucs.push_back(evaluate(grid[g], f));
            }
            res.mean_auc = std::accumulate(res.fold_aucs.begin(), res.fold_aucs.end(), 0.0) /
                           static_cast<double>(num_folds);
            res.feasible = true;
        } catch (const ConfigError& e) {
            res.feasible = false;
            res.error = e.what();
            res.fold_aucs.clear();
        }
    });
    bool found = false;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const auto& r = out.results[g];
        if (!r.feasible) {
            continue;
        }
        if (!found) {
            out.best = g;
            found = true;
            continue;
        }
        const auto& b = out.results[out.best];
        if (r.mean_auc > b.mean_auc || (r.mean_auc == b.mean_auc && more_regularized(r.point, b.point))) {
            out.best = g;
        }
    }
    if (!found) {
        throw ConfigError("grid_search_cv: every grid point is infeasible (" + out.results.front().error + ")");
    }
    return out;
}

/// Per-replicate test AUCs with summary statistics.
struct EvalReport {
    std::string pipeline;
    std::vector<double> aucs;
    std::vector<GridPoint> chosen;
    std::vector<std::uint64_t> seeds;

    SummaryStats summary() const { return summarize(aucs); }
};

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["format"] = "mts-eval-report";
    j["version"] = 1;
    j["pipeline"] = r.pipeline;
    j["splits"] = nlohmann::json::array();
    for (std::size_t i = 0; i < r.aucs.size(); ++i) {
        j["splits"].push_back({{"replicate", i},
                               {"seed", i < r.seeds.size() ? r.seeds[i] : 0},
                               {"auc", r.aucs[i]},
                               {"hyperparameters", i < r.chosen.size() ? r.chosen[i].to_json() : nlohmann::json::object()}});
    }
    if (!r.aucs.empty()) {
        const auto s = r.summary();
        j["summary"] = {{"median", s.median}, {"q25", s.q25}, {"q75", s.q75},
                        {"min", s.min},       {"max", s.max}, {"mean", s.mean}};
    }
    return j;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "mts-eval-report") {
            throw DataError("not an evaluation report");
        }
        EvalReport r;
        r.pipeline = j.at("pipeline").get<std::string>();
        for (const auto& s : j.at("splits")) {
            r.aucs.push_back(s.at("auc").get<double>());
            r.seeds.push_back(s.at("seed").get<std::uint64_t>());
            GridPoint p;
            const auto& h = s.at("hyperparameters");
            if (h.contains("lambda")) {
                p.lambda = h["lambda"].get<double>();
            }
            if (h.contains("nu")) {
                p.nu = h["nu"].get<double>();
            }
            if (h.contains("gamma")) {
                p.gamma = h["gamma"].get<double>();
            }
            r.chosen.push_back(p);
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("evaluation report JSON: ") + e.what());
    }
}

inline nlohmann::json lr_model_to_json(const LrModel& m) {
    return {{"format", "mts-lr-model"}, {"version", 1},      {"weights", vector_to_json(m.weights)},
            {"bias", m.bias},           {"lambda", m.lambda}, {"iterations", m.iterations}};
}

inline LrModel lr_model_from_json(const nlohmann::json& j) {
    try {
        LrModel m;
        m.weights = vector_from_json(j.at("weights"));
        m.bias = j.at("bias").get<double>();
        m.lambda = j.at("lambda").get<double>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("LR model JSON: ") + e.what());
    }
}

inline nlohmann::json svm_model_to_json(const SvmModel& m) {
    nlohmann::json j{{"format", "mts-nusvm-model"}, {"version", 1},  {"nu", m.nu},
                     {"bias", m.bias},              {"coef", vector_to_json(m.coef)},
                     {"support", m.support},        {"support_ids", m.support_ids},
                     {"r", m.r},                    {"iterations", m.iterations}};
    if (m.kernel) {
        j["kernel"] = {{"kind", to_string(m.kernel->kind)}, {"gamma", m.kernel->gamma}};
        j["train_vectors"] = matrix_to_json(m.train_vectors);
    } else {
        j["kernel"] = "precomputed";
    }
    return j;
}

inline SvmModel svm_model_from_json(const nlohmann::json& j) {
    try {
        SvmModel m;
        m.nu = j.at("nu").get<double>();
        m.bias = j.at("bias").get<double>();
        m.coef = vector_from_json(j.at("coef"));
        m.support = j.at("support").get<std::vector<std::size_t>>();
        m.support_ids = j.at("support_ids").get<std::vector<std::string>>();
        m.r = j.at("r").get<double>();
        if (j.at("kernel").is_object()) {
            m.kernel = KernelSpec{parse_kernel_kind(j["kernel"].at("kind").get<std::string>()),
                                  j["kernel"].at("gamma").get<double>()};
            m.train_vectors = matrix_from_json(j.at("train_vectors"));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("SVM model JSON: ") + e.what());
    }
}

} // namespace mtsstrat

#endif
