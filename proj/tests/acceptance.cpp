// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria. Tolerances, budgets and seeds are fixed below.
#include "mtsstrat/pipeline.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <chrono>
#include <functional>
#include <iostream>
#include <sstream>

using namespace mtsstrat;

namespace {

constexpr double kDtwTol = 1e-10;
constexpr double kDtwBudgetSec = 10.0;
constexpr double kPsdRelTol = 1e-8;
constexpr double kEmTol = 1e-6;
constexpr double kTckBudgetSec = 60.0;
constexpr double kGradRelTol = 1e-5;
constexpr double kAucTol = 1e-12;
constexpr double kAriMin = 0.95;
constexpr int kPlantedC = 3;
constexpr double kSeparatedMedianMin = 0.90;
constexpr double kNullLo = 0.40, kNullHi = 0.60;
constexpr double kEndToEndBudgetSec = 600.0;
constexpr double kPdfMassTol = 0.02;
constexpr double kPerplexityTol = 1e-3;
constexpr double kProbeMin = 0.95;

constexpr std::uint64_t kDataSeed = 5;
constexpr std::uint64_t kRunSeed = 11;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Verdict()>& check) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
        v = check();
    } catch (const std::exception& e) {
        v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  C" << id << " " << name << ": " << v.detail << " ["
              << format_double(std::round(seconds_since(t0) * 100) / 100) << " s]" << std::endl;
}

std::string fmt(double x) {
    std::ostringstream s;
    s.precision(4);
    s << x;
    return s.str();
}

// ---------------------------------------------------------------------------

Verdict dtw_oracle() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    int checks = 0;
    for (int pair = 0; pair < 200; ++pair) {
        const Eigen::Index F = 1 + pair % 3, T = 1 + (pair / 3) % 4;
        const auto ds = oracle::random_mixed_dataset(2, F, T, 7000 + static_cast<std::uint64_t>(pair));
        const auto g = gower_spec_from(ds);
        const auto& A = ds.records[0].values;
        const auto& B = ds.records[1].values;
        const int t = static_cast<int>(T);
        for (Eigen::Index f = 0; f < F; ++f) {
            const Vector a = A.row(f).transpose(), b = B.row(f).transpose();
            const double ref = oracle::brute_dtw(t, t, [&](int i, int j) { return std::fabs(a(i) - b(j)); });
            worst = std::max(worst, std::abs(dtw_1d(a, b, abs_diff) - ref));
            ++checks;
        }
        const double dep = oracle::brute_dtw(t, t, [&](int i, int j) {
            double s = 0.0;
            for (Eigen::Index f = 0; f < F; ++f) {
                s += oracle::gower_scalar(A(f, i), B(f, j), g.feature_kinds[f], g.ranges[f]);
            }
            return s / static_cast<double>(F);
        });
        worst = std::max(worst, std::abs(dtw_dependent(A, B, g) - dep));
        double ind = 0.0;
        for (Eigen::Index f = 0; f < F; ++f) {
            ind += oracle::brute_dtw(t, t, [&](int i, int j) {
                return oracle::gower_scalar(A(f, i), B(f, j), g.feature_kinds[f], g.ranges[f]);
            });
        }
        worst = std::max(worst, std::abs(dtw_independent(A, B, g) - ind));
        checks += 2;
    }
    const double secs = seconds_since(t0);
    return {worst <= kDtwTol && secs < kDtwBudgetSec, std::to_string(checks) + " comparisons, max |err| " +
                                                          fmt(worst) + " (tol " + fmt(kDtwTol) + "), " + fmt(secs) +
                                                          " s (budget " + fmt(kDtwBudgetSec) + " s)"};
}

Verdict tck_validity() {
    const auto t0 = Clock::now();
    struct Case {
        std::size_t per_class, K;
        Eigen::Index N_C;
        double missing;
    };
    const std::vector<Case> cases = {{10, 5, 4, 0.0}, {20, 10, 8, 0.1}, {30, 10, 8, 0.25}, {30, 8, 6, 0.0}};
    bool ok = true;
    double worst_eig = 0.0, worst_drop = 0.0;
    std::size_t members = 0;
    std::string why;
    for (std::size_t c = 0; c < cases.size(); ++c) {
        SynthConfig sc;
        sc.n_negative = sc.n_positive = cases[c].per_class;
        sc.n_antibiotics = 3;
        sc.n_environmental = 3;
        sc.missing_rate = cases[c].missing;
        const auto ds = minmax_fit_transform(generate_synthetic(sc, 300 + c)).first;
        TckConfig tc;
        tc.K = cases[c].K;
        tc.N_C = cases[c].N_C;
        tc.seed = 40 + c;
        const auto model = fit_tck(ds, tc);
        const Matrix K = tck_kernel_matrix(model, ds, ds).values;
        const double asym = (K - K.transpose()).cwiseAbs().maxCoeff();
        const double min_eig = symmetric_eigen(K).eigenvalues().minCoeff();
        worst_eig = std::min(worst_eig, min_eig / K.trace());
        if (asym != 0.0 || min_eig < -kPsdRelTol * K.trace() || K.minCoeff() < 0.0 ||
            K.maxCoeff() > static_cast<double>(tc.K) + 1e-12) {
            ok = false;
            why += " case " + std::to_string(c) + " kernel invalid;";
        }
        for (const auto& fit : model.fits) {
            ++members;
            std::set<std::size_t> excused(fit.restarts.begin(), fit.restarts.end());
            for (std::size_t k = 1; k < fit.loglik.size(); ++k) {
                if (excused.count(k)) {
                    continue;
                }
                const double prev = fit.loglik[k - 1];
                const double drop = (prev - fit.loglik[k]) / std::max(1.0, std::abs(prev));
                worst_drop = std::max(worst_drop, drop);
                if (drop > kEmTol) {
                    ok = false;
                    why += " case " + std::to_string(c) + " EM decreased;";
                }
            }
        }
    }
    const double secs = seconds_since(t0);
    ok = ok && secs < kTckBudgetSec;
    return {ok, std::to_string(cases.size()) + " datasets, " + std::to_string(members) +
                    " mixtures, min eig/trace " + fmt(worst_eig) + ", worst rel. loglik drop " + fmt(worst_drop) +
                    " (tol " + fmt(kEmTol) + "), " + fmt(secs) + " s (budget " + fmt(kTckBudgetSec) + " s)" + why};
}

Verdict classifiers() {
    Rng rng(21);
    auto blobs = [&](Eigen::Index n, Eigen::Index d, double shift, Matrix& X, std::vector<int>& y) {
        X.resize(n, d);
        y.clear();
        for (Eigen::Index i = 0; i < n; ++i) {
            y.push_back(static_cast<int>(i % 2));
            for (Eigen::Index j = 0; j < d; ++j) {
                X(i, j) = rng.normal() + (i % 2 ? shift : 0.0);
            }
        }
    };
    double worst_grad = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        Matrix X;
        std::vector<int> y;
        blobs(10 + rep % 13, 1 + rep % 6, 0.8, X, y);
        const double lambda = kLrLambdaGrid[static_cast<std::size_t>(rep) % kLrLambdaGrid.size()];
        const Eigen::Index d = X.cols();
        Vector theta(d + 1);
        for (Eigen::Index k = 0; k <= d; ++k) {
            theta(k) = rng.uniform(-1.5, 1.5);
        }
        auto f = [&](const Vector& t) { return lr_objective(X, y, lambda, t.head(d), t(d)); };
        const Vector fd = oracle::central_difference(f, theta, 1e-5);
        const Vector g = lr_gradient(X, y, lambda, theta.head(d), theta(d));
        worst_grad = std::max(worst_grad, (g - fd).norm() / std::max(1e-12, fd.norm()));
    }

    int nu_ok = 0;
    const std::vector<double> nus = {0.05, 0.1, 0.25, 0.5, 0.75};
    // Strictly positive definite kernels: the classes are separable in feature
    // space, so every feasible nu has a nontrivial solution.
    const std::vector<KernelSpec> kernels = {{KernelKind::Rbf, 0.5}, {KernelKind::Exponential, 0.3}, {KernelKind::Rbf, 0.1}};
    for (int rep = 0; rep < 20; ++rep) {
        Matrix X;
        std::vector<int> y;
        blobs(30 + 3 * rep, 2 + rep % 3, 1.0, X, y);
        const double nu = nus[static_cast<std::size_t>(rep) % nus.size()];
        const auto m = train_nusvm(X, y, kernels[static_cast<std::size_t>(rep) % kernels.size()], nu);
        const auto p = nu_property(m, y);
        const double n = static_cast<double>(y.size());
        nu_ok += p.margin_error_fraction <= nu + 1e-12 && nu <= p.support_fraction + 1.0 / n;
    }

    double worst_auc = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 2 + rng.index(60);
        std::vector<int> y(n);
        std::vector<double> s(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = i == 0 ? 0 : i == 1 ? 1 : static_cast<int>(rng.index(2));
            s[i] = rep % 3 == 0 ? std::floor(rng.uniform(0, 5)) : rng.normal();
        }
        const Vector sv = Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(n));
        worst_auc = std::max(worst_auc, std::abs(roc_auc(sv, y) - oracle::brute_auc(s, y)));
    }
    const bool ok = worst_grad < kGradRelTol && nu_ok == 20 && worst_auc <= kAucTol;
    return {ok, "LR grad max rel err " + fmt(worst_grad) + " (tol " + fmt(kGradRelTol) + ", 50 instances); nu-property " +
                    std::to_string(nu_ok) + "/20; AUC max |err| " + fmt(worst_auc) + " (tol " + fmt(kAucTol) +
                    ", 100 sets)"};
}

Verdict spectral() {
    Rng rng(31);
    const int per = 25;
    Matrix X(per * kPlantedC, 2);
    std::vector<int> truth;
    for (int c = 0; c < kPlantedC; ++c) {
        const double ang = 2.0 * M_PI * c / kPlantedC;
        for (int i = 0; i < per; ++i) {
            X(c * per + i, 0) = 8.0 * std::cos(ang) + rng.normal();
            X(c * per + i, 1) = 8.0 * std::sin(ang) + rng.normal();
            truth.push_back(c);
        }
    }
    const auto direct = spectral_clustering(knn_graph(X, 10), kPlantedC, 1);
    const double ari = adjusted_rand_index(direct.assignment.labels, truth);
    const auto sel = select_num_clusters(X, {2, 3, 4, 5, 6, 7, 8}, 10, 1);

    int graphs_ok = 0;
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 6 + rep % 25;
        Graph g;
        g.adjacency = Matrix::Zero(n, n);
        const double p = 0.03 + 0.01 * (rep % 12);
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                if (rng.bernoulli(p)) {
                    g.adjacency(i, j) = g.adjacency(j, i) = 1.0;
                }
            }
        }
        // Components by depth-first search, independent of the library.
        std::vector<int> seen(static_cast<std::size_t>(n), 0);
        int comps = 0;
        for (int s = 0; s < n; ++s) {
            if (seen[s]) {
                continue;
            }
            ++comps;
            std::vector<int> stack{s};
            seen[s] = 1;
            while (!stack.empty()) {
                const int u = stack.back();
                stack.pop_back();
                for (int v = 0; v < n; ++v) {
                    if (g.adjacency(u, v) != 0.0 && !seen[v]) {
                        seen[v] = 1;
                        stack.push_back(v);
                    }
                }
            }
        }
        const Vector ev = symmetric_eigen(laplacian(g)).eigenvalues();
        const int zeros = static_cast<int>((ev.array().abs() < 1e-9).count());
        graphs_ok += zeros == comps;
    }
    const bool ok = ari >= kAriMin && sel.best_silhouette == kPlantedC && sel.best_davies_bouldin == kPlantedC &&
                    graphs_ok == 50;
    return {ok, "ARI " + fmt(ari) + " (min " + fmt(kAriMin) + "); silhouette picks " +
                    std::to_string(sel.best_silhouette) + ", Davies-Bouldin picks " +
                    std::to_string(sel.best_davies_bouldin) + "; Laplacian nullity = components on " +
                    std::to_string(graphs_ok) + "/50 graphs"};
}

PipelineSpec end_to_end_spec(MtsMethod method, std::optional<KernelKind> kernel, ClassifierKind clf, double sep,
                             const std::filesystem::path& out) {
    PipelineSpec s;
    s.method = method;
    s.kernel = kernel;
    s.classifier = clf;
    s.seed = kRunSeed;
    s.output_dir = out;
    SynthConfig sc;
    sc.n_negative = sc.n_positive = 100;
    sc.separation = sep;
    s.data.synthetic = sc;
    s.data.synthetic_seed = kDataSeed;
    s.strat.enabled = false;
    return s;
}

Verdict end_to_end() {
    const auto t0 = Clock::now();
    const auto root = testutil::fresh_dir("acceptance_e2e");
    struct Pipe {
        MtsMethod m;
        std::optional<KernelKind> k;
        ClassifierKind c;
    };
    const std::vector<Pipe> pipes = {{MtsMethod::FE, std::nullopt, ClassifierKind::Lr},
                                     {MtsMethod::TCK, std::nullopt, ClassifierKind::Lr},
                                     {MtsMethod::DtwD, KernelKind::Exponential, ClassifierKind::NuSvm},
                                     {MtsMethod::DtwI, std::nullopt, ClassifierKind::Lr}};
    bool ok = true;
    std::string detail;
    for (double sep : {1.0, 0.0}) {
        detail += sep == 1.0 ? "s=1:" : "; s=0:";
        for (const auto& p : pipes) {
            auto spec = end_to_end_spec(p.m, p.k, p.c, sep, root / (to_string(p.m) + "_" + fmt(sep)));
            auto previous = log::set_sink([](std::string_view) {});
            const auto res = cmd_run(spec, "acceptance");
            log::set_sink(previous);
            const double med = res.report.summary().median;
            const bool good = sep == 1.0 ? med >= kSeparatedMedianMin : (med >= kNullLo && med <= kNullHi);
            ok = ok && good;
            detail += " " + spec.name() + " " + fmt(med) + (good ? "" : "(!)");
        }
    }
    const double secs = seconds_since(t0);
    ok = ok && secs < kEndToEndBudgetSec;
    return {ok, detail + "; medians over 5 replicates, data seed " + std::to_string(kDataSeed) + ", run seed " +
                    std::to_string(kRunSeed) + ", " + fmt(secs) + " s (budget " + fmt(kEndToEndBudgetSec) + " s)"};
}

Verdict determinism() {
    const auto root = testutil::fresh_dir("acceptance_det");
    auto make = [&](const std::string& tag, std::size_t workers) {
        PipelineSpec s = end_to_end_spec(MtsMethod::DtwD, KernelKind::Exponential, ClassifierKind::NuSvm, 0.7,
                                         root / tag);
        s.data.synthetic->n_negative = s.data.synthetic->n_positive = 30;
        s.data.synthetic->missing_rate = 0.05;
        s.replicates = 3;
        s.nu_grid = {0.1, 0.3, 0.5};
        s.gamma_grid = {0.01, 0.1, 1.0};
        s.workers = workers;
        s.strat.enabled = true;
        s.strat.perplexity = 10;
        s.strat.iters = 300;
        s.strat.C_range = {2, 3, 4};
        s.strat.theta = 0.5;
        auto previous = log::set_sink([](std::string_view) {});
        cmd_run(s, "acceptance-determinism");
        log::set_sink(previous);
        return testutil::read_tree(root / tag);
    };
    const auto a = make("w1_first", 1);
    const auto b = make("w1_second", 1);
    const auto c = make("w4", 4);
    const auto d1 = testutil::first_difference(a, b);
    const auto d2 = testutil::first_difference(a, c);
    const bool ok = d1.empty() && d2.empty() && a.count("manifest.json") && a.count("strat/embedding.csv");
    return {ok, std::to_string(a.size()) + " files compared byte-wise; rerun " +
                    (d1.empty() ? std::string("identical") : "differs at " + d1) + "; workers 1 vs 4 " +
                    (d2.empty() ? std::string("identical") : "differs at " + d2)};
}

Verdict workflow_shape() {
    SynthConfig sc;
    sc.n_negative = sc.n_positive = 12;
    sc.separation = 1.0;
    const auto ds = generate_synthetic(sc, kDataSeed);
    const auto norm = minmax_fit_transform(ds).first;
    const auto D = pairwise_distance_matrix(norm, DtwVariant::Dependent, gower_spec_from(norm));
    const auto S = distance_kernel(D, KernelKind::Exponential, 1.0);
    const Eigen::Index n = S.values.rows();
    const double pairs = static_cast<double>(n * (n - 1) / 2);
    const double dense = static_cast<double>(threshold_graph(S, 0.0).num_edges()) / pairs;

    // Raise theta through the observed similarities until the graph breaks apart.
    std::vector<double> vals;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            vals.push_back(S.values(i, j));
        }
    }
    std::sort(vals.begin(), vals.end());
    double theta = vals.back();
    for (double v : vals) {
        if (count_components(threshold_graph(S, v)) >= 2) {
            theta = v;
            break;
        }
    }
    const auto G = threshold_graph(S, theta);
    const double sparse = static_cast<double>(G.num_edges()) / pairs;
    const int comps = count_components(G);
    const bool shape_ok = dense == 1.0 && sparse < 0.5 && comps >= 2;

    // Profile of a spectral partition against counting oracles.
    const auto assignment = spectral_clustering(knn_graph_from_distances(D.values, 5), 2, 1).assignment;
    const auto rep = cluster_profile(ds, assignment);
    const auto counts = oracle::count_profile(ds, assignment.labels);
    const auto cats = oracle::categorical_shares(ds, assignment.labels);
    const auto nums = oracle::numeric_statics(ds, assignment.labels);
    std::size_t matched = 0, mismatched = 0;
    auto same = [&](double a, double b) { (a == b ? matched : mismatched) += 1; };
    for (const auto& c : rep.clusters) {
        const int k = c.cluster;
        same(static_cast<double>(c.size), counts.size.at(k));
        same(c.pct_size, 100.0 * counts.size.at(k) / static_cast<double>(ds.size()));
        same(static_cast<double>(c.positives), counts.positives.at(k));
        same(c.pct_positive, 100.0 * counts.positives.at(k) / static_cast<double>(c.size));
        for (const auto& b : c.binary) {
            const auto key = std::make_pair(k, b.feature);
            const int act = counts.active.count(key) ? counts.active.at(key) : 0;
            const int pos = counts.active_pos.count(key) ? counts.active_pos.at(key) : 0;
            same(static_cast<double>(b.active), act);
            same(b.pct_active_positive, 100.0 * pos / static_cast<double>(c.size));
            same(b.pct_active_negative, 100.0 * (act - pos) / static_cast<double>(c.size));
        }
        for (const auto& [name, shares] : cats.at(k)) {
            for (const auto& [cat, pct] : shares) {
                const auto& mine = c.categorical.at(name);
                same(mine.count(cat) ? mine.at(cat) : -1.0, pct);
            }
        }
        same(static_cast<double>(c.pdfs.size()), static_cast<double>(nums.at(k).size()));
        for (const auto& pdf : c.pdfs) {
            const auto ref = oracle::reference_kde(nums.at(k).at(pdf.name), pdf.grid);
            double gap = 0.0;
            for (std::size_t i = 0; i < ref.size(); ++i) {
                gap = std::max(gap, std::abs(ref[i] - pdf.density[i]) / std::max(1e-300, ref[i]));
            }
            // Densities are floating sums; equal up to summation order.
            (gap < 1e-12 ? matched : mismatched) += 1;
        }
    }
    const bool ok = shape_ok && mismatched == 0 && matched > 0;
    return {ok, "24 records: density " + fmt(dense) + " -> " + fmt(sparse) + " at theta " + fmt(theta) + ", " +
                    std::to_string(comps) + " components; profile " + std::to_string(matched) + " values match oracle, " +
                    std::to_string(mismatched) + " mismatches"};
}

Verdict density_embedding() {
    Rng rng(51);
    double worst_mass = 0.0;
    for (int rep = 0; rep < 12; ++rep) {
        std::vector<double> s;
        for (int i = 0; i < 15 + 15 * rep; ++i) {
            s.push_back(rep % 3 == 0 ? rng.uniform(-1, 4) : rep % 3 == 1 ? rng.normal() * 5 : std::round(rng.normal(60, 14)));
        }
        const double h = silverman_bandwidth(s);
        const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
        const auto grid = linspace(*lo - 5 * h, *hi + 5 * h, 4000);
        worst_mass = std::max(worst_mass, std::abs(oracle::trapezoid(grid, parzen_pdf(s, grid)) - 1.0));
    }

    const int n = 80;
    Matrix X(n, 8);
    std::vector<int> y;
    for (int i = 0; i < n; ++i) {
        y.push_back(i % 2);
        for (int j = 0; j < 8; ++j) {
            X(i, j) = rng.normal() + (i % 2 ? 3.0 : 0.0);
        }
    }
    double worst_perp = 0.0;
    const Matrix D = euclidean_distances(X);
    for (double perp : {5.0, 15.0, 30.0}) {
        const Matrix P = conditional_affinities(D.cwiseProduct(D), perp, 1e-5);
        for (Eigen::Index i = 0; i < n; ++i) {
            double H = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (P(i, j) > 0.0) {
                    H -= P(i, j) * std::log(P(i, j));
                }
            }
            worst_perp = std::max(worst_perp, std::abs(std::exp(H) - perp));
        }
    }
    TsneOptions opt;
    opt.perplexity = 20;
    const auto e = tsne(X, opt, 3);
    const double probe = oracle::linear_probe_accuracy(e.coords, y);
    const bool ok = worst_mass <= kPdfMassTol && worst_perp < kPerplexityTol && probe >= kProbeMin;
    return {ok, "PDF mass max |1 - integral| " + fmt(worst_mass) + " (tol " + fmt(kPdfMassTol) +
                    "); perplexity max |err| " + fmt(worst_perp) + " (tol " + fmt(kPerplexityTol) +
                    "); two-blob probe accuracy " + fmt(probe) + " (min " + fmt(kProbeMin) + ")"};
}

} // namespace

int main() {
    report(1, "dtw-matches-path-enumeration", dtw_oracle);
    report(2, "tck-kernel-validity", tck_validity);
    report(3, "classifier-correctness", classifiers);
    report(4, "spectral-pipeline", spectral);
    report(5, "end-to-end-synthetic-discrimination", end_to_end);
    report(6, "run-determinism", determinism);
    report(7, "workflow-shape-and-profiles", workflow_shape);
    report(8, "density-and-embedding", density_embedding);
    std::cout << (failures == 0 ? "all 8 criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures;
}
