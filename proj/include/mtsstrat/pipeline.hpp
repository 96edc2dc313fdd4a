#ifndef MTSSTRAT_PIPELINE_HPP
#define MTSSTRAT_PIPELINE_HPP

#include "classify.hpp"
#include "config.hpp"
#include "dataset_io.hpp"
#include "dtw.hpp"
#include "fe.hpp"
#include "strat.hpp"
#include "synthetic.hpp"
#include "tck.hpp"
#include "transform.hpp"

#include <openssl/evp.h>

#include <cstdlib>
#include <iomanip>
#include <optional>

namespace mtsstrat {

enum class MtsMethod { FE, TCK, DtwD, DtwI };
enum class Reduction { None, Pca, Kpca };
enum class ClassifierKind { Lr, NuSvm };

inline std::string to_string(MtsMethod m) {
    switch (m) {
    case MtsMethod::FE:
        return "FE";
    case MtsMethod::TCK:
        return "TCK";
    case MtsMethod::DtwD:
        return "DTW_D";
    case MtsMethod::DtwI:
        return "DTW_I";
    }
    return "FE";
}

inline MtsMethod parse_mts_method(std::string_view s) {
    if (s == "FE") {
        return MtsMethod::FE;
    }
    if (s == "TCK") {
        return MtsMethod::TCK;
    }
    if (s == "DTW_D") {
        return MtsMethod::DtwD;
    }
    if (s == "DTW_I") {
        return MtsMethod::DtwI;
    }
    throw ConfigError("unknown MTS method '" + std::string(s) + "' (FE, TCK, DTW_D, DTW_I)");
}

inline std::string to_string(Reduction r) {
    return r == Reduction::None ? "none" : r == Reduction::Pca ? "pca" : "kpca";
}

inline Reduction parse_reduction(std::string_view s) {
    if (s == "none") {
        return Reduction::None;
    }
    if (s == "pca") {
        return Reduction::Pca;
    }
    if (s == "kpca") {
        return Reduction::Kpca;
    }
    throw ConfigError("unknown reduction '" + std::string(s) + "' (none, pca, kpca)");
}

inline std::string to_string(ClassifierKind c) { return c == ClassifierKind::Lr ? "lr" : "nusvm"; }

inline ClassifierKind parse_classifier(std::string_view s) {
    if (s == "lr") {
        return ClassifierKind::Lr;
    }
    if (s == "nusvm") {
        return ClassifierKind::NuSvm;
    }
    throw ConfigError("unknown classifier '" + std::string(s) + "' (lr, nusvm)");
}

struct KpcaSettings {
    std::vector<KernelKind> kinds{KernelKind::Rbf};
    std::vector<double> gammas{1e-3, 1e-2, 1e-1, 1};
    std::vector<Eigen::Index> ranks{5, 10, 20};
};

struct StratSettings {
    bool enabled = true;
    double perplexity = 30.0;
    int iters = 1000;
    std::vector<int> C_range{2, 3, 4, 5, 6, 7, 8};
    Eigen::Index knn_k = 10;
    std::optional<double> theta;
    /// Scale of the exp kernel turning distances into similarities for the threshold graph.
    double graph_gamma = 1.0;
};

struct DataSource {
    std::optional<SynthConfig> synthetic;
    std::uint64_t synthetic_seed = 0;
    std::filesystem::path path;
};

struct PipelineSpec {
    MtsMethod method = MtsMethod::DtwD;
    LocalDistanceKind local = LocalDistanceKind::Gower;
    std::optional<KernelKind> kernel; // empty: none
    std::vector<double> gamma_grid = kGammaGrid;
    Reduction reduction = Reduction::None;
    double pca_variance = 0.99;
    KpcaSettings kpca;
    ClassifierKind classifier = ClassifierKind::Lr;
    std::vector<double> lambda_grid = kLrLambdaGrid;
    std::vector<double> nu_grid = kNuGrid;
    LrOptions lr;
    SvmOptions svm;
    TckConfig tck;
    double test_frac = 0.3;
    std::size_t replicates = 5;
    std::size_t folds = 5;
    bool undersample = true;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "mts_out";
    std::size_t workers = 1;
    DataSource data;
    StratSettings strat;

    std::string name() const {
        std::string n = to_string(method);
        if (kernel) {
            n += "+" + to_string(*kernel);
        }
        if (reduction != Reduction::None) {
            n += "+" + to_string(reduction);
        }
        return n + "+" + to_string(classifier);
    }
};

inline void validate(const PipelineSpec& s) {
    if (s.method == MtsMethod::TCK && s.kernel) {
        throw ConfigError("pipeline: TCK already yields a similarity; kernel must be 'none'");
    }
    if (s.kernel && *s.kernel == KernelKind::Linear) {
        throw ConfigError("pipeline: kernel must be none, exp or rbf");
    }
    if (s.kernel && s.gamma_grid.empty()) {
        throw ConfigError("pipeline: gamma grid is empty");
    }
    if (s.classifier == ClassifierKind::Lr && s.lambda_grid.empty()) {
        throw ConfigError("pipeline: lambda grid is empty");
    }
    if (s.classifier == ClassifierKind::NuSvm && s.nu_grid.empty()) {
        throw ConfigError("pipeline: nu grid is empty");
    }
    if (!(s.test_frac > 0.0 && s.test_frac < 1.0)) {
        throw ConfigError("splits.test_frac must lie in (0, 1)");
    }
    if (s.replicates < 1) {
        throw ConfigError("splits.replicates must be >= 1");
    }
    if (s.folds < 2) {
        throw ConfigError("splits.folds must be >= 2");
    }
    if (!(s.pca_variance > 0.0 && s.pca_variance <= 1.0)) {
        throw ConfigError("reduction.variance must lie in (0, 1]");
    }
    if (!s.data.synthetic && s.data.path.empty()) {
        throw ConfigError("data: give either 'synthetic' or 'path'");
    }
    if (s.data.synthetic) {
        validate(*s.data.synthetic);
    }
    if (s.strat.enabled && s.strat.C_range.empty()) {
        throw ConfigError("stratification.C_range is empty");
    }
}

inline SynthConfig parse_synth_config(ConfigSection c) {
    SynthConfig s;
    s.n_negative = c.get<std::size_t>("n_negative", s.n_negative);
    s.n_positive = c.get<std::size_t>("n_positive", s.n_positive);
    s.include_mv = c.get<bool>("include_mv", s.include_mv);
    s.n_antibiotics = c.get<std::size_t>("n_antibiotics", s.n_antibiotics);
    s.n_environmental = c.get<std::size_t>("n_environmental", s.n_environmental);
    s.T = c.get<Eigen::Index>("T", s.T);
    s.separation = c.get<double>("separation", s.separation);
    s.missing_rate = c.get<double>("missing_rate", s.missing_rate);
    s.min_length = c.get<Eigen::Index>("min_length", s.min_length);
    s.max_length = c.get<Eigen::Index>("max_length", s.max_length);
    s.with_statics = c.get<bool>("with_statics", s.with_statics);
    c.get<std::uint64_t>("seed", 0); // consumed by the caller
    c.finish();
    return s;
}

inline TckConfig parse_tck_config(ConfigSection c) {
    TckConfig t;
    t.K = c.get<std::size_t>("K", t.K);
    t.N_C = c.get<Eigen::Index>("N_C", t.N_C);
    t.record_fraction = c.get<double>("record_fraction", t.record_fraction);
    t.min_dim_fraction = c.get<double>("min_dim_fraction", t.min_dim_fraction);
    t.max_dim_fraction = c.get<double>("max_dim_fraction", t.max_dim_fraction);
    t.em.max_iters = c.get<int>("em_iters", t.em.max_iters);
    t.em.rel_tol = c.get<double>("em_rel_tol", t.em.rel_tol);
    t.padding_as_missing = c.get<bool>("padding_as_missing", t.padding_as_missing);
    c.finish();
    return t;
}

inline std::optional<KernelKind> parse_optional_kernel(const std::string& s) {
    if (s == "none") {
        return std::nullopt;
    }
    return parse_kernel_kind(s);
}

/// Config document, schema version 1. See docs/formats.md.
inline PipelineSpec parse_pipeline_spec(const nlohmann::json& doc) {
    PipelineSpec s;
    ConfigSection root(doc, "config");
    const int version = root.get<int>("schema_version", 1);
    if (version != 1) {
        throw ConfigError("config: unsupported schema_version " + std::to_string(version));
    }
    s.seed = root.get<std::uint64_t>("seed", s.seed);
    s.output_dir = root.get<std::string>("output_dir", s.output_dir.string());
    s.workers = root.get<std::size_t>("workers", s.workers);

    auto data = root.section("data");
    if (data.has("synthetic")) {
        auto syn = data.section("synthetic");
        s.data.synthetic_seed = syn.get<std::uint64_t>("seed", s.seed);
        s.data.synthetic = parse_synth_config(std::move(syn));
    }
    s.data.path = data.get<std::string>("path", "");
    data.finish();

    auto p = root.section("pipeline");
    s.method = parse_mts_method(p.get<std::string>("method", to_string(s.method)));
    s.local = parse_local_distance(p.get<std::string>("local_distance", to_string(s.local)));
    s.kernel = parse_optional_kernel(p.get<std::string>("kernel", "none"));
    s.gamma_grid = p.get<std::vector<double>>("gamma_grid", s.gamma_grid);
    s.classifier = parse_classifier(p.get<std::string>("classifier", to_string(s.classifier)));
    s.lambda_grid = p.get<std::vector<double>>("lambda_grid", s.lambda_grid);
    s.nu_grid = p.get<std::vector<double>>("nu_grid", s.nu_grid);
    s.lr.max_iters = p.get<int>("lr_max_iters", s.lr.max_iters);
    s.lr.tol = p.get<double>("lr_tol", s.lr.tol);
    s.svm.eps = p.get<double>("svm_eps", s.svm.eps);
    s.svm.max_iters = p.get<long>("svm_max_iters", s.svm.max_iters);
    s.tck = parse_tck_config(p.section("tck"));
    {
        auto r = p.section("reduction");
        s.reduction = parse_reduction(r.get<std::string>("method", "none"));
        s.pca_variance = r.get<double>("variance", s.pca_variance);
        if (r.has("kernels")) {
            s.kpca.kinds.clear();
            for (const auto& k : r.get<std::vector<std::string>>("kernels", {})) {
                s.kpca.kinds.push_back(parse_kernel_kind(k));
            }
        }
        s.kpca.gammas = r.get<std::vector<double>>("gammas", s.kpca.gammas);
        s.kpca.ranks = r.get<std::vector<Eigen::Index>>("ranks", s.kpca.ranks);
        r.finish();
    }
    p.finish();

    auto sp = root.section("splits");
    s.test_frac = sp.get<double>("test_frac", s.test_frac);
    s.replicates = sp.get<std::size_t>("replicates", s.replicates);
    s.folds = sp.get<std::size_t>("folds", s.folds);
    s.undersample = sp.get<bool>("undersample", s.undersample);
    sp.finish();

    auto st = root.section("stratification");
    s.strat.enabled = st.get<bool>("enabled", s.strat.enabled);
    s.strat.perplexity = st.get<double>("perplexity", s.strat.perplexity);
    s.strat.iters = st.get<int>("iters", s.strat.iters);
    s.strat.C_range = st.get<std::vector<int>>("C_range", s.strat.C_range);
    s.strat.knn_k = st.get<Eigen::Index>("knn_k", s.strat.knn_k);
    if (st.has("theta")) {
        s.strat.theta = st.get<double>("theta", 0.0);
    }
    s.strat.graph_gamma = st.get<double>("graph_gamma", s.strat.graph_gamma);
    st.finish();
    root.finish();
    validate(s);
    return s;
}

// ---------------------------------------------------------------------------
// Hashing and manifest

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw NumericError("sha256: digest failed");
    }
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) {
        out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    }
    return out.str();
}

inline std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

inline nlohmann::json build_manifest(const std::filesystem::path& root, const std::string& config_hash,
                                     const PipelineSpec& spec, const std::vector<std::uint64_t>& replicate_seeds,
                                     bool complete, const std::string& error = {}) {
    nlohmann::json m;
    m["format"] = "mts-run-manifest";
    m["version"] = 1;
    m["config_sha256"] = config_hash;
    m["pipeline"] = spec.name();
    m["seed"] = spec.seed;
    m["replicate_seeds"] = replicate_seeds;
    m["complete"] = complete;
    if (!error.empty()) {
        m["error"] = error;
    }
    std::vector<std::string> files;
    if (std::filesystem::exists(root)) {
        for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
            if (e.is_regular_file()) {
                const auto rel = std::filesystem::relative(e.path(), root).generic_string();
                if (rel != "manifest.json") {
                    files.push_back(rel);
                }
            }
        }
    }
    std::sort(files.begin(), files.end());
    m["files"] = nlohmann::json::array();
    for (const auto& f : files) {
        m["files"].push_back(
            {{"path", f}, {"sha256", sha256_file(root / f)}, {"bytes", std::filesystem::file_size(root / f)}});
    }
    return m;
}

// ---------------------------------------------------------------------------
// Replicate machinery

namespace detail {

/// Rethrows with a stage prefix, keeping the error category.
[[noreturn]] inline void rethrow_in_stage(const std::string& stage, const Error& e) {
    const std::string msg = "stage '" + stage + "': " + e.what();
    switch (e.kind()) {
    case ErrorKind::Config:
        throw ConfigError(msg);
    case ErrorKind::Data:
        throw DataError(msg);
    case ErrorKind::Numeric:
        throw NumericError(msg);
    }
    throw DataError(msg);
}

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const Error& e) {
        rethrow_in_stage(name, e);
    }
}

inline Matrix select(const Matrix& M, const std::vector<Eigen::Index>& rows, const std::vector<Eigen::Index>& cols) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = M(rows[i], cols[j]);
        }
    }
    return out;
}

inline std::vector<int> pick(const std::vector<int>& v, const std::vector<Eigen::Index>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) {
        out.push_back(v[static_cast<std::size_t>(i)]);
    }
    return out;
}

/// z-scores columns with training statistics; constant columns are only centered.
inline void standardize(Matrix& train, Matrix& other) {
    const double n = static_cast<double>(train.rows());
    for (Eigen::Index c = 0; c < train.cols(); ++c) {
        const double mean = train.col(c).mean();
        double sd = n > 1 ? std::sqrt((train.col(c).array() - mean).square().sum() / (n - 1.0)) : 0.0;
        if (!(sd > 1e-12)) {
            sd = 1.0;
        }
        train.col(c) = (train.col(c).array() - mean) / sd;
        other.col(c) = (other.col(c).array() - mean) / sd;
    }
}

inline Matrix pairwise_euclidean(const Matrix& A, const Matrix& B) {
    Matrix D(A.rows(), B.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        for (Eigen::Index j = 0; j < B.rows(); ++j) {
            D(i, j) = (A.row(i) - B.row(j)).norm();
        }
    }
    return D;
}

} // namespace detail

/// Method output on the training anchors and the held-out records.
struct BaseMatrices {
    DistanceMatrix train; // rows and columns: anchors
    DistanceMatrix test;  // rows: test records, columns: anchors
    bool is_distance = true;
};

inline Dataset prepare_for_method(const PipelineSpec& spec, Dataset ds, const std::vector<double>& means) {
    if (spec.method == MtsMethod::DtwD || spec.method == MtsMethod::DtwI) {
        ds = impute_missing(std::move(ds), means);
    }
    return ds;
}

inline BaseMatrices compute_base(const PipelineSpec& spec, const Dataset& train, const Dataset& test,
                                 std::uint64_t seed, std::size_t workers) {
    BaseMatrices b;
    auto label = [&](LabeledMatrix& m, const Dataset& rows, nlohmann::json prov) {
        m.row_ids = rows.ids();
        m.col_ids = train.ids();
        m.provenance = std::move(prov);
    };
    switch (spec.method) {
    case MtsMethod::FE: {
        const Matrix Xa = feature_matrix(engineer_features(train));
        const Matrix Xt = test.size() ? feature_matrix(engineer_features(test)) : Matrix(0, Xa.cols());
        if (spec.kernel) {
            b.is_distance = true;
            b.train.values = detail::pairwise_euclidean(Xa, Xa);
            b.test.values = detail::pairwise_euclidean(Xt, Xa);
        } else {
            b.is_distance = false;
            b.train.values = Xa * Xa.transpose();
            b.test.values = Xt * Xa.transpose();
        }
        nlohmann::json prov{{"method", "FE"}, {"matrix", b.is_distance ? "euclidean" : "inner_product"}};
        label(b.train, train, prov);
        label(b.test, test, prov);
        break;
    }
    case MtsMethod::DtwD:
    case MtsMethod::DtwI: {
        const auto variant = spec.method == MtsMethod::DtwD ? DtwVariant::Dependent : DtwVariant::Independent;
        LocalDistanceSpec ld;
        if (spec.local == LocalDistanceKind::Gower) {
            ld = gower_spec_from(train);
        } else {
            ld.kind = spec.local;
        }
        b.is_distance = true;
        static_cast<LabeledMatrix&>(b.train) = pairwise_distance_matrix(train, variant, ld, workers);
        if (test.size()) {
            static_cast<LabeledMatrix&>(b.test) = cross_distance_matrix(test, train, variant, ld, workers);
        }
        break;
    }
    case MtsMethod::TCK: {
        auto cfg = spec.tck;
        cfg.seed = seed;
        const auto model = fit_tck(train, cfg, workers);
        b.is_distance = false;
        static_cast<LabeledMatrix&>(b.train) = tck_kernel_matrix(model, train, train, workers);
        if (test.size()) {
            static_cast<LabeledMatrix&>(b.test) = tck_kernel_matrix(model, test, train, workers);
        }
        break;
    }
    }
    return b;
}

/// Training block and scoring block for one split (a CV fold or the final refit).
struct PreparedSplit {
    Matrix train; // features, or kernel when precomputed
    Matrix score; // rows to score
    std::vector<int> y;
    bool precomputed = false;
    nlohmann::json reducer = nlohmann::json();
};

inline Matrix apply_distance_kernel(const Matrix& D, KernelKind kind, double gamma) {
    if (kind == KernelKind::Exponential) {
        return (-gamma * D.array()).exp().matrix();
    }
    return (-gamma * D.array().square()).exp().matrix();
}

inline PreparedSplit prepare_split(const PipelineSpec& spec, const Matrix& train_block, const Matrix& score_block,
                                   std::vector<int> y, bool block_is_similarity) {
    PreparedSplit p;
    p.y = std::move(y);
    if (spec.classifier == ClassifierKind::NuSvm && block_is_similarity && spec.reduction == Reduction::None) {
        p.precomputed = true;
        p.train = train_block;
        p.score = score_block;
        return p;
    }
    Matrix Xtr = train_block, Xsc = score_block;
    if (spec.reduction == Reduction::Pca) {
        const auto m = pca_fit(Xtr, spec.pca_variance);
        Xtr = pca_transform(m, Xtr);
        Xsc = pca_transform(m, Xsc);
        p.reducer = pca_model_to_json(m);
    } else if (spec.reduction == Reduction::Kpca) {
        const auto sel = kpca_select(Xtr, spec.kpca.kinds, spec.kpca.gammas, spec.kpca.ranks);
        const auto m = kpca_fit(Xtr, sel.kernel, sel.r);
        Xtr = kpca_transform(m, Xtr);
        Xsc = kpca_transform(m, Xsc);
        p.reducer = kpca_model_to_json(m);
    }
    detail::standardize(Xtr, Xsc);
    p.train = std::move(Xtr);
    p.score = std::move(Xsc);
    return p;
}

struct SplitScore {
    Vector scores;
    nlohmann::json model;
};

inline SplitScore fit_and_score(const PipelineSpec& spec, const PreparedSplit& p, const GridPoint& point,
                                bool keep_model) {
    SplitScore out;
    if (spec.classifier == ClassifierKind::Lr) {
        const auto m = train_lr(p.train, p.y, point.lambda, spec.lr);
        out.scores = lr_decision(m, p.score);
        if (keep_model) {
            out.model = lr_model_to_json(m);
        }
        return out;
    }
    SvmModel m;
    if (p.precomputed) {
        m = train_nusvm(p.train, p.y, point.nu, spec.svm);
        out.scores = predict_svm_precomputed(m, p.score);
    } else {
        m = train_nusvm(p.train, p.y, KernelSpec{KernelKind::Linear, 1.0}, point.nu, spec.svm);
        out.scores = predict_svm(m, p.score);
    }
    if (keep_model) {
        out.model = svm_model_to_json(m);
    }
    return out;
}

struct ReplicateResult {
    std::uint64_t seed = 0;
    double test_auc = 0.0;
    GridPoint chosen;
    GridSearchResult search;
    SplitSpec split;
    std::vector<std::string> anchors;
    std::vector<Fold> folds;
    BaseMatrices base;
    Vector test_scores;
    std::vector<int> test_labels;
    nlohmann::json model;
    nlohmann::json reducer;
};

inline ReplicateResult run_replicate(const PipelineSpec& spec, const Dataset& ds, std::size_t r, std::size_t workers) {
    ReplicateResult res;
    res.seed = spec.seed + r;
    const std::uint64_t s = res.seed;

    res.split = detail::stage("split", [&] { return split_train_test(ds, spec.test_frac, mix_seed(s, 1)); });
    Dataset train = ds.subset(res.split.train_ids);
    Dataset test = ds.subset(res.split.test_ids);

    detail::stage("normalize", [&] {
        auto [tr, params] = minmax_fit_transform(train);
        test = minmax_apply(std::move(test), params);
        const auto means = fit_feature_means(tr);
        train = prepare_for_method(spec, std::move(tr), means);
        test = prepare_for_method(spec, std::move(test), means);
    });

    res.anchors = spec.undersample ? undersample(train.ids(), train.labels(), mix_seed(s, 2)) : train.ids();
    const Dataset anchors = train.subset(res.anchors);
    const std::vector<int> y = anchors.labels();
    res.test_labels = test.labels();

    res.base = detail::stage(to_string(spec.method), [&] { return compute_base(spec, anchors, test, mix_seed(s, 4), workers); });

    res.folds = detail::stage("folds", [&] { return kfold(res.anchors, y, spec.folds, mix_seed(s, 3)); });
    std::unordered_map<std::string, Eigen::Index> pos;
    for (std::size_t i = 0; i < res.anchors.size(); ++i) {
        pos.emplace(res.anchors[i], static_cast<Eigen::Index>(i));
    }
    std::vector<std::vector<Eigen::Index>> fold_train(res.folds.size()), fold_val(res.folds.size());
    for (std::size_t f = 0; f < res.folds.size(); ++f) {
        for (const auto& id : res.folds[f].train_ids) {
            fold_train[f].push_back(pos.at(id));
        }
        for (const auto& id : res.folds[f].val_ids) {
            fold_val[f].push_back(pos.at(id));
        }
    }

    // Kernel settings: one per gamma, or a single untransformed block.
    const std::vector<double> gammas = spec.kernel ? spec.gamma_grid : std::vector<double>{};
    const std::size_t n_settings = spec.kernel ? gammas.size() : 1;
    const bool similarity = spec.kernel.has_value() || !res.base.is_distance;
    auto block = [&](std::size_t g, const Matrix& M) {
        return spec.kernel ? apply_distance_kernel(M, *spec.kernel, gammas[g]) : M;
    };

    const std::size_t F = res.folds.size();
    std::vector<PreparedSplit> prepared(n_settings * F);
    detail::stage("prepare", [&] {
        parallel_for(prepared.size(), workers, [&](std::size_t idx) {
            const std::size_t g = idx / F, f = idx % F;
            const Matrix B = block(g, res.base.train.values);
            prepared[idx] = prepare_split(spec, detail::select(B, fold_train[f], fold_train[f]),
                                          detail::select(B, fold_val[f], fold_train[f]), detail::pick(y, fold_train[f]),
                                          similarity);
        });
    });

    const auto grid = expand_grid(spec.classifier == ClassifierKind::Lr ? spec.lambda_grid : std::vector<double>{},
                                  spec.classifier == ClassifierKind::NuSvm ? spec.nu_grid : std::vector<double>{},
                                  gammas);
    auto gamma_index = [&](const GridPoint& p) -> std::size_t {
        if (!spec.kernel) {
            return 0;
        }
        return static_cast<std::size_t>(std::find(gammas.begin(), gammas.end(), p.gamma) - gammas.begin());
    };
    res.search = detail::stage("grid_search", [&] {
        return grid_search_cv(
            grid, F,
            [&](const GridPoint& p, std::size_t f) {
                const auto& prep = prepared[gamma_index(p) * F + f];
                const auto sc = fit_and_score(spec, prep, p, false);
                return roc_auc(sc.scores, detail::pick(y, fold_val[f]));
            },
            workers);
    });
    res.chosen = res.search.best_result().point;

    detail::stage("refit", [&] {
        const std::size_t g = gamma_index(res.chosen);
        const auto prep = prepare_split(spec, block(g, res.base.train.values), block(g, res.base.test.values), y,
                                        similarity);
        auto sc = fit_and_score(spec, prep, res.chosen, true);
        res.test_scores = sc.scores;
        res.model = std::move(sc.model);
        res.reducer = prep.reducer;
        res.test_auc = roc_auc(res.test_scores, res.test_labels);
    });
    return res;
}

// ---------------------------------------------------------------------------
// Stratification

struct StratOutcome {
    Embedding2D embedding;
    CviSelection cvi;
    ClusterAssignment assignment;
    StratReport report;
    std::optional<Graph> graph;
};

/// Distances between all records under the configured method, plus the
/// matching similarity used for threshold graphs.
inline std::pair<DistanceMatrix, SimilarityMatrix> full_matrices(const PipelineSpec& spec, const Dataset& ds,
                                                                 std::size_t workers) {
    auto [norm, params] = minmax_fit_transform(ds);
    const auto means = fit_feature_means(norm);
    const auto prepared = prepare_for_method(spec, std::move(norm), means);
    const auto base = compute_base(spec, prepared, prepared.empty_like(), mix_seed(spec.seed, 0x57a7), workers);
    DistanceMatrix D;
    SimilarityMatrix S;
    D.row_ids = D.col_ids = S.row_ids = S.col_ids = base.train.row_ids;
    if (base.is_distance) {
        D.values = base.train.values;
        S.values = (-spec.strat.graph_gamma * D.values.array()).exp().matrix();
    } else {
        S.values = base.train.values;
        const Vector d = S.values.diagonal();
        D.values = ((-2.0 * S.values).colwise() + d).rowwise() + d.transpose();
        D.values = D.values.cwiseMax(0.0).cwiseSqrt();
        D.values.diagonal().setZero();
    }
    D.provenance = S.provenance = base.train.provenance;
    return {D, S};
}

inline StratOutcome run_stratification(const PipelineSpec& spec, const Dataset& ds, std::size_t workers) {
    StratOutcome out;
    auto [D, S] = detail::stage("stratification", [&] { return full_matrices(spec, ds, workers); });
    if (spec.strat.theta) {
        out.graph = threshold_graph(S, *spec.strat.theta);
    }
    TsneOptions opt;
    opt.perplexity = spec.strat.perplexity;
    opt.iters = spec.strat.iters;
    out.embedding = detail::stage("embed", [&] { return tsne(D, opt, mix_seed(spec.seed, 0xe3b)); });
    out.cvi = detail::stage("cluster", [&] {
        return select_num_clusters(out.embedding.coords, spec.strat.C_range, spec.strat.knn_k, mix_seed(spec.seed, 0xc1));
    });
    for (std::size_t i = 0; i < out.cvi.C_values.size(); ++i) {
        if (out.cvi.C_values[i] == out.cvi.chosen) {
            out.assignment = canonical_labels(out.cvi.assignments[i].labels);
        }
    }
    out.report = detail::stage("profile", [&] { return cluster_profile(ds, out.assignment); });
    return out;
}

// ---------------------------------------------------------------------------
// Run

struct RunOverrides {
    std::optional<std::filesystem::path> output_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
};

/// Command-line values win over the environment, which wins over the file.
inline void apply_overrides(PipelineSpec& spec, const RunOverrides& o) {
    if (const char* env = std::getenv("MTS_STRAT_OUTPUT_DIR"); env && *env) {
        spec.output_dir = env;
    }
    if (const char* env = std::getenv("MTS_STRAT_WORKERS"); env && *env) {
        try {
            spec.workers = static_cast<std::size_t>(std::stoul(env));
        } catch (const std::exception&) {
            throw ConfigError("MTS_STRAT_WORKERS must be a positive integer");
        }
    }
    if (o.output_dir) {
        spec.output_dir = *o.output_dir;
    }
    if (o.seed) {
        spec.seed = *o.seed;
    }
    if (o.workers) {
        spec.workers = *o.workers;
    }
    if (spec.workers < 1) {
        throw ConfigError("workers must be >= 1");
    }
}

inline Dataset load_source(const DataSource& src) {
    Dataset ds = src.synthetic ? generate_synthetic(*src.synthetic, src.synthetic_seed) : load_dataset(src.path);
    validate(ds);
    return ds;
}

struct RunResult {
    EvalReport report;
    std::vector<ReplicateResult> replicates;
    std::optional<StratOutcome> strat;
    nlohmann::json manifest;
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) {
        throw DataError("write error: cannot open " + p.string());
    }
    out << text;
}

inline void write_replicate(const std::filesystem::path& dir, const ReplicateResult& r) {
    std::filesystem::create_directories(dir);
    {
        std::ostringstream g;
        g << "lambda,nu,gamma,feasible,mean_auc";
        const std::size_t F = r.folds.size();
        for (std::size_t f = 0; f < F; ++f) {
            g << ",fold" << f;
        }
        g << '\n';
        auto num = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
        for (const auto& gr : r.search.results) {
            g << num(gr.point.lambda) << ',' << num(gr.point.nu) << ',' << num(gr.point.gamma) << ','
              << (gr.feasible ? 1 : 0) << ',' << num(gr.mean_auc);
            for (std::size_t f = 0; f < F; ++f) {
                g << ',' << (f < gr.fold_aucs.size() ? format_double(gr.fold_aucs[f]) : "");
            }
            g << '\n';
        }
        write_text(dir / "grid.csv", g.str());
    }
    {
        std::ostringstream t;
        t << "id,label,score\n";
        for (std::size_t i = 0; i < r.split.test_ids.size(); ++i) {
            t << r.split.test_ids[i] << ',' << r.test_labels[i] << ','
              << format_double(r.test_scores(static_cast<Eigen::Index>(i))) << '\n';
        }
        write_text(dir / "test_scores.csv", t.str());
    }
    nlohmann::json split{{"seed", r.seed},
                         {"train_ids", r.split.train_ids},
                         {"test_ids", r.split.test_ids},
                         {"anchor_ids", r.anchors},
                         {"folds", nlohmann::json::array()}};
    for (const auto& f : r.folds) {
        split["folds"].push_back({{"train_ids", f.train_ids}, {"val_ids", f.val_ids}});
    }
    write_text(dir / "split.json", split.dump(2) + "\n");
    write_text(dir / "model.json",
               nlohmann::json{{"hyperparameters", r.chosen.to_json()}, {"classifier", r.model}, {"reducer", r.reducer}}
                       .dump(2) +
                   "\n");
    const std::string kind = r.base.is_distance ? "distance" : "similarity";
    save_labeled_matrix(r.base.train, dir / ("train_" + kind + ".csv"));
    save_labeled_matrix(r.base.test, dir / ("test_" + kind + ".csv"));
}

inline void write_strat(const std::filesystem::path& dir, const StratOutcome& s, const Dataset& ds) {
    write_strat_report(s.report, dir);
    write_embedding_csv(dir / "embedding.csv", [&] {
        auto e = s.embedding;
        if (e.ids.empty()) {
            e.ids = ds.ids();
        }
        return e;
    }(), s.assignment.labels, ds.labels());
    write_cvi_csv(dir / "cvi.csv", s.cvi);
    std::ostringstream c;
    c << "id,cluster\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        c << ds.records[i].id << ',' << s.assignment.labels[i] << '\n';
    }
    write_text(dir / "clusters.csv", c.str());
    nlohmann::json sel{{"C_values", s.cvi.C_values},
                       {"silhouette", s.cvi.silhouette},
                       {"davies_bouldin", s.cvi.davies_bouldin},
                       {"best_silhouette", s.cvi.best_silhouette},
                       {"best_davies_bouldin", s.cvi.best_davies_bouldin},
                       {"chosen", s.cvi.chosen}};
    if (s.graph) {
        sel["threshold_graph"] = {{"edges", s.graph->num_edges()}, {"components", count_components(*s.graph)}};
    }
    write_text(dir / "selection.json", sel.dump(2) + "\n");
}

} // namespace detail

/// Full protocol: replicates, evaluation report, optional stratification
/// report, then a manifest hashing every file written.
inline RunResult cmd_run(PipelineSpec spec, const std::string& config_hash) {
    validate(spec);
    RunResult out;
    const auto root = spec.output_dir;
    std::filesystem::create_directories(root);
    std::vector<std::uint64_t> seeds;
    for (std::size_t r = 0; r < spec.replicates; ++r) {
        seeds.push_back(spec.seed + r);
    }
    auto write_manifest = [&](bool complete, const std::string& err) {
        out.manifest = build_manifest(root, config_hash, spec, seeds, complete, err);
        detail::write_text(root / "manifest.json", out.manifest.dump(2) + "\n");
    };
    try {
        const Dataset ds = detail::stage("load", [&] { return load_source(spec.data); });
        out.report.pipeline = spec.name();
        for (std::size_t r = 0; r < spec.replicates; ++r) {
            auto rep = run_replicate(spec, ds, r, spec.workers);
            detail::write_replicate(root / ("replicate_" + std::to_string(r)), rep);
            out.report.aucs.push_back(rep.test_auc);
            out.report.chosen.push_back(rep.chosen);
            out.report.seeds.push_back(rep.seed);
            out.replicates.push_back(std::move(rep));
        }
        detail::write_text(root / "eval_report.json", eval_report_to_json(out.report).dump(2) + "\n");
        {
            std::ostringstream a;
            a << "replicate,seed,auc\n";
            for (std::size_t r = 0; r < out.report.aucs.size(); ++r) {
                a << r << ',' << out.report.seeds[r] << ',' << format_double(out.report.aucs[r]) << '\n';
            }
            detail::write_text(root / "eval_auc.csv", a.str());
        }
        if (spec.strat.enabled) {
            out.strat = run_stratification(spec, ds, spec.workers);
            detail::write_strat(root / "strat", *out.strat, ds);
        }
    } catch (const Error& e) {
        write_manifest(false, e.what());
        throw;
    }
    write_manifest(true, "");
    return out;
}

} // namespace mtsstrat

#endif
