#ifndef MTSSTRAT_STEPS_HPP
#define MTSSTRAT_STEPS_HPP

#include "pipeline.hpp"

#include <ostream>

namespace mtsstrat {

/// Shared inputs for the single-stage subcommands.
struct StepContext {
    std::filesystem::path config_dir = ".";
    std::filesystem::path out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::size_t workers = 1;

    std::filesystem::path resolve(const std::string& p) const {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : config_dir / path;
    }
};

namespace detail {

inline std::uint64_t step_seed(ConfigSection& c, const StepContext& ctx) {
    const auto s = c.get<std::uint64_t>("seed", 0);
    return ctx.seed.value_or(s);
}

inline const char* matrix_stem(bool distance) { return distance ? "distance.csv" : "similarity.csv"; }

} // namespace detail

/// synth: {"synthetic": {...}, "format": "csv-long" | "json", "seed": s}
inline std::filesystem::path step_synth(const nlohmann::json& doc, const StepContext& ctx, std::ostream& log_out) {
    ConfigSection c(doc, "synth");
    const auto seed = detail::step_seed(c, ctx);
    auto cfg = parse_synth_config(c.section("synthetic"));
    const auto format = parse_dataset_format(c.get<std::string>("format", "csv-long"));
    c.finish();
    validate(cfg);
    const auto ds = generate_synthetic(cfg, seed);
    std::filesystem::create_directories(ctx.out_dir);
    const auto path = ctx.out_dir / (format == DatasetFormat::Json ? "dataset.json" : "dataset.csv");
    save_dataset(ds, path, format);
    log_out << "wrote " << ds.size() << " records to " << path.string() << '\n';
    return path;
}

/// distmat: {"input": data, "method": "DTW_D"|"DTW_I"|"FE"|"TCK", "local_distance": "gower",
///           "normalize": true, "tck": {...}, "seed": s}
inline std::filesystem::path step_distmat(const nlohmann::json& doc, const StepContext& ctx, std::ostream& log_out) {
    ConfigSection c(doc, "distmat");
    PipelineSpec spec;
    spec.seed = detail::step_seed(c, ctx);
    const auto input = ctx.resolve(c.require<std::string>("input"));
    spec.method = parse_mts_method(c.require<std::string>("method"));
    spec.local = parse_local_distance(c.get<std::string>("local_distance", "gower"));
    const bool normalize = c.get<bool>("normalize", true);
    spec.tck = parse_tck_config(c.section("tck"));
    c.finish();
    Dataset ds = load_dataset(input);
    validate(ds);
    if (normalize) {
        ds = minmax_fit_transform(ds).first;
    }
    const auto means = fit_feature_means(ds);
    ds = prepare_for_method(spec, std::move(ds), means);
    const auto base = compute_base(spec, ds, ds.empty_like(), spec.seed, ctx.workers);
    std::filesystem::create_directories(ctx.out_dir);
    const auto path = ctx.out_dir / detail::matrix_stem(base.is_distance);
    save_labeled_matrix(base.train, path);
    log_out << "wrote " << ds.size() << "x" << ds.size() << " matrix to " << path.string() << '\n';
    return path;
}

/// kernel: {"input": distance.csv, "kernel": "exp"|"rbf", "gamma": g}
inline std::filesystem::path step_kernel(const nlohmann::json& doc, const StepContext& ctx, std::ostream& log_out) {
    ConfigSection c(doc, "kernel");
    const auto input = ctx.resolve(c.require<std::string>("input"));
    const auto kind = parse_kernel_kind(c.get<std::string>("kernel", "exp"));
    const double gamma = c.require<double>("gamma");
    c.finish();
    if (kind == KernelKind::Linear) {
        throw ConfigError("kernel: distance kernels are exp or rbf");
    }
    DistanceMatrix D;
    static_cast<LabeledMatrix&>(D) = load_labeled_matrix(input);
    const auto S = distance_kernel(D, kind, gamma);
    std::filesystem::create_directories(ctx.out_dir);
    const auto path = ctx.out_dir / "similarity.csv";
    save_labeled_matrix(S, path);
    log_out << "wrote " << to_string(kind) << " kernel (gamma " << format_double(gamma) << ") to " << path.string()
            << '\n';
    return path;
}

/// reduce: {"input": representation.csv, "method": "pca"|"kpca", "variance": 0.99,
///          "kernels": [...], "gammas": [...], "ranks": [...]}
inline std::filesystem::path step_reduce(const nlohmann::json& doc, const StepContext& ctx, std::ostream& log_out) {
    ConfigSection c(doc, "reduce");
    const auto input = ctx.resolve(c.require<std::string>("input"));
    const auto method = parse_reduction(c.get<std::string>("method", "pca"));
    const double variance = c.get<double>("variance", 0.99);
    KpcaSettings k;
    if (c.has("kernels")) {
        k.kinds.clear();
        for (const auto& s : c.get<std::vector<std::string>>("kernels", {})) {
            k.kinds.push_back(parse_kernel_kind(s));
        }
    }
    k.gammas = c.get<std::vector<double>>("gammas", k.gammas);
    k.ranks = c.get<std::vector<Eigen::Index>>("ranks", k.ranks);
    c.finish();
    auto rep = load_representation(input);
    nlohmann::json model;
    if (method == Reduction::Pca) {
        const auto m = pca_fit(rep.vectors, variance);
        rep.vectors = pca_transform(m, rep.vectors);
        model = pca_model_to_json(m);
    } else if (method == Reduction::Kpca) {
        const auto sel = kpca_select(rep.vectors, k.kinds, k.gammas, k.ranks);
        const auto m = kpca_fit(rep.vectors, sel.kernel, sel.r);
        rep.vectors = kpca_transform(m, rep.vectors);
        model = kpca_model_to_json(m);
    } else {
        throw ConfigError("reduce: method must be pca or kpca");
    }
    std::filesystem::create_directories(ctx.out_dir);
    const auto path = ctx.out_dir / "reduced.csv";
    rep.provenance = to_string(method);
    save_representation(rep, path);
    detail::write_text(ctx.out_dir / "reducer.json", model.dump(2) + "\n");
    log_out << "reduced to " << rep.vectors.cols() << " dimensions: " << path.string() << '\n';
    return path;
}

/// train: {"input": representation.csv, "classifier": "lr"|"nusvm", "lambda": l, "nu": v,
///         "kernel": "linear"|"exp"|"rbf", "gamma": g}
///     or {"kernel_matrix": similarity.csv, "dataset": data, "classifier": "nusvm", "nu": v}
inline std::filesystem::path step_train(const nlohmann::json& doc, const StepContext& ctx, std::ostream& log_out) {
    ConfigSection c(doc, "train");
    const auto classifier = parse_classifier(c.get<std::string>("classifier", "lr"));
    LrOptions lr_opt;
    lr_opt.max_iters = c.get<int>("max_iters", lr_opt.max_iters);
    lr_opt.tol = c.get<double>("tol", lr_opt.tol);
    nlohmann::json model;
    std::vector<std::string> ids;
    std::vector<int> y;
    Vector scores;
    if (c.has("kernel_matrix")) {
        if (classifier != ClassifierKind::NuSvm) {
            throw ConfigError("train: a precomputed kernel needs classifier 'nusvm'");
        }
        const auto K = load_labeled_matrix(ctx.resolve(c.require<std::string>("kernel_matrix")));
        const auto ds = load_dataset(ctx.resolve(c.require<std::string>("dataset")));
        std::unordered_map<std::string, int> label;
        for (const auto& r : ds.records) {
            label.emplace(r.id, r.label);
        }
        ids = K.row_ids;
        for (const auto& id : ids) {
            auto it = label.find(id);
            if (it == label.end()) {
                throw DataError("train: record '" + id + "' missing from dataset");
            }
            y.push_back(it->second);
        }
        const double nu = c.require<double>("nu");
        c.finish();
        auto m = train_nusvm(K.values, y, nu);
        for (auto s : m.support) {
            m.support_ids.push_back(ids[s]);
        }
        scores = m.train_decision;
        model = svm_model_to_json(m);
    } else {
        const auto rep = load_representation(ctx.resolve(c.require<std::string>("input")));
        ids = rep.ids;
        y = rep.labels;
        if (classifier == ClassifierKind::Lr) {
            const double lambda = c.require<double>("lambda");
            c.finish();
            const auto m = train_lr(rep.vectors, y, lambda, lr_opt);
            scores = lr_decision(m, rep.vectors);
            model = lr_model_to_json(m);
        } else {
            const double nu = c.require<double>("nu");
            const KernelSpec spec{parse_kernel_kind(c.get<std::string>("kernel", "linear")), c.get<double>("gamma", 1.0)};
            c.finish();
            auto m = train_nusvm(rep.vectors, y, spec, nu);
            for (auto s : m.support) {
                m.support_ids.push_back(ids[s]);
            }
            scores = m.train_decision;
            model = svm_model_to_json(m);
        }
    }
    std::filesystem::create_directories(ctx.out_dir);
    const auto path = ctx.out_dir / "model.json";
    detail::write_text(path, model.dump(2) + "\n");
    std::ostringstream sc;
    sc << "id,label,score\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        sc << ids[i] << ',' << y[i] << ',' << format_double(scores(static_cast<Eigen::Index>(i))) << '\n';
    }
    detail::write_text(ctx.out_dir / "train_scores.csv", sc.str());
    log_out << "training AUC " << format_double(roc_auc(scores, y)) << '\n';
    return path;
}

/// eval: {"input": eval_report.json}; prints and writes the summary.
inline SummaryStats step_eval(const nlohmann::json& doc, const StepContext& ctx, std::ostream& log_out) {
    ConfigSection c(doc, "eval");
    const auto input = ctx.resolve(c.require<std::string>("input"));
    c.finish();
    const auto report = eval_report_from_json(parse_config_text(read_file_bytes(input), input.string()));
    if (report.aucs.empty()) {
        throw DataError("eval: report has no splits");
    }
    const auto s = report.summary();
    log_out << "pipeline " << report.pipeline << " splits " << report.aucs.size() << '\n'
            << "median " << format_double(s.median) << " q25 " << format_double(s.q25) << " q75 "
            << format_double(s.q75) << " min " << format_double(s.min) << " max " << format_double(s.max) << '\n';
    std::filesystem::create_directories(ctx.out_dir);
    detail::write_text(ctx.out_dir / "summary.json",
                       nlohmann::json{{"pipeline", report.pipeline},
                                      {"median", s.median},
                                      {"q25", s.q25},
                                      {"q75", s.q75},
                                      {"min", s.min},
                                      {"max", s.max}}
                               .dump(2) +
                           "\n");
    return s;
}

/// cluster: {"input": matrix.csv, "matrix": "similarity"|"distance"|"points", "theta": t,
///           "knn_k": k, "C": c | "C_range": [...], "seed": s}
inline ClusterAssignment step_cluster(const nlohmann::json& doc, const StepContext& ctx, std::ostream& log_out) {
    ConfigSection c(doc, "cluster");
    const auto seed = detail::step_seed(c, ctx);
    const auto input = ctx.resolve(c.require<std::string>("input"));
    const auto kind = c.get<std::string>("matrix", "similarity");
    const auto knn_k = c.get<Eigen::Index>("knn_k", 10);
    std::optional<double> theta;
    if (c.has("theta")) {
        theta = c.get<double>("theta", 0.0);
    }
    std::vector<int> C_range;
    if (c.has("C_range")) {
        C_range = c.get<std::vector<int>>("C_range", {});
    }
    const int C = c.get<int>("C", 0);
    c.finish();
    if (C_range.empty() && C == 0) {
        throw ConfigError("cluster: give C or C_range");
    }
    std::vector<std::string> ids;
    ClusterAssignment a;
    nlohmann::json info;
    if (kind == "points") {
        const auto rep = load_representation(input);
        ids = rep.ids;
        if (!C_range.empty()) {
            const auto sel = select_num_clusters(rep.vectors, C_range, knn_k, seed);
            for (std::size_t i = 0; i < sel.C_values.size(); ++i) {
                if (sel.C_values[i] == sel.chosen) {
                    a = sel.assignments[i];
                }
            }
            info["silhouette"] = sel.silhouette;
            info["davies_bouldin"] = sel.davies_bouldin;
            info["C_values"] = sel.C_values;
        } else {
            a = spectral_clustering(knn_graph(rep.vectors, knn_k, ids), C, seed).assignment;
        }
    } else {
        if (!C_range.empty()) {
            throw ConfigError("cluster: C_range needs matrix 'points'");
        }
        const auto M = load_labeled_matrix(input);
        ids = M.row_ids;
        Graph g;
        if (kind == "similarity") {
            if (theta) {
                g = threshold_graph(M, *theta, true);
            } else {
                check_square_symmetric(M.values, "cluster");
                g.ids = ids;
                g.weighted = true;
                g.adjacency = M.values.cwiseMax(0.0);
                g.adjacency.diagonal().setZero();
            }
        } else if (kind == "distance") {
            g = knn_graph_from_distances(M.values, knn_k, ids);
        } else {
            throw ConfigError("cluster: matrix must be similarity, distance or points");
        }
        info["edges"] = g.num_edges();
        info["components"] = count_components(g);
        a = spectral_clustering(g, C, seed).assignment;
    }
    std::filesystem::create_directories(ctx.out_dir);
    std::ostringstream csv;
    csv << "id,cluster\n";
    std::vector<std::size_t> sizes(static_cast<std::size_t>(a.C), 0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        csv << ids[i] << ',' << a.labels[i] << '\n';
        ++sizes[static_cast<std::size_t>(a.labels[i])];
    }
    detail::write_text(ctx.out_dir / "clusters.csv", csv.str());
    info["C"] = a.C;
    info["sizes"] = sizes;
    info["labels"] = a.labels;
    info["ids"] = ids;
    detail::write_text(ctx.out_dir / "clusters.json", info.dump(2) + "\n");
    log_out << "clustered " << ids.size() << " records into " << a.C << " clusters\n";
    return a;
}

/// embed: {"input": matrix.csv, "matrix": "distance"|"points", "perplexity": p, "iters": n, "seed": s}
inline Embedding2D step_embed(const nlohmann::json& doc, const StepContext& ctx, std::ostream& log_out) {
    ConfigSection c(doc, "embed");
    const auto seed = detail::step_seed(c, ctx);
    const auto input = ctx.resolve(c.require<std::string>("input"));
    const auto kind = c.get<std::string>("matrix", "distance");
    TsneOptions opt;
    opt.perplexity = c.get<double>("perplexity", opt.perplexity);
    opt.iters = c.get<int>("iters", opt.iters);
    c.finish();
    Embedding2D e;
    std::vector<int> labels;
    if (kind == "points") {
        const auto rep = load_representation(input);
        e = tsne(rep.vectors, opt, seed);
        e.ids = rep.ids;
        labels = rep.labels;
    } else if (kind == "distance") {
        DistanceMatrix D;
        static_cast<LabeledMatrix&>(D) = load_labeled_matrix(input);
        e = tsne(D, opt, seed);
    } else {
        throw ConfigError("embed: matrix must be distance or points");
    }
    std::filesystem::create_directories(ctx.out_dir);
    write_embedding_csv(ctx.out_dir / "embedding.csv", e, {}, labels);
    RepresentationSet pts{e.ids, e.coords, labels.empty() ? std::vector<int>(e.ids.size(), -1) : labels, "tsne"};
    save_representation(pts, ctx.out_dir / "embedding_points.csv");
    log_out << "embedded " << e.coords.rows() << " records; final KL " << format_double(e.kl_trace.back()) << '\n';
    return e;
}

/// profile: {"dataset": data, "clusters": clusters.csv}
inline StratReport step_profile(const nlohmann::json& doc, const StepContext& ctx, std::ostream& log_out) {
    ConfigSection c(doc, "profile");
    const auto ds = load_dataset(ctx.resolve(c.require<std::string>("dataset")));
    const auto table = read_csv_table(ctx.resolve(c.require<std::string>("clusters")));
    c.finish();
    if (table.header != std::vector<std::string>{"id", "cluster"}) {
        throw DataError("profile: clusters file header must be id,cluster");
    }
    std::unordered_map<std::string, int> cluster_of;
    for (const auto& row : table.rows) {
        double v;
        if (!parse_double(row[1], v) || v < 0 || v != std::floor(v)) {
            throw DataError("profile: bad cluster index '" + row[1] + "' for '" + row[0] + "'");
        }
        cluster_of[row[0]] = static_cast<int>(v);
    }
    ClusterAssignment a;
    for (const auto& r : ds.records) {
        auto it = cluster_of.find(r.id);
        if (it == cluster_of.end()) {
            throw DataError("profile: record '" + r.id + "' has no cluster");
        }
        a.labels.push_back(it->second);
        a.C = std::max(a.C, it->second + 1);
    }
    const auto rep = cluster_profile(ds, a);
    write_strat_report(rep, ctx.out_dir);
    log_out << "profiled " << rep.C << " clusters\n";
    return rep;
}

} // namespace mtsstrat

#endif
