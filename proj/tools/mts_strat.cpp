// mts-strat: config-driven runner for the stratification pipeline.

#include "CLI11.hpp"
#include "mtsstrat/steps.hpp"

#include <iostream>

namespace {

using namespace mtsstrat;

struct CommonArgs {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
};

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config, "JSON config file")->required();
    sub->add_option("--out", args.out, "output directory");
    sub->add_option("--seed", args.seed, "seed override");
    sub->add_option("--workers", args.workers, "worker threads")->check(CLI::PositiveNumber);
}

int run_command(const std::string& name, const CommonArgs& args) {
    const std::filesystem::path config_path(args.config);
    const std::string text = read_file_bytes(config_path);
    const auto doc = parse_config_text(text, config_path.string());

    if (name == "run") {
        auto spec = parse_pipeline_spec(doc);
        RunOverrides o;
        if (!args.out.empty()) {
            o.output_dir = args.out;
        }
        o.seed = args.seed;
        o.workers = args.workers;
        apply_overrides(spec, o);
        if (spec.data.path.is_relative() && !spec.data.path.empty()) {
            spec.data.path = config_path.parent_path() / spec.data.path;
        }
        const auto result = cmd_run(spec, sha256_hex(text));
        const auto s = result.report.summary();
        std::cout << spec.name() << ": median AUC " << format_double(s.median) << " (q25 " << format_double(s.q25)
                  << ", q75 " << format_double(s.q75) << ") over " << result.report.aucs.size() << " replicates\n"
                  << "artifacts in " << spec.output_dir.string() << '\n';
        return 0;
    }

    StepContext ctx;
    ctx.config_dir = config_path.parent_path().empty() ? std::filesystem::path(".") : config_path.parent_path();
    ctx.seed = args.seed;
    std::size_t workers = 1;
    if (const char* env = std::getenv("MTS_STRAT_WORKERS"); env && *env) {
        workers = static_cast<std::size_t>(std::strtoul(env, nullptr, 10));
    }
    ctx.workers = std::max<std::size_t>(1, args.workers.value_or(workers));
    if (!args.out.empty()) {
        ctx.out_dir = args.out;
    } else if (const char* env = std::getenv("MTS_STRAT_OUTPUT_DIR"); env && *env) {
        ctx.out_dir = env;
    }

    if (name == "synth") {
        step_synth(doc, ctx, std::cout);
    } else if (name == "distmat") {
        step_distmat(doc, ctx, std::cout);
    } else if (name == "kernel") {
        step_kernel(doc, ctx, std::cout);
    } else if (name == "reduce") {
        step_reduce(doc, ctx, std::cout);
    } else if (name == "train") {
        step_train(doc, ctx, std::cout);
    } else if (name == "eval") {
        step_eval(doc, ctx, std::cout);
    } else if (name == "cluster") {
        step_cluster(doc, ctx, std::cout);
    } else if (name == "embed") {
        step_embed(doc, ctx, std::cout);
    } else if (name == "profile") {
        step_profile(doc, ctx, std::cout);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multivariate time-series patient stratification"};
    app.name("mts-strat");
    app.require_subcommand(1);

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"run", "full protocol: replicates, evaluation, stratification"},
        {"synth", "generate a synthetic dataset"},
        {"distmat", "pairwise DTW distances or FE/TCK similarities"},
        {"kernel", "exp or rbf kernel of a distance matrix"},
        {"reduce", "PCA or kernel PCA of a representation"},
        {"train", "fit logistic regression or nu-SVM"},
        {"eval", "summarize an evaluation report"},
        {"cluster", "spectral clustering"},
        {"embed", "t-SNE embedding"},
        {"profile", "per-cluster characterization"},
    };
    CommonArgs args;
    std::vector<std::pair<CLI::App*, std::string>> subs;
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        add_common(sub, args);
        subs.emplace_back(sub, name);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(ErrorKind::Config);
    }

    std::string chosen;
    for (const auto& [sub, name] : subs) {
        if (sub->parsed()) {
            chosen = name;
        }
    }

    log::set_sink([](std::string_view msg) { std::cerr << "warning: " << msg << '\n'; });
    try {
        return run_command(chosen, args);
    } catch (const Error& e) {
        std::cerr << "mts-strat " << chosen << ": " << e.what() << '\n';
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "mts-strat " << chosen << ": " << e.what() << '\n';
        return static_cast<int>(ErrorKind::Data);
    }
}
