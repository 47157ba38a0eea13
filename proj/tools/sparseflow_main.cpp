#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"

#include "sparseflow/harness.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> variant;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool needs_config = true) {
    auto* c = cmd->add_option("--config", opts.config_path, "experiment config (JSON)");
    if (needs_config) c->required();
    cmd->add_option("--out", opts.out_dir, "output directory (overrides config)");
    std::uint64_t seed_value = 0;
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&opts](const std::uint64_t& s) { opts.seed = s; },
        "restrict to a single sweep seed");
    cmd->add_option_function<std::string>(
        "--variant", [&opts](const std::string& v) { opts.variant = v; },
        "restrict to one map variant")
        ->check(CLI::IsMember({"grid", "graph"}));
    (void)seed_value;
}

sparseflow::ExperimentConfig load_config(const CommonOpts& opts) {
    auto cfg = sparseflow::ExperimentConfig::load(opts.config_path);
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    return cfg;
}

sparseflow::RunFilter make_filter(const CommonOpts& opts) {
    sparseflow::RunFilter f;
    if (opts.variant) f.variant = sparseflow::variant_from_name(*opts.variant);
    f.seed = opts.seed;
    return f;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse probe-vehicle traffic flow estimation pipeline"};
    app.require_subcommand(1);

    const char* stages[] = {"generate", "sparsify", "aggregate", "train", "evaluate", "sweep",
                            "report"};
    const char* descriptions[] = {
        "synthesize ideal speed fields and probe-vehicle traces",
        "subsample probe vehicles at the configured sparsity levels",
        "build initial per-region speed estimates from sparse probes",
        "train the recovery model for each (p, seed) run",
        "score recovered vs. initial estimates and emit report rows",
        "run all stages end to end",
        "aggregate report rows into summary and plot files"};

    std::vector<CommonOpts> opts(7);
    std::vector<CLI::App*> subs;
    for (int i = 0; i < 7; ++i) {
        CLI::App* sub = app.add_subcommand(stages[i], descriptions[i]);
        add_common(sub, opts[static_cast<std::size_t>(i)]);
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        for (int i = 0; i < 7; ++i) {
            if (!subs[static_cast<std::size_t>(i)]->parsed()) continue;
            const CommonOpts& o = opts[static_cast<std::size_t>(i)];
            auto cfg = load_config(o);
            auto filter = make_filter(o);
            switch (i) {
            case 0: sparseflow::cmd_generate(cfg, filter); break;
            case 1: sparseflow::cmd_sparsify(cfg, filter); break;
            case 2: sparseflow::cmd_aggregate(cfg, filter); break;
            case 3: sparseflow::cmd_train(cfg, filter); break;
            case 4: sparseflow::cmd_evaluate(cfg, filter); break;
            case 5: sparseflow::cmd_sweep(cfg, filter); break;
            case 6: sparseflow::cmd_report(cfg.out_dir); break;
            }
        }
    } catch (const sparseflow::MissingInputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const sparseflow::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
