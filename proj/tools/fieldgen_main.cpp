#include <cstdio>
#include <exception>
#include <functional>
#include <string>

#include "CLI11.hpp"
#include "fieldgen/config.hpp"
#include "fieldgen/errors.hpp"
#include "fieldgen/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::int64_t seed = -1;  // -1: keep the config's seed
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value configuration file");
    cmd->add_option("--seed", args.seed, "override the config seed");
    cmd->add_option("--out", args.out_dir, "output directory");
}

fieldgen::RunConfig load_config(const CommonArgs& args) {
    fieldgen::RunConfig rc;
    if (!args.config_path.empty()) rc.apply_file(args.config_path);
    if (args.seed >= 0) rc.seed = static_cast<std::uint64_t>(args.seed);
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fieldgen: neural-field molecule generation pipeline"};
    app.require_subcommand(1);

    struct Cmd {
        const char* name;
        const char* help;
        void (*run)(fieldgen::RunConfig, const std::string&);
    };
    const Cmd cmds[] = {
        {"gen-data", "generate a deterministic toy complex dataset", fieldgen::cmd_gen_data},
        {"train-ae", "train the field codec on a dataset", fieldgen::cmd_train_ae},
        {"train-denoiser", "train the conditional denoiser against a codec",
         fieldgen::cmd_train_denoiser},
        {"sample", "sample latents (and molecules for the learned source)",
         fieldgen::cmd_sample},
        {"recover", "recover molecules from saved latents", fieldgen::cmd_recover},
        {"eval", "evaluate samples: histograms, uniqueness, RMSD, oracle stats",
         fieldgen::cmd_eval},
    };

    CommonArgs args[std::size(cmds)];
    std::function<void()> selected;
    for (std::size_t i = 0; i < std::size(cmds); ++i) {
        CLI::App* sub = app.add_subcommand(cmds[i].name, cmds[i].help);
        add_common(sub, args[i]);
        sub->callback([&, i] {
            selected = [&, i] { cmds[i].run(load_config(args[i]), args[i].out_dir); };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        app.exit(e);
        return 2;
    }

    try {
        selected();
    } catch (const fieldgen::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const fieldgen::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const fieldgen::NumericalError& e) {
        std::fprintf(stderr, "numerical abort: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
