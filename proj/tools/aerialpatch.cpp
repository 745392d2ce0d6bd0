// SPDX-License-Identifier: Apache-2.0
// aerialpatch command-line driver.

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "aerialpatch/pipeline.hpp"

namespace ap = aerialpatch;

int main(int argc, char** argv) {
    CLI::App app{"Adversarial patches against aerial car detectors"};
    app.require_subcommand(1);
    app.set_version_flag("--version", ap::kVersion);
    bool list_keys = false;
    app.add_flag("--list-keys", list_keys, "print every config key with its default and exit");

    struct Command {
        const char* name;
        const char* help;
        std::function<void(const ap::Config&)> run;
    };
    const std::vector<Command> commands = {
        {"gen-synthetic", "render a synthetic parking-lot scene (train/ and test/ plus box files)", ap::run_gen_synthetic},
        {"train-detector", "train the toy car detector on a scene's training split", ap::run_train_detector},
        {"annotate", "label both splits with the frozen detector", ap::run_annotate},
        {"train-patch", "optimise a patch against the frozen detector", ap::run_train_patch},
        {"eval-digital", "embed a patch in the test split and report AORR and AP", ap::run_eval_digital},
        {"eval-physical", "compute OSR and NDR from tracked footage scores", ap::run_eval_physical},
        {"export-patch", "write print-ready patch images with physical resolution", ap::run_export_patch},
        {"plot", "render a loss, NDR, score or PR plot", ap::run_plot},
    };

    std::vector<std::string> config_files;
    std::vector<CLI::App*> subs;
    for (const auto& c : commands) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("--config", config_files, "key = value config file (repeatable, later files win)");
        sub->allow_extras();
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        if (list_keys) {
            for (const auto& k : ap::kConfigKeys) std::cout << k.name << " = " << k.default_value << "    # " << k.help << "\n";
            return 0;
        }
        app.exit(e);
        return 2;
    }

    try {
        for (std::size_t i = 0; i < commands.size(); ++i) {
            if (!subs[i]->parsed()) continue;
            ap::Config cfg;
            for (const auto& f : config_files) cfg.load_file(f);
            cfg.apply_args(subs[i]->remaining());
            commands[i].run(cfg);
        }
    } catch (const ap::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
