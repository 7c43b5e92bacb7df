// Command-line front end: train, eval, ablate, heatmap, and synth
// subcommands over the dachtic library.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "dachtic/cli.hpp"

using dachtic::cli::CommonOptions;

namespace {

void add_common(CLI::App* cmd, CommonOptions& opt, uint64_t& seed_val, bool& seed_set,
                int& steps_val, bool& steps_set) {
    cmd->add_option("--config", opt.config_path, "flat key-value config file");
    cmd->add_option("--out", opt.out_dir, "output directory");
    cmd->add_option("--seed", seed_val, "seed override")->each([&](const std::string&) {
        seed_set = true;
    });
    cmd->add_option("--steps", steps_val, "step-count override")->each([&](const std::string&) {
        steps_set = true;
    });
    cmd->add_option("--synthetic", opt.synthetic, "generate N synthetic samples");
    cmd->add_option("--manifest", opt.manifest_path, "manifest of WAV files");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dachtic: domain-adversarial causal-aware hierarchical audio transformer"};
    app.require_subcommand(1);

    CommonOptions opt;
    uint64_t seed_val = 0;
    int steps_val = 0;
    bool seed_set = false, steps_set = false;

    CLI::App* train_cmd = app.add_subcommand("train", "train with stratified cross-validation");
    add_common(train_cmd, opt, seed_val, seed_set, steps_val, steps_set);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd, opt, seed_val, seed_set, steps_val, steps_set);
    std::string checkpoint_path, seen_list, unseen_list;
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file");
    eval_cmd->add_option("--seen-domains", seen_list, "comma-separated training-domain ids");
    eval_cmd->add_option("--unseen-domains", unseen_list, "comma-separated held-out-domain ids");

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "run the ablation matrix");
    add_common(ablate_cmd, opt, seed_val, seed_set, steps_val, steps_set);
    std::vector<std::string> variants;
    ablate_cmd->add_option("--variants", variants, "variants to run besides full")->delimiter(',');

    CLI::App* heatmap_cmd = app.add_subcommand("heatmap", "export attention/relevance graymaps");
    add_common(heatmap_cmd, opt, seed_val, seed_set, steps_val, steps_set);
    std::string wav_path;
    int sample_index = -1;
    heatmap_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file");
    heatmap_cmd->add_option("--wav", wav_path, "input clip (RIFF PCM16 mono)");
    heatmap_cmd->add_option("--sample-index", sample_index, "synthetic sample index instead of --wav");

    CLI::App* synth_cmd = app.add_subcommand("synth", "write a synthetic WAV dataset + manifest");
    add_common(synth_cmd, opt, seed_val, seed_set, steps_val, steps_set);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return dachtic::cli::kExitUsage;
    }
    if (seed_set) opt.seed = seed_val;
    if (steps_set) opt.steps = steps_val;

    try {
        if (train_cmd->parsed()) return dachtic::cli::cmd_train(opt);
        if (eval_cmd->parsed()) return dachtic::cli::cmd_eval(opt, checkpoint_path, seen_list, unseen_list);
        if (ablate_cmd->parsed()) return dachtic::cli::cmd_ablate(opt, variants);
        if (heatmap_cmd->parsed())
            return dachtic::cli::cmd_heatmap(opt, checkpoint_path, wav_path, sample_index);
        if (synth_cmd->parsed()) return dachtic::cli::cmd_synth(opt);
    } catch (const dachtic::cli::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return dachtic::cli::kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return dachtic::cli::kExitRuntime;
    }
    return dachtic::cli::kExitUsage;
}
