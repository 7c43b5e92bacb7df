#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dachtic/data.hpp"
#include "dachtic/heatmap.hpp"
#include "dachtic/metrics.hpp"
#include "dachtic/model.hpp"
#include "dachtic/train.hpp"

namespace dachtic::cli {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key-value config: one `key = value` (or `key value`) pair per line,
// `#` starts a comment, keys are dotted (encoder.width_d, weights.lambda2).
inline void apply_config_text(train::TrainConfig& cfg, std::istream& in, const std::string& origin) {
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::string key, eq, value;
        std::stringstream ss(line);
        if (!(ss >> key)) continue;  // blank
        if (!(ss >> eq)) throw UsageError(origin + ":" + std::to_string(line_no) + ": missing value");
        value = eq == "=" ? "" : eq;
        if (value.empty() && !(ss >> value))
            throw UsageError(origin + ":" + std::to_string(line_no) + ": missing value");
        std::string extra;
        if (ss >> extra) throw UsageError(origin + ":" + std::to_string(line_no) + ": trailing text");
        if (!train::apply_train_config_kv(cfg, key, value))
            throw UsageError(origin + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
}

inline train::TrainConfig load_config(const std::string& path) {
    train::TrainConfig cfg;
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    apply_config_text(cfg, in, path);
    return cfg;
}

struct CommonOptions {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<uint64_t> seed;
    std::optional<int> steps;
    int synthetic = 0;          // sample count, 0 = unset
    std::string manifest_path;  // empty = unset
};

inline train::TrainConfig resolve_config(const CommonOptions& opt) {
    train::TrainConfig cfg;
    if (!opt.config_path.empty()) cfg = load_config(opt.config_path);
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.steps) cfg.steps = *opt.steps;
    cfg.validate();
    return cfg;
}

inline std::vector<data::RawSample> resolve_dataset(const CommonOptions& opt,
                                                    const train::TrainConfig& cfg) {
    if (opt.synthetic > 0 && !opt.manifest_path.empty())
        throw UsageError("choose either --synthetic or --manifest, not both");
    if (opt.synthetic > 0)
        return data::make_synthetic_dataset(opt.synthetic, cfg.encoder.n_domains, cfg.seed,
                                            cfg.frontend, cfg.clip_s);
    if (!opt.manifest_path.empty()) {
        std::vector<std::string> warnings;
        auto ds = data::load_dataset_from_manifest(opt.manifest_path, cfg.frontend, &warnings);
        for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
        return ds;
    }
    throw UsageError("a dataset is required: pass --synthetic N or --manifest PATH");
}

inline void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir);
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

// ---- train -----------------------------------------------------------------------

inline int cmd_train(const CommonOptions& opt) {
    train::TrainConfig cfg = resolve_config(opt);
    std::vector<data::RawSample> dataset = resolve_dataset(opt, cfg);
    ensure_out_dir(opt.out_dir);

    if (cfg.warmup_steps > 0) {
        std::vector<int> ids(dataset.size());
        std::iota(ids.begin(), ids.end(), 0);
        train::WarmupReport rep = train::warmup_report(cfg, dataset, ids, cfg.warmup_steps);
        std::cout << "warmup gradient norms: class " << rep.class_norm << " perturb "
                  << rep.perturb_norm << " causal " << rep.causal_norm << " domain "
                  << rep.domain_norm << "\n";
        std::cout << "suggested weight ratios vs class: perturb "
                  << (rep.ratio_perturb_degenerate ? std::string("inf (zero gradient)")
                                                   : std::to_string(rep.ratio_perturb))
                  << " causal "
                  << (rep.ratio_causal_degenerate ? std::string("inf (zero gradient)")
                                                  : std::to_string(rep.ratio_causal))
                  << " domain "
                  << (rep.ratio_domain_degenerate ? std::string("inf (zero gradient)")
                                                  : std::to_string(rep.ratio_domain))
                  << "\n";
    }

    std::ofstream log(opt.out_dir + "/train.log", std::ios::binary);
    train::RunResult run = train::run_training(cfg, dataset, &log);

    for (const auto& fr : run.folds) {
        train::Checkpoint ck{fr.params, cfg.steps,
                             derive_seed(cfg.seed, "stream", static_cast<uint64_t>(cfg.steps)), cfg,
                             train::AdamState{}};
        train::save_checkpoint_file(
            opt.out_dir + "/fold" + std::to_string(fr.split.fold_id) + ".ckpt", ck);
    }

    std::ostringstream report;
    metrics::write_report(report, run.report);
    write_text_file(opt.out_dir + "/report.txt", report.str());

    std::ostringstream confusion;
    std::vector<std::string> names(data::cry_type_names().begin(), data::cry_type_names().end());
    names.resize(cfg.encoder.n_classes, "class");
    metrics::write_confusion_csv(confusion, run.report.confusion, names);
    write_text_file(opt.out_dir + "/confusion.csv", confusion.str());

    std::cout << "accuracy " << metrics::format_pct1(100.0 * run.report.accuracy) << "% macro_f1 "
              << run.report.macro_f1 << " over " << dataset.size() << " samples, " << cfg.folds
              << " folds\n";
    return kExitOk;
}

// ---- ablate -----------------------------------------------------------------------

inline int cmd_ablate(const CommonOptions& opt, const std::vector<std::string>& variant_args) {
    train::TrainConfig cfg = resolve_config(opt);
    std::vector<data::RawSample> dataset = resolve_dataset(opt, cfg);
    ensure_out_dir(opt.out_dir);

    std::vector<std::string> variants = {"full"};
    if (variant_args.empty()) {
        variants = train::ablation_variant_names();
    } else {
        for (const auto& v : variant_args) {
            train::config_for_variant(cfg, v);  // validates the name
            if (v != "full") variants.push_back(v);
        }
    }

    std::ofstream log(opt.out_dir + "/train.log", std::ios::binary);
    std::vector<train::AblationRow> rows = train::run_ablation(cfg, dataset, variants, &log);

    std::ostringstream csv;
    train::write_ablation_csv(csv, rows);
    write_text_file(opt.out_dir + "/ablation.csv", csv.str());
    std::cout << csv.str();
    return kExitOk;
}

// ---- eval -------------------------------------------------------------------------

inline std::vector<int> parse_id_list(const std::string& csv) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(std::stoi(tok));
    return out;
}

inline int cmd_eval(const CommonOptions& opt, const std::string& checkpoint_path,
                    const std::string& seen_list, const std::string& unseen_list) {
    if (checkpoint_path.empty()) throw UsageError("--checkpoint is required");
    train::Checkpoint ck = train::load_checkpoint_file(checkpoint_path);
    train::TrainConfig cfg = ck.cfg;
    cfg.encoder = ck.params.cfg;
    if (opt.seed) cfg.seed = *opt.seed;
    std::vector<data::RawSample> dataset = resolve_dataset(opt, cfg);
    ensure_out_dir(opt.out_dir);

    const std::vector<int> seen = parse_id_list(seen_list);     // 1-based domain ids
    const std::vector<int> unseen = parse_id_list(unseen_list);
    for (int s : seen)
        for (int u : unseen)
            if (s == u) throw UsageError("domain " + std::to_string(s) + " listed on both sides");

    std::vector<int> ids(dataset.size());
    std::iota(ids.begin(), ids.end(), 0);
    metrics::PredictionSet preds = train::evaluate(ck.params, cfg, dataset, ids);
    for (size_t i = 0; i < preds.size(); ++i) {
        const int domain_1based = dataset[i].d + 1;
        if (!seen.empty() || !unseen.empty()) {
            const bool in_seen = std::count(seen.begin(), seen.end(), domain_1based) > 0;
            const bool in_unseen = std::count(unseen.begin(), unseen.end(), domain_1based) > 0;
            if (!in_seen && !in_unseen)
                throw UsageError("domain " + std::to_string(domain_1based) +
                                 " missing from --seen-domains/--unseen-domains");
            preds[i].seen_domain = in_seen;
        }
    }

    metrics::MetricsReport report = metrics::compute_metrics(preds, cfg.encoder.n_classes);
    std::ostringstream text;
    metrics::write_report(text, report);
    write_text_file(opt.out_dir + "/report.txt", text.str());

    std::ostringstream confusion;
    std::vector<std::string> names(data::cry_type_names().begin(), data::cry_type_names().end());
    names.resize(cfg.encoder.n_classes, "class");
    metrics::write_confusion_csv(confusion, report.confusion, names);
    write_text_file(opt.out_dir + "/confusion.csv", confusion.str());

    std::cout << text.str();
    return kExitOk;
}

// ---- heatmap ----------------------------------------------------------------------

inline int cmd_heatmap(const CommonOptions& opt, const std::string& checkpoint_path,
                       const std::string& wav_path, int synthetic_index) {
    if (checkpoint_path.empty()) throw UsageError("--checkpoint is required");
    if (wav_path.empty() && synthetic_index < 0)
        throw UsageError("pass --wav PATH or --sample-index N");
    train::Checkpoint ck = train::load_checkpoint_file(checkpoint_path);
    const train::TrainConfig& cfg = ck.cfg;

    dsp::Spectrogram spec;
    if (!wav_path.empty()) {
        dsp::Waveform w = data::read_wav(wav_path);
        if (w.sample_rate_hz != 16000) w = dsp::resample(w, 16000);
        spec = dsp::log_mel(w, cfg.frontend);
    } else {
        const uint64_t seed = opt.seed.value_or(cfg.seed);
        auto ds = data::make_synthetic_dataset(synthetic_index + 1, cfg.encoder.n_domains, seed,
                                               cfg.frontend, cfg.clip_s);
        spec = ds[synthetic_index].x;
    }
    ensure_out_dir(opt.out_dir);

    const model::ModelVariant variant = train::variant_of(cfg.ablation);
    model::HeadOutputs out = model::infer(ck.params, spec, variant);
    if (out.relevance.empty())
        throw std::runtime_error("checkpoint has no relevance head (multi-task disabled)");

    heatmap::write_pgm_file(opt.out_dir + "/spectrogram.pgm", spec.values, spec.n_frames,
                            spec.n_mels);

    const int pool = cfg.ablation.flat_encoder ? 1 : cfg.encoder.pool_factor;
    std::vector<double> relevance_map = heatmap::upsample_token_scores(
        out.relevance, out.head_grid, out.token_grid, pool, cfg.encoder, spec.n_frames, spec.n_mels);
    heatmap::write_pgm_file(opt.out_dir + "/relevance.pgm", relevance_map, spec.n_frames,
                            spec.n_mels);

    std::vector<double> mass = heatmap::attention_mass(out.attention);
    std::vector<double> attention_map = heatmap::upsample_token_scores(
        mass, out.head_grid, out.token_grid, pool, cfg.encoder, spec.n_frames, spec.n_mels);
    heatmap::write_pgm_file(opt.out_dir + "/attention.pgm", attention_map, spec.n_frames,
                            spec.n_mels);

    std::cout << "wrote spectrogram.pgm, relevance.pgm, attention.pgm (" << spec.n_frames << "x"
              << spec.n_mels << ")\n";
    return kExitOk;
}

// ---- synth ------------------------------------------------------------------------

inline int cmd_synth(const CommonOptions& opt) {
    if (opt.synthetic <= 0) throw UsageError("--synthetic N is required");
    train::TrainConfig cfg = resolve_config(opt);
    ensure_out_dir(opt.out_dir);

    std::ostringstream manifest;
    manifest << data::kManifestHeader << "\n";
    for (int i = 0; i < opt.synthetic; ++i) {
        const int cls = i % 5;
        const int dom = (i / 5) % cfg.encoder.n_domains + 1;
        data::SyntheticSpec spec = data::make_prototype_spec(
            cls, dom, cfg.clip_s, derive_seed(cfg.seed, "sample", static_cast<uint64_t>(i)));
        data::SynthResult synth = data::synth_cry(spec, cfg.clip_s, cfg.frontend);
        char name[64];
        std::snprintf(name, sizeof name, "syn%04d.wav", i);
        data::write_wav(opt.out_dir + "/" + name, synth.wav);
        char line[160];
        std::snprintf(line, sizeof line, "syn%d,%s,%s,%d,%.4f", i, name,
                      data::cry_type_names()[cls], dom, synth.intensity);
        manifest << line << "\n";
    }
    write_text_file(opt.out_dir + "/manifest.csv", manifest.str());
    std::cout << "wrote " << opt.synthetic << " clips and manifest.csv to " << opt.out_dir << "\n";
    return kExitOk;
}

}  // namespace dachtic::cli
