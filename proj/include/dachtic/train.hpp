#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dachtic/data.hpp"
#include "dachtic/dsp.hpp"
#include "dachtic/metrics.hpp"
#include "dachtic/model.hpp"
#include "dachtic/objective.hpp"
#include "dachtic/rng.hpp"
#include "dachtic/tensor.hpp"

namespace dachtic::train {

struct AblationToggles {
    bool no_causal_mask = false;
    bool no_perturbation = false;
    bool no_grl = false;
    bool no_multitask = false;
    bool flat_encoder = false;
};

struct TrainConfig {
    model::EncoderConfig encoder;
    objective::LossWeights weights;
    dsp::FrontendConfig frontend;
    double learning_rate = 1e-3;
    int steps = 500;
    int batch_size = 8;
    uint64_t seed = 0;
    int folds = 5;
    AblationToggles ablation;
    double alpha_min = 0.1;  // noise-overlay mixing range (used when an
    double alpha_max = 0.5;  // external noise source is configured)
    int aug_time_masks = 1;
    int aug_max_time_width = 4;
    int aug_freq_masks = 1;
    int aug_max_freq_width = 4;
    bool grl_ramp = false;  // 0 -> lambda over the first 20% of steps
    int warmup_steps = 0;
    double clip_s = 1.0;  // synthetic clip length

    void validate() const {
        encoder.validate();
        weights.validate();
        if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be positive");
        if (folds < 2) throw std::invalid_argument("need at least two folds");
        if (batch_size < 1 || steps < 0) throw std::invalid_argument("bad step/batch settings");
        if (alpha_min < 0.0 || alpha_max > 1.0 || alpha_min > alpha_max)
            throw std::invalid_argument("alpha range must be inside [0, 1]");
    }
};

inline model::ModelVariant variant_of(const AblationToggles& t) {
    model::ModelVariant v;
    v.causal_mask = !t.no_causal_mask;
    v.multitask = !t.no_multitask;
    // Without multi-task supervision only the classification head remains, so
    // the domain branch goes with it.
    v.domain_branch = !t.no_grl && !t.no_multitask;
    v.flat = t.flat_encoder;
    return v;
}

// ---- stratified folds ---------------------------------------------------------

struct FoldSplit {
    int fold_id = 0;
    std::vector<int> train_ids;
    std::vector<int> test_ids;
};

// Per class: seeded shuffle, then deal round-robin. Test-fold class counts
// stay within one of each other by construction.
inline std::vector<FoldSplit> make_folds(const std::vector<int>& labels, int k, uint64_t seed) {
    if (k < 2) throw std::invalid_argument("make_folds: need k >= 2");
    std::map<int, std::vector<int>> by_class;
    for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
    for (const auto& [cls, ids] : by_class)
        if (static_cast<int>(ids.size()) < k)
            throw std::invalid_argument("class " + std::to_string(cls) + " has " +
                                        std::to_string(ids.size()) + " members, fewer than " +
                                        std::to_string(k) + " folds");

    std::vector<std::vector<int>> test_sets(k);
    for (auto& [cls, ids] : by_class) {
        Rng rng(derive_seed(seed, "fold_shuffle", static_cast<uint64_t>(cls)));
        rng.shuffle(ids);
        for (size_t j = 0; j < ids.size(); ++j) test_sets[j % k].push_back(ids[j]);
    }
    std::vector<FoldSplit> folds(k);
    for (int f = 0; f < k; ++f) {
        folds[f].fold_id = f;
        std::sort(test_sets[f].begin(), test_sets[f].end());
        folds[f].test_ids = test_sets[f];
        for (size_t i = 0; i < labels.size(); ++i)
            if (!std::binary_search(test_sets[f].begin(), test_sets[f].end(), static_cast<int>(i)))
                folds[f].train_ids.push_back(static_cast<int>(i));
    }
    return folds;
}

// ---- optimizer -------------------------------------------------------------------

struct AdamState {
    std::vector<double> m, v;
    int64_t t = 0;
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;
};

inline void adam_step(std::vector<double>& params, const std::vector<double>& grad, AdamState& s,
                      double lr) {
    if (s.m.empty()) {
        s.m.assign(params.size(), 0.0);
        s.v.assign(params.size(), 0.0);
    }
    s.t += 1;
    const double bc1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(s.t));
    for (size_t i = 0; i < params.size(); ++i) {
        s.m[i] = AdamState::kBeta1 * s.m[i] + (1.0 - AdamState::kBeta1) * grad[i];
        s.v[i] = AdamState::kBeta2 * s.v[i] + (1.0 - AdamState::kBeta2) * grad[i] * grad[i];
        params[i] -= lr * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + AdamState::kEps);
    }
}

// ---- per-epoch sample materialization ----------------------------------------------

struct LabeledSample {
    dsp::Spectrogram x;
    dsp::Spectrogram x_perturbed;  // n_frames == 0 when perturbation is off
    int y = 0;
    int d = 0;
    std::vector<uint8_t> a;  // token salience, empty when unknown
    double intensity = 0.5;
};

inline model::PatchGrid grid_of(const dsp::Spectrogram& x, const model::EncoderConfig& cfg) {
    model::PatchGrid g;
    if (x.n_frames < cfg.patch_t || x.n_mels < cfg.patch_f)
        throw std::invalid_argument("input too small");
    g.n_time = (x.n_frames - cfg.patch_t) / cfg.stride_t + 1;
    g.n_freq = (x.n_mels - cfg.patch_f) / cfg.stride_f + 1;
    return g;
}

// Train-time view of one raw sample for a given epoch: structured masking, a
// fresh pseudo-intervention, and token salience for the active grid. The
// evaluation view keeps the clean spectrogram and the sample's fixed
// intervention.
inline LabeledSample materialize(const data::RawSample& raw, const TrainConfig& cfg, uint64_t epoch,
                                 uint64_t index, bool training) {
    LabeledSample s;
    s.y = raw.y;
    s.d = raw.d;
    s.intensity = raw.intensity;
    if (training && (cfg.aug_time_masks > 0 || cfg.aug_freq_masks > 0)) {
        s.x = dsp::spec_augment(raw.x, cfg.aug_time_masks, cfg.aug_max_time_width, cfg.aug_freq_masks,
                                cfg.aug_max_freq_width,
                                derive_seed(cfg.seed, "augment", epoch * 1000003 + index));
    } else {
        s.x = raw.x;
    }
    if (!cfg.ablation.no_perturbation) {
        if (training) {
            const dsp::PerturbationSpec p = data::sample_perturbation(
                s.x, raw.salience_frames, derive_seed(cfg.seed, "intervene", epoch * 1000003 + index));
            s.x_perturbed = dsp::pseudo_intervene(s.x, p);
        } else {
            s.x_perturbed = raw.x_perturbed;
        }
    }
    if (!raw.salience_frames.empty()) {
        const model::PatchGrid grid = grid_of(s.x, cfg.encoder);
        const int pool = cfg.ablation.flat_encoder ? 1 : cfg.encoder.pool_factor;
        s.a = data::tokens_salience(raw.salience_frames, cfg.encoder, grid, pool);
        const int expected = ((grid.n_time + pool - 1) / pool) * grid.n_freq;
        if (static_cast<int>(s.a.size()) != expected)
            throw std::logic_error("salience length does not match the token grid");
    }
    return s;
}

// ---- one optimizer step -------------------------------------------------------------

struct TrainState {
    TrainConfig cfg;
    model::ModelParams params;
    AdamState opt;
    int step = 0;
};

inline double grl_lambda_at(const TrainConfig& cfg, int step) {
    const double lambda = cfg.encoder.grl_lambda;
    if (!cfg.grl_ramp || cfg.steps <= 0) return lambda;
    const double ramp = 0.2 * cfg.steps;
    return lambda * std::min(1.0, static_cast<double>(step) / std::max(1.0, ramp));
}

namespace detail {
inline Tensor acc_mean(Tape& tape, const std::optional<Tensor>& acc, int count) {
    if (!acc || count <= 0) return tape.leaf(Tensor::scalar(0.0));
    return tape.scalar_mul(*acc, 1.0 / count);
}
}  // namespace detail

// Forward both views of every sample on one tape, combine the term means in
// the fixed composite order, backpropagate, and apply one Adam update.
inline objective::LossBreakdown train_step(TrainState& state, const std::vector<LabeledSample>& batch) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const TrainConfig& cfg = state.cfg;
    const model::ModelVariant variant = variant_of(cfg.ablation);
    const double lambda = grl_lambda_at(cfg, state.step);

    Tape tape;
    Tensor flat = tape.leaf(Tensor(1, static_cast<int>(state.params.flat.size()), state.params.flat));
    model::BoundParams bound = model::bind_params(tape, flat, cfg.encoder, state.params.layout);

    std::optional<Tensor> class_sum, perturb_sum, causal_sum, domain_sum, intensity_sum;
    auto accumulate = [&tape](std::optional<Tensor>& acc, const Tensor& term) {
        acc = acc ? tape.add(*acc, term) : term;
    };

    int causal_terms = 0;
    int perturb_terms = 0;
    for (const LabeledSample& s : batch) {
        model::ForwardResult res =
            model::forward_bound(tape, bound, cfg.encoder, s.x, state.params.pos, variant, lambda);
        accumulate(class_sum, objective::class_loss_t(tape, res.head.y_hat, s.y));
        if (variant.multitask && !s.a.empty()) {
            accumulate(causal_sum, objective::causal_loss_t(tape, res.head.c_hat, s.a));
            ++causal_terms;
        }
        if (variant.domain_branch)
            accumulate(domain_sum, objective::domain_loss_t(tape, res.head.d_hat, s.d));
        if (variant.multitask)
            accumulate(intensity_sum, objective::intensity_loss_t(tape, res.head.t_hat, s.intensity));
        if (!cfg.ablation.no_perturbation && s.x_perturbed.n_frames > 0) {
            model::ForwardResult res_p = model::forward_bound(tape, bound, cfg.encoder, s.x_perturbed,
                                                              state.params.pos, variant, lambda);
            accumulate(perturb_sum, objective::perturb_loss_t(tape, res.head.y_hat, res_p.head.y_hat));
            ++perturb_terms;
        }
    }

    const int b = static_cast<int>(batch.size());
    Tensor class_mean = detail::acc_mean(tape, class_sum, b);
    Tensor perturb_mean = detail::acc_mean(tape, perturb_sum, perturb_terms);
    Tensor causal_mean = detail::acc_mean(tape, causal_sum, causal_terms);
    Tensor domain_mean = detail::acc_mean(tape, domain_sum, b);
    Tensor intensity_mean = detail::acc_mean(tape, intensity_sum, b);

    // total = l1*class + l2*perturb + l3*causal + l4*domain (+ l5*intensity),
    // accumulated left to right exactly as the logged breakdown recomposes.
    Tensor total = tape.scalar_mul(class_mean, cfg.weights.lambda1);
    total = tape.add(total, tape.scalar_mul(perturb_mean, cfg.weights.lambda2));
    total = tape.add(total, tape.scalar_mul(causal_mean, cfg.weights.lambda3));
    total = tape.add(total, tape.scalar_mul(domain_mean, cfg.weights.lambda4));
    const bool with_intensity = variant.multitask;
    if (with_intensity) total = tape.add(total, tape.scalar_mul(intensity_mean, cfg.weights.lambda5));

    objective::LossBreakdown breakdown = objective::total_loss(
        class_mean.value(), perturb_mean.value(), causal_mean.value(), domain_mean.value(),
        cfg.weights,
        with_intensity ? std::optional<double>(intensity_mean.value()) : std::nullopt);
    if (!std::isfinite(total.value()))
        throw std::runtime_error("non-finite loss at step " + std::to_string(state.step));

    GradMap grads = tape.backward(total);
    adam_step(state.params.flat, grads.at(flat.node_id).data, state.opt, cfg.learning_rate);
    state.step += 1;
    return breakdown;
}

// ---- warm-up diagnostics --------------------------------------------------------------

// Mean L2 norms of each unweighted term's gradient with respect to the
// encoder/head parameters (domain-classifier entries excluded), plus
// suggested weight ratios. Reporting only; the training weights are fixed.
struct WarmupReport {
    double class_norm = 0.0;
    double perturb_norm = 0.0;
    double causal_norm = 0.0;
    double domain_norm = 0.0;
    double ratio_perturb = 0.0;
    double ratio_causal = 0.0;
    double ratio_domain = 0.0;
    bool ratio_perturb_degenerate = false;
    bool ratio_causal_degenerate = false;
    bool ratio_domain_degenerate = false;
};

inline WarmupReport warmup_report(const TrainConfig& cfg, const std::vector<data::RawSample>& dataset,
                                  const std::vector<int>& train_ids, int warmup_steps) {
    if (warmup_steps < 1) throw std::invalid_argument("warmup_report: need warmup_steps >= 1");
    TrainConfig wcfg = cfg;
    wcfg.validate();
    model::ModelParams params = model::init_params(cfg.encoder, derive_seed(cfg.seed, "init", 0));
    const model::ModelVariant variant = variant_of(cfg.ablation);

    // theta excludes the domain classifier parameters.
    std::vector<uint8_t> is_theta(params.layout.total, 1);
    for (const auto& e : params.layout.entries)
        if (e.name.rfind("domain.", 0) == 0)
            std::fill_n(is_theta.begin() + e.offset, static_cast<size_t>(e.rows) * e.cols, 0);

    auto theta_norm = [&](const Tensor& g) {
        double acc = 0.0;
        for (size_t i = 0; i < g.size(); ++i)
            if (is_theta[i]) acc += g.data[i] * g.data[i];
        return std::sqrt(acc);
    };

    WarmupReport rep;
    for (int step = 0; step < warmup_steps; ++step) {
        std::vector<LabeledSample> batch;
        for (int j = 0; j < cfg.batch_size; ++j) {
            const int idx = train_ids[(step * cfg.batch_size + j) % train_ids.size()];
            batch.push_back(materialize(dataset[idx], wcfg, 0, static_cast<uint64_t>(idx), true));
        }
        Tape tape;
        Tensor flat = tape.leaf(Tensor(1, static_cast<int>(params.flat.size()), params.flat));
        model::BoundParams bound = model::bind_params(tape, flat, cfg.encoder, params.layout);
        std::optional<Tensor> class_sum, perturb_sum, causal_sum, domain_sum;
        auto accumulate = [&tape](std::optional<Tensor>& acc, const Tensor& term) {
            acc = acc ? tape.add(*acc, term) : term;
        };
        int causal_terms = 0, perturb_terms = 0;
        for (const LabeledSample& s : batch) {
            model::ForwardResult res = model::forward_bound(tape, bound, cfg.encoder, s.x, params.pos,
                                                            variant, cfg.encoder.grl_lambda);
            accumulate(class_sum, objective::class_loss_t(tape, res.head.y_hat, s.y));
            if (variant.multitask && !s.a.empty()) {
                accumulate(causal_sum, objective::causal_loss_t(tape, res.head.c_hat, s.a));
                ++causal_terms;
            }
            if (variant.domain_branch)
                accumulate(domain_sum, objective::domain_loss_t(tape, res.head.d_hat, s.d));
            if (s.x_perturbed.n_frames > 0) {
                model::ForwardResult res_p = model::forward_bound(
                    tape, bound, cfg.encoder, s.x_perturbed, params.pos, variant,
                    cfg.encoder.grl_lambda);
                accumulate(perturb_sum,
                           objective::perturb_loss_t(tape, res.head.y_hat, res_p.head.y_hat));
                ++perturb_terms;
            }
        }
        const int b = static_cast<int>(batch.size());
        Tensor class_mean = detail::acc_mean(tape, class_sum, b);
        Tensor perturb_mean = detail::acc_mean(tape, perturb_sum, perturb_terms);
        Tensor causal_mean = detail::acc_mean(tape, causal_sum, causal_terms);
        Tensor domain_mean = detail::acc_mean(tape, domain_sum, b);

        rep.class_norm += theta_norm(tape.backward(class_mean).at(flat.node_id)) / warmup_steps;
        rep.perturb_norm += theta_norm(tape.backward(perturb_mean).at(flat.node_id)) / warmup_steps;
        rep.causal_norm += theta_norm(tape.backward(causal_mean).at(flat.node_id)) / warmup_steps;
        rep.domain_norm += theta_norm(tape.backward(domain_mean).at(flat.node_id)) / warmup_steps;
    }

    auto ratio = [&](double term_norm, bool& degenerate) {
        if (term_norm <= 0.0) {
            degenerate = true;
            return std::numeric_limits<double>::infinity();
        }
        return rep.class_norm / term_norm;
    };
    rep.ratio_perturb = ratio(rep.perturb_norm, rep.ratio_perturb_degenerate);
    rep.ratio_causal = ratio(rep.causal_norm, rep.ratio_causal_degenerate);
    rep.ratio_domain = ratio(rep.domain_norm, rep.ratio_domain_degenerate);
    return rep;
}

// ---- fold training ----------------------------------------------------------------------

struct FoldResult {
    FoldSplit split;
    model::ModelParams params;
    metrics::PredictionSet test_predictions;
    std::vector<objective::LossBreakdown> step_log;
    double train_accuracy = 0.0;
    metrics::MetricsReport report;
};

inline metrics::PredictionSet evaluate(const model::ModelParams& params, const TrainConfig& cfg,
                                       const std::vector<data::RawSample>& dataset,
                                       const std::vector<int>& ids) {
    const model::ModelVariant variant = variant_of(cfg.ablation);
    metrics::PredictionSet preds;
    preds.reserve(ids.size());
    for (int id : ids) {
        const data::RawSample& raw = dataset[id];
        LabeledSample s = materialize(raw, cfg, 0, static_cast<uint64_t>(id), false);
        model::HeadOutputs out = model::infer(params, s.x, variant);
        metrics::PredictionRow row;
        row.sample_id = raw.id;
        row.y_true = raw.y;
        row.probs = out.class_probs;
        row.domain = raw.d;
        row.intensity_pred = out.intensity;
        row.intensity_true = raw.intensity;
        if (!s.a.empty() && !out.relevance.empty()) {
            row.relevance = out.relevance;
            row.salience = s.a;
        }
        if (raw.x_perturbed.n_frames > 0) {
            model::HeadOutputs out_p = model::infer(params, raw.x_perturbed, variant);
            row.probs_perturbed = out_p.class_probs;
        }
        preds.push_back(std::move(row));
    }
    return preds;
}

inline double accuracy_of(const model::ModelParams& params, const TrainConfig& cfg,
                          const std::vector<data::RawSample>& dataset, const std::vector<int>& ids) {
    const model::ModelVariant variant = variant_of(cfg.ablation);
    int correct = 0;
    for (int id : ids) {
        model::HeadOutputs out = model::infer(params, dataset[id].x, variant);
        correct += metrics::argmax(out.class_probs) == dataset[id].y;
    }
    return static_cast<double>(correct) / static_cast<double>(ids.size());
}

inline void log_step(std::ostream* os, int step, const objective::LossBreakdown& b) {
    if (!os) return;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "step=%d class=%.12g perturb=%.12g causal=%.12g domain=%.12g intensity=%.12g "
                  "total=%.12g",
                  step, b.class_loss, b.perturb_loss, b.causal_loss, b.domain_loss, b.intensity_loss,
                  b.total);
    (*os) << buf << "\n";
}

// Epoch order is a pure function of (seed, fold, epoch), so training is
// resumable from (params, optimizer state, step) alone.
inline std::vector<int> epoch_order(const TrainConfig& cfg, int fold_id,
                                    const std::vector<int>& train_ids, uint64_t epoch) {
    std::vector<int> order = train_ids;
    Rng rng(derive_seed(cfg.seed, "epoch", (static_cast<uint64_t>(fold_id) << 32) ^ epoch));
    rng.shuffle(order);
    return order;
}

inline FoldResult train_fold(const TrainConfig& cfg, const std::vector<data::RawSample>& dataset,
                             const FoldSplit& split, std::ostream* log_stream = nullptr) {
    cfg.validate();
    if (split.train_ids.empty() || split.test_ids.empty())
        throw std::invalid_argument("train_fold: empty split");

    FoldResult result;
    result.split = split;

    TrainState state;
    state.cfg = cfg;
    state.params =
        model::init_params(cfg.encoder, derive_seed(cfg.seed, "init", static_cast<uint64_t>(split.fold_id)));

    const int steps_per_epoch =
        (static_cast<int>(split.train_ids.size()) + cfg.batch_size - 1) / cfg.batch_size;
    std::vector<LabeledSample> epoch_samples(dataset.size());
    std::vector<int> order;
    uint64_t epoch = ~0ULL;
    while (state.step < cfg.steps) {
        const uint64_t now_epoch = static_cast<uint64_t>(state.step / steps_per_epoch);
        if (now_epoch != epoch) {
            epoch = now_epoch;
            order = epoch_order(cfg, split.fold_id, split.train_ids, epoch);
            for (int id : order)
                epoch_samples[id] = materialize(dataset[id], cfg, epoch, static_cast<uint64_t>(id), true);
        }
        const int batch_index = state.step % steps_per_epoch;
        std::vector<LabeledSample> batch;
        for (int j = batch_index * cfg.batch_size;
             j < std::min<int>((batch_index + 1) * cfg.batch_size, static_cast<int>(order.size())); ++j)
            batch.push_back(epoch_samples[order[j]]);
        if (batch.empty()) continue;
        const int step_no = state.step;
        objective::LossBreakdown b = train_step(state, batch);
        log_step(log_stream, step_no, b);
        result.step_log.push_back(b);
    }

    result.params = std::move(state.params);
    result.test_predictions = evaluate(result.params, cfg, dataset, split.test_ids);
    result.train_accuracy = accuracy_of(result.params, cfg, dataset, split.train_ids);
    result.report = metrics::compute_metrics(result.test_predictions, cfg.encoder.n_classes);
    return result;
}

// ---- cross-validated runs ------------------------------------------------------------------

struct RunResult {
    std::vector<FoldResult> folds;
    metrics::MetricsReport report;  // pooled over all test predictions
};

inline RunResult run_training(const TrainConfig& cfg, const std::vector<data::RawSample>& dataset,
                              std::ostream* log_stream = nullptr) {
    cfg.validate();
    std::vector<int> labels;
    labels.reserve(dataset.size());
    for (const auto& s : dataset) labels.push_back(s.y);
    const std::vector<FoldSplit> folds = make_folds(labels, cfg.folds, cfg.seed);

    RunResult run;
    metrics::PredictionSet pooled;
    for (const FoldSplit& split : folds) {
        if (log_stream) (*log_stream) << "fold " << split.fold_id << "\n";
        FoldResult fr = train_fold(cfg, dataset, split, log_stream);
        pooled.insert(pooled.end(), fr.test_predictions.begin(), fr.test_predictions.end());
        run.folds.push_back(std::move(fr));
    }
    run.report = metrics::compute_metrics(pooled, cfg.encoder.n_classes);
    for (const FoldResult& fr : run.folds) run.report.per_fold.push_back(fr.report);
    return run;
}

inline const std::vector<std::string>& ablation_variant_names() {
    static const std::vector<std::string> names = {"full",   "no_causal_mask", "no_perturbation",
                                                   "no_grl", "no_multitask",   "flat_encoder"};
    return names;
}

inline TrainConfig config_for_variant(const TrainConfig& base, const std::string& name) {
    TrainConfig cfg = base;
    cfg.ablation = AblationToggles{};
    if (name == "full") return cfg;
    if (name == "no_causal_mask") cfg.ablation.no_causal_mask = true;
    else if (name == "no_perturbation") cfg.ablation.no_perturbation = true;
    else if (name == "no_grl") cfg.ablation.no_grl = true;
    else if (name == "no_multitask") cfg.ablation.no_multitask = true;
    else if (name == "flat_encoder") cfg.ablation.flat_encoder = true;
    else throw std::invalid_argument("unknown ablation variant '" + name + "'");
    return cfg;
}

struct AblationRow {
    std::string variant;
    uint64_t seed = 0;
    metrics::MetricsReport report;
};

// Runs the full model and the requested variants on identical folds, seeds,
// and data.
inline std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                             const std::vector<data::RawSample>& dataset,
                                             const std::vector<std::string>& variants,
                                             std::ostream* log_stream = nullptr) {
    std::vector<AblationRow> rows;
    for (const std::string& name : variants) {
        TrainConfig cfg = config_for_variant(base, name);
        if (log_stream) (*log_stream) << "variant " << name << "\n";
        RunResult run = run_training(cfg, dataset, log_stream);
        rows.push_back({name, base.seed, std::move(run.report)});
    }
    return rows;
}

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
    os << "variant,seed,accuracy_pct,macro_f1,auc,css_pct\n";
    for (const auto& r : rows) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s,%llu,%s,%.3f,%.3f,%s", r.variant.c_str(),
                      static_cast<unsigned long long>(r.seed),
                      metrics::format_pct1(100.0 * r.report.accuracy).c_str(), r.report.macro_f1,
                      r.report.auc, metrics::format_pct1(100.0 * r.report.css).c_str());
        os << buf << "\n";
    }
}

// ---- checkpoints -----------------------------------------------------------------------

inline void write_train_config(std::ostream& os, const TrainConfig& cfg) {
    char buf[48];
    auto hex = [&](double v) {
        std::snprintf(buf, sizeof buf, "%a", v);
        return std::string(buf);
    };
    os << "train.learning_rate " << hex(cfg.learning_rate) << "\n";
    os << "train.steps " << cfg.steps << "\n";
    os << "train.batch_size " << cfg.batch_size << "\n";
    os << "train.seed " << cfg.seed << "\n";
    os << "train.folds " << cfg.folds << "\n";
    os << "train.grl_ramp " << (cfg.grl_ramp ? 1 : 0) << "\n";
    os << "train.warmup_steps " << cfg.warmup_steps << "\n";
    os << "train.clip_s " << hex(cfg.clip_s) << "\n";
    os << "train.alpha_min " << hex(cfg.alpha_min) << "\n";
    os << "train.alpha_max " << hex(cfg.alpha_max) << "\n";
    os << "train.aug_time_masks " << cfg.aug_time_masks << "\n";
    os << "train.aug_max_time_width " << cfg.aug_max_time_width << "\n";
    os << "train.aug_freq_masks " << cfg.aug_freq_masks << "\n";
    os << "train.aug_max_freq_width " << cfg.aug_max_freq_width << "\n";
    os << "weights.lambda1 " << hex(cfg.weights.lambda1) << "\n";
    os << "weights.lambda2 " << hex(cfg.weights.lambda2) << "\n";
    os << "weights.lambda3 " << hex(cfg.weights.lambda3) << "\n";
    os << "weights.lambda4 " << hex(cfg.weights.lambda4) << "\n";
    os << "weights.lambda5 " << hex(cfg.weights.lambda5) << "\n";
    os << "ablation.no_causal_mask " << cfg.ablation.no_causal_mask << "\n";
    os << "ablation.no_perturbation " << cfg.ablation.no_perturbation << "\n";
    os << "ablation.no_grl " << cfg.ablation.no_grl << "\n";
    os << "ablation.no_multitask " << cfg.ablation.no_multitask << "\n";
    os << "ablation.flat_encoder " << cfg.ablation.flat_encoder << "\n";
    os << "frontend.window_s " << hex(cfg.frontend.window_s) << "\n";
    os << "frontend.hop_s " << hex(cfg.frontend.hop_s) << "\n";
    os << "frontend.n_mels " << cfg.frontend.n_mels << "\n";
    os << "frontend.fft_size " << cfg.frontend.fft_size << "\n";
    os << "frontend.eps " << hex(cfg.frontend.eps) << "\n";
}

// Applies one dotted key; returns false for keys it does not know.
inline bool apply_train_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value) {
    auto d = [&] { return std::strtod(value.c_str(), nullptr); };
    auto i = [&] { return std::stoi(value); };
    auto b = [&] { return value != "0" && value != "false"; };
    if (key.rfind("encoder.", 0) == 0) {
        model::apply_config_line(cfg.encoder, key, value);
        return true;
    }
    if (key == "train.learning_rate") cfg.learning_rate = d();
    else if (key == "train.steps") cfg.steps = i();
    else if (key == "train.batch_size") cfg.batch_size = i();
    else if (key == "train.seed") cfg.seed = std::stoull(value);
    else if (key == "train.folds") cfg.folds = i();
    else if (key == "train.grl_ramp") cfg.grl_ramp = b();
    else if (key == "train.warmup_steps") cfg.warmup_steps = i();
    else if (key == "train.clip_s") cfg.clip_s = d();
    else if (key == "train.alpha_min") cfg.alpha_min = d();
    else if (key == "train.alpha_max") cfg.alpha_max = d();
    else if (key == "train.aug_time_masks") cfg.aug_time_masks = i();
    else if (key == "train.aug_max_time_width") cfg.aug_max_time_width = i();
    else if (key == "train.aug_freq_masks") cfg.aug_freq_masks = i();
    else if (key == "train.aug_max_freq_width") cfg.aug_max_freq_width = i();
    else if (key == "weights.lambda1") cfg.weights.lambda1 = d();
    else if (key == "weights.lambda2") cfg.weights.lambda2 = d();
    else if (key == "weights.lambda3") cfg.weights.lambda3 = d();
    else if (key == "weights.lambda4") cfg.weights.lambda4 = d();
    else if (key == "weights.lambda5") cfg.weights.lambda5 = d();
    else if (key == "ablation.no_causal_mask") cfg.ablation.no_causal_mask = b();
    else if (key == "ablation.no_perturbation") cfg.ablation.no_perturbation = b();
    else if (key == "ablation.no_grl") cfg.ablation.no_grl = b();
    else if (key == "ablation.no_multitask") cfg.ablation.no_multitask = b();
    else if (key == "ablation.flat_encoder") cfg.ablation.flat_encoder = b();
    else if (key == "frontend.window_s") cfg.frontend.window_s = d();
    else if (key == "frontend.hop_s") cfg.frontend.hop_s = d();
    else if (key == "frontend.n_mels") cfg.frontend.n_mels = i();
    else if (key == "frontend.fft_size") cfg.frontend.fft_size = i();
    else if (key == "frontend.eps") cfg.frontend.eps = d();
    else return false;
    return true;
}

struct Checkpoint {
    model::ModelParams params;
    int step = 0;
    uint64_t rng_state = 0;  // derived stream marker; draws are functions of (seed, step)
    TrainConfig cfg;
    AdamState opt;
};

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
    model::write_model(os, ck.params);
    os << "step " << ck.step << "\n";
    os << "rng_state " << ck.rng_state << "\n";
    write_train_config(os, ck.cfg);
    char buf[48];
    auto dump_vec = [&](const char* name, const std::vector<double>& v) {
        os << name << " " << v.size() << "\n";
        for (size_t i = 0; i < v.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%a", v[i]);
            os << buf << (i + 1 == v.size() ? "\n" : " ");
        }
    };
    os << "opt.t " << ck.opt.t << "\n";
    dump_vec("opt.m", ck.opt.m);
    dump_vec("opt.v", ck.opt.v);
    os << "end_checkpoint\n";
}

inline Checkpoint read_checkpoint(std::istream& is) {
    Checkpoint ck;
    ck.params = model::read_model(is);
    ck.cfg.encoder = ck.params.cfg;
    std::string key;
    while (is >> key) {
        if (key == "end_checkpoint") return ck;
        if (key == "step") {
            is >> ck.step;
        } else if (key == "rng_state") {
            is >> ck.rng_state;
        } else if (key == "opt.t") {
            is >> ck.opt.t;
        } else if (key == "opt.m" || key == "opt.v") {
            size_t n = 0;
            is >> n;
            std::vector<double>& v = key == "opt.m" ? ck.opt.m : ck.opt.v;
            v.resize(n);
            std::string tok;
            for (size_t i = 0; i < n; ++i) {
                is >> tok;
                v[i] = std::strtod(tok.c_str(), nullptr);
            }
        } else {
            std::string value;
            if (!(is >> value)) break;
            if (!apply_train_config_kv(ck.cfg, key, value))
                throw std::runtime_error("checkpoint: unknown key " + key);
        }
    }
    throw std::runtime_error("checkpoint: missing end marker");
}

inline void save_checkpoint_file(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_checkpoint(out, ck);
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_checkpoint(in);
}

// ---- linear probe ---------------------------------------------------------------------

// Ridge-regression probe to one-hot targets, solved by Gaussian elimination;
// used to measure how much domain information survives in h_cls.
inline double linear_probe_accuracy(const std::vector<std::vector<double>>& train_x,
                                    const std::vector<int>& train_y,
                                    const std::vector<std::vector<double>>& test_x,
                                    const std::vector<int>& test_y, int n_classes,
                                    double ridge = 1e-2) {
    if (train_x.empty() || test_x.empty()) throw std::invalid_argument("probe: empty inputs");
    const int d = static_cast<int>(train_x[0].size()) + 1;  // with bias column
    std::vector<std::vector<double>> gram(d, std::vector<double>(d, 0.0));
    std::vector<std::vector<double>> rhs(d, std::vector<double>(n_classes, 0.0));
    std::vector<double> xi(d);
    for (size_t r = 0; r < train_x.size(); ++r) {
        for (int j = 0; j + 1 < d; ++j) xi[j] = train_x[r][j];
        xi[d - 1] = 1.0;
        for (int a = 0; a < d; ++a) {
            for (int b = 0; b < d; ++b) gram[a][b] += xi[a] * xi[b];
            rhs[a][train_y[r]] += xi[a];
        }
    }
    for (int a = 0; a < d; ++a) gram[a][a] += ridge;

    // Gaussian elimination with partial pivoting on [gram | rhs].
    for (int col = 0; col < d; ++col) {
        int pivot = col;
        for (int r = col + 1; r < d; ++r)
            if (std::abs(gram[r][col]) > std::abs(gram[pivot][col])) pivot = r;
        std::swap(gram[col], gram[pivot]);
        std::swap(rhs[col], rhs[pivot]);
        const double diag = gram[col][col];
        if (diag == 0.0) throw std::runtime_error("probe: singular system");
        for (int r = 0; r < d; ++r) {
            if (r == col) continue;
            const double factor = gram[r][col] / diag;
            if (factor == 0.0) continue;
            for (int c = col; c < d; ++c) gram[r][c] -= factor * gram[col][c];
            for (int c = 0; c < n_classes; ++c) rhs[r][c] -= factor * rhs[col][c];
        }
    }
    std::vector<std::vector<double>> w(d, std::vector<double>(n_classes));
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < n_classes; ++c) w[r][c] = rhs[r][c] / gram[r][r];

    int correct = 0;
    for (size_t r = 0; r < test_x.size(); ++r) {
        int best = 0;
        double best_v = -1e300;
        for (int c = 0; c < n_classes; ++c) {
            double v = w[d - 1][c];
            for (int j = 0; j + 1 < d; ++j) v += w[j][c] * test_x[r][j];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        correct += best == test_y[r];
    }
    return static_cast<double>(correct) / static_cast<double>(test_x.size());
}

// h_cls features for a list of samples under the given parameters.
inline std::vector<std::vector<double>> collect_hcls(const model::ModelParams& params,
                                                     const TrainConfig& cfg,
                                                     const std::vector<data::RawSample>& dataset,
                                                     const std::vector<int>& ids) {
    const model::ModelVariant variant = variant_of(cfg.ablation);
    std::vector<std::vector<double>> feats;
    feats.reserve(ids.size());
    for (int id : ids) feats.push_back(model::infer(params, dataset[id].x, variant).h_cls);
    return feats;
}

}  // namespace dachtic::train
