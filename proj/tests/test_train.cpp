#include <catch2/catch_amalgamated.hpp>

#include "dachtic/train.hpp"

#include <set>
#include <sstream>

using namespace dachtic;
using namespace dachtic::train;

namespace {

// Small and fast: 4x4 patches on short clips.
TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.encoder.patch_t = 4;
    cfg.encoder.patch_f = 4;
    cfg.encoder.stride_t = 4;
    cfg.encoder.stride_f = 4;
    cfg.encoder.width_d = 16;
    cfg.encoder.n_heads = 2;
    cfg.encoder.token_blocks = 1;
    cfg.encoder.semantic_blocks = 1;
    cfg.encoder.mlp_ratio = 2;
    cfg.encoder.pool_factor = 2;
    cfg.encoder.n_classes = 5;
    cfg.encoder.n_domains = 2;
    cfg.frontend.n_mels = 32;
    cfg.frontend.fft_size = 256;
    cfg.frontend.window_s = 0.016;
    cfg.frontend.hop_s = 0.008;
    cfg.steps = 10;
    cfg.batch_size = 4;
    cfg.folds = 2;
    cfg.seed = 11;
    cfg.clip_s = 0.3;
    return cfg;
}

std::vector<data::RawSample> tiny_dataset(int n, const TrainConfig& cfg) {
    return data::make_synthetic_dataset(n, cfg.encoder.n_domains, cfg.seed, cfg.frontend, cfg.clip_s);
}

void check_fold_properties(const std::vector<FoldSplit>& folds, const std::vector<int>& labels,
                           int k) {
    std::set<int> seen;
    for (const auto& f : folds) {
        for (int id : f.test_ids) {
            REQUIRE(seen.insert(id).second);  // pairwise disjoint
            REQUIRE_FALSE(std::count(f.train_ids.begin(), f.train_ids.end(), id));
        }
    }
    REQUIRE(seen.size() == labels.size());  // union covers everything

    // Per-class counts within 1 of each other across test folds.
    std::set<int> classes(labels.begin(), labels.end());
    for (int cls : classes) {
        int lo = 1 << 30, hi = -1;
        for (const auto& f : folds) {
            int count = 0;
            for (int id : f.test_ids) count += labels[id] == cls;
            lo = std::min(lo, count);
            hi = std::max(hi, count);
        }
        REQUIRE(hi - lo <= 1);
    }
    REQUIRE(static_cast<int>(folds.size()) == k);
}

}  // namespace

TEST_CASE("two balanced classes split one per fold") {
    std::vector<int> labels = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    auto folds = make_folds(labels, 5, 3);
    for (const auto& f : folds) {
        REQUIRE(f.test_ids.size() == 2);
        int c0 = 0, c1 = 0;
        for (int id : f.test_ids) (labels[id] == 0 ? c0 : c1) += 1;
        REQUIRE(c0 == 1);
        REQUIRE(c1 == 1);
    }
    check_fold_properties(folds, labels, 5);
}

TEST_CASE("seven samples across five folds differ by at most one") {
    std::vector<int> labels(7, 0);
    auto folds = make_folds(labels, 5, 9);
    // Exhaustive count check.
    std::vector<int> sizes;
    for (const auto& f : folds) sizes.push_back(static_cast<int>(f.test_ids.size()));
    REQUIRE(*std::max_element(sizes.begin(), sizes.end()) -
                *std::min_element(sizes.begin(), sizes.end()) <=
            1);
    REQUIRE(std::accumulate(sizes.begin(), sizes.end(), 0) == 7);
    check_fold_properties(folds, labels, 5);
}

TEST_CASE("a class smaller than k is rejected by name") {
    std::vector<int> labels = {0, 0, 0, 0, 0, 2, 2, 2};
    REQUIRE_THROWS_WITH(make_folds(labels, 5, 1), Catch::Matchers::ContainsSubstring("class 2"));
}

TEST_CASE("folds satisfy partition and balance on random label multisets") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = static_cast<int>(rng.uniform_int(2, 6));
        const int n_classes = static_cast<int>(rng.uniform_int(1, 4));
        std::vector<int> labels;
        for (int c = 0; c < n_classes; ++c) {
            const int members = static_cast<int>(rng.uniform_int(k, k + 12));
            for (int i = 0; i < members; ++i) labels.push_back(c * 3);  // sparse class ids
        }
        rng.shuffle(labels);
        auto folds = make_folds(labels, k, rng.next_u64());
        check_fold_properties(folds, labels, k);
    }
}

TEST_CASE("fold assignment is deterministic in the seed") {
    std::vector<int> labels = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
    auto a = make_folds(labels, 3, 123);
    auto b = make_folds(labels, 3, 123);
    for (size_t f = 0; f < a.size(); ++f) {
        REQUIRE(a[f].test_ids == b[f].test_ids);
        REQUIRE(a[f].train_ids == b[f].train_ids);
    }
    auto c = make_folds(labels, 3, 124);
    bool any_diff = false;
    for (size_t f = 0; f < a.size(); ++f) any_diff = any_diff || a[f].test_ids != c[f].test_ids;
    REQUIRE(any_diff);
}

TEST_CASE("composite reduces to the class term when other weights are zero") {
    TrainConfig cfg = tiny_train_config();
    cfg.weights.lambda2 = cfg.weights.lambda3 = cfg.weights.lambda4 = cfg.weights.lambda5 = 0.0;
    auto ds = tiny_dataset(10, cfg);
    TrainState state{cfg, model::init_params(cfg.encoder, 5), {}, 0};
    std::vector<LabeledSample> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(materialize(ds[i], cfg, 0, i, true));
    objective::LossBreakdown b = train_step(state, batch);
    REQUIRE(b.total == b.class_loss);
}

TEST_CASE("identical states advance to bit-identical parameters") {
    TrainConfig cfg = tiny_train_config();
    auto ds = tiny_dataset(10, cfg);
    auto run_once = [&] {
        TrainState state{cfg, model::init_params(cfg.encoder, 5), {}, 0};
        std::vector<LabeledSample> batch;
        for (int i = 0; i < 4; ++i) batch.push_back(materialize(ds[i], cfg, 0, i, true));
        train_step(state, batch);
        train_step(state, batch);
        return state.params.flat;
    };
    REQUIRE(run_once() == run_once());
}

TEST_CASE("every logged step satisfies the breakdown identity") {
    TrainConfig cfg = tiny_train_config();
    cfg.steps = 6;
    auto ds = tiny_dataset(10, cfg);
    auto folds = make_folds([&] {
        std::vector<int> l;
        for (auto& s : ds) l.push_back(s.y);
        return l;
    }(), 2, cfg.seed);
    FoldResult fr = train_fold(cfg, ds, folds[0]);
    REQUIRE(fr.step_log.size() == 6);
    for (const auto& b : fr.step_log) {
        REQUIRE(b.total == objective::recompose_total(b, cfg.weights, true));
        REQUIRE(std::isfinite(b.total));
    }
}

TEST_CASE("loss falls by half within the regression budget") {
    TrainConfig cfg = tiny_train_config();
    cfg.steps = 200;
    cfg.batch_size = 8;
    cfg.aug_time_masks = 0;  // keep the curve smooth for the regression bound
    cfg.aug_freq_masks = 0;
    auto ds = tiny_dataset(20, cfg);
    std::vector<int> all_ids(ds.size());
    std::iota(all_ids.begin(), all_ids.end(), 0);
    FoldSplit everything{0, all_ids, all_ids};
    FoldResult fr = train_fold(cfg, ds, everything);
    const double first = fr.step_log.front().total;
    double best = first;
    for (const auto& b : fr.step_log) best = std::min(best, b.total);
    REQUIRE(best <= 0.5 * first);
}

TEST_CASE("training without adversarial or auxiliary terms leaves domain weights untouched") {
    TrainConfig cfg = tiny_train_config();
    cfg.ablation.no_grl = true;
    cfg.weights.lambda2 = cfg.weights.lambda3 = cfg.weights.lambda5 = 0.0;
    auto ds = tiny_dataset(10, cfg);
    TrainState state{cfg, model::init_params(cfg.encoder, 5), {}, 0};
    std::vector<double> before;
    for (const auto& e : state.params.layout.entries)
        if (e.name.rfind("domain.", 0) == 0)
            for (size_t i = 0; i < static_cast<size_t>(e.rows) * e.cols; ++i)
                before.push_back(state.params.flat[e.offset + i]);
    std::vector<LabeledSample> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(materialize(ds[i], cfg, 0, i, true));
    train_step(state, batch);
    std::vector<double> after;
    for (const auto& e : state.params.layout.entries)
        if (e.name.rfind("domain.", 0) == 0)
            for (size_t i = 0; i < static_cast<size_t>(e.rows) * e.cols; ++i)
                after.push_back(state.params.flat[e.offset + i]);
    REQUIRE(after == before);
}

TEST_CASE("two-fold training covers every sample exactly once") {
    TrainConfig cfg = tiny_train_config();
    cfg.steps = 4;
    auto ds = tiny_dataset(10, cfg);
    RunResult run = run_training(cfg, ds);
    REQUIRE(run.folds.size() == 2);
    size_t covered = 0;
    std::set<std::string> ids;
    for (const auto& fr : run.folds) {
        covered += fr.test_predictions.size();
        for (const auto& p : fr.test_predictions) ids.insert(p.sample_id);
    }
    REQUIRE(covered == 10);
    REQUIRE(ids.size() == 10);
    REQUIRE(run.report.per_fold.size() == 2);
}

TEST_CASE("identical runs give identical reports") {
    TrainConfig cfg = tiny_train_config();
    cfg.steps = 4;
    auto ds = tiny_dataset(10, cfg);
    std::stringstream a, b;
    metrics::write_report(a, run_training(cfg, ds).report);
    metrics::write_report(b, run_training(cfg, ds).report);
    REQUIRE(a.str() == b.str());
}

TEST_CASE("warm-up report is deterministic and flags dead terms") {
    TrainConfig cfg = tiny_train_config();
    auto ds = tiny_dataset(10, cfg);
    std::vector<int> ids(ds.size());
    std::iota(ids.begin(), ids.end(), 0);
    WarmupReport rep = warmup_report(cfg, ds, ids, 2);
    REQUIRE(rep.class_norm > 0.0);
    REQUIRE(rep.ratio_causal == Catch::Approx(rep.class_norm / rep.causal_norm));
    REQUIRE_FALSE(rep.ratio_domain_degenerate);

    WarmupReport again = warmup_report(cfg, ds, ids, 2);
    REQUIRE(rep.class_norm == again.class_norm);
    REQUIRE(rep.domain_norm == again.domain_norm);

    TrainConfig no_perturb = cfg;
    no_perturb.ablation.no_perturbation = true;
    WarmupReport dead = warmup_report(no_perturb, ds, ids, 1);
    REQUIRE(dead.ratio_perturb_degenerate);
    REQUIRE(std::isinf(dead.ratio_perturb));
}

TEST_CASE("ablation table has one row per variant on shared folds") {
    TrainConfig cfg = tiny_train_config();
    cfg.steps = 2;
    auto ds = tiny_dataset(10, cfg);
    auto rows = run_ablation(cfg, ds, ablation_variant_names());
    REQUIRE(rows.size() == 6);
    REQUIRE(rows[0].variant == "full");
    for (const auto& r : rows) REQUIRE(r.seed == cfg.seed);

    std::stringstream csv;
    write_ablation_csv(csv, rows);
    std::string line;
    int lines = 0;
    while (std::getline(csv, line)) ++lines;
    REQUIRE(lines == 7);  // header + 6 rows

    auto subset = run_ablation(cfg, ds, {"full", "no_grl"});
    REQUIRE(subset.size() == 2);
}

TEST_CASE("checkpoints resume training bit-identically") {
    TrainConfig cfg = tiny_train_config();
    auto ds = tiny_dataset(10, cfg);
    auto make_batch = [&](int step) {
        std::vector<LabeledSample> batch;
        for (int i = 0; i < 4; ++i)
            batch.push_back(materialize(ds[(step * 4 + i) % ds.size()], cfg, step, i, true));
        return batch;
    };
    TrainState state{cfg, model::init_params(cfg.encoder, 5), {}, 0};
    for (int s = 0; s < 3; ++s) train_step(state, make_batch(s));

    Checkpoint ck{state.params, state.step, derive_seed(cfg.seed, "stream", state.step), cfg,
                  state.opt};
    std::stringstream ss;
    write_checkpoint(ss, ck);
    Checkpoint loaded = read_checkpoint(ss);
    REQUIRE(loaded.params.flat == state.params.flat);
    REQUIRE(loaded.opt.m == state.opt.m);
    REQUIRE(loaded.step == 3);
    REQUIRE(loaded.cfg.steps == cfg.steps);

    TrainState resumed{loaded.cfg, loaded.params, loaded.opt, loaded.step};
    for (int s = 3; s < 5; ++s) {
        train_step(state, make_batch(s));
        train_step(resumed, make_batch(s));
    }
    REQUIRE(resumed.params.flat == state.params.flat);
}

TEST_CASE("the linear probe separates obviously separable features") {
    Rng rng(5);
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    for (int i = 0; i < 60; ++i) {
        const int label = i % 2;
        xs.push_back({label ? 2.0 + rng.uniform() : -2.0 - rng.uniform(), rng.uniform()});
        ys.push_back(label);
    }
    REQUIRE(linear_probe_accuracy(xs, ys, xs, ys, 2) == 1.0);
}
