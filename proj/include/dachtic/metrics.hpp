#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dachtic::metrics {

struct PredictionRow {
    std::string sample_id;
    int y_true = 0;
    std::vector<double> probs;            // class probabilities
    int domain = 0;
    bool seen_domain = true;
    std::vector<double> relevance;        // token scores, may be empty
    std::vector<uint8_t> salience;        // token ground truth, may be empty
    std::vector<double> probs_perturbed;  // prediction on the intervened input
    double intensity_pred = 0.0;
    double intensity_true = 0.0;
};

using PredictionSet = std::vector<PredictionRow>;

struct MetricsReport {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double auc = 0.0;
    double css = 0.0;
    double css_tv = 0.0;  // continuous diagnostic: 1 - mean total variation
    double cfi = 0.0;
    bool has_cfi = false;
    double domain_gap = 0.0;  // percentage points
    bool has_domain_gap = false;
    std::vector<std::vector<int>> confusion;  // [true][predicted]
    std::vector<double> per_class_f1;
    std::vector<std::string> notes;
    std::vector<MetricsReport> per_fold;
};

inline int argmax(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Rounds half away from zero at one decimal, the presentation convention for
// percentage tables.
inline double round_pct1(double x) { return std::round(x * 10.0) / 10.0; }

inline std::string format_pct1(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", round_pct1(x));
    return buf;
}

struct ClassificationScores {
    std::vector<std::vector<int>> confusion;
    double accuracy = 0.0;
    std::vector<double> per_class_f1;
    double macro_f1 = 0.0;
};

inline ClassificationScores confusion_accuracy_f1(const PredictionSet& preds, int n_classes) {
    if (preds.empty()) throw std::invalid_argument("metrics: empty prediction set");
    ClassificationScores out;
    out.confusion.assign(n_classes, std::vector<int>(n_classes, 0));
    for (const auto& row : preds) {
        if (row.y_true < 0 || row.y_true >= n_classes)
            throw std::invalid_argument("metrics: label out of range");
        out.confusion[row.y_true][argmax(row.probs)] += 1;
    }
    int correct = 0;
    for (int c = 0; c < n_classes; ++c) correct += out.confusion[c][c];
    out.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());

    out.per_class_f1.resize(n_classes);
    for (int c = 0; c < n_classes; ++c) {
        int tp = out.confusion[c][c];
        int fn = 0, fp = 0;
        for (int k = 0; k < n_classes; ++k) {
            if (k != c) {
                fn += out.confusion[c][k];
                fp += out.confusion[k][c];
            }
        }
        const double denom = 2.0 * tp + fp + fn;
        out.per_class_f1[c] = denom > 0.0 ? 2.0 * tp / denom : 0.0;  // 0/0 -> 0
    }
    out.macro_f1 = std::accumulate(out.per_class_f1.begin(), out.per_class_f1.end(), 0.0) / n_classes;
    return out;
}

// AUROC via average ranks; tied scores count half, matching the trapezoidal
// convention.
inline double auroc(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("auroc: bad inputs");
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double pos_ranks = 0.0;
    size_t n_pos = 0;
    for (size_t k = 0; k < n; ++k)
        if (labels[k]) {
            pos_ranks += rank[k];
            ++n_pos;
        }
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auroc: degenerate labels");
    return (pos_ranks - 0.5 * n_pos * (n_pos + 1)) / (static_cast<double>(n_pos) * n_neg);
}

// One-vs-rest AUROC per class, macro averaged; degenerate classes are skipped
// with a note.
inline double auc_macro(const PredictionSet& preds, int n_classes,
                        std::vector<std::string>* notes = nullptr) {
    if (preds.empty()) throw std::invalid_argument("metrics: empty prediction set");
    double sum = 0.0;
    int used = 0;
    for (int c = 0; c < n_classes; ++c) {
        std::vector<double> scores;
        std::vector<uint8_t> labels;
        scores.reserve(preds.size());
        labels.reserve(preds.size());
        for (const auto& row : preds) {
            scores.push_back(row.probs[c]);
            labels.push_back(row.y_true == c ? 1 : 0);
        }
        const size_t n_pos = std::count(labels.begin(), labels.end(), uint8_t{1});
        if (n_pos == 0 || n_pos == labels.size()) {
            if (notes)
                notes->push_back("auc: class " + std::to_string(c) +
                                 " skipped (no positive/negative contrast)");
            continue;
        }
        sum += auroc(scores, labels);
        ++used;
    }
    if (used == 0) throw std::invalid_argument("auc: every class is degenerate");
    return sum / used;
}

// Counterfactual stability: fraction of rows whose argmax survives the
// intervention.
inline double css(const PredictionSet& preds) {
    if (preds.empty()) throw std::invalid_argument("metrics: empty prediction set");
    int agree = 0;
    for (const auto& row : preds) {
        if (row.probs_perturbed.empty())
            throw std::invalid_argument("css: missing perturbed prediction");
        if (argmax(row.probs) == argmax(row.probs_perturbed)) ++agree;
    }
    return static_cast<double>(agree) / static_cast<double>(preds.size());
}

// Continuous companion to css: 1 - mean total-variation distance.
inline double css_tv(const PredictionSet& preds) {
    if (preds.empty()) throw std::invalid_argument("metrics: empty prediction set");
    double tv_sum = 0.0;
    for (const auto& row : preds) {
        if (row.probs_perturbed.empty())
            throw std::invalid_argument("css: missing perturbed prediction");
        double tv = 0.0;
        for (size_t c = 0; c < row.probs.size(); ++c)
            tv += std::abs(row.probs[c] - row.probs_perturbed[c]);
        tv_sum += 0.5 * tv;
    }
    return 1.0 - tv_sum / static_cast<double>(preds.size());
}

// Causal fidelity: AUROC of all token relevance scores pooled across the set
// against their binary salience annotations.
inline double cfi(const PredictionSet& preds) {
    std::vector<double> scores;
    std::vector<uint8_t> labels;
    for (const auto& row : preds) {
        if (row.relevance.size() != row.salience.size())
            throw std::invalid_argument("cfi: relevance/salience length mismatch");
        scores.insert(scores.end(), row.relevance.begin(), row.relevance.end());
        labels.insert(labels.end(), row.salience.begin(), row.salience.end());
    }
    if (scores.empty()) throw std::invalid_argument("cfi: no token annotations");
    const size_t n_pos = std::count(labels.begin(), labels.end(), uint8_t{1});
    if (n_pos == 0 || n_pos == labels.size())
        throw std::invalid_argument("no contrast in salience labels");
    return auroc(scores, labels);
}

// Absolute drop between seen-domain and unseen-domain accuracy, in
// percentage points.
inline double domain_gap(double acc_seen_pct, double acc_unseen_pct) {
    if (acc_seen_pct < 0.0 || acc_seen_pct > 100.0 || acc_unseen_pct < 0.0 || acc_unseen_pct > 100.0)
        throw std::invalid_argument("domain_gap: accuracies must be percentages in [0, 100]");
    return std::abs(acc_seen_pct - acc_unseen_pct);
}

// Everything the prediction set supports in one pass.
inline MetricsReport compute_metrics(const PredictionSet& preds, int n_classes) {
    MetricsReport r;
    ClassificationScores cls = confusion_accuracy_f1(preds, n_classes);
    r.confusion = std::move(cls.confusion);
    r.accuracy = cls.accuracy;
    r.per_class_f1 = std::move(cls.per_class_f1);
    r.macro_f1 = cls.macro_f1;
    r.auc = auc_macro(preds, n_classes, &r.notes);

    const bool any_perturbed =
        std::any_of(preds.begin(), preds.end(),
                    [](const PredictionRow& p) { return !p.probs_perturbed.empty(); });
    if (any_perturbed) {
        r.css = css(preds);
        r.css_tv = css_tv(preds);
    } else {
        r.notes.push_back("css: no perturbed predictions available");
    }

    const bool any_salience = std::any_of(preds.begin(), preds.end(), [](const PredictionRow& p) {
        return !p.salience.empty() && !p.relevance.empty();
    });
    if (any_salience) {
        PredictionSet with;
        for (const auto& p : preds)
            if (!p.salience.empty() && !p.relevance.empty()) with.push_back(p);
        bool contrast = false;
        uint8_t first = with.front().salience.front();
        for (const auto& p : with)
            for (uint8_t s : p.salience) contrast = contrast || s != first;
        if (contrast) {
            r.cfi = cfi(with);
            r.has_cfi = true;
        } else {
            r.notes.push_back("cfi: no contrast in salience labels");
        }
    } else {
        r.notes.push_back("cfi: n/a (no salience annotations)");
    }

    bool any_seen = false, any_unseen = false;
    for (const auto& p : preds) (p.seen_domain ? any_seen : any_unseen) = true;
    if (any_seen && any_unseen) {
        auto acc_of = [&](bool seen) {
            int n = 0, ok = 0;
            for (const auto& p : preds)
                if (p.seen_domain == seen) {
                    ++n;
                    ok += argmax(p.probs) == p.y_true;
                }
            return 100.0 * ok / n;
        };
        r.domain_gap = domain_gap(acc_of(true), acc_of(false));
        r.has_domain_gap = true;
    } else {
        r.notes.push_back("domain_gap: omitted (all domains on one side)");
    }
    return r;
}

// ---- serialization -------------------------------------------------------------

inline void write_report(std::ostream& os, const MetricsReport& r, const std::string& prefix = "") {
    char buf[64];
    auto emit = [&](const std::string& key, double v) {
        std::snprintf(buf, sizeof buf, "%.12g", v);
        os << prefix << key << " " << buf << "\n";
    };
    if (prefix.empty()) os << "dachtic-report v1\n";
    emit("accuracy", r.accuracy);
    emit("macro_f1", r.macro_f1);
    emit("auc", r.auc);
    emit("css", r.css);
    emit("css_tv", r.css_tv);
    if (r.has_cfi) emit("cfi", r.cfi);
    if (r.has_domain_gap) emit("domain_gap_pct", r.domain_gap);
    for (size_t c = 0; c < r.per_class_f1.size(); ++c)
        emit("f1.class" + std::to_string(c), r.per_class_f1[c]);
    for (const auto& note : r.notes) os << prefix << "note " << note << "\n";
    for (size_t f = 0; f < r.per_fold.size(); ++f)
        write_report(os, r.per_fold[f], prefix + "fold" + std::to_string(f) + ".");
}

inline void write_confusion_csv(std::ostream& os, const std::vector<std::vector<int>>& confusion,
                                const std::vector<std::string>& class_names) {
    os << "true\\pred";
    for (const auto& name : class_names) os << "," << name;
    os << "\n";
    for (size_t r = 0; r < confusion.size(); ++r) {
        os << class_names[r];
        for (int v : confusion[r]) os << "," << v;
        os << "\n";
    }
}

}  // namespace dachtic::metrics
