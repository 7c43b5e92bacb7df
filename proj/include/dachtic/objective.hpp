#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dachtic/tensor.hpp"

namespace dachtic::objective {

constexpr double kProbClip = 1e-12;

// The four weighted terms of the composite loss, plus an auxiliary weight for
// the intensity head. The intensity term is not one of the four composite
// components; it is added separately when a target is supplied and can be
// switched off by zeroing lambda5.
struct LossWeights {
    double lambda1 = 1.0;  // classification
    double lambda2 = 0.3;  // perturbation consistency
    double lambda3 = 0.2;  // causal relevance
    double lambda4 = 0.2;  // domain adversarial
    double lambda5 = 0.1;  // auxiliary intensity regression

    void validate() const {
        for (double l : {lambda1, lambda2, lambda3, lambda4, lambda5})
            if (!(l >= 0.0) || !std::isfinite(l))
                throw std::invalid_argument("loss weights must be finite and >= 0");
    }
};

struct LossBreakdown {
    double class_loss = 0.0;
    double perturb_loss = 0.0;
    double causal_loss = 0.0;
    double domain_loss = 0.0;
    double intensity_loss = 0.0;  // 0 when the auxiliary term is off
    double total = 0.0;
};

// ---- tape-side builders (used by training) -----------------------------------

// -log(p_y), with p_y floored before the log.
inline Tensor class_loss_t(Tape& tape, const Tensor& y_hat, int y) {
    if (y_hat.n_rows != 1) throw std::invalid_argument("class_loss: prediction must be a row");
    if (y < 0 || y >= y_hat.n_cols)
        throw std::invalid_argument("class_loss: label " + std::to_string(y) + " out of range");
    Tensor picked = tape.slice(y_hat, 0, 1, y, y + 1);
    return tape.scalar_mul(tape.log(tape.clamp(picked, kProbClip, 1.0)), -1.0);
}

// Squared l2 distance between the two class-probability vectors.
inline Tensor perturb_loss_t(Tape& tape, const Tensor& y_hat, const Tensor& y_hat_perturbed) {
    if (!y_hat.same_shape(y_hat_perturbed))
        throw std::invalid_argument("perturb_loss: length mismatch");
    return tape.sum(tape.square(tape.add(y_hat, tape.scalar_mul(y_hat_perturbed, -1.0))));
}

// Mean binary cross-entropy of token relevance against binary annotations.
inline Tensor causal_loss_t(Tape& tape, const Tensor& c_hat, const std::vector<uint8_t>& a) {
    if (c_hat.size() != a.size()) throw std::invalid_argument("causal_loss: length mismatch");
    const int n = static_cast<int>(a.size());
    Tensor target(c_hat.n_rows, c_hat.n_cols);
    for (int i = 0; i < n; ++i) {
        if (a[i] > 1) throw std::invalid_argument("causal_loss: annotations must be binary");
        target.data[i] = static_cast<double>(a[i]);
    }
    Tensor ones(c_hat.n_rows, c_hat.n_cols, 1.0);
    Tensor p = tape.clamp(c_hat, kProbClip, 1.0 - kProbClip);
    Tensor pos = tape.elementwise_mul(tape.leaf(target), tape.log(p));
    Tensor flipped(target.n_rows, target.n_cols);
    for (int i = 0; i < n; ++i) flipped.data[i] = 1.0 - target.data[i];
    Tensor neg = tape.elementwise_mul(tape.leaf(flipped),
                                      tape.log(tape.add(tape.leaf(ones), tape.scalar_mul(p, -1.0))));
    return tape.scalar_mul(tape.sum(tape.add(pos, neg)), -1.0 / n);
}

// Categorical cross-entropy on the domain prediction. The encoder-side sign
// flip comes from the reversal layer upstream, not from this term.
inline Tensor domain_loss_t(Tape& tape, const Tensor& d_hat, int d) {
    if (d_hat.n_rows != 1) throw std::invalid_argument("domain_loss: prediction must be a row");
    if (d < 0 || d >= d_hat.n_cols)
        throw std::invalid_argument("domain_loss: domain " + std::to_string(d) + " out of range");
    Tensor picked = tape.slice(d_hat, 0, 1, d, d + 1);
    return tape.scalar_mul(tape.log(tape.clamp(picked, kProbClip, 1.0)), -1.0);
}

inline Tensor intensity_loss_t(Tape& tape, const Tensor& t_hat, double target) {
    if (t_hat.size() != 1) throw std::invalid_argument("intensity_loss: prediction must be scalar");
    return tape.square(tape.add(t_hat, tape.leaf(Tensor::scalar(-target))));
}

// ---- plain-number forms --------------------------------------------------------

// Each scalar form runs the tape builder on a scratch tape, so there is a
// single implementation of every formula.

inline double class_loss(const std::vector<double>& y_hat, int y) {
    Tape tape;
    return class_loss_t(tape, tape.leaf(Tensor::row(y_hat)), y).value();
}

inline double perturb_loss(const std::vector<double>& y_hat, const std::vector<double>& y_hat_p) {
    if (y_hat.size() != y_hat_p.size()) throw std::invalid_argument("perturb_loss: length mismatch");
    Tape tape;
    return perturb_loss_t(tape, tape.leaf(Tensor::row(y_hat)), tape.leaf(Tensor::row(y_hat_p))).value();
}

inline double causal_loss(const std::vector<double>& c_hat, const std::vector<uint8_t>& a) {
    Tape tape;
    Tensor c(static_cast<int>(c_hat.size()), 1, c_hat);
    return causal_loss_t(tape, tape.leaf(c), a).value();
}

inline double domain_loss(const std::vector<double>& d_hat, int d) {
    Tape tape;
    return domain_loss_t(tape, tape.leaf(Tensor::row(d_hat)), d).value();
}

// total = lambda1*class + lambda2*perturb + lambda3*causal + lambda4*domain,
// accumulated left to right, plus lambda5*intensity when a value is present.
inline LossBreakdown total_loss(double class_l, double perturb_l, double causal_l, double domain_l,
                                const LossWeights& w,
                                std::optional<double> intensity_l = std::nullopt) {
    w.validate();
    auto check = [](double v, const char* name) {
        if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite loss term: ") + name);
    };
    check(class_l, "class");
    check(perturb_l, "perturb");
    check(causal_l, "causal");
    check(domain_l, "domain");
    if (intensity_l) check(*intensity_l, "intensity");

    LossBreakdown b;
    b.class_loss = class_l;
    b.perturb_loss = perturb_l;
    b.causal_loss = causal_l;
    b.domain_loss = domain_l;
    b.intensity_loss = intensity_l.value_or(0.0);
    b.total = w.lambda1 * class_l + w.lambda2 * perturb_l + w.lambda3 * causal_l +
              w.lambda4 * domain_l;
    if (intensity_l) b.total += w.lambda5 * *intensity_l;
    return b;
}

// The same fixed-order composition as a recomputation, for invariant checks.
inline double recompose_total(const LossBreakdown& b, const LossWeights& w, bool with_intensity) {
    double t = w.lambda1 * b.class_loss + w.lambda2 * b.perturb_loss + w.lambda3 * b.causal_loss +
               w.lambda4 * b.domain_loss;
    if (with_intensity) t += w.lambda5 * b.intensity_loss;
    return t;
}

}  // namespace dachtic::objective
