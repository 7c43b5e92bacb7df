#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace dachtic {

// All tensors are dense row-major 2D arrays of 64-bit floats. Vectors are
// [1 x n] rows, scalars [1 x 1]. Gradients live on the tape, not here; the
// `grad` member is filled in only for tensors handed back by GradMap.
struct Tensor {
    int n_rows = 0;
    int n_cols = 0;
    std::vector<double> data;
    std::vector<double> grad;  // optional, same length as data when present
    int node_id = -1;          // index into the active tape, -1 if detached

    Tensor() = default;
    Tensor(int rows, int cols, double fill = 0.0)
        : n_rows(rows), n_cols(cols), data(static_cast<size_t>(rows) * cols, fill) {
        if (rows < 0 || cols < 0) throw std::invalid_argument("tensor: negative shape");
    }
    Tensor(int rows, int cols, std::vector<double> values)
        : n_rows(rows), n_cols(cols), data(std::move(values)) {
        if (data.size() != static_cast<size_t>(rows) * cols)
            throw std::invalid_argument("tensor: data length does not match shape");
    }

    static Tensor scalar(double v) { return Tensor(1, 1, {v}); }
    static Tensor row(std::vector<double> values) {
        int n = static_cast<int>(values.size());
        return Tensor(1, n, std::move(values));
    }

    size_t size() const { return data.size(); }
    double& at(int r, int c) { return data[static_cast<size_t>(r) * n_cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * n_cols + c]; }
    double value() const {
        if (size() != 1) throw std::logic_error("tensor: value() on non-scalar");
        return data[0];
    }
    bool same_shape(const Tensor& o) const { return n_rows == o.n_rows && n_cols == o.n_cols; }
    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline std::string shape_str(const Tensor& t) {
    return "[" + std::to_string(t.n_rows) + "x" + std::to_string(t.n_cols) + "]";
}

enum class OpKind {
    leaf,
    matmul,
    add,
    scalar_mul,
    elementwise_mul,
    row_softmax_masked,
    layer_norm,
    relu,
    sigmoid,
    log,
    mean_over_axis,
    concat,
    slice,
    masked_fill,
    sum,
    square,
    transpose,
    reshape,
    clamp,
    scale_grad,
};

// Result of Tape::backward: one gradient per node, zero-filled for leaves the
// loss does not reach.
class GradMap {
public:
    explicit GradMap(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
    const Tensor& at(int node_id) const {
        if (node_id < 0 || node_id >= static_cast<int>(grads_.size()))
            throw std::out_of_range("gradient map: unknown node id " + std::to_string(node_id));
        return grads_[node_id];
    }
    size_t size() const { return grads_.size(); }

private:
    std::vector<Tensor> grads_;
};

// Define-by-run reverse-mode tape. One tape per forward pass; records are
// appended in execution order, which keeps them topologically sorted.
class Tape {
public:
    static constexpr double kLayerNormEps = 1e-5;

    struct Record {
        OpKind kind = OpKind::leaf;
        int in0 = -1, in1 = -1, in2 = -1;
        int out = -1;
        double attr0 = 0.0, attr1 = 0.0;      // scalar attributes
        int iattr0 = 0, iattr1 = 0, iattr2 = 0, iattr3 = 0;
        std::vector<uint8_t> mask;            // row_softmax_masked / masked_fill
        std::vector<double> saved;            // cached forward intermediates
    };

    int push_leaf(const Tensor& t) {
        Record r;
        r.kind = OpKind::leaf;
        r.out = static_cast<int>(values_.size());
        Tensor v = t;
        v.node_id = r.out;
        v.grad.clear();
        values_.push_back(std::move(v));
        records_.push_back(std::move(r));
        return records_.back().out;
    }

    // Registers `t` as a leaf and returns it with node_id set.
    Tensor leaf(const Tensor& t) { return values_[push_leaf(t)]; }

    const Tensor& value(int node_id) const { return values_.at(node_id); }
    size_t node_count() const { return values_.size(); }

    // ---- primitives -------------------------------------------------------

    Tensor matmul(const Tensor& a, const Tensor& b) {
        if (a.n_cols != b.n_rows)
            throw std::invalid_argument("matmul: shape mismatch " + shape_str(a) + " x " + shape_str(b));
        Tensor out(a.n_rows, b.n_cols);
        matmul_into(out.data.data(), a.data.data(), b.data.data(), a.n_rows, a.n_cols, b.n_cols);
        return record2(OpKind::matmul, a, b, std::move(out));
    }

    // Same-shape add, or b as a [1 x n] row broadcast over a's rows.
    Tensor add(const Tensor& a, const Tensor& b) {
        Tensor out(a.n_rows, a.n_cols);
        if (a.same_shape(b)) {
            for (size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] + b.data[i];
        } else if (b.n_rows == 1 && b.n_cols == a.n_cols) {
            for (int r = 0; r < a.n_rows; ++r)
                for (int c = 0; c < a.n_cols; ++c) out.at(r, c) = a.at(r, c) + b.data[c];
        } else {
            throw std::invalid_argument("add: shape mismatch " + shape_str(a) + " + " + shape_str(b));
        }
        return record2(OpKind::add, a, b, std::move(out));
    }

    Tensor scalar_mul(const Tensor& a, double s) {
        Tensor out(a.n_rows, a.n_cols);
        for (size_t i = 0; i < a.size(); ++i) out.data[i] = s * a.data[i];
        Tensor res = record1(OpKind::scalar_mul, a, std::move(out));
        records_.back().attr0 = s;
        return res;
    }

    Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
        if (!a.same_shape(b))
            throw std::invalid_argument("elementwise_mul: shape mismatch " + shape_str(a) + " * " + shape_str(b));
        Tensor out(a.n_rows, a.n_cols);
        for (size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * b.data[i];
        return record2(OpKind::elementwise_mul, a, b, std::move(out));
    }

    // Per-row softmax over positions where mask != 0; masked positions get
    // exactly 0 in the output and receive exactly zero gradient. A null mask
    // means all positions are allowed. Each row needs at least one allowed
    // entry.
    Tensor row_softmax_masked(const Tensor& a, const std::vector<uint8_t>* mask) {
        if (mask && mask->size() != a.size())
            throw std::invalid_argument("row_softmax_masked: mask length does not match tensor");
        Tensor out(a.n_rows, a.n_cols);
        for (int r = 0; r < a.n_rows; ++r) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < a.n_cols; ++c)
                if (allowed(mask, r, c, a.n_cols) && a.at(r, c) > mx) mx = a.at(r, c);
            if (!std::isfinite(mx))
                throw std::invalid_argument("row_softmax_masked: row " + std::to_string(r) +
                                            " has no unmasked entries");
            double denom = 0.0;
            for (int c = 0; c < a.n_cols; ++c)
                if (allowed(mask, r, c, a.n_cols)) denom += std::exp(a.at(r, c) - mx);
            for (int c = 0; c < a.n_cols; ++c)
                out.at(r, c) = allowed(mask, r, c, a.n_cols) ? std::exp(a.at(r, c) - mx) / denom : 0.0;
        }
        Tensor res = record1(OpKind::row_softmax_masked, a, std::move(out));
        if (mask) records_.back().mask = *mask;
        return res;
    }

    // Per-row layer normalization with learnable [1 x d] scale and shift.
    Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift) {
        const int d = x.n_cols;
        if (scale.n_rows != 1 || scale.n_cols != d || shift.n_rows != 1 || shift.n_cols != d)
            throw std::invalid_argument("layer_norm: scale/shift must be [1x" + std::to_string(d) + "]");
        Tensor out(x.n_rows, d);
        std::vector<double> saved;  // per row: d normalized values, then inv_std
        saved.reserve(x.size() + x.n_rows);
        for (int r = 0; r < x.n_rows; ++r) {
            double mean = 0.0;
            for (int c = 0; c < d; ++c) mean += x.at(r, c);
            mean /= d;
            double var = 0.0;
            for (int c = 0; c < d; ++c) {
                double dv = x.at(r, c) - mean;
                var += dv * dv;
            }
            var /= d;
            double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
            for (int c = 0; c < d; ++c) {
                double xh = (x.at(r, c) - mean) * inv_std;
                saved.push_back(xh);
                out.at(r, c) = xh * scale.data[c] + shift.data[c];
            }
            saved.push_back(inv_std);
        }
        Tensor res = record3(OpKind::layer_norm, x, scale, shift, std::move(out));
        records_.back().saved = std::move(saved);
        return res;
    }

    Tensor relu(const Tensor& a) {
        Tensor out(a.n_rows, a.n_cols);
        for (size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] > 0.0 ? a.data[i] : 0.0;
        return record1(OpKind::relu, a, std::move(out));
    }

    // Numerically stable logistic, clamped into the open interval (0, 1) so
    // downstream range invariants survive saturating inputs.
    Tensor sigmoid(const Tensor& a) {
        Tensor out(a.n_rows, a.n_cols);
        for (size_t i = 0; i < a.size(); ++i) out.data[i] = stable_sigmoid(a.data[i]);
        return record1(OpKind::sigmoid, a, std::move(out));
    }

    Tensor log(const Tensor& a) {
        Tensor out(a.n_rows, a.n_cols);
        for (size_t i = 0; i < a.size(); ++i) {
            if (a.data[i] <= 0.0) throw std::invalid_argument("log: nonpositive input");
            out.data[i] = std::log(a.data[i]);
        }
        return record1(OpKind::log, a, std::move(out));
    }

    // axis 0: column means -> [1 x n]; axis 1: row means -> [m x 1].
    Tensor mean_over_axis(const Tensor& a, int axis) {
        Tensor out;
        if (axis == 0) {
            out = Tensor(1, a.n_cols);
            for (int c = 0; c < a.n_cols; ++c) {
                double s = 0.0;
                for (int r = 0; r < a.n_rows; ++r) s += a.at(r, c);
                out.data[c] = s / a.n_rows;
            }
        } else if (axis == 1) {
            out = Tensor(a.n_rows, 1);
            for (int r = 0; r < a.n_rows; ++r) {
                double s = 0.0;
                for (int c = 0; c < a.n_cols; ++c) s += a.at(r, c);
                out.data[r] = s / a.n_cols;
            }
        } else {
            throw std::invalid_argument("mean_over_axis: axis must be 0 or 1");
        }
        Tensor res = record1(OpKind::mean_over_axis, a, std::move(out));
        records_.back().iattr0 = axis;
        return res;
    }

    Tensor concat(const Tensor& a, const Tensor& b, int axis) {
        Tensor out;
        if (axis == 0) {
            if (a.n_cols != b.n_cols) throw std::invalid_argument("concat: column mismatch");
            out = Tensor(a.n_rows + b.n_rows, a.n_cols);
            std::copy(a.data.begin(), a.data.end(), out.data.begin());
            std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.size());
        } else if (axis == 1) {
            if (a.n_rows != b.n_rows) throw std::invalid_argument("concat: row mismatch");
            out = Tensor(a.n_rows, a.n_cols + b.n_cols);
            for (int r = 0; r < a.n_rows; ++r) {
                for (int c = 0; c < a.n_cols; ++c) out.at(r, c) = a.at(r, c);
                for (int c = 0; c < b.n_cols; ++c) out.at(r, a.n_cols + c) = b.at(r, c);
            }
        } else {
            throw std::invalid_argument("concat: axis must be 0 or 1");
        }
        Tensor res = record2(OpKind::concat, a, b, std::move(out));
        records_.back().iattr0 = axis;
        return res;
    }

    // Half-open row/column ranges.
    Tensor slice(const Tensor& a, int r0, int r1, int c0, int c1) {
        if (r0 < 0 || r1 > a.n_rows || c0 < 0 || c1 > a.n_cols || r0 >= r1 || c0 >= c1)
            throw std::invalid_argument("slice: range out of bounds for " + shape_str(a));
        Tensor out(r1 - r0, c1 - c0);
        for (int r = r0; r < r1; ++r)
            for (int c = c0; c < c1; ++c) out.at(r - r0, c - c0) = a.at(r, c);
        Tensor res = record1(OpKind::slice, a, std::move(out));
        Record& rec = records_.back();
        rec.iattr0 = r0;
        rec.iattr1 = r1;
        rec.iattr2 = c0;
        rec.iattr3 = c1;
        return res;
    }

    // Positions with mask != 0 are replaced by `fill` and pass no gradient.
    Tensor masked_fill(const Tensor& a, const std::vector<uint8_t>& mask, double fill) {
        if (mask.size() != a.size())
            throw std::invalid_argument("masked_fill: mask length does not match tensor");
        Tensor out(a.n_rows, a.n_cols);
        for (size_t i = 0; i < a.size(); ++i) out.data[i] = mask[i] ? fill : a.data[i];
        Tensor res = record1(OpKind::masked_fill, a, std::move(out));
        records_.back().mask = mask;
        records_.back().attr0 = fill;
        return res;
    }

    Tensor sum(const Tensor& a) {
        double s = 0.0;
        for (double v : a.data) s += v;
        return record1(OpKind::sum, a, Tensor::scalar(s));
    }

    Tensor square(const Tensor& a) {
        Tensor out(a.n_rows, a.n_cols);
        for (size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * a.data[i];
        return record1(OpKind::square, a, std::move(out));
    }

    Tensor transpose(const Tensor& a) {
        Tensor out(a.n_cols, a.n_rows);
        for (int r = 0; r < a.n_rows; ++r)
            for (int c = 0; c < a.n_cols; ++c) out.at(c, r) = a.at(r, c);
        return record1(OpKind::transpose, a, std::move(out));
    }

    Tensor reshape(const Tensor& a, int rows, int cols) {
        if (static_cast<size_t>(rows) * cols != a.size())
            throw std::invalid_argument("reshape: element count mismatch for " + shape_str(a));
        Tensor out(rows, cols, a.data);
        Tensor res = record1(OpKind::reshape, a, std::move(out));
        records_.back().iattr0 = a.n_rows;
        records_.back().iattr1 = a.n_cols;
        return res;
    }

    // Gradient passes through where lo <= x <= hi, zero outside.
    Tensor clamp(const Tensor& a, double lo, double hi) {
        Tensor out(a.n_rows, a.n_cols);
        for (size_t i = 0; i < a.size(); ++i) out.data[i] = std::min(std::max(a.data[i], lo), hi);
        Tensor res = record1(OpKind::clamp, a, std::move(out));
        records_.back().attr0 = lo;
        records_.back().attr1 = hi;
        return res;
    }

    // Identity forward; incoming gradient is multiplied by `factor` on the way
    // back. The gradient reversal layer is scale_grad with factor = -lambda.
    Tensor scale_grad(const Tensor& a, double factor) {
        Tensor out = a;
        out.node_id = -1;
        out.grad.clear();
        Tensor res = record1(OpKind::scale_grad, a, std::move(out));
        records_.back().attr0 = factor;
        return res;
    }

    // ---- reverse pass ------------------------------------------------------

    GradMap backward(const Tensor& loss) const {
        if (loss.node_id < 0 || loss.node_id >= static_cast<int>(values_.size()))
            throw std::invalid_argument("backward: loss is not on this tape");
        if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");

        std::vector<Tensor> grads(values_.size());
        std::vector<uint8_t> touched(values_.size(), 0);
        auto g = [&](int id) -> Tensor& {
            if (!touched[id]) {
                grads[id] = Tensor(values_[id].n_rows, values_[id].n_cols, 0.0);
                touched[id] = 1;
            }
            return grads[id];
        };
        g(loss.node_id).data[0] = 1.0;

        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            const Record& r = *it;
            if (r.kind == OpKind::leaf || !touched[r.out]) continue;
            const Tensor& go = grads[r.out];
            accumulate(r, go, g);
        }

        // Untouched nodes get explicit zeros so callers can always index.
        for (size_t i = 0; i < grads.size(); ++i)
            if (!touched[i]) grads[i] = Tensor(values_[i].n_rows, values_[i].n_cols, 0.0);
        return GradMap(std::move(grads));
    }

private:
    std::vector<Record> records_;
    std::vector<Tensor> values_;

    static bool allowed(const std::vector<uint8_t>* mask, int r, int c, int n_cols) {
        return !mask || (*mask)[static_cast<size_t>(r) * n_cols + c] != 0;
    }

    static double stable_sigmoid(double x) {
        double y;
        if (x >= 0.0) {
            y = 1.0 / (1.0 + std::exp(-x));
        } else {
            double e = std::exp(x);
            y = e / (1.0 + e);
        }
        constexpr double lo = std::numeric_limits<double>::denorm_min();
        const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
        return std::min(std::max(y, lo), hi);
    }

    static void matmul_into(double* out, const double* a, const double* b, int m, int k, int n) {
        std::fill(out, out + static_cast<size_t>(m) * n, 0.0);
        for (int i = 0; i < m; ++i) {
            const double* arow = a + static_cast<size_t>(i) * k;
            double* orow = out + static_cast<size_t>(i) * n;
            for (int p = 0; p < k; ++p) {
                const double av = arow[p];
                if (av == 0.0) continue;  // exact-zero rows dominate masked
                                          // attention and pooling matrices
                const double* brow = b + static_cast<size_t>(p) * n;
                for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    }

    int ensure_id(const Tensor& t) {
        if (t.node_id >= 0) {
            if (t.node_id >= static_cast<int>(values_.size()))
                throw std::invalid_argument("tape: tensor from another tape");
            return t.node_id;
        }
        return push_leaf(t);
    }

    Tensor finish(Record r, Tensor out) {
        r.out = static_cast<int>(values_.size());
        out.node_id = r.out;
        values_.push_back(out);
        records_.push_back(std::move(r));
        return out;
    }

    Tensor record1(OpKind k, const Tensor& a, Tensor out) {
        Record r;
        r.kind = k;
        r.in0 = ensure_id(a);
        return finish(std::move(r), std::move(out));
    }
    Tensor record2(OpKind k, const Tensor& a, const Tensor& b, Tensor out) {
        Record r;
        r.kind = k;
        r.in0 = ensure_id(a);
        r.in1 = ensure_id(b);
        return finish(std::move(r), std::move(out));
    }
    Tensor record3(OpKind k, const Tensor& a, const Tensor& b, const Tensor& c, Tensor out) {
        Record r;
        r.kind = k;
        r.in0 = ensure_id(a);
        r.in1 = ensure_id(b);
        r.in2 = ensure_id(c);
        return finish(std::move(r), std::move(out));
    }

    template <typename GetGrad>
    void accumulate(const Record& r, const Tensor& go, GetGrad&& g) const {
        const Tensor& out = values_[r.out];
        switch (r.kind) {
            case OpKind::matmul: {
                const Tensor& a = values_[r.in0];
                const Tensor& b = values_[r.in1];
                Tensor& ga = g(r.in0);
                Tensor& gb = g(r.in1);
                // dA += dC * B^T, rows of dC and B both contiguous
                for (int i = 0; i < a.n_rows; ++i) {
                    const double* go_row = go.data.data() + static_cast<size_t>(i) * b.n_cols;
                    double* ga_row = ga.data.data() + static_cast<size_t>(i) * a.n_cols;
                    for (int p = 0; p < a.n_cols; ++p) {
                        const double* b_row = b.data.data() + static_cast<size_t>(p) * b.n_cols;
                        double s = 0.0;
                        for (int j = 0; j < b.n_cols; ++j) s += go_row[j] * b_row[j];
                        ga_row[p] += s;
                    }
                }
                // dB += A^T * dC, accumulated row-contiguously
                for (int i = 0; i < a.n_rows; ++i) {
                    const double* a_row = a.data.data() + static_cast<size_t>(i) * a.n_cols;
                    const double* go_row = go.data.data() + static_cast<size_t>(i) * b.n_cols;
                    for (int p = 0; p < b.n_rows; ++p) {
                        const double av = a_row[p];
                        if (av == 0.0) continue;
                        double* gb_row = gb.data.data() + static_cast<size_t>(p) * b.n_cols;
                        for (int j = 0; j < b.n_cols; ++j) gb_row[j] += av * go_row[j];
                    }
                }
                break;
            }
            case OpKind::add: {
                const Tensor& a = values_[r.in0];
                const Tensor& b = values_[r.in1];
                Tensor& ga = g(r.in0);
                for (size_t i = 0; i < a.size(); ++i) ga.data[i] += go.data[i];
                Tensor& gb = g(r.in1);
                if (a.same_shape(b)) {
                    for (size_t i = 0; i < b.size(); ++i) gb.data[i] += go.data[i];
                } else {
                    for (int rr = 0; rr < a.n_rows; ++rr)
                        for (int c = 0; c < a.n_cols; ++c) gb.data[c] += go.at(rr, c);
                }
                break;
            }
            case OpKind::scalar_mul: {
                Tensor& ga = g(r.in0);
                for (size_t i = 0; i < ga.size(); ++i) ga.data[i] += r.attr0 * go.data[i];
                break;
            }
            case OpKind::elementwise_mul: {
                const Tensor& a = values_[r.in0];
                const Tensor& b = values_[r.in1];
                Tensor& ga = g(r.in0);
                for (size_t i = 0; i < a.size(); ++i) ga.data[i] += go.data[i] * b.data[i];
                Tensor& gb = g(r.in1);
                for (size_t i = 0; i < b.size(); ++i) gb.data[i] += go.data[i] * a.data[i];
                break;
            }
            case OpKind::row_softmax_masked: {
                const std::vector<uint8_t>* mask = r.mask.empty() ? nullptr : &r.mask;
                Tensor& ga = g(r.in0);
                for (int rr = 0; rr < out.n_rows; ++rr) {
                    double dot = 0.0;
                    for (int c = 0; c < out.n_cols; ++c)
                        if (allowed(mask, rr, c, out.n_cols)) dot += go.at(rr, c) * out.at(rr, c);
                    for (int c = 0; c < out.n_cols; ++c)
                        if (allowed(mask, rr, c, out.n_cols))
                            ga.at(rr, c) += out.at(rr, c) * (go.at(rr, c) - dot);
                }
                break;
            }
            case OpKind::layer_norm: {
                const Tensor& x = values_[r.in0];
                const Tensor& scale = values_[r.in1];
                const int d = x.n_cols;
                Tensor& gx = g(r.in0);
                Tensor& gscale = g(r.in1);
                Tensor& gshift = g(r.in2);
                const double* sv = r.saved.data();
                for (int rr = 0; rr < x.n_rows; ++rr) {
                    const double* xh = sv + static_cast<size_t>(rr) * (d + 1);
                    const double inv_std = xh[d];
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (int c = 0; c < d; ++c) {
                        double dxh = go.at(rr, c) * scale.data[c];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[c];
                        gscale.data[c] += go.at(rr, c) * xh[c];
                        gshift.data[c] += go.at(rr, c);
                    }
                    for (int c = 0; c < d; ++c) {
                        double dxh = go.at(rr, c) * scale.data[c];
                        gx.at(rr, c) += inv_std * (dxh - sum_dxh / d - xh[c] * sum_dxh_xh / d);
                    }
                }
                break;
            }
            case OpKind::relu: {
                const Tensor& a = values_[r.in0];
                Tensor& ga = g(r.in0);
                for (size_t i = 0; i < a.size(); ++i)
                    if (a.data[i] > 0.0) ga.data[i] += go.data[i];
                break;
            }
            case OpKind::sigmoid: {
                Tensor& ga = g(r.in0);
                for (size_t i = 0; i < out.size(); ++i)
                    ga.data[i] += go.data[i] * out.data[i] * (1.0 - out.data[i]);
                break;
            }
            case OpKind::log: {
                const Tensor& a = values_[r.in0];
                Tensor& ga = g(r.in0);
                for (size_t i = 0; i < a.size(); ++i) ga.data[i] += go.data[i] / a.data[i];
                break;
            }
            case OpKind::mean_over_axis: {
                const Tensor& a = values_[r.in0];
                Tensor& ga = g(r.in0);
                if (r.iattr0 == 0) {
                    for (int rr = 0; rr < a.n_rows; ++rr)
                        for (int c = 0; c < a.n_cols; ++c) ga.at(rr, c) += go.data[c] / a.n_rows;
                } else {
                    for (int rr = 0; rr < a.n_rows; ++rr)
                        for (int c = 0; c < a.n_cols; ++c) ga.at(rr, c) += go.data[rr] / a.n_cols;
                }
                break;
            }
            case OpKind::concat: {
                const Tensor& a = values_[r.in0];
                const Tensor& b = values_[r.in1];
                Tensor& ga = g(r.in0);
                Tensor& gb = g(r.in1);
                if (r.iattr0 == 0) {
                    for (size_t i = 0; i < a.size(); ++i) ga.data[i] += go.data[i];
                    for (size_t i = 0; i < b.size(); ++i) gb.data[i] += go.data[a.size() + i];
                } else {
                    for (int rr = 0; rr < a.n_rows; ++rr) {
                        for (int c = 0; c < a.n_cols; ++c) ga.at(rr, c) += go.at(rr, c);
                        for (int c = 0; c < b.n_cols; ++c) gb.at(rr, c) += go.at(rr, a.n_cols + c);
                    }
                }
                break;
            }
            case OpKind::slice: {
                Tensor& ga = g(r.in0);
                for (int rr = r.iattr0; rr < r.iattr1; ++rr)
                    for (int c = r.iattr2; c < r.iattr3; ++c)
                        ga.at(rr, c) += go.at(rr - r.iattr0, c - r.iattr2);
                break;
            }
            case OpKind::masked_fill: {
                Tensor& ga = g(r.in0);
                for (size_t i = 0; i < ga.size(); ++i)
                    if (!r.mask[i]) ga.data[i] += go.data[i];
                break;
            }
            case OpKind::sum: {
                Tensor& ga = g(r.in0);
                for (size_t i = 0; i < ga.size(); ++i) ga.data[i] += go.data[0];
                break;
            }
            case OpKind::square: {
                const Tensor& a = values_[r.in0];
                Tensor& ga = g(r.in0);
                for (size_t i = 0; i < a.size(); ++i) ga.data[i] += go.data[i] * 2.0 * a.data[i];
                break;
            }
            case OpKind::transpose: {
                Tensor& ga = g(r.in0);
                for (int rr = 0; rr < out.n_rows; ++rr)
                    for (int c = 0; c < out.n_cols; ++c) ga.at(c, rr) += go.at(rr, c);
                break;
            }
            case OpKind::reshape: {
                Tensor& ga = g(r.in0);
                for (size_t i = 0; i < ga.size(); ++i) ga.data[i] += go.data[i];
                break;
            }
            case OpKind::clamp: {
                const Tensor& a = values_[r.in0];
                Tensor& ga = g(r.in0);
                for (size_t i = 0; i < a.size(); ++i)
                    if (a.data[i] >= r.attr0 && a.data[i] <= r.attr1) ga.data[i] += go.data[i];
                break;
            }
            case OpKind::scale_grad: {
                Tensor& ga = g(r.in0);
                for (size_t i = 0; i < ga.size(); ++i) ga.data[i] += r.attr0 * go.data[i];
                break;
            }
            case OpKind::leaf:
                break;
        }
    }
};

// Central finite-difference gradient oracle. `f` builds a scalar loss for the
// given leaf on the supplied tape; returns the worst relative disagreement
// between the tape gradient and (f(x+h e_i) - f(x-h e_i)) / 2h.
using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;

inline double grad_check(const ScalarFn& f, const Tensor& x0, double h) {
    auto eval = [&](const Tensor& x) {
        Tape tape;
        Tensor leaf = tape.leaf(x);
        Tensor loss = f(tape, leaf);
        if (loss.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
        double v = loss.value();
        if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite function value");
        return v;
    };

    Tape tape;
    Tensor leaf = tape.leaf(x0);
    Tensor loss = f(tape, leaf);
    if (loss.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
    if (!std::isfinite(loss.value())) throw std::runtime_error("grad_check: non-finite function value");
    GradMap grads = tape.backward(loss);
    const Tensor& analytic = grads.at(leaf.node_id);

    double worst = 0.0;
    Tensor x = x0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double orig = x.data[i];
        x.data[i] = orig + h;
        double fp = eval(x);
        x.data[i] = orig - h;
        double fm = eval(x);
        x.data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic.data[i];
        const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
        if (rel > worst) worst = rel;
    }
    return worst;
}

}  // namespace dachtic
