#include <catch2/catch_amalgamated.hpp>

#include "dachtic/rng.hpp"
#include "dachtic/tensor.hpp"

#include <cmath>

using namespace dachtic;

namespace {

Tensor random_tensor(int rows, int cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(rows, cols);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("matmul against identity returns the input") {
    Rng rng(11);
    Tensor a = random_tensor(3, 4, rng);
    Tensor eye(4, 4);
    for (int i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    Tape tape;
    Tensor out = tape.matmul(tape.leaf(a), tape.leaf(eye));
    REQUIRE(out.data == a.data);
}

TEST_CASE("matmul shape mismatch names the op") {
    Tape tape;
    REQUIRE_THROWS_WITH(tape.matmul(Tensor(2, 3), Tensor(2, 3)),
                        Catch::Matchers::ContainsSubstring("matmul"));
}

TEST_CASE("row softmax of equal logits is uniform") {
    Tape tape;
    Tensor out = tape.row_softmax_masked(Tensor(1, 4, {0.7, 0.7, 0.7, 0.7}), nullptr);
    for (double v : out.data) REQUIRE(v == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("masked softmax zeroes masked entries and renormalizes") {
    Tape tape;
    std::vector<uint8_t> mask = {1, 1, 0, 0};
    Tensor out = tape.row_softmax_masked(Tensor(1, 4, {1.0, 1.0, 5.0, 9.0}), &mask);
    REQUIRE(out.data[0] == Catch::Approx(0.5));
    REQUIRE(out.data[1] == Catch::Approx(0.5));
    REQUIRE(out.data[2] == 0.0);
    REQUIRE(out.data[3] == 0.0);
}

TEST_CASE("layer norm of constant row with unit scale is zero") {
    Tape tape;
    Tensor scale(1, 3, {1.0, 1.0, 1.0});
    Tensor shift(1, 3, {0.0, 0.0, 0.0});
    Tensor out = tape.layer_norm(Tensor(1, 3, {2.5, 2.5, 2.5}), tape.leaf(scale), tape.leaf(shift));
    for (double v : out.data) REQUIRE(v == 0.0);
}

TEST_CASE("backward of sum gives all-ones gradient") {
    Tape tape;
    Tensor x = tape.leaf(Tensor(2, 2, {1.0, 2.0, 3.0, 4.0}));
    Tensor loss = tape.sum(x);
    GradMap grads = tape.backward(loss);
    for (double v : grads.at(x.node_id).data) REQUIRE(v == 1.0);
}

TEST_CASE("backward of sum of squares matches the analytic derivative") {
    Tape tape;
    Tensor x = tape.leaf(Tensor(1, 2, {1.0, -2.0}));
    Tensor loss = tape.sum(tape.square(x));
    GradMap grads = tape.backward(loss);
    REQUIRE(grads.at(x.node_id).data[0] == 2.0);
    REQUIRE(grads.at(x.node_id).data[1] == -4.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
    Tape tape;
    Tensor x = tape.leaf(Tensor(1, 2, {1.0, 2.0}));
    REQUIRE_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("unreachable leaves receive zero gradient") {
    Tape tape;
    Tensor x = tape.leaf(Tensor(1, 2, {1.0, 2.0}));
    Tensor unused = tape.leaf(Tensor(1, 3, {5.0, 6.0, 7.0}));
    GradMap grads = tape.backward(tape.sum(x));
    const Tensor& gu = grads.at(unused.node_id);
    REQUIRE(gu.n_cols == 3);
    for (double v : gu.data) REQUIRE(v == 0.0);
}

TEST_CASE("grad_check on x squared is tight") {
    auto f = [](Tape& t, const Tensor& x) { return t.sum(t.square(x)); };
    REQUIRE(grad_check(f, Tensor::scalar(3.0), 1e-5) <= 1e-7);
}

TEST_CASE("grad_check on softmax cross-entropy") {
    Rng rng(21);
    Tensor x0 = random_tensor(1, 5, rng);
    std::vector<double> onehot(5, 0.0);
    onehot[2] = 1.0;
    auto f = [&](Tape& t, const Tensor& x) {
        Tensor p = t.row_softmax_masked(x, nullptr);
        Tensor picked = t.elementwise_mul(t.log(t.clamp(p, 1e-12, 1.0)), Tensor::row(onehot));
        return t.scalar_mul(t.sum(picked), -1.0);
    };
    REQUIRE(grad_check(f, x0, 1e-5) <= 1e-4);
}

TEST_CASE("grad_check on a constant function is exactly zero") {
    auto f = [](Tape& t, const Tensor& x) {
        (void)x;
        return t.sum(t.leaf(Tensor::scalar(4.0)));
    };
    REQUIRE(grad_check(f, Tensor::scalar(1.0), 1e-5) == 0.0);
}

TEST_CASE("every primitive kind passes the finite-difference oracle") {
    Rng rng(33);
    const double h = 1e-5;
    const double tol = 1e-4;

    auto check = [&](const char* name, const ScalarFn& f, const Tensor& x0) {
        INFO(name);
        REQUIRE(grad_check(f, x0, h) <= tol);
    };

    Tensor x34 = random_tensor(3, 4, rng);
    Tensor other34 = random_tensor(3, 4, rng);
    Tensor w42 = random_tensor(4, 2, rng);

    check("matmul", [&](Tape& t, const Tensor& x) { return t.sum(t.matmul(x, Tensor(w42))); }, x34);
    check("matmul_rhs", [&](Tape& t, const Tensor& x) { return t.sum(t.matmul(Tensor(x34), x)); }, w42);
    check("add", [&](Tape& t, const Tensor& x) {
        return t.sum(t.square(t.add(x, Tensor(other34))));
    }, x34);
    check("add_broadcast", [&](Tape& t, const Tensor& x) {
        return t.sum(t.square(t.add(Tensor(x34), x)));
    }, random_tensor(1, 4, rng));
    check("scalar_mul", [&](Tape& t, const Tensor& x) { return t.sum(t.scalar_mul(x, -2.5)); }, x34);
    check("elementwise_mul", [&](Tape& t, const Tensor& x) {
        return t.sum(t.elementwise_mul(x, Tensor(other34)));
    }, x34);
    Tensor softmax_w = random_tensor(3, 4, rng);
    check("row_softmax", [&](Tape& t, const Tensor& x) {
        return t.sum(t.elementwise_mul(t.row_softmax_masked(x, nullptr), Tensor(softmax_w)));
    }, x34);
    std::vector<uint8_t> mask = {1, 1, 0, 1,  1, 0, 1, 1,  1, 1, 1, 0};
    check("row_softmax_masked", [&](Tape& t, const Tensor& x) {
        return t.sum(t.elementwise_mul(t.row_softmax_masked(x, &mask), Tensor(softmax_w)));
    }, x34);
    Tensor ln_scale = random_tensor(1, 4, rng, 0.5, 1.5);
    Tensor ln_shift = random_tensor(1, 4, rng);
    check("layer_norm_x", [&](Tape& t, const Tensor& x) {
        return t.sum(t.square(t.layer_norm(x, t.leaf(ln_scale), t.leaf(ln_shift))));
    }, x34);
    check("layer_norm_scale", [&](Tape& t, const Tensor& x) {
        return t.sum(t.square(t.layer_norm(Tensor(x34), x, t.leaf(ln_shift))));
    }, ln_scale);
    check("relu", [&](Tape& t, const Tensor& x) { return t.sum(t.relu(x)); },
          random_tensor(3, 4, rng, 0.1, 1.0));
    check("sigmoid", [&](Tape& t, const Tensor& x) { return t.sum(t.sigmoid(x)); }, x34);
    check("log", [&](Tape& t, const Tensor& x) { return t.sum(t.log(x)); },
          random_tensor(3, 4, rng, 0.2, 2.0));
    check("mean_axis0", [&](Tape& t, const Tensor& x) { return t.sum(t.square(t.mean_over_axis(x, 0))); }, x34);
    check("mean_axis1", [&](Tape& t, const Tensor& x) { return t.sum(t.square(t.mean_over_axis(x, 1))); }, x34);
    check("concat0", [&](Tape& t, const Tensor& x) {
        return t.sum(t.square(t.concat(x, Tensor(other34), 0)));
    }, x34);
    check("concat1", [&](Tape& t, const Tensor& x) {
        return t.sum(t.square(t.concat(x, Tensor(other34), 1)));
    }, x34);
    check("slice", [&](Tape& t, const Tensor& x) { return t.sum(t.square(t.slice(x, 1, 3, 0, 2))); }, x34);
    std::vector<uint8_t> fill_mask(12, 0);
    fill_mask[0] = fill_mask[5] = 1;
    check("masked_fill", [&](Tape& t, const Tensor& x) {
        return t.sum(t.square(t.masked_fill(x, fill_mask, -3.0)));
    }, x34);
    check("sum", [&](Tape& t, const Tensor& x) { return t.sum(x); }, x34);
    check("square", [&](Tape& t, const Tensor& x) { return t.sum(t.square(x)); }, x34);
    check("transpose", [&](Tape& t, const Tensor& x) { return t.sum(t.square(t.transpose(x))); }, x34);
    check("reshape", [&](Tape& t, const Tensor& x) { return t.sum(t.square(t.reshape(x, 2, 6))); }, x34);
    check("clamp", [&](Tape& t, const Tensor& x) { return t.sum(t.clamp(x, -0.5, 0.5)); },
          random_tensor(3, 4, rng, -2.0, 2.0));
    // scale_grad is excluded: its backward deliberately differs from the
    // forward map (that is the gradient-reversal contract), so finite
    // differences cannot apply. Its own test pins the behavior instead.
    check("scale_grad_unit", [&](Tape& t, const Tensor& x) { return t.sum(t.scale_grad(x, 1.0)); }, x34);
}

TEST_CASE("masked softmax never leaks gradient into masked positions") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x0 = random_tensor(4, 4, rng, -3.0, 3.0);
        std::vector<uint8_t> mask(16, 0);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c <= r; ++c) mask[r * 4 + c] = 1;  // causal pattern
        Tape tape;
        Tensor x = tape.leaf(x0);
        Tensor p = tape.row_softmax_masked(x, &mask);
        Tensor w = tape.leaf(random_tensor(4, 4, rng));
        Tensor loss = tape.sum(tape.elementwise_mul(p, w));
        GradMap grads = tape.backward(loss);
        const Tensor& gx = grads.at(x.node_id);
        for (int r = 0; r < 4; ++r)
            for (int c = r + 1; c < 4; ++c) REQUIRE(gx.at(r, c) == 0.0);
    }
}

TEST_CASE("gradients are bit-identical across repeated runs") {
    auto run = [] {
        Rng rng(99);
        Tensor x0(3, 3);
        for (auto& v : x0.data) v = rng.uniform(-1.0, 1.0);
        Tape tape;
        Tensor x = tape.leaf(x0);
        Tensor y = tape.row_softmax_masked(tape.matmul(x, tape.transpose(x)), nullptr);
        GradMap grads = tape.backward(tape.sum(tape.square(y)));
        return grads.at(x.node_id).data;
    };
    REQUIRE(run() == run());
}

TEST_CASE("scale_grad is identity forward and scales backward") {
    Tape tape;
    Tensor x = tape.leaf(Tensor(1, 2, {1.5, -0.25}));
    Tensor y = tape.scale_grad(x, -1.0);
    REQUIRE(y.data == x.data);
    GradMap grads = tape.backward(tape.sum(y));
    REQUIRE(grads.at(x.node_id).data[0] == -1.0);
    REQUIRE(grads.at(x.node_id).data[1] == -1.0);
}
