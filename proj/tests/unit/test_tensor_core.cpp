#include <doctest.h>

#include <cmath>
#include <random>

#include "snsteg/gradcheck.hpp"
#include "snsteg/ops.hpp"

using namespace snsteg;

namespace {

Tensor<double> random_tensor(Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor<double> t(s);
    for (auto& v : t.storage()) v = u(rng);
    return t;
}

ConvKernels<double> random_kernels(std::size_t o, std::size_t i, std::size_t k, std::uint64_t seed) {
    ConvKernels<double> c(random_tensor({o, i, k, k}, seed), std::vector<double>(o));
    std::mt19937_64 rng(seed + 1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& b : c.bias) b = u(rng);
    return c;
}

// Straight transcription of the correlation formula, no im2col.
Tensor<double> naive_conv(const Tensor<double>& in, const ConvKernels<double>& k, std::size_t stride,
                          std::size_t pad) {
    const Shape s = in.shape();
    const std::size_t kh = k.kernel_h(), kw = k.kernel_w();
    const std::size_t oh = (s.h + 2 * pad - kh) / stride + 1, ow = (s.w + 2 * pad - kw) / stride + 1;
    Tensor<double> out({s.n, k.out_channels(), oh, ow});
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t o = 0; o < k.out_channels(); ++o)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x) {
                    double acc = k.bias[o];
                    for (std::size_t i = 0; i < s.c; ++i)
                        for (std::size_t u = 0; u < kh; ++u)
                            for (std::size_t v = 0; v < kw; ++v) {
                                const long iy = long(y * stride + u) - long(pad);
                                const long ix = long(x * stride + v) - long(pad);
                                if (iy < 0 || ix < 0 || iy >= long(s.h) || ix >= long(s.w)) continue;
                                acc += k.weights(o, i, u, v) * in(n, i, std::size_t(iy), std::size_t(ix));
                            }
                    out(n, o, y, x) = acc;
                }
    return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("conv2d counts overlaps of ones") {
    Tensor<double> in({1, 1, 3, 3}, 1.0);
    ConvKernels<double> k(Tensor<double>({1, 1, 3, 3}, 1.0), {0.0});
    const auto out = conv2d_forward(in, k, 1, 1);
    CHECK(out(0, 0, 1, 1) == 9.0);
    CHECK(out(0, 0, 0, 0) == 4.0);
    CHECK(out(0, 0, 2, 2) == 4.0);
    CHECK(out(0, 0, 0, 1) == 6.0);
}

TEST_CASE("conv2d with a centred delta is the identity") {
    const auto in = random_tensor({2, 1, 6, 5}, 3);
    ConvKernels<double> k(Tensor<double>({1, 1, 3, 3}), {0.0});
    k.weights(0, 0, 1, 1) = 1.0;
    CHECK(conv2d_forward(in, k, 1, 1) == in);
}

TEST_CASE("conv2d matches the naive loop") {
    const auto in = random_tensor({1, 2, 5, 5}, 11);
    const auto k = random_kernels(3, 2, 3, 12);
    CHECK(max_abs_diff(conv2d_forward(in, k, 1, 1), naive_conv(in, k, 1, 1)) < 1e-12);
    CHECK(max_abs_diff(conv2d_forward(in, k, 2, 1), naive_conv(in, k, 2, 1)) < 1e-12);
    CHECK(max_abs_diff(conv2d_forward(in, k, 1, 0), naive_conv(in, k, 1, 0)) < 1e-12);
    const auto in2 = random_tensor({3, 4, 9, 7}, 13);
    const auto k2 = random_kernels(5, 4, 5, 14);
    CHECK(max_abs_diff(conv2d_forward(in2, k2, 1, 2), naive_conv(in2, k2, 1, 2)) < 1e-12);
    CHECK(max_abs_diff(conv2d_forward(in2, k2, 2, 2), naive_conv(in2, k2, 2, 2)) < 1e-12);
}

TEST_CASE("conv2d same padding keeps the spatial shape") {
    const auto in = random_tensor({2, 3, 8, 8}, 4);
    const auto out = conv2d_forward(in, random_kernels(4, 3, 3, 5), 1, same_padding(3));
    CHECK(out.shape() == Shape{2, 4, 8, 8});
    CHECK_THROWS_AS(conv2d_forward(in, random_kernels(4, 2, 3, 5), 1, 1), ShapeError);
}

TEST_CASE("conv2d backward: zero upstream, adjoint identity, weight and bias gradients") {
    const auto in = random_tensor({1, 1, 4, 4}, 21);
    const auto k = random_kernels(1, 1, 3, 22);
    const auto zero = conv2d_backward(Tensor<double>({1, 1, 4, 4}), in, k, 1, 1);
    for (double v : zero.input.storage()) CHECK(v == 0.0);
    for (double v : zero.weights.storage()) CHECK(v == 0.0);
    CHECK(zero.bias[0] == 0.0);

    // <u, A x> = <A^T u, x> with the bias removed so A is linear.
    ConvKernels<double> lin = k;
    lin.bias[0] = 0.0;
    for (std::size_t stride : {1u, 2u}) {
        const auto ax = conv2d_forward(in, lin, stride, 1);
        const auto u = random_tensor(ax.shape(), 23 + stride);
        const auto g = conv2d_backward(u, in, lin, stride, 1);
        CHECK(std::abs(dot(u, ax) - dot(g.input, in)) < 1e-10);
        // Linear in the weights too: <u, conv(x; W)> = <dW, W>.
        CHECK(std::abs(dot(u, ax) - dot(g.weights, lin.weights)) < 1e-10);
    }
}

TEST_CASE("conv2d backward matches finite differences") {
    const auto in = random_tensor({2, 2, 5, 5}, 31);
    const auto k = random_kernels(3, 2, 3, 32);
    const auto up = random_tensor({2, 3, 5, 5}, 33);
    const auto g = conv2d_backward(up, in, k, 1, 1);
    auto f = [&](std::span<const double> x) {
        Tensor<double> t(in.shape(), std::vector<double>(x.begin(), x.end()));
        return dot(up, conv2d_forward(t, k, 1, 1));
    };
    const auto rep = finite_diff_check(f, in.data(), g.input.data(), 1e-5, 1e-6);
    CHECK(rep.passed);
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("avgpool") {
    CHECK(avgpool_forward(Tensor<double>({1, 2, 7, 7}, 3.5), 3, 2, 0)[0] == doctest::Approx(3.5).epsilon(1e-15));
    Tensor<double> nine({1, 1, 3, 3});
    for (std::size_t i = 0; i < 9; ++i) nine[i] = double(i + 1);
    const auto one = avgpool_forward(nine, 3, 1, 0);
    CHECK(one.shape() == Shape{1, 1, 1, 1});
    CHECK(one[0] == doctest::Approx(5.0).epsilon(1e-15));
    const auto g = avgpool_backward(Tensor<double>({1, 1, 1, 1}, 1.0), nine.shape(), 3, 1, 0);
    for (double v : g.storage()) CHECK(v == doctest::Approx(1.0 / 9.0).epsilon(1e-15));

    // Padded windows still divide by the full window.
    const auto padded = avgpool_forward(Tensor<double>({1, 1, 4, 4}, 9.0), 3, 2, 1);
    CHECK(padded.shape() == Shape{1, 1, 2, 2});
    CHECK(padded(0, 0, 0, 0) == doctest::Approx(4.0));
    CHECK(padded(0, 0, 1, 1) == doctest::Approx(9.0));

    const auto x = random_tensor({2, 3, 8, 8}, 41);
    const auto ax = avgpool_forward(x, 3, 2, 1);
    const auto u = random_tensor(ax.shape(), 42);
    CHECK(std::abs(dot(u, ax) - dot(avgpool_backward(u, x.shape(), 3, 2, 1), x)) < 1e-10);
}

TEST_CASE("global average pool") {
    Tensor<double> t({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    CHECK(global_avgpool(t)[0] == 2.5);
    CHECK(global_avgpool(Tensor<double>({2, 3, 5, 5}, -1.25))[4] == doctest::Approx(-1.25).epsilon(1e-15));
    const auto x = random_tensor({3, 4, 6, 5}, 51);
    const auto g = global_avgpool(x);
    for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t c = 0; c < 4; ++c) {
            double sum = 0.0;
            for (std::size_t i = 0; i < 30; ++i) sum += x.sample(n)[c * 30 + i];
            CHECK(std::abs(g(n, c, 0, 0) - sum / 30.0) < 1e-14);
        }
    const auto u = random_tensor(g.shape(), 52);
    CHECK(std::abs(dot(u, g) - dot(global_avgpool_backward(u, x.shape()), x)) < 1e-10);
}

TEST_CASE("relu") {
    Tensor<double> x({1, 1, 1, 3}, std::vector<double>{-1, 0, 2});
    CHECK(relu_forward(x).storage() == std::vector<double>{0, 0, 2});
    const auto g = relu_backward(Tensor<double>({1, 1, 1, 3}, 1.0), x);
    CHECK(g.storage() == std::vector<double>{0, 1, 1});

    auto y = random_tensor({1, 2, 4, 4}, 61);
    for (auto& v : y.storage())
        if (std::abs(v) < 1e-2) v = 0.5;
    const auto up = random_tensor(y.shape(), 62);
    auto f = [&](std::span<const double> p) {
        return dot(up, relu_forward(Tensor<double>(y.shape(), std::vector<double>(p.begin(), p.end()))));
    };
    CHECK(finite_diff_check(f, y.data(), relu_backward(up, y).data(), 1e-6, 1e-6).passed);
}

TEST_CASE("linear") {
    LinearParams<double> id(3, 3);
    for (std::size_t i = 0; i < 3; ++i) id.weights(i, i, 0, 0) = 1.0;
    const auto x = random_tensor({4, 3, 1, 1}, 71);
    CHECK(linear_forward(x, id) == x);

    LinearParams<double> z(2, 5);
    z.bias = {1.0, 2.0};
    const auto zr = linear_forward(random_tensor({3, 5, 1, 1}, 72), z);
    for (std::size_t n = 0; n < 3; ++n) {
        CHECK(zr(n, 0, 0, 0) == 1.0);
        CHECK(zr(n, 1, 0, 0) == 2.0);
    }

    LinearParams<double> p(4, 12);
    p.weights = random_tensor({4, 12, 1, 1}, 73);
    p.bias = {0.1, -0.2, 0.3, 0.4};
    const auto in = random_tensor({5, 3, 2, 2}, 74);  // flattened to 12
    const auto out = linear_forward(in, p);
    double worst = 0.0;
    for (std::size_t n = 0; n < 5; ++n)
        for (std::size_t k = 0; k < 4; ++k) {
            double acc = p.bias[k];
            for (std::size_t d = 0; d < 12; ++d) acc += p.weights[k * 12 + d] * in.sample(n)[d];
            worst = std::max(worst, std::abs(acc - out(n, k, 0, 0)));
        }
    CHECK(worst < 1e-12);

    LinearParams<double> lin = p;
    lin.bias.assign(4, 0.0);
    const auto ax = linear_forward(in, lin);
    const auto u = random_tensor(ax.shape(), 75);
    const auto g = linear_backward(u, in, lin);
    CHECK(std::abs(dot(u, ax) - dot(g.input, in)) < 1e-10);
    auto f = [&](std::span<const double> w) {
        LinearParams<double> q = p;
        q.weights = Tensor<double>(p.weights.shape(), std::vector<double>(w.begin(), w.end()));
        return dot(u, linear_forward(in, q));
    };
    CHECK(finite_diff_check(f, p.weights.data(), linear_backward(u, in, p).weights.data(), 1e-5, 1e-8)
              .max_rel_err < 1e-8);
}

TEST_CASE("softmax loss") {
    Tensor<double> eq({3, 2, 1, 1}, 0.7);
    const int labels[] = {0, 1, 1};
    CHECK(softmax_loss(eq, labels).loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor<double> sat({1, 2, 1, 1}, std::vector<double>{50.0, 0.0});
    const int zero[] = {0};
    CHECK(softmax_loss(sat, zero).loss < 1e-20);

    const auto logits = random_tensor({4, 2, 1, 1}, 81);
    const int lab[] = {0, 1, 0, 1};
    const auto r = softmax_loss(logits, lab);
    auto f = [&](std::span<const double> z) {
        return softmax_loss(Tensor<double>(logits.shape(), std::vector<double>(z.begin(), z.end())), lab).loss;
    };
    CHECK(finite_diff_check(f, logits.data(), r.grad.data(), 1e-5, 1e-6).passed);

    const auto probs = softmax_rows(logits);
    for (std::size_t n = 0; n < 4; ++n) CHECK(std::abs(probs[2 * n] + probs[2 * n + 1] - 1.0) < 1e-12);
    const int bad[] = {0, 2, 0, 1};
    CHECK_THROWS(softmax_loss(logits, bad));
}

TEST_CASE("finite_diff_check flags a corrupted backward") {
    LinearParams<double> p(2, 6);
    p.weights = random_tensor({2, 6, 1, 1}, 91);
    const auto in = random_tensor({3, 6, 1, 1}, 92);
    const auto u = random_tensor({3, 2, 1, 1}, 93);
    auto f = [&](std::span<const double> x) {
        return dot(u, linear_forward(Tensor<double>(in.shape(), std::vector<double>(x.begin(), x.end())), p));
    };
    const auto good = linear_backward(u, in, p).input;
    CHECK(finite_diff_check(f, in.data(), good.data(), 1e-5, 1e-8).max_rel_err < 1e-8);

    auto doubled = good;
    for (auto& v : doubled.storage()) v *= 2.0;
    const auto rep = finite_diff_check(f, in.data(), doubled.data(), 1e-5, 1e-5);
    CHECK_FALSE(rep.passed);
    CHECK(rep.max_rel_err == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("conv + relu + loss stack passes the finite-difference check") {
    const auto in = random_tensor({2, 1, 6, 6}, 101);
    const auto k = random_kernels(2, 1, 3, 102);
    LinearParams<double> fc(2, 2 * 36);
    fc.weights = random_tensor({2, 72, 1, 1}, 103);
    const int lab[] = {0, 1};
    // Shift the bias so no pre-activation sits near the ReLU kink.
    auto kk = k;
    auto pre = conv2d_forward(in, kk, 1, 1);
    double closest = 1.0;
    for (double v : pre.storage()) closest = std::min(closest, std::abs(v));
    REQUIRE(closest > 1e-4);
    auto loss_of = [&](const Tensor<double>& x) {
        return softmax_loss(linear_forward(relu_forward(conv2d_forward(x, kk, 1, 1)), fc), lab);
    };
    const auto r = loss_of(in);
    const auto pre_out = conv2d_forward(in, kk, 1, 1);
    const auto act = relu_forward(pre_out);
    const auto g_act = linear_backward(r.grad, act, fc).input;
    const auto g_pre = relu_backward(g_act, pre_out);
    const auto g_in = conv2d_backward(g_pre, in, kk, 1, 1).input;
    auto f = [&](std::span<const double> x) {
        return loss_of(Tensor<double>(in.shape(), std::vector<double>(x.begin(), x.end()))).loss;
    };
    CHECK(finite_diff_check(f, in.data(), g_in.data(), 1e-6, 1e-5).passed);
}

TEST_CASE("gradcheck suite passes") {
    for (const auto& r : run_gradcheck_suite(1)) {
        INFO(r.name);
        CHECK(r.passed);
    }
}

TEST_CASE("tensor helpers") {
    const auto a = random_tensor({2, 2, 2, 2}, 111);
    const auto b = random_tensor({3, 2, 2, 2}, 112);
    const auto c = concat_batch(a, b);
    CHECK(c.shape() == Shape{5, 2, 2, 2});
    CHECK(slice_batch(c, 0, 2) == a);
    CHECK(slice_batch(c, 2, 5) == b);
    CHECK_THROWS_AS(Tensor<double>({1, 1, 2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(concat_batch(a, random_tensor({1, 3, 2, 2}, 1)), ShapeError);
}
