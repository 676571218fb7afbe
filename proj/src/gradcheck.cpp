#include "snsteg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "snsteg/model.hpp"
#include "snsteg/normalization.hpp"
#include "snsteg/ops.hpp"
#include "snsteg/preprocessing.hpp"

namespace snsteg {

FdReport finite_diff_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> point, std::span<const double> analytic,
                           double epsilon, double tolerance) {
    if (point.size() != analytic.size())
        throw ShapeError("finite_diff_check: point and gradient lengths differ");
    std::vector<double> x(point.begin(), point.end());
    std::vector<double> numeric(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + epsilon;
        const double up = f(x);
        x[i] = keep - epsilon;
        const double down = f(x);
        x[i] = keep;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw NumericError("finite_diff_check: non-finite function value at index " + std::to_string(i));
        numeric[i] = (up - down) / (2.0 * epsilon);
    }
    double scale = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(analytic[i]))
            throw NumericError("finite_diff_check: non-finite analytic gradient at index " + std::to_string(i));
        scale = std::max(scale, std::abs(numeric[i]));
    }
    FdReport r;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double denom = std::max({std::abs(numeric[i]), 1e-3 * scale, 1e-12});
        const double e = std::abs(analytic[i] - numeric[i]) / denom;
        if (i == 0 || e > r.max_rel_err) {
            r.max_rel_err = e;
            r.worst_index = i;
            r.analytic = analytic[i];
            r.numeric = numeric[i];
        }
    }
    r.passed = r.max_rel_err < tolerance;
    return r;
}

namespace {

using Vec = std::vector<double>;
using TD = Tensor<double>;

struct Rng {
    std::mt19937_64 gen;
    explicit Rng(std::uint64_t s) : gen(s) {}
    TD tensor(Shape s, double scale = 1.0) {
        std::normal_distribution<double> n(0.0, scale);
        TD t(s);
        for (auto& v : t.storage()) v = n(gen);
        return t;
    }
    Vec vec(std::size_t k, double scale = 1.0) {
        std::normal_distribution<double> n(0.0, scale);
        Vec v(k);
        for (auto& x : v) x = n(gen);
        return v;
    }
};

TD with_data(const Shape& s, std::span<const double> v) { return TD(s, Vec(v.begin(), v.end())); }

double project(const TD& out, const TD& r) { return dot(out, r); }

// Records the worst report for one named check.
struct Collector {
    std::vector<CheckResult> results;
    void add(const std::string& name, std::initializer_list<FdReport> reports, double tol) {
        CheckResult c{name, 0.0, tol, true};
        for (const auto& r : reports) c.max_rel_err = std::max(c.max_rel_err, r.max_rel_err);
        c.passed = c.max_rel_err < tol;
        results.push_back(c);
    }
};

// Pushes values off a kink: |x| >= margin.
void nudge(TD& t, double margin) {
    for (auto& v : t.storage())
        if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
}

void check_conv(Collector& out, Rng& rng, std::size_t stride) {
    const TD x = rng.tensor(Shape{2, 2, 5, 5});
    ConvKernels<double> k(rng.tensor(Shape{3, 2, 3, 3}), rng.vec(3));
    const TD y0 = conv2d_forward(x, k, stride, 1);
    const TD r = rng.tensor(y0.shape());
    const auto g = conv2d_backward(r, x, k, stride, 1, true);
    const auto fx = finite_diff_check(
        [&](std::span<const double> p) { return project(conv2d_forward(with_data(x.shape(), p), k, stride, 1), r); },
        x.data(), g.input.data());
    const auto fw = finite_diff_check(
        [&](std::span<const double> p) {
            ConvKernels<double> kk(with_data(k.weights.shape(), p), k.bias);
            return project(conv2d_forward(x, kk, stride, 1), r);
        },
        k.weights.data(), g.weights.data());
    const auto fb = finite_diff_check(
        [&](std::span<const double> p) {
            ConvKernels<double> kk(k.weights, Vec(p.begin(), p.end()));
            return project(conv2d_forward(x, kk, stride, 1), r);
        },
        k.bias, g.bias);
    out.add("conv2d stride " + std::to_string(stride), {fx, fw, fb}, 1e-5);
}

void check_pool(Collector& out, Rng& rng) {
    const TD x = rng.tensor(Shape{2, 3, 7, 7});
    const TD r = rng.tensor(avgpool_forward(x, 3, 2, 1).shape());
    const TD g = avgpool_backward(r, x.shape(), 3, 2, 1);
    const auto f = finite_diff_check(
        [&](std::span<const double> p) { return project(avgpool_forward(with_data(x.shape(), p), 3, 2, 1), r); },
        x.data(), g.data());
    const TD rg = rng.tensor(Shape{2, 3, 1, 1});
    const TD gg = global_avgpool_backward(rg, x.shape());
    const auto fg = finite_diff_check(
        [&](std::span<const double> p) { return project(global_avgpool(with_data(x.shape(), p)), rg); },
        x.data(), gg.data());
    out.add("avgpool 3/2 + global", {f, fg}, 1e-5);
}

void check_linear(Collector& out, Rng& rng) {
    const TD x = rng.tensor(Shape{3, 4, 2, 2});
    LinearParams<double> lp(2, 16);
    lp.weights = rng.tensor(lp.weights.shape());
    lp.bias = rng.vec(2);
    const TD r = rng.tensor(Shape{3, 2, 1, 1});
    const auto g = linear_backward(r, x, lp);
    const auto fx = finite_diff_check(
        [&](std::span<const double> p) { return project(linear_forward(with_data(x.shape(), p), lp), r); },
        x.data(), g.input.data());
    const auto fw = finite_diff_check(
        [&](std::span<const double> p) {
            LinearParams<double> q = lp;
            q.weights = with_data(lp.weights.shape(), p);
            return project(linear_forward(x, q), r);
        },
        lp.weights.data(), g.weights.data());
    const auto fb = finite_diff_check(
        [&](std::span<const double> p) {
            LinearParams<double> q = lp;
            q.bias.assign(p.begin(), p.end());
            return project(linear_forward(x, q), r);
        },
        lp.bias, g.bias);
    out.add("linear", {fx, fw, fb}, 1e-5);
}

void check_relu(Collector& out, Rng& rng) {
    TD x = rng.tensor(Shape{2, 2, 4, 4});
    nudge(x, 1e-2);
    const TD r = rng.tensor(x.shape());
    const TD g = relu_backward(r, x);
    const auto f = finite_diff_check(
        [&](std::span<const double> p) { return project(relu_forward(with_data(x.shape(), p)), r); },
        x.data(), g.data());
    out.add("relu (off kink)", {f}, 1e-5);
}

void check_truncation(Collector& out, Rng& rng) {
    TD x = rng.tensor(Shape{1, 2, 4, 4}, 4.0);
    for (auto& v : x.storage())
        if (std::abs(std::abs(v) - 3.0) < 1e-2) v += 0.05;
    const TruncationConfig cfg{3.0};
    const TD r = rng.tensor(x.shape());
    const TD g = truncate_backward(r, x, cfg);
    const auto f = finite_diff_check(
        [&](std::span<const double> p) { return project(truncate_forward(with_data(x.shape(), p), cfg), r); },
        x.data(), g.data());
    out.add("truncation (off boundary)", {f}, 1e-5);
}

void check_softmax(Collector& out, Rng& rng) {
    const TD logits = rng.tensor(Shape{4, 2, 1, 1}, 2.0);
    const std::vector<int> labels{0, 1, 1, 0};
    const auto l = softmax_loss(logits, std::span<const int>(labels));
    const auto f = finite_diff_check(
        [&](std::span<const double> p) {
            return softmax_loss(with_data(logits.shape(), p), std::span<const int>(labels)).loss;
        },
        logits.data(), l.grad.data());
    out.add("softmax loss", {f}, 1e-5);
}

void check_bn(Collector& out, Rng& rng) {
    const TD x = rng.tensor(Shape{3, 2, 3, 3}, 2.0);
    BNParams<double> bp(2);
    bp.gamma = {1.3, 0.7};
    bp.beta = {0.2, -0.4};
    bp.mode = StatsSource::Batch;
    const TD r = rng.tensor(x.shape());
    const auto res = bn_forward(x, bp);
    const auto g = bn_backward(r, res.saved, bp);
    const auto fx = finite_diff_check(
        [&](std::span<const double> p) { return project(bn_forward(with_data(x.shape(), p), bp).output, r); },
        x.data(), g.input.data());
    const auto fg = finite_diff_check(
        [&](std::span<const double> p) {
            BNParams<double> q = bp;
            q.gamma.assign(p.begin(), p.end());
            return project(bn_forward(x, q).output, r);
        },
        bp.gamma, g.gamma);
    const auto fb = finite_diff_check(
        [&](std::span<const double> p) {
            BNParams<double> q = bp;
            q.beta.assign(p.begin(), p.end());
            return project(bn_forward(x, q).output, r);
        },
        bp.beta, g.beta);
    out.add("bn (batch statistics)", {fx, fg, fb}, 1e-5);
}

void check_sn(Collector& out, Rng& rng) {
    const TD x = rng.tensor(Shape{2, 3, 3, 3}, 2.0);
    NormStats<double> st;
    st.mean = {0.5, -1.0, 2.0};
    st.std = {1.5, 0.3, 2.2};
    st.initialized = true;
    const TD r = rng.tensor(x.shape());
    const TD g = sn_backward(r, st);
    const auto f = finite_diff_check(
        [&](std::span<const double> p) { return project(sn_forward(with_data(x.shape(), p), st), r); },
        x.data(), g.data());
    out.add("sn", {f}, 1e-5);
}

// Five random parameters of a small network, loss = mean softmax cross-entropy.
void check_network(Collector& out, NormKind kind, std::uint64_t seed) {
    NetworkConfig cfg;
    cfg.image_size = 16;
    cfg.first_conv_channels = 4;
    cfg.pu_channels = {4, 6};
    cfg.norm = kind;
    Network<double> net(cfg, seed);
    Rng rng(seed + 17);
    TD images(Shape{4, 1, 16, 16});
    std::uniform_int_distribution<int> px(0, 255);
    for (auto& v : images.storage()) v = px(rng.gen);
    const std::vector<int> labels{0, 0, 1, 1};
    net.init_norm_stats(images);
    auto loss_now = [&] {
        return softmax_loss(net.forward(images, Mode::Train), std::span<const int>(labels)).loss;
    };
    const auto l = softmax_loss(net.forward(images, Mode::Train), std::span<const int>(labels));
    net.backward(l.grad);

    auto params = net.params();
    std::vector<std::pair<std::size_t, std::size_t>> picks;
    for (std::size_t k = 0; k < 5; ++k) {
        std::uniform_int_distribution<std::size_t> which(0, params.size() - 1);
        const std::size_t pi = which(rng.gen);
        std::uniform_int_distribution<std::size_t> idx(0, params[pi].value.size() - 1);
        picks.emplace_back(pi, idx(rng.gen));
    }
    Vec point;
    Vec analytic;
    for (auto [pi, i] : picks) {
        point.push_back(params[pi].value[i]);
        analytic.push_back(params[pi].grad[i]);
    }
    const auto f = finite_diff_check(
        [&](std::span<const double> p) {
            for (std::size_t k = 0; k < picks.size(); ++k) params[picks[k].first].value[picks[k].second] = p[k];
            const double v = loss_now();
            for (std::size_t k = 0; k < picks.size(); ++k)
                params[picks[k].first].value[picks[k].second] = point[k];
            return v;
        },
        point, analytic, 1e-6, 1e-4);
    out.add("network end-to-end (" + to_string(kind) + ")", {f}, 1e-4);
}

}  // namespace

std::vector<CheckResult> run_gradcheck_suite(std::uint64_t seed) {
    Collector c;
    Rng rng(seed);
    check_conv(c, rng, 1);
    check_conv(c, rng, 2);
    check_pool(c, rng);
    check_linear(c, rng);
    check_relu(c, rng);
    check_truncation(c, rng);
    check_softmax(c, rng);
    check_bn(c, rng);
    check_sn(c, rng);
    check_network(c, NormKind::SN, seed);
    check_network(c, NormKind::BnBatch, seed);
    return c.results;
}

std::string format_gradcheck_table(const std::vector<CheckResult>& results) {
    std::string s;
    char line[160];
    std::snprintf(line, sizeof line, "%-34s %14s %10s  %s\n", "check", "max_rel_err", "tolerance", "result");
    s += line;
    for (const auto& r : results) {
        std::snprintf(line, sizeof line, "%-34s %14.3e %10.0e  %s\n", r.name.c_str(), r.max_rel_err, r.tolerance,
                      r.passed ? "PASS" : "FAIL");
        s += line;
    }
    return s;
}

}  // namespace snsteg
