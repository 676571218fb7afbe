#include <doctest.h>

#include <cmath>
#include <random>

#include "snsteg/model.hpp"

using namespace snsteg;

namespace {

NetworkConfig small_config(NormKind norm) {
    NetworkConfig c;
    c.image_size = 16;
    c.first_conv_channels = 4;
    c.pu_channels = {4, 6};
    c.norm = norm;
    return c;
}

Tensor<float> random_images(std::size_t n, std::size_t size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> px(0, 255);
    Tensor<float> t({n, 1, size, size});
    for (auto& v : t.storage()) v = float(px(rng));
    return t;
}

}  // namespace

TEST_CASE("network shape arithmetic and parameter counts") {
    NetworkConfig full;
    full.image_size = 512;
    CHECK(full.final_extent() == 32);
    NetworkConfig desk;
    CHECK(desk.final_extent() == 4);
    CHECK(desk.parameter_count() == 226490);
    desk.norm = NormKind::BnBatch;
    CHECK(desk.parameter_count() == 227210);

    Network<float> net(NetworkConfig{}, 3);
    CHECK(net.parameter_count() == 226490);

    NetworkConfig tiny;
    tiny.image_size = 16;
    CHECK_THROWS_AS(tiny.validate(), ConfigError);
}

TEST_CASE("config map round trip and compatibility") {
    NetworkConfig c = small_config(NormKind::BnFixed);
    c.sigma_init = SigmaInit::Variance;
    const NetworkConfig back = NetworkConfig::from_map(c.to_map());
    CHECK(back.to_map() == c.to_map());
    CHECK(back.compatible_with(c));
    NetworkConfig other = c;
    other.pu_channels = {4, 8};
    CHECK_FALSE(other.compatible_with(c));
    NetworkConfig sn = c;
    sn.norm = NormKind::SN;
    CHECK_FALSE(sn.compatible_with(c));  // BN carries gamma/beta, SN does not
    CHECK(parse_norm_kind("bn-batch") == NormKind::BnBatch);
    CHECK(to_string(NormKind::SN) == "sn");
    CHECK_THROWS_AS(parse_norm_kind("layer"), ConfigError);
}

TEST_CASE("equal seeds build identical networks") {
    Network<float> a(small_config(NormKind::SN), 42), b(small_config(NormKind::SN), 42), c(small_config(NormKind::SN), 43);
    CHECK(a.checksum() == b.checksum());
    CHECK(a.checksum() != c.checksum());
    auto pa = a.params();
    auto pb = b.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i)
        CHECK(std::equal(pa[i].value.begin(), pa[i].value.end(), pb[i].value.begin()));
}

template <typename T>
void check_batch_independence(NormKind kind, double tol) {
    Network<T> net(small_config(kind), 5);
    net.init_norm_stats(random_images(8, 16, 6).cast<T>());
    const auto imgs = random_images(5, 16, 7).cast<T>();
    const auto logits = net.forward(imgs, Mode::Eval);
    CHECK(logits.shape() == Shape{5, 2, 1, 1});
    CHECK(net.forward(imgs, Mode::Eval) == logits);
    for (std::size_t n = 0; n < 5; ++n) {
        const auto alone = net.forward(slice_batch(imgs, n, n + 1), Mode::Eval);
        for (std::size_t k = 0; k < 2; ++k) CHECK(std::abs(alone[k] - logits(n, k, 0, 0)) <= tol);
    }
}

TEST_CASE("forward shapes, determinism and batch independence") {
    // Summation order inside the matrix products can change with the batch width, so
    // single precision agrees to rounding level and double precision much tighter.
    check_batch_independence<double>(NormKind::SN, 1e-12);
    check_batch_independence<double>(NormKind::BnFixed, 1e-12);
    check_batch_independence<float>(NormKind::SN, 1e-5);
    check_batch_independence<float>(NormKind::BnFixed, 1e-5);
    Network<float> wrong(small_config(NormKind::SN), 1);
    wrong.init_norm_stats(random_images(4, 16, 1));
    CHECK_THROWS_AS(wrong.forward(random_images(2, 20, 1), Mode::Eval), ShapeError);
}

TEST_CASE("SN network refuses to run before its statistics exist") {
    Network<float> net(small_config(NormKind::SN), 5);
    CHECK_FALSE(net.norm_stats_ready());
    CHECK_THROWS(net.forward(random_images(2, 16, 1), Mode::Eval));
    net.init_norm_stats(random_images(4, 16, 1));
    CHECK(net.norm_stats_ready());
}

TEST_CASE("backward: zero upstream and frozen high-pass filters") {
    Network<float> net(small_config(NormKind::BnBatch), 8);
    const std::uint64_t hpf = net.hpf_checksum();
    const auto imgs = random_images(4, 16, 9);
    net.forward(imgs, Mode::Train);
    net.backward(Tensor<float>({4, 2, 1, 1}));
    for (const auto& p : net.params()) {
        INFO(p.name);
        CHECK(p.name.find("hpf") == std::string::npos);
        for (float g : p.grad) CHECK(g == 0.0f);
    }
    // A full step leaves the HPF bank unchanged.
    net.forward(imgs, Mode::Train);
    net.backward(Tensor<float>({4, 2, 1, 1}, 0.25f));
    for (auto& p : net.params())
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= 0.1f * p.grad[i];
    CHECK(net.hpf_checksum() == hpf);
}

TEST_CASE("evaluation never mutates statistics") {
    Network<float> net(small_config(NormKind::SN), 10);
    net.init_norm_stats(random_images(6, 16, 11));
    const auto before = net.checksum();
    net.forward(random_images(4, 16, 12), Mode::Eval);
    net.predict(random_images(2, 16, 13));
    CHECK(net.checksum() == before);

    net.forward(random_images(4, 16, 12), Mode::Train);
    net.apply_stat_updates(0.5);
    CHECK(net.checksum() != before);
}

TEST_CASE("statistics EMA after a training forward") {
    Network<float> net(small_config(NormKind::SN), 14);
    net.init_norm_stats(random_images(6, 16, 15));
    const std::vector<float> mean0(net.units()[0].sn.mean);
    net.forward(random_images(4, 16, 16), Mode::Train);
    net.apply_stat_updates(0.0);
    CHECK(net.units()[0].sn.mean == mean0);
    net.apply_stat_updates(1.0);
    CHECK(net.units()[0].sn.mean != mean0);
}

TEST_CASE("prediction rule") {
    CHECK(argmax_label(0.0, 0.0) == 0);
    CHECK(argmax_label(-3.0, 3.0) == 1);
    CHECK(argmax_label(1.0, 0.5) == 0);
    const double p = 1.0 / (1.0 + std::exp(-6.0));
    CHECK(p == doctest::Approx(0.9975).epsilon(1e-4));

    Network<float> net(small_config(NormKind::SN), 17);
    net.init_norm_stats(random_images(4, 16, 18));
    const auto pred = net.predict(random_images(6, 16, 19));
    REQUIRE(pred.labels.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(pred.stego_probability[i] >= 0.0);
        CHECK(pred.stego_probability[i] <= 1.0);
        CHECK(pred.labels[i] == (pred.stego_probability[i] > 0.5 ? 1 : 0));
    }
}

TEST_CASE("state arrays name every normalization statistic") {
    Network<float> sn(small_config(NormKind::SN), 1);
    auto s = sn.state_arrays();
    REQUIRE(s.size() == 4);
    CHECK(s[0].name == "pu0.sn.mean");
    CHECK(s[1].name == "pu0.sn.std");
    Network<float> bn(small_config(NormKind::BnBatch), 1);
    CHECK(bn.state_arrays()[0].name == "pu0.bn.running_mean");
}
