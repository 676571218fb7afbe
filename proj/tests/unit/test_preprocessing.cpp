#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "snsteg/preprocessing.hpp"

using namespace snsteg;

TEST_CASE("default bank") {
    const FilterBank bank = build_default_bank();
    CHECK(bank.size() == 13);
    CHECK_FALSE(bank.trainable);
    for (const auto& k : bank.kernels) {
        INFO(k.name);
        CHECK(std::abs(k.sum()) < 1e-14);
    }
    const auto& kv = bank.kernels.front();
    CHECK(kv.at(2, 2) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(kv.at(0, 0) == doctest::Approx(-1.0 / 12.0).epsilon(1e-15));
    CHECK(kv.at(1, 2) == doctest::Approx(8.0 / 12.0).epsilon(1e-15));
    CHECK(bank_by_id("srm13").checksum() == bank.checksum());
    CHECK_THROWS_AS(bank_by_id("srm30"), ConfigError);
}

TEST_CASE("bank text round trip") {
    const FilterBank bank = build_default_bank();
    std::stringstream ss;
    write_bank(ss, bank);
    const FilterBank back = read_bank(ss);
    CHECK(back.size() == bank.size());
    CHECK(back.checksum() == bank.checksum());
    std::istringstream bad("kernel broken 5 5\n1 2 3\n");
    CHECK_THROWS(read_bank(bad));
}

TEST_CASE("hpf residuals") {
    const FilterBank bank = build_default_bank();
    const auto flat = hpf_forward(Tensor<double>({2, 1, 9, 9}, 117.0), bank);
    CHECK(flat.shape() == Shape{2, 13, 9, 9});
    // Interior only: the zero padding breaks the zero-sum property at the border.
    for (std::size_t c = 0; c < 13; ++c)
        for (std::size_t y = 2; y < 7; ++y)
            for (std::size_t x = 2; x < 7; ++x) CHECK(std::abs(flat(0, c, y, x)) < 1e-12);

    // Second-difference kernels vanish on an affine ramp.
    Tensor<double> ramp({1, 1, 11, 11});
    for (std::size_t y = 0; y < 11; ++y)
        for (std::size_t x = 0; x < 11; ++x) ramp(0, 0, y, x) = 3.0 * double(x) - 2.0 * double(y) + 5.0;
    const auto r = hpf_forward(ramp, bank);
    std::size_t checked = 0;
    for (std::size_t c = 0; c < bank.size(); ++c) {
        if (bank.kernels[c].name.rfind("S2_", 0) != 0) continue;
        ++checked;
        for (std::size_t y = 2; y < 9; ++y)
            for (std::size_t x = 2; x < 9; ++x) CHECK(std::abs(r(0, c, y, x)) < 1e-12);
    }
    CHECK(checked == 4);

    // Impulse response reproduces each kernel in correlation orientation (flipped about the impulse).
    Tensor<double> imp({1, 1, 9, 9});
    imp(0, 0, 4, 4) = 1.0;
    const auto ir = hpf_forward(imp, bank);
    for (std::size_t c = 0; c < bank.size(); ++c)
        for (std::size_t u = 0; u < 5; ++u)
            for (std::size_t v = 0; v < 5; ++v)
                CHECK(ir(0, c, 4 + 2 - u, 4 + 2 - v) == doctest::Approx(bank.kernels[c].at(u, v)).epsilon(1e-15));
    CHECK_THROWS_AS(hpf_forward(Tensor<double>({1, 2, 9, 9}), bank), ShapeError);
}

TEST_CASE("truncation") {
    TruncationConfig cfg;
    Tensor<double> x({1, 1, 1, 5}, std::vector<double>{7, -6, 3, 5, -5});
    const auto t = truncate_forward(x, cfg);
    CHECK(t.storage() == std::vector<double>{5, -5, 3, 5, -5});
    CHECK(truncate_forward(t, cfg) == t);
    const auto g = truncate_backward(Tensor<double>(x.shape(), 1.0), x, cfg);
    CHECK(g.storage() == std::vector<double>{0, 0, 1, 1, 1});
    CHECK_THROWS(truncate_forward(x, TruncationConfig{0.0}));
}
