#include "snsteg/init.hpp"

#include <cmath>
#include <random>

#include "snsteg/tensor.hpp"

namespace snsteg {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::vector<double> init_weights_msra(std::size_t count, std::size_t fan_in, std::uint64_t seed) {
    if (fan_in == 0) throw ConfigError("init_weights_msra: fan-in must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<double> w(count);
    for (double& v : w) v = normal(rng);
    return w;
}

}  // namespace snsteg
