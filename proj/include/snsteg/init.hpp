#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace snsteg {

/// Zero-mean Gaussian draws with variance 2 / fan_in.
std::vector<double> init_weights_msra(std::size_t count, std::size_t fan_in, std::uint64_t seed);

/// Derives an independent stream seed from a base seed and a tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace snsteg
