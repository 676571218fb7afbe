#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "snsteg/ops.hpp"
#include "snsteg/tensor.hpp"

namespace snsteg {

inline constexpr std::size_t kBankKernelSize = 5;

/// 5x5 high-pass kernel in correlation orientation, row-major.
struct NamedKernel {
    std::string name;
    std::array<double, kBankKernelSize * kBankKernelSize> values{};

    double at(std::size_t row, std::size_t col) const { return values[row * kBankKernelSize + col]; }
    double sum() const;
};

struct FilterBank {
    std::string id = "srm13";
    std::vector<NamedKernel> kernels;
    bool trainable = false;

    std::size_t size() const { return kernels.size(); }
    template <typename T>
    ConvKernels<T> as_conv() const;
    /// Order-sensitive checksum of all coefficients.
    std::uint64_t checksum() const;
};

/// KV, 4 EDGE-3x3 rotations, 4 second-order directions, 4 third-order rotations;
/// each divided by its classic normalizer (12, 4, 2, 3).
FilterBank build_default_bank();

/// Looks up a bank by id ("srm13").
FilterBank bank_by_id(const std::string& id);

/// Text format: one block per kernel, "kernel <name> <rows> <cols>" then rows of values.
void write_bank(std::ostream& os, const FilterBank& bank);
FilterBank read_bank(std::istream& is);

/// Residual maps for a single-channel batch: (N,1,H,W) -> (N,K,H,W), stride 1, same padding.
template <typename T>
Tensor<T> hpf_forward(const Tensor<T>& image, const FilterBank& bank);

struct TruncationConfig {
    double threshold = 5.0;
};

template <typename T>
Tensor<T> truncate_forward(const Tensor<T>& input, const TruncationConfig& cfg);

/// Passes gradient where |x| <= T (boundary inclusive).
template <typename T>
Tensor<T> truncate_backward(const Tensor<T>& upstream, const Tensor<T>& input,
                            const TruncationConfig& cfg);

}  // namespace snsteg
