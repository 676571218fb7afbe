#pragma once

// Batch normalization (BN) and shared normalization (SN).
//
// BN normalizes each channel with statistics of the current batch (or with stored
// running statistics in fixed mode). SN normalizes every batch, at train and test
// time alike, with one shared per-channel (mean, deviation) pair that is tracked by
// an exponential moving average:
//
//   SN(x)  = (x - mu*) / (sigma* + eps)
//   mu*    <- (1 - a) mu*    + a mu_B
//   sigma* <- (1 - a) sigma* + a sigma_B
//
// mu* and sigma* are constants for backpropagation.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "snsteg/ops.hpp"
#include "snsteg/tensor.hpp"

namespace snsteg {

inline constexpr double kNormEpsilon = 1e-5;

enum class StatsSource { Batch, Fixed };

/// Per-channel biased mean and standard deviation over (N, H, W).
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> std;
};

template <typename T>
ChannelStats channel_stats(const Tensor<T>& input);

template <typename T>
struct BNParams {
    std::vector<T> gamma;
    std::vector<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_std;
    double eps = kNormEpsilon;
    StatsSource mode = StatsSource::Batch;

    BNParams() = default;
    explicit BNParams(std::size_t channels)
        : gamma(channels, T(1)), beta(channels, T(0)), running_mean(channels, T(0)),
          running_std(channels, T(1)) {}
    std::size_t channels() const { return gamma.size(); }
};

template <typename T>
struct BNSaved {
    Tensor<T> normalized;
    std::vector<double> inv_std;  // 1 / sqrt(var + eps)
    ChannelStats batch;           // empty in fixed mode
    StatsSource mode = StatsSource::Batch;
    bool valid() const { return !normalized.empty(); }
};

template <typename T>
struct BNResult {
    Tensor<T> output;
    BNSaved<T> saved;
};

template <typename T>
struct BNGrads {
    Tensor<T> input;
    std::vector<T> gamma;
    std::vector<T> beta;
};

template <typename T>
BNResult<T> bn_forward(const Tensor<T>& input, const BNParams<T>& params);

template <typename T>
BNGrads<T> bn_backward(const Tensor<T>& upstream, const BNSaved<T>& saved,
                       const BNParams<T>& params);

/// How the initial shared deviation is formed from the pooled second moment.
/// Deviation takes the square root; Variance keeps the raw second moment.
enum class SigmaInit { Deviation, Variance };

template <typename T>
struct NormStats {
    std::vector<T> mean;
    std::vector<T> std;
    double eps = kNormEpsilon;
    bool initialized = false;

    std::size_t channels() const { return mean.size(); }
};

template <typename T>
Tensor<T> sn_forward(const Tensor<T>& input, const NormStats<T>& stats);

template <typename T>
Tensor<T> sn_backward(const Tensor<T>& upstream, const NormStats<T>& stats);

/// Initial shared statistics from the first `m` samples found in `feature_maps`.
/// mu* is the mean of per-sample spatial means; the deviation comes from the
/// pooled squared distance of every element to mu*.
template <typename T>
NormStats<T> sn_init_stats(std::span<const Tensor<T>> feature_maps, std::size_t m,
                           SigmaInit mode = SigmaInit::Deviation);

template <typename T>
NormStats<T> sn_update_stats(const NormStats<T>& stats, std::span<const double> batch_mean,
                             std::span<const double> batch_std, double alpha);

struct ChannelSeparation {
    double cover_mean = 0.0;
    double stego_mean = 0.0;
    double margin = 0.0;        // d_n = |stego_mean - cover_mean|
    double interference = 0.0;  // |E[W(x - x')]| / sigma', zero for paired batches
};

struct SeparationReport {
    std::vector<ChannelSeparation> channels;
    std::string to_csv() const;
};

struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::size_t> counts;

    double bin_width() const { return counts.empty() ? 0.0 : (hi - lo) / counts.size(); }
    std::size_t total() const;
    std::string to_csv() const;
};

Histogram make_histogram(std::span<const double> values, double lo, double hi, std::size_t bins);

/// Per-channel cover/stego output means of a BN layer fed a paired batch.
template <typename T>
SeparationReport paired_separation_probe(const Tensor<T>& cover_out, const Tensor<T>& stego_out);

struct InterferenceReport {
    SeparationReport separation;  // BN(batch stats) over {Wx, W(x'+s)}
    double mean_abs_content_diff = 0.0;  // mean |W(x - x')|
    double mean_abs_stego = 0.0;         // mean |W s|
    double ratio = 0.0;
    Histogram content_diff_hist;
    Histogram stego_hist;
};

/// Magnitude of the cover-difference term W(x - x') against the stego term Ws.
template <typename T>
InterferenceReport unpaired_interference_probe(const Tensor<T>& x, const Tensor<T>& x_prime,
                                               const Tensor<T>& s, const ConvKernels<T>& kernels,
                                               std::size_t bins = 101);

/// True where |mu_fixed - mu_batch| > d_n.
std::vector<bool> fixed_stats_bias_check(std::span<const double> mu_fixed,
                                         std::span<const double> mu_batch,
                                         std::span<const double> margin);

}  // namespace snsteg
