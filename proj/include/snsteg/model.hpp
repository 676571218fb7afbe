#pragma once

// Steganalysis network:
//
//   HPF (fixed bank) -> truncation -> conv 3x3 (24) -> ReLU
//     -> PU(24) -> PU(48) -> PU(96) -> PU(192)
//     -> global average pool -> linear (192 -> 2)
//
// A processing unit (PU) is conv 3x3 -> normalization -> ReLU -> avgpool(3, stride 2).
// Normalization is SN or BN for every unit of a network.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snsteg/normalization.hpp"
#include "snsteg/ops.hpp"
#include "snsteg/preprocessing.hpp"
#include "snsteg/tensor.hpp"

namespace snsteg {

/// BnBatch normalizes with batch statistics at train and eval time.
/// BnFixed normalizes with batch statistics in training and running statistics at eval.
enum class NormKind { SN, BnBatch, BnFixed };

std::string to_string(NormKind k);
NormKind parse_norm_kind(const std::string& s);

struct NetworkConfig {
    std::size_t image_size = 64;
    std::string bank_id = "srm13";
    double truncation = 5.0;
    std::size_t first_conv_channels = 24;
    std::vector<std::size_t> pu_channels{24, 48, 96, 192};
    std::size_t classes = 2;
    NormKind norm = NormKind::SN;
    std::size_t conv_kernel = 3;
    std::size_t pool_window = 3;
    std::size_t pool_stride = 2;
    SigmaInit sigma_init = SigmaInit::Deviation;

    /// Flat key=value lines, stable key order.
    std::map<std::string, std::string> to_map() const;
    static NetworkConfig from_map(const std::map<std::string, std::string>& kv);

    /// Spatial extent entering the global pool.
    std::size_t final_extent() const;
    /// Trainable parameter count (HPF excluded).
    std::size_t parameter_count() const;
    void validate() const;
    /// Architectural fields equal (image size, bank, ladder, kernel/pool geometry, classes).
    bool compatible_with(const NetworkConfig& other) const;
};

enum class Mode { Train, Eval };

/// Named view of one trainable array and its gradient.
template <typename T>
struct ParamView {
    std::string name;
    std::span<T> value;
    std::span<T> grad;
    Shape shape;
};

template <typename T>
struct StateView {
    std::string name;
    std::span<T> value;
};

template <typename T>
struct ProcessingUnit {
    ConvKernels<T> conv;
    ConvKernels<T> conv_grad;
    BNParams<T> bn;       // BN kinds: gamma/beta trained, running stats tracked
    BNParams<T> bn_grad;  // gamma/beta gradients only
    NormStats<T> sn;      // SN kind
};

template <typename T>
class Network {
public:
    Network() = default;
    Network(NetworkConfig config, std::uint64_t seed);

    const NetworkConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }
    std::size_t epoch() const { return epoch_; }
    void set_epoch(std::size_t e) { epoch_ = e; }

    const FilterBank& bank() const { return bank_; }
    std::vector<ProcessingUnit<T>>& units() { return units_; }
    const std::vector<ProcessingUnit<T>>& units() const { return units_; }

    /// Initializes SN shared statistics (and BN running statistics) layer by layer
    /// from `samples`, which is a (M,1,H,W) batch; processed in chunks.
    void init_norm_stats(const Tensor<T>& samples, std::size_t chunk = 20);
    bool norm_stats_ready() const;

    /// logits (N, classes, 1, 1). In Train mode activations are kept for backward()
    /// and per-layer batch statistics are recorded for apply_stat_updates().
    /// `bn_eval_source` overrides the BN statistics source in Eval mode.
    Tensor<T> forward(const Tensor<T>& batch, Mode mode,
                      std::optional<StatsSource> bn_eval_source = std::nullopt);

    /// Accumulates into the gradient buffers (zeroed first). HPF receives none.
    void backward(const Tensor<T>& grad_logits);
    void zero_grad();

    /// EMA step of SN (or BN running) statistics with rate alpha from the last Train forward.
    void apply_stat_updates(double alpha);

    /// Trainable arrays in a fixed order; gradient spans alias internal buffers.
    std::vector<ParamView<T>> params();
    /// Non-trained state arrays (SN shared statistics, BN running statistics).
    std::vector<StateView<T>> state_arrays();

    std::size_t parameter_count();

    struct Prediction {
        std::vector<int> labels;              // 0 cover, 1 stego; ties go to cover
        std::vector<double> stego_probability;
    };
    Prediction predict(const Tensor<T>& images,
                       std::optional<StatsSource> bn_eval_source = std::nullopt);

    /// Order-sensitive hash of every state array and parameter.
    std::uint64_t checksum();
    /// Checksum of the fixed HPF kernels.
    std::uint64_t hpf_checksum() const;
    /// Marks SN statistics as initialized after they were loaded from elsewhere.
    void mark_norm_stats_ready();

private:
    struct UnitCache {
        Tensor<T> input;
        Tensor<T> conv_out;
        BNSaved<T> bn_saved;
        Tensor<T> norm_out;
        Tensor<T> relu_out;
        ChannelStats batch;  // statistics of conv_out
    };

    Tensor<T> preprocess(const Tensor<T>& batch) const;
    Tensor<T> unit_forward(std::size_t i, const Tensor<T>& x, Mode mode,
                           std::optional<StatsSource> bn_eval_source, UnitCache* cache);

    NetworkConfig config_{};
    std::uint64_t seed_ = 0;
    std::size_t epoch_ = 0;
    FilterBank bank_{};
    ConvKernels<T> hpf_{};
    ConvKernels<T> conv0_{};
    ConvKernels<T> conv0_grad_{};
    std::vector<ProcessingUnit<T>> units_;
    LinearParams<T> fc_{};
    LinearParams<T> fc_grad_{};

    bool have_cache_ = false;
    Tensor<T> conv0_in_;
    Tensor<T> conv0_out_;
    std::vector<UnitCache> unit_cache_;
    Tensor<T> pooled_;
    Shape gap_in_shape_{};
};

/// Label decision for one row of logits: stego only when its logit is strictly larger.
int argmax_label(double cover_logit, double stego_logit);

}  // namespace snsteg
