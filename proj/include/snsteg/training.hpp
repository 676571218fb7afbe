#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snsteg/data.hpp"
#include "snsteg/model.hpp"

namespace snsteg {

struct OptimConfig {
    double lr_high = 0.01;
    double lr_low = 0.001;
    double drop_fraction = 0.75;  // share of epochs trained at lr_high
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t epochs = 40;
    std::size_t batch_size = 16;  // covers + stegos

    void validate() const;
};

/// lr_high before round(drop_fraction * total_epochs), lr_low from there on.
double lr_schedule(std::size_t epoch, std::size_t total_epochs, double lr_high = 0.01,
                   double lr_low = 0.001, double drop_fraction = 0.75);

/// Heavy-ball step with weight decay folded into the gradient:
///   v <- momentum * v - lr * (g + decay * w);  w <- w + v
/// Gradients are expected to be batch means already.
template <typename T>
void sgd_step(std::span<T> weights, std::span<const T> grads, std::span<T> velocity, double lr,
              double momentum, double weight_decay);

struct DetectionError {
    double pe = 0.0;
    double pmd = 0.0;  // stegos labelled cover / stegos
    double pfa = 0.0;  // covers labelled stego / covers
};

DetectionError detection_error(std::span<const int> predictions, std::span<const int> labels);

enum class Pairing { Paired, Unpaired };

std::string to_string(Pairing p);

/// Test-set error with batches of batch_size/2 covers and batch_size/2 stegos.
/// Unpaired batches take their stegos from the covers batch_size/2 positions further on
/// (cyclically), so no stego shares a cover with a cover in its batch. With order_seed the
/// covers are first permuted, which changes the batch composition but not the image set.
DetectionError evaluate(Network<float>& net, const PairSet& test, std::size_t batch_size,
                        Pairing pairing, std::optional<StatsSource> bn_source = std::nullopt,
                        std::optional<std::uint64_t> order_seed = std::nullopt);

struct MetricsRow {
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double train_err = 0.0;
    double test_err_paired = 0.0;
    double test_err_unpaired = 0.0;
    // BN networks only: the same two errors under the other statistics source.
    std::optional<double> alt_paired;
    std::optional<double> alt_unpaired;
};

inline constexpr const char* kMetricsHeader =
    "epoch,lr,loss,train_err,test_err_paired,test_err_unpaired";

std::string metrics_csv_line(const MetricsRow& row);
std::string metrics_csv(const std::vector<MetricsRow>& rows);
/// BN runs: both statistics sources side by side.
std::string bn_stats_csv(const std::vector<MetricsRow>& rows, NormKind kind);

struct TrainConfig {
    NetworkConfig net;
    OptimConfig optim;
    std::uint64_t seed = 1;
    std::size_t sn_init_samples = 200;  // M: half covers, half stegos
    bool record_alt_bn = true;
    // Draw fresh test batches every epoch instead of one fixed composition.
    bool reshuffle_eval = false;
};

struct TrainState {
    Network<float> net;
    std::vector<std::vector<float>> velocity;
    bool stats_initialized = false;

    TrainState() = default;
    TrainState(const NetworkConfig& cfg, std::uint64_t seed);
    void reset_velocity();
};

using EpochCallback = std::function<void(const MetricsRow&, TrainState&)>;

/// Runs epochs net.epoch() .. optim.epochs-1. Each step: train-mode forward on a paired
/// batch, loss, backward, SGD, then the statistics EMA with rate equal to the current
/// learning rate. Shuffling uses derive_seed(seed, epoch), so a resumed run continues
/// exactly. Every epoch is evaluated on paired and unpaired test batches.
std::vector<MetricsRow> train_loop(TrainState& state, const PairSet& train, const PairSet& test,
                                   const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Mean loss of one batch without changing any state.
double batch_loss(Network<float>& net, const PairedBatch& batch);

/// Continues training a loaded state on a new dataset: epoch counter and momentum reset,
/// parameters and statistics kept.
std::vector<MetricsRow> transfer_finetune(TrainState& state, const PairSet& train,
                                          const PairSet& test, const TrainConfig& cfg,
                                          const EpochCallback& on_epoch = {});

/// Per-sample majority over an odd number of members' labels.
std::vector<int> ensemble_vote(const std::vector<std::vector<int>>& member_labels);
std::vector<int> ensemble_predict(const std::vector<Network<float>*>& members,
                                  const Tensor<float>& images);
/// Error of the ensemble on the same test batches evaluate() builds.
DetectionError evaluate_ensemble(const std::vector<Network<float>*>& members, const PairSet& test,
                                 std::size_t batch_size, Pairing pairing = Pairing::Paired);

/// Calls fn on every evaluation batch of the test set, in index order or permuted by order_seed.
void for_each_eval_batch(const PairSet& test, std::size_t batch_size, Pairing pairing,
                         const std::function<void(const PairedBatch&)>& fn,
                         std::optional<std::uint64_t> order_seed = std::nullopt);

struct MismatchMatrix {
    std::vector<std::string> train_tags;
    std::vector<std::string> test_tags;
    std::vector<std::vector<double>> pe;  // [train][test]

    std::string to_csv() const;
};

/// Row = training payload, column = test payload.
MismatchMatrix payload_mismatch_matrix(const std::vector<std::string>& tags,
                                       const std::vector<Network<float>*>& models,
                                       const std::vector<const PairSet*>& tests,
                                       std::size_t batch_size, Pairing pairing = Pairing::Paired);

}  // namespace snsteg
