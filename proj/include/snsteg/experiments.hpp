#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "snsteg/config.hpp"
#include "snsteg/normalization.hpp"
#include "snsteg/training.hpp"

namespace snsteg {

/// Mean and population standard deviation of a series over its last `window` entries.
struct WindowStats {
    double mean = 0.0;
    double std = 0.0;
};
WindowStats tail_stats(const std::vector<double>& series, std::size_t window);

struct TwinSummary {
    WindowStats paired;
    WindowStats unpaired;
    double gap = 0.0;  // paired mean - unpaired mean
};

struct Fig7Result {
    std::vector<MetricsRow> bn;
    std::vector<MetricsRow> sn;
    TwinSummary bn_summary;
    TwinSummary sn_summary;
    std::size_t window = 10;
    double seconds = 0.0;
};

struct Fig2Result {
    InterferenceReport report;
    std::size_t pairs = 0;
};

struct MismatchResult {
    MismatchMatrix matrix;
    std::vector<double> recorded_pe;  // each checkpoint's own test error at save time
    std::vector<std::filesystem::path> checkpoints;
};

struct AugEnsResult {
    double baseline_pe = 0.0;
    double augmented_pe = 0.0;
    double ensemble_pe = 0.0;
    std::vector<double> member_pe;
};

/// Experiment-specific defaults layered over default_run_config().
RunConfig experiment_defaults(const std::string& name);
const std::vector<std::string>& experiment_names();

/// Twin BN-batch / SN networks on one synthetic dataset, trained with equal seeds.
Fig7Result run_fig7(const RunConfig& cfg, const std::filesystem::path& out_dir);
/// Magnitudes of W(x - x') and Ws for random kernels on unpaired synthetic covers.
Fig2Result run_fig2(const RunConfig& cfg, const std::filesystem::path& out_dir);
/// One network per payload (lower payloads fine-tuned from the next higher one), then
/// every network on every payload's test set.
MismatchResult run_mismatch_payload(const RunConfig& cfg, const std::filesystem::path& out_dir);
/// Same matrix across external stego directories (see ingest_stego_dir); needs key data_root.
MismatchResult run_mismatch_algo(const RunConfig& cfg, const std::filesystem::path& out_dir);
/// Baseline, rotation-augmented, and a 5-member augmented ensemble on one test set.
AugEnsResult run_aug_ens(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// Dispatches by name, writes config.txt and summary.txt into out_dir, returns the summary.
std::string run_experiment(const std::string& name, const RunConfig& overrides,
                           const std::filesystem::path& out_dir);

}  // namespace snsteg
