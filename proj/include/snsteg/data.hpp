#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "snsteg/tensor.hpp"

namespace snsteg {

/// 8-bit grayscale image, row-major.
struct ImageGray {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    ImageGray() = default;
    ImageGray(std::size_t w, std::size_t h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(w * h, fill) {}

    std::uint8_t at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
    std::uint8_t& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
    bool operator==(const ImageGray&) const = default;
};

// Binary P5 with maxval 255 only. Comments (#...) are allowed between header tokens.
ImageGray decode_pgm(const std::string& bytes);
std::string encode_pgm(const ImageGray& image);
ImageGray read_pgm(const std::filesystem::path& path);
void write_pgm(const ImageGray& image, const std::filesystem::path& path);

/// Smoothed Gaussian noise field quantized to 0..255. The box width is smoothing
/// rounded to the nearest integer; width 1 leaves the noise white.
ImageGray synth_cover(std::uint64_t seed, std::size_t size, double smoothing);

/// Independent +-1 changes with probability `rate` per pixel; 0 only moves up, 255 only down.
ImageGray embed_pm1(const ImageGray& cover, double rate, std::uint64_t seed);

/// Counter-clockwise rotation by quarter_turns * 90 degrees. Square images only.
ImageGray rotate90(const ImageGray& image, int quarter_turns);

/// Lag-1 horizontal autocorrelation of pixel values.
double lag1_autocorrelation(const ImageGray& image);

/// Aligned covers and stegos: stegos[i] was made from covers[i].
struct PairSet {
    std::vector<ImageGray> covers;
    std::vector<ImageGray> stegos;
    std::vector<std::string> ids;

    std::size_t size() const { return covers.size(); }
    void push(ImageGray cover, ImageGray stego, std::string id);
};

/// Batch of N/2 covers followed by N/2 stegos (labels 0 then 1).
/// pair_index[i] names the cover that stego i was made from; cover_index[i] the i-th cover.
struct PairedBatch {
    Tensor<float> images;
    std::vector<int> labels;
    std::vector<std::size_t> cover_index;
    std::vector<std::size_t> pair_index;

    std::size_t half() const { return cover_index.size(); }
};

template <typename T>
Tensor<T> images_to_tensor(const std::vector<const ImageGray*>& images);

/// Covers at `indices` and their own stegos.
PairedBatch make_paired_batch(const PairSet& set, const std::vector<std::size_t>& indices);
/// Random paired batch of batch_size/2 distinct covers.
PairedBatch make_paired_batch(const PairSet& set, std::size_t batch_size, std::uint64_t seed);
/// Covers at `cover_indices`, stegos taken from `stego_sources`; the two lists must be disjoint.
PairedBatch make_unpaired_batch(const PairSet& set, const std::vector<std::size_t>& cover_indices,
                                const std::vector<std::size_t>& stego_sources);
/// Random unpaired batch: batch_size distinct covers, half used as covers, half supplying stegos.
PairedBatch make_unpaired_batch(const PairSet& set, std::size_t batch_size, std::uint64_t seed);

/// Rotations of every cover by 90, 180 and 270 degrees with freshly embedded stegos.
PairSet augment_rotations(const PairSet& set, double rate, std::uint64_t seed);

struct ManifestEntry {
    std::string path;     // relative to the manifest directory; empty for derived entries
    std::string split;    // train | test
    std::string role;     // cover | stego
    std::uint64_t seed = 0;
    std::string payload;  // "-" for covers, e.g. "pm1_0.4" for stegos
    std::string cover;    // cover identity shared by a cover and its stegos
    int rotation = 0;     // quarter turns applied to the cover before embedding

    bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::uint64_t seed = 0;

    std::vector<std::string> payloads() const;
    std::vector<std::string> covers(const std::string& split) const;
    std::uint64_t hash(const std::string& split) const;
    bool operator==(const DatasetManifest&) const = default;
};

void write_manifest(std::ostream& os, const DatasetManifest& manifest);
DatasetManifest read_manifest(std::istream& is);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Deterministic split of cover identities; every entry inherits the split of its cover.
DatasetManifest split_dataset(const std::vector<std::string>& cover_ids, double train_fraction,
                              std::uint64_t seed);

/// Adds rotated copies of every train cover and their stegos (re-embedded at load time).
/// Test entries are left untouched.
DatasetManifest augment_rotations(const DatasetManifest& manifest);

/// Scans <root>/cover/*.pgm and <root>/stego/<algo>_<payload>/*.pgm (filenames matched)
/// and splits by cover identity.
DatasetManifest ingest_stego_dir(const std::filesystem::path& root, double train_fraction,
                                 std::uint64_t seed);

/// Parses the embedding rate from a payload tag such as "pm1_0.4"; throws if none.
double payload_rate(const std::string& payload);

/// Loads covers of `split` with their stegos for `payload`. Rotated entries are rotated
/// and re-embedded with the rate parsed from the payload tag.
PairSet load_pairs(const DatasetManifest& manifest, const std::filesystem::path& base,
                   const std::string& split, const std::string& payload);

struct SynthConfig {
    std::size_t count = 512;
    std::size_t size = 64;
    double smoothing = 5.0;
    std::vector<double> rates{0.4};
    double train_fraction = 0.5;
    std::uint64_t seed = 7;
};

std::string payload_tag(double rate);

/// Writes covers, stegos and manifest.txt under `dir` in the ingestion layout.
DatasetManifest write_synth_dataset(const SynthConfig& cfg, const std::filesystem::path& dir);

/// In-memory synthetic pairs: cover k uses seed derive_seed(seed, k), the same for every rate.
PairSet synth_pairs(std::size_t first, std::size_t count, std::size_t size, double smoothing,
                    double rate, std::uint64_t seed);

}  // namespace snsteg
