#include "snsteg/preprocessing.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>

namespace snsteg {

namespace {

constexpr std::size_t K = kBankKernelSize;
using Grid = std::array<double, K * K>;

Grid rotate90(const Grid& g) {
    Grid out{};
    for (std::size_t r = 0; r < K; ++r)
        for (std::size_t c = 0; c < K; ++c) out[r * K + c] = g[(K - 1 - c) * K + r];
    return out;
}

Grid scaled(Grid g, double divisor) {
    for (double& v : g) v /= divisor;
    return g;
}

// Places a small odd kernel at the center of a 5x5 grid.
Grid embed3(const std::array<double, 9>& k) {
    Grid g{};
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) g[(r + 1) * K + c + 1] = k[r * 3 + c];
    return g;
}

}  // namespace

double NamedKernel::sum() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
}

template <typename T>
ConvKernels<T> FilterBank::as_conv() const {
    ConvKernels<T> k(kernels.size(), 1, K, K);
    for (std::size_t i = 0; i < kernels.size(); ++i)
        for (std::size_t j = 0; j < K * K; ++j)
            k.weights[i * K * K + j] = static_cast<T>(kernels[i].values[j]);
    return k;
}

std::uint64_t FilterBank::checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& k : kernels)
        for (double v : k.values) {
            h ^= std::bit_cast<std::uint64_t>(v);
            h *= 1099511628211ull;
        }
    return h;
}

FilterBank build_default_bank() {
    FilterBank bank;
    const Grid kv = {-1, 2,  -2, 2,  -1,  //
                     2,  -6, 8,  -6, 2,   //
                     -2, 8,  -12, 8, -2,  //
                     2,  -6, 8,  -6, 2,   //
                     -1, 2,  -2, 2,  -1};
    bank.kernels.push_back({"KV", scaled(kv, 12.0)});

    Grid edge = embed3({-1, 2, -1, 2, -4, 2, 0, 0, 0});
    for (int r = 0; r < 4; ++r) {
        bank.kernels.push_back({"EDGE3x3_r" + std::to_string(r * 90), scaled(edge, 4.0)});
        edge = rotate90(edge);
    }

    const std::array<std::pair<const char*, std::array<double, 9>>, 4> second = {{
        {"S2_horizontal", {0, 0, 0, 1, -2, 1, 0, 0, 0}},
        {"S2_vertical", {0, 1, 0, 0, -2, 0, 0, 1, 0}},
        {"S2_diagonal", {1, 0, 0, 0, -2, 0, 0, 0, 1}},
        {"S2_antidiagonal", {0, 0, 1, 0, -2, 0, 1, 0, 0}},
    }};
    for (const auto& [name, k] : second) bank.kernels.push_back({name, scaled(embed3(k), 2.0)});

    Grid third{};
    third[2 * K + 1] = 1;
    third[2 * K + 2] = -3;
    third[2 * K + 3] = 3;
    third[2 * K + 4] = -1;
    for (int r = 0; r < 4; ++r) {
        bank.kernels.push_back({"S3_r" + std::to_string(r * 90), scaled(third, 3.0)});
        third = rotate90(third);
    }
    return bank;
}

FilterBank bank_by_id(const std::string& id) {
    if (id == "srm13") return build_default_bank();
    throw ConfigError("unknown filter bank id '" + id + "'");
}

void write_bank(std::ostream& os, const FilterBank& bank) {
    std::ostringstream buf;
    buf.precision(17);
    buf << "bank " << bank.id << ' ' << bank.kernels.size() << ' '
        << (bank.trainable ? "trainable" : "fixed") << '\n';
    for (const auto& k : bank.kernels) {
        buf << "kernel " << k.name << ' ' << K << ' ' << K << '\n';
        for (std::size_t r = 0; r < K; ++r) {
            for (std::size_t c = 0; c < K; ++c) buf << (c ? " " : "") << k.at(r, c);
            buf << '\n';
        }
    }
    os << buf.str();
}

FilterBank read_bank(std::istream& is) {
    FilterBank bank;
    std::string tag;
    std::size_t count = 0;
    std::string mode;
    if (!(is >> tag >> bank.id >> count >> mode) || tag != "bank")
        throw FormatError("filter bank: missing 'bank' header");
    bank.trainable = (mode == "trainable");
    for (std::size_t i = 0; i < count; ++i) {
        NamedKernel k;
        std::size_t rows = 0;
        std::size_t cols = 0;
        if (!(is >> tag >> k.name >> rows >> cols) || tag != "kernel")
            throw FormatError("filter bank: missing 'kernel' header for entry " + std::to_string(i));
        if (rows != K || cols != K)
            throw FormatError("filter bank: kernel " + k.name + " must be 5x5");
        for (double& v : k.values)
            if (!(is >> v)) throw FormatError("filter bank: truncated values in " + k.name);
        bank.kernels.push_back(std::move(k));
    }
    return bank;
}

template <typename T>
Tensor<T> hpf_forward(const Tensor<T>& image, const FilterBank& bank) {
    if (image.shape().c != 1)
        throw ShapeError("hpf_forward: expects single-channel input, got " + image.shape().str());
    return conv2d_forward(image, bank.as_conv<T>(), 1, K / 2);
}

template <typename T>
Tensor<T> truncate_forward(const Tensor<T>& input, const TruncationConfig& cfg) {
    if (!(cfg.threshold > 0.0)) throw ConfigError("truncation threshold must be positive");
    const T t = static_cast<T>(cfg.threshold);
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = std::clamp(input[i], -t, t);
    return out;
}

template <typename T>
Tensor<T> truncate_backward(const Tensor<T>& upstream, const Tensor<T>& input,
                            const TruncationConfig& cfg) {
    require_same_shape(upstream.shape(), input.shape(), "truncate_backward");
    const T t = static_cast<T>(cfg.threshold);
    Tensor<T> g(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i)
        g[i] = std::abs(input[i]) <= t ? upstream[i] : T(0);
    return g;
}

template ConvKernels<float> FilterBank::as_conv<float>() const;
template ConvKernels<double> FilterBank::as_conv<double>() const;
template Tensor<float> hpf_forward(const Tensor<float>&, const FilterBank&);
template Tensor<double> hpf_forward(const Tensor<double>&, const FilterBank&);
template Tensor<float> truncate_forward(const Tensor<float>&, const TruncationConfig&);
template Tensor<double> truncate_forward(const Tensor<double>&, const TruncationConfig&);
template Tensor<float> truncate_backward(const Tensor<float>&, const Tensor<float>&,
                                         const TruncationConfig&);
template Tensor<double> truncate_backward(const Tensor<double>&, const Tensor<double>&,
                                          const TruncationConfig&);

}  // namespace snsteg
