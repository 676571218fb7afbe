#include "snsteg/normalization.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace snsteg {

namespace {

void require_channels(std::size_t got, std::size_t want, const char* what) {
    if (got != want)
        throw ShapeError(std::string(what) + ": " + std::to_string(got) + " channels vs " +
                         std::to_string(want));
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

template <typename T>
ChannelStats channel_stats(const Tensor<T>& input) {
    const Shape& s = input.shape();
    const std::size_t plane = s.plane();
    const double m = static_cast<double>(s.n * plane);
    ChannelStats st{std::vector<double>(s.c, 0.0), std::vector<double>(s.c, 0.0)};
    if (s.n == 0 || plane == 0) return st;
    for (std::size_t c = 0; c < s.c; ++c) {
        double acc = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* p = input.ptr() + (n * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
        }
        const double mean = acc / m;
        double sq = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* p = input.ptr() + (n * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = static_cast<double>(p[i]) - mean;
                sq += d * d;
            }
        }
        st.mean[c] = mean;
        st.std[c] = std::sqrt(sq / m);
    }
    return st;
}

template <typename T>
BNResult<T> bn_forward(const Tensor<T>& input, const BNParams<T>& params) {
    const Shape& s = input.shape();
    if (s.n == 0) throw ShapeError("bn_forward: empty batch");
    require_channels(s.c, params.channels(), "bn_forward");
    if (!(params.eps > 0.0)) throw ConfigError("bn_forward: eps must be positive");

    BNResult<T> r;
    r.saved.mode = params.mode;
    r.saved.inv_std.resize(s.c);
    std::vector<double> mean(s.c);
    if (params.mode == StatsSource::Batch) {
        r.saved.batch = channel_stats(input);
        for (std::size_t c = 0; c < s.c; ++c) {
            const double sd = r.saved.batch.std[c];
            mean[c] = r.saved.batch.mean[c];
            r.saved.inv_std[c] = 1.0 / std::sqrt(sd * sd + params.eps);
        }
    } else {
        for (std::size_t c = 0; c < s.c; ++c) {
            const double sd = static_cast<double>(params.running_std[c]);
            mean[c] = static_cast<double>(params.running_mean[c]);
            r.saved.inv_std[c] = 1.0 / std::sqrt(sd * sd + params.eps);
        }
    }

    const std::size_t plane = s.plane();
    r.saved.normalized = Tensor<T>(s);
    r.output = Tensor<T>(s);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t off = (n * s.c + c) * plane;
            const double g = static_cast<double>(params.gamma[c]);
            const double b = static_cast<double>(params.beta[c]);
            for (std::size_t i = 0; i < plane; ++i) {
                const double xh = (static_cast<double>(input[off + i]) - mean[c]) * r.saved.inv_std[c];
                r.saved.normalized[off + i] = static_cast<T>(xh);
                r.output[off + i] = static_cast<T>(g * xh + b);
            }
        }
    return r;
}

template <typename T>
BNGrads<T> bn_backward(const Tensor<T>& upstream, const BNSaved<T>& saved,
                       const BNParams<T>& params) {
    if (!saved.valid()) throw Error("bn_backward: no saved forward statistics");
    const Shape& s = saved.normalized.shape();
    require_same_shape(upstream.shape(), s, "bn_backward upstream");
    require_channels(s.c, params.channels(), "bn_backward");
    const std::size_t plane = s.plane();
    const double m = static_cast<double>(s.n * plane);

    BNGrads<T> g;
    g.input = Tensor<T>(s);
    g.gamma.assign(s.c, T(0));
    g.beta.assign(s.c, T(0));
    for (std::size_t c = 0; c < s.c; ++c) {
        double sum_up = 0.0;
        double sum_up_xh = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t off = (n * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double u = static_cast<double>(upstream[off + i]);
                sum_up += u;
                sum_up_xh += u * static_cast<double>(saved.normalized[off + i]);
            }
        }
        g.beta[c] = static_cast<T>(sum_up);
        g.gamma[c] = static_cast<T>(sum_up_xh);
        const double gamma = static_cast<double>(params.gamma[c]);
        const double k = gamma * saved.inv_std[c];
        for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t off = (n * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double u = static_cast<double>(upstream[off + i]);
                if (saved.mode == StatsSource::Batch) {
                    const double xh = static_cast<double>(saved.normalized[off + i]);
                    g.input[off + i] = static_cast<T>(k * (u - sum_up / m - xh * sum_up_xh / m));
                } else {
                    g.input[off + i] = static_cast<T>(k * u);
                }
            }
        }
    }
    return g;
}

template <typename T>
Tensor<T> sn_forward(const Tensor<T>& input, const NormStats<T>& stats) {
    if (!stats.initialized) throw Error("sn_forward: shared statistics are not initialized");
    const Shape& s = input.shape();
    require_channels(s.c, stats.channels(), "sn_forward");
    Tensor<T> out(s);
    const std::size_t plane = s.plane();
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c) {
            const T mu = stats.mean[c];
            const T denom = stats.std[c] + static_cast<T>(stats.eps);
            const std::size_t off = (n * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) out[off + i] = (input[off + i] - mu) / denom;
        }
    return out;
}

template <typename T>
Tensor<T> sn_backward(const Tensor<T>& upstream, const NormStats<T>& stats) {
    const Shape& s = upstream.shape();
    require_channels(s.c, stats.channels(), "sn_backward");
    Tensor<T> g(s);
    const std::size_t plane = s.plane();
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c) {
            const T denom = stats.std[c] + static_cast<T>(stats.eps);
            const std::size_t off = (n * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) g[off + i] = upstream[off + i] / denom;
        }
    return g;
}

template <typename T>
NormStats<T> sn_init_stats(std::span<const Tensor<T>> feature_maps, std::size_t m,
                           SigmaInit mode) {
    if (m == 0) throw ConfigError("sn_init_stats: M must be >= 1");
    std::size_t available = 0;
    std::size_t channels = 0;
    std::size_t plane = 0;
    for (const auto& t : feature_maps) {
        if (t.shape().n == 0) continue;
        if (available == 0) {
            channels = t.shape().c;
            plane = t.shape().plane();
        } else if (t.shape().c != channels || t.shape().plane() != plane) {
            throw ShapeError("sn_init_stats: inconsistent feature map shape " + t.shape().str());
        }
        available += t.shape().n;
    }
    if (available < m)
        throw ConfigError("sn_init_stats: need " + std::to_string(m) + " samples, have " +
                          std::to_string(available));
    if (plane == 0) throw ShapeError("sn_init_stats: empty feature maps");

    // Visit the first m samples in order.
    auto for_each_sample = [&](auto&& fn) {
        std::size_t seen = 0;
        for (const auto& t : feature_maps)
            for (std::size_t n = 0; n < t.shape().n && seen < m; ++n, ++seen) fn(t, n);
    };

    std::vector<double> mean(channels, 0.0);
    for_each_sample([&](const Tensor<T>& t, std::size_t n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const T* p = t.ptr() + (n * channels + c) * plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
            mean[c] += acc / static_cast<double>(plane);
        }
    });
    for (double& v : mean) v /= static_cast<double>(m);

    std::vector<double> second(channels, 0.0);
    for_each_sample([&](const Tensor<T>& t, std::size_t n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const T* p = t.ptr() + (n * channels + c) * plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = static_cast<double>(p[i]) - mean[c];
                acc += d * d;
            }
            second[c] += acc / static_cast<double>(plane);
        }
    });

    NormStats<T> st;
    st.mean.resize(channels);
    st.std.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        const double var = second[c] / static_cast<double>(m);
        st.mean[c] = static_cast<T>(mean[c]);
        st.std[c] = static_cast<T>(mode == SigmaInit::Deviation ? std::sqrt(var) : var);
    }
    st.initialized = true;
    return st;
}

template <typename T>
NormStats<T> sn_update_stats(const NormStats<T>& stats, std::span<const double> batch_mean,
                             std::span<const double> batch_std, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ConfigError("sn_update_stats: alpha " + fmt(alpha) + " outside [0,1]");
    require_channels(batch_mean.size(), stats.channels(), "sn_update_stats mean");
    require_channels(batch_std.size(), stats.channels(), "sn_update_stats std");
    NormStats<T> out = stats;
    for (std::size_t c = 0; c < stats.channels(); ++c) {
        out.mean[c] = static_cast<T>((1.0 - alpha) * static_cast<double>(stats.mean[c]) +
                                     alpha * batch_mean[c]);
        out.std[c] = static_cast<T>((1.0 - alpha) * static_cast<double>(stats.std[c]) +
                                    alpha * batch_std[c]);
    }
    return out;
}

std::string SeparationReport::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "channel,cover_mean,stego_mean,d_n,interference\n";
    for (std::size_t c = 0; c < channels.size(); ++c) {
        const auto& ch = channels[c];
        os << c << ',' << ch.cover_mean << ',' << ch.stego_mean << ',' << ch.margin << ','
           << ch.interference << '\n';
    }
    return os.str();
}

std::size_t Histogram::total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

std::string Histogram::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "bin_lo,bin_hi,count\n";
    const double w = bin_width();
    for (std::size_t i = 0; i < counts.size(); ++i)
        os << lo + w * static_cast<double>(i) << ',' << lo + w * static_cast<double>(i + 1) << ','
           << counts[i] << '\n';
    return os.str();
}

Histogram make_histogram(std::span<const double> values, double lo, double hi, std::size_t bins) {
    if (bins == 0 || !(hi > lo)) throw ConfigError("make_histogram: need bins >= 1 and hi > lo");
    Histogram h{lo, hi, std::vector<std::size_t>(bins, 0)};
    const double w = (hi - lo) / static_cast<double>(bins);
    for (double v : values) {
        if (v < lo || v > hi) continue;
        auto i = static_cast<std::size_t>((v - lo) / w);
        h.counts[std::min(i, bins - 1)] += 1;
    }
    return h;
}

template <typename T>
SeparationReport paired_separation_probe(const Tensor<T>& cover_out, const Tensor<T>& stego_out) {
    require_same_shape(cover_out.shape(), stego_out.shape(), "paired_separation_probe");
    const ChannelStats cover = channel_stats(cover_out);
    const ChannelStats stego = channel_stats(stego_out);
    SeparationReport r;
    r.channels.resize(cover_out.shape().c);
    for (std::size_t c = 0; c < r.channels.size(); ++c) {
        r.channels[c].cover_mean = cover.mean[c];
        r.channels[c].stego_mean = stego.mean[c];
        r.channels[c].margin = std::abs(stego.mean[c] - cover.mean[c]);
    }
    return r;
}

template <typename T>
InterferenceReport unpaired_interference_probe(const Tensor<T>& x, const Tensor<T>& x_prime,
                                               const Tensor<T>& s, const ConvKernels<T>& kernels,
                                               std::size_t bins) {
    require_same_shape(x.shape(), x_prime.shape(), "unpaired_interference_probe x'");
    require_same_shape(x.shape(), s.shape(), "unpaired_interference_probe s");
    const std::size_t pad = same_padding(kernels.kernel_h());

    Tensor<T> diff(x.shape());
    Tensor<T> stego(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        diff[i] = x[i] - x_prime[i];
        stego[i] = x_prime[i] + s[i];
    }
    ConvKernels<T> linear_part(kernels.weights, std::vector<T>(kernels.out_channels(), T(0)));
    const Tensor<T> w_diff = conv2d_forward(diff, linear_part, 1, pad);
    const Tensor<T> w_s = conv2d_forward(s, linear_part, 1, pad);

    InterferenceReport r;
    std::vector<double> vd(w_diff.size());
    std::vector<double> vs(w_s.size());
    double sd = 0.0;
    double ss = 0.0;
    double range = 0.0;
    for (std::size_t i = 0; i < vd.size(); ++i) {
        vd[i] = static_cast<double>(w_diff[i]);
        vs[i] = static_cast<double>(w_s[i]);
        sd += std::abs(vd[i]);
        ss += std::abs(vs[i]);
        range = std::max({range, std::abs(vd[i]), std::abs(vs[i])});
    }
    const double count = static_cast<double>(std::max<std::size_t>(vd.size(), 1));
    r.mean_abs_content_diff = sd / count;
    r.mean_abs_stego = ss / count;
    if (r.mean_abs_stego > 0.0)
        r.ratio = r.mean_abs_content_diff / r.mean_abs_stego;
    else
        r.ratio = r.mean_abs_content_diff > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    if (range == 0.0) range = 1.0;
    r.content_diff_hist = make_histogram(vd, -range, range, bins);
    r.stego_hist = make_histogram(vs, -range, range, bins);

    // Unpaired two-group batch {x, x' + s} through conv + BN(batch stats).
    const Tensor<T> cover_out = conv2d_forward(x, kernels, 1, pad);
    const Tensor<T> stego_out = conv2d_forward(stego, kernels, 1, pad);
    BNParams<T> bn(kernels.out_channels());
    const auto normed = bn_forward(concat_batch(cover_out, stego_out), bn);
    const std::size_t half = x.shape().n;
    r.separation = paired_separation_probe(slice_batch(normed.output, 0, half),
                                           slice_batch(normed.output, half, 2 * half));
    const ChannelStats dstats = channel_stats(w_diff);
    for (std::size_t c = 0; c < r.separation.channels.size(); ++c)
        r.separation.channels[c].interference = std::abs(dstats.mean[c]) * normed.saved.inv_std[c];
    return r;
}

std::vector<bool> fixed_stats_bias_check(std::span<const double> mu_fixed,
                                         std::span<const double> mu_batch,
                                         std::span<const double> margin) {
    if (mu_fixed.size() != mu_batch.size() || mu_fixed.size() != margin.size())
        throw ShapeError("fixed_stats_bias_check: channel counts differ");
    std::vector<bool> out(mu_fixed.size());
    for (std::size_t c = 0; c < out.size(); ++c)
        out[c] = std::abs(mu_fixed[c] - mu_batch[c]) > margin[c];
    return out;
}

#define SNSTEG_INSTANTIATE_NORM(T)                                                              \
    template ChannelStats channel_stats(const Tensor<T>&);                                     \
    template BNResult<T> bn_forward(const Tensor<T>&, const BNParams<T>&);                      \
    template BNGrads<T> bn_backward(const Tensor<T>&, const BNSaved<T>&, const BNParams<T>&);   \
    template Tensor<T> sn_forward(const Tensor<T>&, const NormStats<T>&);                       \
    template Tensor<T> sn_backward(const Tensor<T>&, const NormStats<T>&);                      \
    template NormStats<T> sn_init_stats(std::span<const Tensor<T>>, std::size_t, SigmaInit);    \
    template NormStats<T> sn_update_stats(const NormStats<T>&, std::span<const double>,         \
                                          std::span<const double>, double);                     \
    template SeparationReport paired_separation_probe(const Tensor<T>&, const Tensor<T>&);      \
    template InterferenceReport unpaired_interference_probe(                                    \
        const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvKernels<T>&, std::size_t);

SNSTEG_INSTANTIATE_NORM(float)
SNSTEG_INSTANTIATE_NORM(double)

}  // namespace snsteg
