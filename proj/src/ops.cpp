#include "snsteg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gemm.hpp"

namespace snsteg {

namespace {

// Output columns [lo, hi) whose input column x*stride + v - pad lies inside [0, w).
inline void valid_range(std::size_t out, std::size_t in, std::size_t stride, std::size_t off,
                        std::size_t pad, std::size_t& lo, std::size_t& hi) {
    lo = off >= pad ? 0 : (pad - off + stride - 1) / stride;
    // largest x with x*stride + off - pad <= in - 1
    const std::size_t lim = in + pad;
    hi = lim > off ? std::min(out, (lim - off - 1) / stride + 1) : 0;
    if (hi < lo) hi = lo;
}

// Batched im2col: cols is (inC*kH*kW) x (N*outH*outW), zero padded.
template <typename T>
void im2col(const Tensor<T>& input, std::size_t kh, std::size_t kw, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow, std::vector<T>& cols) {
    const Shape& s = input.shape();
    const std::size_t plane = oh * ow;
    const std::size_t ncols = s.n * plane;
    cols.resize(s.c * kh * kw * ncols);
    for (std::size_t ci = 0; ci < s.c; ++ci) {
        for (std::size_t u = 0; u < kh; ++u) {
            std::size_t ylo = 0;
            std::size_t yhi = 0;
            valid_range(oh, s.h, stride, u, pad, ylo, yhi);
            for (std::size_t v = 0; v < kw; ++v) {
                std::size_t xlo = 0;
                std::size_t xhi = 0;
                valid_range(ow, s.w, stride, v, pad, xlo, xhi);
                T* row = cols.data() + ((ci * kh + u) * kw + v) * ncols;
                for (std::size_t n = 0; n < s.n; ++n) {
                    const T* src = input.ptr() + (n * s.c + ci) * s.h * s.w;
                    T* dst = row + n * plane;
                    std::fill(dst, dst + ylo * ow, T(0));
                    for (std::size_t y = ylo; y < yhi; ++y) {
                        const T* srow = src + (y * stride + u - pad) * s.w;
                        T* drow = dst + y * ow;
                        std::fill(drow, drow + xlo, T(0));
                        if (stride == 1) {
                            std::copy(srow + (xlo + v - pad), srow + (xhi + v - pad), drow + xlo);
                        } else {
                            for (std::size_t x = xlo; x < xhi; ++x) drow[x] = srow[x * stride + v - pad];
                        }
                        std::fill(drow + xhi, drow + ow, T(0));
                    }
                    std::fill(dst + yhi * ow, dst + plane, T(0));
                }
            }
        }
    }
}

template <typename T>
void col2im(const std::vector<T>& cols, const Shape& s, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
            Tensor<T>& out) {
    const std::size_t plane = oh * ow;
    const std::size_t ncols = s.n * plane;
    out = Tensor<T>(s);
    for (std::size_t ci = 0; ci < s.c; ++ci) {
        for (std::size_t u = 0; u < kh; ++u) {
            std::size_t ylo = 0;
            std::size_t yhi = 0;
            valid_range(oh, s.h, stride, u, pad, ylo, yhi);
            for (std::size_t v = 0; v < kw; ++v) {
                std::size_t xlo = 0;
                std::size_t xhi = 0;
                valid_range(ow, s.w, stride, v, pad, xlo, xhi);
                const T* row = cols.data() + ((ci * kh + u) * kw + v) * ncols;
                for (std::size_t n = 0; n < s.n; ++n) {
                    T* dst = out.ptr() + (n * s.c + ci) * s.h * s.w;
                    const T* src = row + n * plane;
                    for (std::size_t y = ylo; y < yhi; ++y) {
                        T* drow = dst + (y * stride + u - pad) * s.w;
                        const T* srow = src + y * ow;
                        for (std::size_t x = xlo; x < xhi; ++x) drow[x * stride + v - pad] += srow[x];
                    }
                }
            }
        }
    }
}

void check_kernel_odd(std::size_t kh, std::size_t kw) {
    if (kh % 2 == 0 || kw % 2 == 0)
        throw ShapeError("kernel extent must be odd, got " + std::to_string(kh) + "x" +
                         std::to_string(kw));
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                            std::size_t padding) {
    if (stride == 0) throw ShapeError("stride must be >= 1");
    if (in + 2 * padding < k)
        throw ShapeError("window " + std::to_string(k) + " exceeds padded extent " +
                         std::to_string(in + 2 * padding));
    return (in + 2 * padding - k) / stride + 1;
}

template <typename T>
ConvKernels<T>::ConvKernels(std::size_t out_c, std::size_t in_c, std::size_t kh, std::size_t kw)
    : weights(Shape{out_c, in_c, kh, kw}), bias(out_c, T(0)) {
    check_kernel_odd(kh, kw);
}

template <typename T>
ConvKernels<T>::ConvKernels(Tensor<T> w, std::vector<T> b)
    : weights(std::move(w)), bias(std::move(b)) {
    check_kernel_odd(weights.shape().h, weights.shape().w);
    if (bias.size() != weights.shape().n)
        throw ShapeError("conv bias length " + std::to_string(bias.size()) +
                         " does not match kernels " + weights.shape().str());
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvKernels<T>& kernels,
                         std::size_t stride, std::size_t padding) {
    const Shape& s = input.shape();
    const Shape& ks = kernels.weights.shape();
    if (s.c != ks.c)
        throw ShapeError("conv2d_forward: input " + s.str() + " vs kernels " + ks.str());
    const std::size_t oh = conv_out_extent(s.h, ks.h, stride, padding);
    const std::size_t ow = conv_out_extent(s.w, ks.w, stride, padding);
    const std::size_t plane = oh * ow;
    const std::size_t ncols = s.n * plane;
    const std::size_t kdim = ks.c * ks.h * ks.w;

    std::vector<T> cols;
    im2col(input, ks.h, ks.w, stride, padding, oh, ow, cols);
    std::vector<T> prod(ks.n * ncols);
    detail::gemm(false, false, ks.n, ncols, kdim, T(1), kernels.weights.ptr(), kdim, cols.data(),
                 ncols, T(0), prod.data(), ncols);

    Tensor<T> out(Shape{s.n, ks.n, oh, ow});
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t o = 0; o < ks.n; ++o) {
            const T* src = prod.data() + o * ncols + n * plane;
            T* dst = out.ptr() + (n * ks.n + o) * plane;
            const T b = kernels.bias[o];
            for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
        }
    return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& upstream, const Tensor<T>& input,
                             const ConvKernels<T>& kernels, std::size_t stride,
                             std::size_t padding, bool want_input_grad) {
    const Shape& s = input.shape();
    const Shape& ks = kernels.weights.shape();
    if (s.c != ks.c)
        throw ShapeError("conv2d_backward: input " + s.str() + " vs kernels " + ks.str());
    const std::size_t oh = conv_out_extent(s.h, ks.h, stride, padding);
    const std::size_t ow = conv_out_extent(s.w, ks.w, stride, padding);
    require_same_shape(upstream.shape(), Shape{s.n, ks.n, oh, ow}, "conv2d_backward upstream");
    const std::size_t plane = oh * ow;
    const std::size_t ncols = s.n * plane;
    const std::size_t kdim = ks.c * ks.h * ks.w;

    // Upstream rearranged to (outC, N*plane).
    std::vector<T> up(ks.n * ncols);
    ConvGrads<T> g;
    g.bias.assign(ks.n, T(0));
    for (std::size_t o = 0; o < ks.n; ++o) {
        double acc = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* src = upstream.ptr() + (n * ks.n + o) * plane;
            T* dst = up.data() + o * ncols + n * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                dst[p] = src[p];
                acc += static_cast<double>(src[p]);
            }
        }
        g.bias[o] = static_cast<T>(acc);
    }

    std::vector<T> cols;
    im2col(input, ks.h, ks.w, stride, padding, oh, ow, cols);
    g.weights = Tensor<T>(ks);
    detail::gemm(false, true, ks.n, kdim, ncols, T(1), up.data(), ncols, cols.data(), ncols, T(0),
                 g.weights.ptr(), kdim);

    if (want_input_grad) {
        std::vector<T> gcols(kdim * ncols);
        detail::gemm(true, false, kdim, ncols, ks.n, T(1), kernels.weights.ptr(), kdim, up.data(),
                     ncols, T(0), gcols.data(), ncols);
        col2im(gcols, s, ks.h, ks.w, stride, padding, oh, ow, g.input);
    }
    return g;
}

template <typename T>
Tensor<T> avgpool_forward(const Tensor<T>& input, std::size_t window, std::size_t stride,
                          std::size_t padding) {
    if (window < 1) throw ShapeError("avgpool window must be >= 1");
    const Shape& s = input.shape();
    const std::size_t oh = conv_out_extent(s.h, window, stride, padding);
    const std::size_t ow = conv_out_extent(s.w, window, stride, padding);
    Tensor<T> out(Shape{s.n, s.c, oh, ow});
    const double inv = 1.0 / static_cast<double>(window * window);
    const auto ih = static_cast<std::ptrdiff_t>(s.h);
    const auto iw = static_cast<std::ptrdiff_t>(s.w);
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
        const T* src = input.ptr() + nc * s.h * s.w;
        T* dst = out.ptr() + nc * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
            const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(y * stride) -
                                      static_cast<std::ptrdiff_t>(padding);
            for (std::size_t x = 0; x < ow; ++x) {
                const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(x * stride) -
                                          static_cast<std::ptrdiff_t>(padding);
                double acc = 0.0;
                for (std::ptrdiff_t yy = std::max<std::ptrdiff_t>(y0, 0);
                     yy < std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(window), ih);
                     ++yy)
                    for (std::ptrdiff_t xx = std::max<std::ptrdiff_t>(x0, 0);
                         xx < std::min<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(window), iw);
                         ++xx)
                        acc += static_cast<double>(src[yy * iw + xx]);
                dst[y * ow + x] = static_cast<T>(acc * inv);
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> avgpool_backward(const Tensor<T>& upstream, const Shape& input_shape,
                           std::size_t window, std::size_t stride, std::size_t padding) {
    if (window < 1) throw ShapeError("avgpool window must be >= 1");
    const Shape& s = input_shape;
    const std::size_t oh = conv_out_extent(s.h, window, stride, padding);
    const std::size_t ow = conv_out_extent(s.w, window, stride, padding);
    require_same_shape(upstream.shape(), Shape{s.n, s.c, oh, ow}, "avgpool_backward upstream");
    Tensor<T> grad(s);
    const T inv = static_cast<T>(1.0 / static_cast<double>(window * window));
    const auto ih = static_cast<std::ptrdiff_t>(s.h);
    const auto iw = static_cast<std::ptrdiff_t>(s.w);
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
        const T* src = upstream.ptr() + nc * oh * ow;
        T* dst = grad.ptr() + nc * s.h * s.w;
        for (std::size_t y = 0; y < oh; ++y) {
            const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(y * stride) -
                                      static_cast<std::ptrdiff_t>(padding);
            for (std::size_t x = 0; x < ow; ++x) {
                const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(x * stride) -
                                          static_cast<std::ptrdiff_t>(padding);
                const T g = src[y * ow + x] * inv;
                for (std::ptrdiff_t yy = std::max<std::ptrdiff_t>(y0, 0);
                     yy < std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(window), ih);
                     ++yy)
                    for (std::ptrdiff_t xx = std::max<std::ptrdiff_t>(x0, 0);
                         xx < std::min<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(window), iw);
                         ++xx)
                        dst[yy * iw + xx] += g;
            }
        }
    }
    return grad;
}

template <typename T>
Tensor<T> global_avgpool(const Tensor<T>& input) {
    const Shape& s = input.shape();
    if (s.h == 0 || s.w == 0) throw ShapeError("global_avgpool: empty spatial extent " + s.str());
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    const std::size_t plane = s.plane();
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
        double acc = 0.0;
        const T* src = input.ptr() + nc * plane;
        for (std::size_t p = 0; p < plane; ++p) acc += static_cast<double>(src[p]);
        out[nc] = static_cast<T>(acc / static_cast<double>(plane));
    }
    return out;
}

template <typename T>
Tensor<T> global_avgpool_backward(const Tensor<T>& upstream, const Shape& input_shape) {
    const Shape& s = input_shape;
    require_same_shape(upstream.shape(), Shape{s.n, s.c, 1, 1}, "global_avgpool_backward");
    Tensor<T> grad(s);
    const std::size_t plane = s.plane();
    const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
        const T g = upstream[nc] * inv;
        std::fill_n(grad.ptr() + nc * plane, plane, g);
    }
    return grad;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] >= T(0) ? input[i] : T(0);
    return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& upstream, const Tensor<T>& input) {
    require_same_shape(upstream.shape(), input.shape(), "relu_backward");
    Tensor<T> grad(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i)
        grad[i] = input[i] >= T(0) ? upstream[i] : T(0);
    return grad;
}

template <typename T>
LinearParams<T>::LinearParams(std::size_t k, std::size_t d)
    : weights(Shape{k, d, 1, 1}), bias(k, T(0)) {}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const LinearParams<T>& params) {
    const Shape& s = input.shape();
    const std::size_t d = s.per_sample();
    const std::size_t k = params.outputs();
    if (d != params.inputs() || params.bias.size() != k)
        throw ShapeError("linear_forward: input " + s.str() + " vs weights " +
                         params.weights.shape().str());
    Tensor<T> out(Shape{s.n, k, 1, 1});
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t j = 0; j < k; ++j) {
            double acc = static_cast<double>(params.bias[j]);
            const T* x = input.ptr() + n * d;
            const T* w = params.weights.ptr() + j * d;
            for (std::size_t i = 0; i < d; ++i)
                acc += static_cast<double>(w[i]) * static_cast<double>(x[i]);
            out[n * k + j] = static_cast<T>(acc);
        }
    return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& upstream, const Tensor<T>& input,
                               const LinearParams<T>& params) {
    const Shape& s = input.shape();
    const std::size_t d = s.per_sample();
    const std::size_t k = params.outputs();
    if (d != params.inputs())
        throw ShapeError("linear_backward: input " + s.str() + " vs weights " +
                         params.weights.shape().str());
    require_same_shape(upstream.shape(), Shape{s.n, k, 1, 1}, "linear_backward upstream");
    LinearGrads<T> g;
    g.input = Tensor<T>(s);
    g.weights = Tensor<T>(params.weights.shape());
    g.bias.assign(k, T(0));
    for (std::size_t j = 0; j < k; ++j) {
        double bacc = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) bacc += static_cast<double>(upstream[n * k + j]);
        g.bias[j] = static_cast<T>(bacc);
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            for (std::size_t n = 0; n < s.n; ++n)
                acc += static_cast<double>(upstream[n * k + j]) *
                       static_cast<double>(input[n * d + i]);
            g.weights[j * d + i] = static_cast<T>(acc);
        }
    }
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j)
                acc += static_cast<double>(upstream[n * k + j]) *
                       static_cast<double>(params.weights[j * d + i]);
            g.input[n * d + i] = static_cast<T>(acc);
        }
    return g;
}

template <typename T>
std::vector<double> softmax_rows(const Tensor<T>& logits) {
    const std::size_t n = logits.shape().n;
    const std::size_t k = logits.shape().per_sample();
    std::vector<double> prob(n * k);
    for (std::size_t r = 0; r < n; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[r * k + j]));
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            prob[r * k + j] = std::exp(static_cast<double>(logits[r * k + j]) - mx);
            z += prob[r * k + j];
        }
        for (std::size_t j = 0; j < k; ++j) prob[r * k + j] /= z;
    }
    return prob;
}

template <typename T>
LossResult<T> softmax_loss(const Tensor<T>& logits, std::span<const int> labels) {
    const std::size_t n = logits.shape().n;
    const std::size_t k = logits.shape().per_sample();
    if (labels.size() != n)
        throw ShapeError("softmax_loss: " + std::to_string(labels.size()) + " labels for logits " +
                         logits.shape().str());
    if (n == 0) throw ShapeError("softmax_loss: empty batch");
    LossResult<T> r;
    r.grad = Tensor<T>(logits.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw Error("softmax_loss: label " + std::to_string(y) + " outside [0," +
                        std::to_string(k) + ")");
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[i * k + j]));
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(logits[i * k + j]) - mx);
        const double shifted = static_cast<double>(logits[i * k + static_cast<std::size_t>(y)]) - mx;
        if (shifted == 0.0) {
            // true class holds the max: log1p keeps saturated losses accurate
            double rest = 0.0;
            for (std::size_t j = 0; j < k; ++j)
                if (j != static_cast<std::size_t>(y))
                    rest += std::exp(static_cast<double>(logits[i * k + j]) - mx);
            total += std::log1p(rest);
        } else {
            total += std::log(z) - shifted;
        }
        for (std::size_t j = 0; j < k; ++j) {
            const double p = std::exp(static_cast<double>(logits[i * k + j]) - mx) / z;
            const double onehot = (j == static_cast<std::size_t>(y)) ? 1.0 : 0.0;
            r.grad[i * k + j] = static_cast<T>((p - onehot) / static_cast<double>(n));
        }
    }
    r.loss = total / static_cast<double>(n);
    return r;
}

#define SNSTEG_INSTANTIATE_OPS(T)                                                                \
    template struct ConvKernels<T>;                                                              \
    template struct LinearParams<T>;                                                             \
    template Tensor<T> conv2d_forward(const Tensor<T>&, const ConvKernels<T>&, std::size_t,      \
                                      std::size_t);                                              \
    template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&,                    \
                                          const ConvKernels<T>&, std::size_t, std::size_t, bool); \
    template Tensor<T> avgpool_forward(const Tensor<T>&, std::size_t, std::size_t, std::size_t); \
    template Tensor<T> avgpool_backward(const Tensor<T>&, const Shape&, std::size_t,             \
                                        std::size_t, std::size_t);                               \
    template Tensor<T> global_avgpool(const Tensor<T>&);                                         \
    template Tensor<T> global_avgpool_backward(const Tensor<T>&, const Shape&);                  \
    template Tensor<T> relu_forward(const Tensor<T>&);                                           \
    template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> linear_forward(const Tensor<T>&, const LinearParams<T>&);                 \
    template LinearGrads<T> linear_backward(const Tensor<T>&, const Tensor<T>&,                  \
                                            const LinearParams<T>&);                             \
    template LossResult<T> softmax_loss(const Tensor<T>&, std::span<const int>);                 \
    template std::vector<double> softmax_rows(const Tensor<T>&);

SNSTEG_INSTANTIATE_OPS(float)
SNSTEG_INSTANTIATE_OPS(double)

}  // namespace snsteg
