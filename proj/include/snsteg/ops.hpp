#pragma once

// Differentiable layer primitives with hand-written backward passes.
//
// Convolution follows the cross-correlation convention (no kernel flip):
//   out[n,o,y,x] = b[o] + sum_{i,u,v} w[o,i,u,v] * in[n,i,y*s+u-p, x*s+v-p]
// with zero padding outside the input.

#include <cstddef>
#include <span>
#include <vector>

#include "snsteg/tensor.hpp"

namespace snsteg {

template <typename T>
struct ConvKernels {
    Tensor<T> weights;  // (outC, inC, kH, kW)
    std::vector<T> bias;  // outC

    ConvKernels() = default;
    ConvKernels(std::size_t out_c, std::size_t in_c, std::size_t kh, std::size_t kw);
    ConvKernels(Tensor<T> w, std::vector<T> b);

    std::size_t out_channels() const { return weights.shape().n; }
    std::size_t in_channels() const { return weights.shape().c; }
    std::size_t kernel_h() const { return weights.shape().h; }
    std::size_t kernel_w() const { return weights.shape().w; }
};

template <typename T>
struct ConvGrads {
    Tensor<T> input;    // empty when not requested
    Tensor<T> weights;
    std::vector<T> bias;
};

/// Same-padding amount for an odd kernel.
inline std::size_t same_padding(std::size_t k) { return k / 2; }

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding);

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvKernels<T>& kernels,
                         std::size_t stride, std::size_t padding);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& upstream, const Tensor<T>& input,
                             const ConvKernels<T>& kernels, std::size_t stride,
                             std::size_t padding, bool want_input_grad = true);

/// Average pooling with zero padding; every window divides by window*window.
template <typename T>
Tensor<T> avgpool_forward(const Tensor<T>& input, std::size_t window, std::size_t stride,
                          std::size_t padding = 0);

template <typename T>
Tensor<T> avgpool_backward(const Tensor<T>& upstream, const Shape& input_shape,
                           std::size_t window, std::size_t stride, std::size_t padding = 0);

template <typename T>
Tensor<T> global_avgpool(const Tensor<T>& input);

template <typename T>
Tensor<T> global_avgpool_backward(const Tensor<T>& upstream, const Shape& input_shape);

/// x * H(x) with H(0) = 1.
template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input);

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& upstream, const Tensor<T>& input);

template <typename T>
struct LinearParams {
    Tensor<T> weights;  // (K, D, 1, 1)
    std::vector<T> bias;  // K

    LinearParams() = default;
    LinearParams(std::size_t k, std::size_t d);
    std::size_t outputs() const { return weights.shape().n; }
    std::size_t inputs() const { return weights.shape().c; }
};

template <typename T>
struct LinearGrads {
    Tensor<T> input;
    Tensor<T> weights;
    std::vector<T> bias;
};

/// Each sample is flattened to D = C*H*W; output has shape (N, K, 1, 1).
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const LinearParams<T>& params);

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& upstream, const Tensor<T>& input,
                               const LinearParams<T>& params);

template <typename T>
struct LossResult {
    double loss = 0.0;
    Tensor<T> grad;  // d(mean loss)/d(logits)
};

/// Mean softmax cross-entropy over the batch. logits: (N, K, 1, 1).
template <typename T>
LossResult<T> softmax_loss(const Tensor<T>& logits, std::span<const int> labels);

/// Row-wise softmax of (N, K, 1, 1) logits, max-subtracted.
template <typename T>
std::vector<double> softmax_rows(const Tensor<T>& logits);

}  // namespace snsteg
