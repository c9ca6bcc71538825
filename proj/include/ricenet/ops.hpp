#pragma once

// Forward and backward kernels for every layer kind. All image-like tensors
// use NCHW layout: [batch, channels, height, width].

#include <cstddef>
#include <vector>

#include "ricenet/tensor.hpp"

namespace ricenet {

enum class Padding { valid, same };

struct ConvSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_h = 3;
    std::size_t kernel_w = 3;
    std::size_t stride = 1;
    Padding padding = Padding::valid;

    bool operator==(const ConvSpec&) const = default;
};

struct PoolSpec {
    std::size_t window_h = 2;
    std::size_t window_w = 2;
    std::size_t stride = 2;

    bool operator==(const PoolSpec&) const = default;
};

struct DenseSpec {
    std::size_t in_features = 1;
    std::size_t out_features = 1;

    bool operator==(const DenseSpec&) const = default;
};

/// Resolved padding and output geometry of a convolution over an h x w input.
struct ConvGeometry {
    std::size_t out_h;
    std::size_t out_w;
    std::size_t pad_top;
    std::size_t pad_left;
};

/// `same` pads so that out = ceil(in / stride); an odd total goes to bottom/right.
ConvGeometry conv_geometry(const ConvSpec& spec, std::size_t in_h, std::size_t in_w);

template <typename T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> kernel;
    Tensor<T> bias;
};

// out[b,o,y,x] = bias[o] + sum_{c,i,j} in[b,c,y*s+i-pt,x*s+j-pl] * kernel[o,c,i,j]
// (cross-correlation; out-of-range reads are zero padding).
template <typename T>
Tensor<T> conv2d_forward_naive(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                               const ConvSpec& spec);

/// Same result as the naive loop, computed as kernel-matrix x im2col-matrix per batch item.
template <typename T>
Tensor<T> conv2d_forward_im2col(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                                const ConvSpec& spec);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const ConvSpec& spec,
                             const Tensor<T>& grad_out);

template <typename T>
struct PoolResult {
    Tensor<T> output;
    /// Flat input offset of the selected maximum, one per output element.
    std::vector<std::size_t> argmax;
};

/// Patch-wise maximum. Ties resolve to the first maximum in row-major window order.
template <typename T>
PoolResult<T> maxpool_forward(const Tensor<T>& input, const PoolSpec& spec);

template <typename T>
Tensor<T> maxpool_backward(const std::vector<std::size_t>& argmax, const Tensor<T>& grad_out,
                           const Shape& input_shape);

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct DenseGrads {
    Tensor<T> input;
    Tensor<T> weight;
    Tensor<T> bias;
};

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

/// Passes grad_out where input > 0; exactly 0 elsewhere (including input == 0).
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

/// Row-wise softmax over [batch, n] with max-shift.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

/// Vector-Jacobian product of softmax given its output.
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& probabilities, const Tensor<T>& grad_probabilities);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape);

}  // namespace ricenet
