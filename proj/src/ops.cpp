#include "ricenet/ops.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace ricenet {

ConvGeometry conv_geometry(const ConvSpec& spec, std::size_t in_h, std::size_t in_w) {
    if (spec.stride == 0) throw ShapeError("convolution stride must be >= 1");
    if (spec.padding == Padding::valid) {
        if (in_h < spec.kernel_h || in_w < spec.kernel_w) {
            throw ShapeError(fmt::format("kernel {}x{} larger than input {}x{}", spec.kernel_h, spec.kernel_w, in_h,
                                         in_w));
        }
        return {(in_h - spec.kernel_h) / spec.stride + 1, (in_w - spec.kernel_w) / spec.stride + 1, 0, 0};
    }
    const std::size_t out_h = (in_h + spec.stride - 1) / spec.stride;
    const std::size_t out_w = (in_w + spec.stride - 1) / spec.stride;
    const std::size_t need_h = (out_h - 1) * spec.stride + spec.kernel_h;
    const std::size_t need_w = (out_w - 1) * spec.stride + spec.kernel_w;
    const std::size_t pad_h = need_h > in_h ? need_h - in_h : 0;
    const std::size_t pad_w = need_w > in_w ? need_w - in_w : 0;
    return {out_h, out_w, pad_h / 2, pad_w / 2};
}

namespace {

template <typename T>
void check_conv_operands(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                         const ConvSpec& spec) {
    if (input.rank() != 4) throw ShapeError("conv2d: input must be [batch, channels, h, w], got " +
                                            format_shape(input.shape()));
    if (input.dim(1) != spec.in_channels) {
        throw ShapeError(fmt::format("conv2d: input has {} channels, layer expects {}", input.dim(1),
                                     spec.in_channels));
    }
    const Shape kshape{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w};
    if (kernel.shape() != kshape) {
        throw ShapeError(fmt::format("conv2d: kernel shape {} does not match spec {}", format_shape(kernel.shape()),
                                     format_shape(kshape)));
    }
    if (bias.shape() != Shape{spec.out_channels}) {
        throw ShapeError("conv2d: bias shape " + format_shape(bias.shape()) + " does not match out_channels");
    }
}

// cols[(c*kh + i)*kw + j, y*ow + x] = padded_input[b, c, y*s + i, x*s + j]
template <typename T>
Tensor<T> im2col(const Tensor<T>& input, std::size_t b, const ConvSpec& spec, const ConvGeometry& g) {
    const std::size_t C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t P = g.out_h * g.out_w;
    Tensor<T> cols({C * spec.kernel_h * spec.kernel_w, P});
    T* out = cols.data();
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < spec.kernel_h; ++i) {
            for (std::size_t j = 0; j < spec.kernel_w; ++j) {
                T* row = out + ((c * spec.kernel_h + i) * spec.kernel_w + j) * P;
                for (std::size_t y = 0; y < g.out_h; ++y) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * spec.stride + i) -
                                              static_cast<std::ptrdiff_t>(g.pad_top);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t x = 0; x < g.out_w; ++x) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * spec.stride + j) -
                                                  static_cast<std::ptrdiff_t>(g.pad_left);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                        row[y * g.out_w + x] = input.at(b, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                    }
                }
            }
        }
    }
    return cols;
}

template <typename T>
void col2im_accumulate(const Tensor<T>& cols, Tensor<T>& grad_input, std::size_t b, const ConvSpec& spec,
                       const ConvGeometry& g) {
    const std::size_t C = grad_input.dim(1), H = grad_input.dim(2), W = grad_input.dim(3);
    const std::size_t P = g.out_h * g.out_w;
    const T* src = cols.data();
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < spec.kernel_h; ++i) {
            for (std::size_t j = 0; j < spec.kernel_w; ++j) {
                const T* row = src + ((c * spec.kernel_h + i) * spec.kernel_w + j) * P;
                for (std::size_t y = 0; y < g.out_h; ++y) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * spec.stride + i) -
                                              static_cast<std::ptrdiff_t>(g.pad_top);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t x = 0; x < g.out_w; ++x) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * spec.stride + j) -
                                                  static_cast<std::ptrdiff_t>(g.pad_left);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                        grad_input.at(b, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) +=
                            row[y * g.out_w + x];
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward_naive(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                               const ConvSpec& spec) {
    check_conv_operands(input, kernel, bias, spec);
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const ConvGeometry g = conv_geometry(spec, H, W);
    Tensor<T> out({N, spec.out_channels, g.out_h, g.out_w});
    for (std::size_t b = 0; b < N; ++b) {
        for (std::size_t o = 0; o < spec.out_channels; ++o) {
            for (std::size_t y = 0; y < g.out_h; ++y) {
                for (std::size_t x = 0; x < g.out_w; ++x) {
                    T acc = bias[o];
                    for (std::size_t c = 0; c < C; ++c) {
                        for (std::size_t i = 0; i < spec.kernel_h; ++i) {
                            const auto iy = static_cast<std::ptrdiff_t>(y * spec.stride + i) -
                                            static_cast<std::ptrdiff_t>(g.pad_top);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t j = 0; j < spec.kernel_w; ++j) {
                                const auto ix = static_cast<std::ptrdiff_t>(x * spec.stride + j) -
                                                static_cast<std::ptrdiff_t>(g.pad_left);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                acc += input.at(b, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                                       kernel.at(o, c, i, j);
                            }
                        }
                    }
                    out.at(b, o, y, x) = acc;
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> conv2d_forward_im2col(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                                const ConvSpec& spec) {
    check_conv_operands(input, kernel, bias, spec);
    const std::size_t N = input.dim(0);
    const ConvGeometry g = conv_geometry(spec, input.dim(2), input.dim(3));
    const std::size_t O = spec.out_channels;
    const std::size_t P = g.out_h * g.out_w;
    const Tensor<T> kmat = kernel.reshape({O, spec.in_channels * spec.kernel_h * spec.kernel_w});
    Tensor<T> out({N, O, g.out_h, g.out_w});
    for (std::size_t b = 0; b < N; ++b) {
        const Tensor<T> prod = matmul(kmat, im2col(input, b, spec, g));
        T* dst = out.data() + b * O * P;
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t p = 0; p < P; ++p) dst[o * P + p] = prod[o * P + p] + bias[o];
    }
    return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const ConvSpec& spec,
                             const Tensor<T>& grad_out) {
    check_conv_operands(input, kernel, Tensor<T>({spec.out_channels}), spec);
    const std::size_t N = input.dim(0);
    const ConvGeometry g = conv_geometry(spec, input.dim(2), input.dim(3));
    const std::size_t O = spec.out_channels;
    const std::size_t P = g.out_h * g.out_w;
    const Shape expected{N, O, g.out_h, g.out_w};
    if (grad_out.shape() != expected) {
        throw ShapeError(fmt::format("conv2d_backward: grad_out shape {} does not match forward output {}",
                                     format_shape(grad_out.shape()), format_shape(expected)));
    }
    const std::size_t K = spec.in_channels * spec.kernel_h * spec.kernel_w;
    const Tensor<T> kmat_t = transpose(kernel.reshape({O, K}));

    ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>({O, K}), Tensor<T>({O})};
    for (std::size_t b = 0; b < N; ++b) {
        const Tensor<T> g_b({O, P}, std::vector<T>(grad_out.data() + b * O * P, grad_out.data() + (b + 1) * O * P));
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t p = 0; p < P; ++p) grads.bias[o] += g_b[o * P + p];
        const Tensor<T> cols = im2col(input, b, spec, g);
        const Tensor<T> gk = matmul(g_b, transpose(cols));
        for (std::size_t i = 0; i < gk.size(); ++i) grads.kernel[i] += gk[i];
        col2im_accumulate(matmul(kmat_t, g_b), grads.input, b, spec, g);
    }
    grads.kernel = std::move(grads.kernel).reshape(kernel.shape());
    return grads;
}

template <typename T>
PoolResult<T> maxpool_forward(const Tensor<T>& input, const PoolSpec& spec) {
    if (input.rank() != 4) throw ShapeError("maxpool: input must be rank 4, got " + format_shape(input.shape()));
    if (spec.stride == 0 || spec.window_h == 0 || spec.window_w == 0) {
        throw ShapeError("maxpool: window and stride must be >= 1");
    }
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (spec.window_h > H || spec.window_w > W) {
        throw ShapeError(fmt::format("maxpool: window {}x{} larger than input {}x{}", spec.window_h, spec.window_w,
                                     H, W));
    }
    const std::size_t oh = (H - spec.window_h) / spec.stride + 1;
    const std::size_t ow = (W - spec.window_w) / spec.stride + 1;
    PoolResult<T> r{Tensor<T>({N, C, oh, ow}), {}};
    r.argmax.resize(r.output.size());
    std::size_t k = 0;
    for (std::size_t b = 0; b < N; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t plane = (b * C + c) * H * W;
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x, ++k) {
                    std::size_t best = plane + (y * spec.stride) * W + x * spec.stride;
                    for (std::size_t i = 0; i < spec.window_h; ++i) {
                        for (std::size_t j = 0; j < spec.window_w; ++j) {
                            const std::size_t idx = plane + (y * spec.stride + i) * W + x * spec.stride + j;
                            if (input[idx] > input[best]) best = idx;
                        }
                    }
                    r.output[k] = input[best];
                    r.argmax[k] = best;
                }
            }
        }
    }
    return r;
}

template <typename T>
Tensor<T> maxpool_backward(const std::vector<std::size_t>& argmax, const Tensor<T>& grad_out,
                           const Shape& input_shape) {
    if (argmax.size() != grad_out.size()) {
        throw ConsistencyError(fmt::format("maxpool_backward: {} argmax entries for {} gradient values",
                                           argmax.size(), grad_out.size()));
    }
    Tensor<T> grad_in(input_shape);
    for (std::size_t k = 0; k < argmax.size(); ++k) {
        if (argmax[k] >= grad_in.size()) {
            throw ConsistencyError(fmt::format("maxpool_backward: argmax index {} outside input of {} elements",
                                               argmax[k], grad_in.size()));
        }
        grad_in[argmax[k]] += grad_out[k];
    }
    return grad_in;
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (input.rank() != 2 || weight.rank() != 2 || input.dim(1) != weight.dim(0)) {
        throw ShapeError(fmt::format("dense: input {} incompatible with weight {}", format_shape(input.shape()),
                                     format_shape(weight.shape())));
    }
    return add_row_bias(matmul(input, weight), bias);
}

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out) {
    if (input.rank() != 2 || weight.rank() != 2 || input.dim(1) != weight.dim(0)) {
        throw ShapeError(fmt::format("dense_backward: input {} incompatible with weight {}",
                                     format_shape(input.shape()), format_shape(weight.shape())));
    }
    if (grad_out.shape() != Shape{input.dim(0), weight.dim(1)}) {
        throw ShapeError("dense_backward: grad_out shape " + format_shape(grad_out.shape()) +
                         " does not match forward output");
    }
    DenseGrads<T> g{matmul(grad_out, transpose(weight)), matmul(transpose(input), grad_out),
                    Tensor<T>({weight.dim(1)})};
    const std::size_t n = weight.dim(1);
    for (std::size_t r = 0; r < grad_out.dim(0); ++r)
        for (std::size_t j = 0; j < n; ++j) g.bias[j] += grad_out[r * n + j];
    return g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? input[i] : T{0};
    return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
    if (input.shape() != grad_out.shape()) {
        throw ShapeError("relu_backward: shape mismatch " + format_shape(input.shape()) + " vs " +
                         format_shape(grad_out.shape()));
    }
    Tensor<T> g(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > T{0} ? grad_out[i] : T{0};
    return g;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax: expected [batch, n], got " + format_shape(logits.shape()));
    const std::size_t rows = logits.dim(0), n = logits.dim(1);
    Tensor<T> out(logits.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = logits.data() + r * n;
        T* y = out.data() + r * n;
        const T top = *std::max_element(x, x + n);
        T sum{0};
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - top);
            sum += y[j];
        }
        for (std::size_t j = 0; j < n; ++j) y[j] /= sum;
    }
    return out;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& probabilities, const Tensor<T>& grad_probabilities) {
    if (probabilities.shape() != grad_probabilities.shape() || probabilities.rank() != 2) {
        throw ShapeError("softmax_backward: shape mismatch " + format_shape(probabilities.shape()) + " vs " +
                         format_shape(grad_probabilities.shape()));
    }
    const std::size_t rows = probabilities.dim(0), n = probabilities.dim(1);
    Tensor<T> g(probabilities.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* p = probabilities.data() + r * n;
        const T* gp = grad_probabilities.data() + r * n;
        T dot{0};
        for (std::size_t j = 0; j < n; ++j) dot += p[j] * gp[j];
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] = p[j] * (gp[j] - dot);
    }
    return g;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
    if (input.rank() != 4) {
        throw ShapeError("global_avg_pool: input must be rank 4, got " + format_shape(input.shape()));
    }
    const std::size_t N = input.dim(0), C = input.dim(1), area = input.dim(2) * input.dim(3);
    Tensor<T> out({N, C});
    for (std::size_t k = 0; k < N * C; ++k) {
        T sum{0};
        const T* src = input.data() + k * area;
        for (std::size_t i = 0; i < area; ++i) sum += src[i];
        out[k] = sum / static_cast<T>(area);
    }
    return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape) {
    if (input_shape.size() != 4 || grad_out.shape() != Shape{input_shape[0], input_shape[1]}) {
        throw ShapeError("global_avg_pool_backward: grad_out " + format_shape(grad_out.shape()) +
                         " does not match input " + format_shape(input_shape));
    }
    const std::size_t area = input_shape[2] * input_shape[3];
    Tensor<T> g(input_shape);
    for (std::size_t k = 0; k < grad_out.size(); ++k) {
        const T share = grad_out[k] / static_cast<T>(area);
        std::fill(g.data() + k * area, g.data() + (k + 1) * area, share);
    }
    return g;
}

#define RICENET_INSTANTIATE(T)                                                                                 \
    template Tensor<T> conv2d_forward_naive(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                                            const ConvSpec&);                                                  \
    template Tensor<T> conv2d_forward_im2col(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                             const ConvSpec&);                                                 \
    template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const ConvSpec&, const Tensor<T>&); \
    template PoolResult<T> maxpool_forward(const Tensor<T>&, const PoolSpec&);                                 \
    template Tensor<T> maxpool_backward(const std::vector<std::size_t>&, const Tensor<T>&, const Shape&);      \
    template Tensor<T> dense_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                    \
    template DenseGrads<T> dense_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
    template Tensor<T> relu(const Tensor<T>&);                                                                 \
    template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> softmax(const Tensor<T>&);                                                              \
    template Tensor<T> softmax_backward(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> global_avg_pool(const Tensor<T>&);                                                      \
    template Tensor<T> global_avg_pool_backward(const Tensor<T>&, const Shape&);

RICENET_INSTANTIATE(float)
RICENET_INSTANTIATE(double)

#undef RICENET_INSTANTIATE

}  // namespace ricenet
