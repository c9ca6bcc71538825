#include "ricenet/tensor.hpp"

#include <cmath>
#include <cstring>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace ricenet {

std::string format_shape(const Shape& shape) {
    return fmt::format("[{}]", fmt::join(shape, ", "));
}

std::size_t shape_elements(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

namespace {

void check_dims(const Shape& shape) {
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor shape " + format_shape(shape) + " has a zero dimension");
    }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, format_shape(a.shape()),
                                     format_shape(b.shape())));
    }
}

template <typename T, typename Fn>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, const char* op, Fn fn) {
    require_same_shape(a, b, op);
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i], b[i]);
    return out;
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
    check_dims(shape_);
    data_.assign(shape_elements(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims(shape_);
    if (data_.size() != shape_elements(shape_)) {
        throw ShapeError(fmt::format("tensor shape {} needs {} values, got {}", format_shape(shape_),
                                     shape_elements(shape_), data_.size()));
    }
}

template <typename T>
Tensor<T> Tensor<T>::reshape(Shape new_shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshape(std::move(new_shape));
}

template <typename T>
Tensor<T> Tensor<T>::reshape(Shape new_shape) && {
    check_dims(new_shape);
    if (shape_elements(new_shape) != data_.size()) {
        throw ShapeError(fmt::format("cannot reshape {} into {}", format_shape(shape_), format_shape(new_shape)));
    }
    shape_ = std::move(new_shape);
    return std::move(*this);
}

template <typename T>
void Tensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
    for (auto v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

template <typename T>
bool bit_identical(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError(fmt::format("matmul: incompatible shapes {} and {}", format_shape(a.shape()),
                                     format_shape(b.shape())));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> c({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
    // i-k-j order: every c[i,j] still accumulates its terms in increasing k.
    for (std::size_t i = 0; i < m; ++i) {
        T* row = pc + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T aik = pa[i * k + p];
            const T* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += aik * brow[j];
        }
    }
    return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + format_shape(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor<T> out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return zip(a, b, "add", [](T x, T y) { return x + y; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return zip(a, b, "sub", [](T x, T y) { return x - y; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return zip(a, b, "mul", [](T x, T y) { return x * y; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
    return out;
}

template <typename T>
Tensor<T> map(const Tensor<T>& a, const std::function<T(T)>& fn) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
    return out;
}

template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& a, const Tensor<T>& bias) {
    if (a.rank() != 2 || bias.rank() != 1 || bias.dim(0) != a.dim(1)) {
        throw ShapeError(fmt::format("add_row_bias: cannot add {} to rows of {}", format_shape(bias.shape()),
                                     format_shape(a.shape())));
    }
    Tensor<T> out = a;
    const std::size_t n = a.dim(1);
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
    return out;
}

#define RICENET_INSTANTIATE(T)                                                       \
    template class Tensor<T>;                                                        \
    template bool bit_identical(const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> transpose(const Tensor<T>&);                                  \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> scale(const Tensor<T>&, T);                                   \
    template Tensor<T> map(const Tensor<T>&, const std::function<T(T)>&);            \
    template Tensor<T> add_row_bias(const Tensor<T>&, const Tensor<T>&);

RICENET_INSTANTIATE(float)
RICENET_INSTANTIATE(double)

#undef RICENET_INSTANTIATE

}  // namespace ricenet
