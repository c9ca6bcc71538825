#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ricenet/error.hpp"

namespace ricenet {

using Shape = std::vector<std::size_t>;

std::string format_shape(const Shape& shape);
std::size_t shape_elements(const Shape& shape);

/**
 * Dense row-major n-dimensional array.
 *
 * The flat storage order is part of the model file contract: element
 * (i0, i1, ..., ik) lives at offset ((i0 * d1 + i1) * d2 + ...) * dk + ik.
 * Every dimension is at least 1.
 */
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0});
    Tensor(Shape shape, std::vector<T> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
        return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

    /// Same data, new shape. Throws ShapeError when element counts differ.
    Tensor reshape(Shape new_shape) const&;
    Tensor reshape(Shape new_shape) &&;

    void fill(T value);
    bool all_finite() const noexcept;

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
    if constexpr (std::is_same_v<To, From>) {
        return t;
    } else {
        std::vector<To> out(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
        return Tensor<To>(t.shape(), std::move(out));
    }
}

/// Bitwise comparison of element storage, distinguishing -0.0 from 0.0 and NaN payloads.
template <typename T>
bool bit_identical(const Tensor<T>& a, const Tensor<T>& b);

// c[i,j] = sum_k a[i,k] * b[k,j]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> map(const Tensor<T>& a, const std::function<T(T)>& fn);

/// Adds `bias` (rank 1, length = columns) to every row of the rank-2 tensor `a`.
/// This is the only broadcast the library supports.
template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& a, const Tensor<T>& bias);

}  // namespace ricenet
