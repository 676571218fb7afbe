#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace snsteg {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Rank-4 extent in (batch, channel, height, width) order.
struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    std::size_t size() const { return n * c * h * w; }
    std::size_t per_sample() const { return c * h * w; }
    std::size_t plane() const { return h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Dense row-major NCHW tensor. Value semantics: copies are deep.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
    Tensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
        if (data_.size() != shape_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_.str());
    }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[index(n, c, h, w)];
    }
    const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[index(n, c, h, w)];
    }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// View of one (c, h, w) sample.
    std::span<const T> sample(std::size_t n) const {
        return std::span<const T>(data_).subspan(n * shape_.per_sample(), shape_.per_sample());
    }
    std::span<T> sample(std::size_t n) {
        return std::span<T>(data_).subspan(n * shape_.per_sample(), shape_.per_sample());
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_{};
    std::vector<T> data_;
};

/// Throws ShapeError naming both shapes when they differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

/// Samples [begin, end) of the batch axis.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& t, std::size_t begin, std::size_t end);

/// Concatenation along the batch axis.
template <typename T>
Tensor<T> concat_batch(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace snsteg
