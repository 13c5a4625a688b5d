#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dunet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Raised when operand extents do not satisfy an operation's contract.
class ShapeError : public Error {
   public:
    using Error::Error;
};

/// Extents in batch x channels x height x width order.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t size() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
               static_cast<std::size_t>(w);
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
    bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }
    std::array<int, 4> extents() const { return {n, c, h, w}; }

    friend bool operator==(const Shape&, const Shape&) = default;

    std::string str() const {
        std::ostringstream os;
        os << n << "x" << c << "x" << h << "x" << w;
        return os.str();
    }
};

/// Dense row-major NCHW array. Lower-rank values embed with extent-1 axes.
template <typename T>
class BasicTensor {
   public:
    using value_type = T;

    BasicTensor() : shape_{1, 1, 1, 1}, data_(1, T(0)) {}

    explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(shape) {
        if (!shape.valid()) {
            throw ShapeError("tensor extents must be >= 1, got " + shape.str());
        }
        data_.assign(shape.size(), fill);
    }

    BasicTensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
        if (!shape.valid()) {
            throw ShapeError("tensor extents must be >= 1, got " + shape.str());
        }
        if (data_.size() != shape.size()) {
            throw ShapeError("tensor " + shape.str() + " needs " + std::to_string(shape.size()) +
                             " values, got " + std::to_string(data_.size()));
        }
    }

    const Shape& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* raw() { return data_.data(); }
    const T* raw() const { return data_.data(); }

    std::size_t offset(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    T& operator()(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
    const T& operator()(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// Pointer to the H x W plane of (n, c).
    T* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
    const T* plane(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// Same buffer under new extents of equal product.
    BasicTensor reshaped(Shape s) const { return BasicTensor(s, data_); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicTensor<U>(shape_, std::move(out));
    }

    /// Single sample `i` of the batch as a 1 x C x H x W tensor.
    BasicTensor sample(int i) const {
        Shape s{1, shape_.c, shape_.h, shape_.w};
        auto first = data_.begin() + static_cast<std::ptrdiff_t>(s.size() * static_cast<std::size_t>(i));
        return BasicTensor(s, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(s.size())));
    }

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

   private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Stacks 1 x C x H x W tensors along the batch axis.
template <typename T>
BasicTensor<T> stack_batch(std::span<const BasicTensor<T>> items) {
    if (items.empty()) {
        throw ShapeError("stack_batch: no tensors");
    }
    Shape s = items.front().shape();
    std::vector<T> out;
    out.reserve(s.size() * items.size());
    for (const auto& t : items) {
        if (t.n() != 1 || t.c() != s.c || t.h() != s.h || t.w() != s.w) {
            throw ShapeError("stack_batch: expected 1x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
                             std::to_string(s.w) + ", got " + t.shape().str());
        }
        out.insert(out.end(), t.data().begin(), t.data().end());
    }
    s.n = static_cast<int>(items.size());
    return BasicTensor<T>(s, std::move(out));
}

template <typename T>
BasicTensor<T> stack_batch(const std::vector<BasicTensor<T>>& items) {
    return stack_batch(std::span<const BasicTensor<T>>(items));
}

}  // namespace dunet
