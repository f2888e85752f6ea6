#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "metagate/core/errors.hpp"

namespace metagate {

// Forward-mode dual number. Running the reverse-mode tape over Dual<double>
// yields exact Hessian-vector products (forward-over-reverse).
template <class T>
struct Dual {
    T v{};
    T d{};

    constexpr Dual() = default;
    constexpr Dual(T value) : v(value) {}  // NOLINT(google-explicit-constructor)
    constexpr Dual(T value, T tangent) : v(value), d(tangent) {}

    Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
    Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
    Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
    Dual& operator/=(const Dual& o) {
        d = (d * o.v - v * o.d) / (o.v * o.v);
        v /= o.v;
        return *this;
    }
    friend Dual operator+(Dual a, const Dual& b) { return a += b; }
    friend Dual operator-(Dual a, const Dual& b) { return a -= b; }
    friend Dual operator*(Dual a, const Dual& b) { return a *= b; }
    friend Dual operator/(Dual a, const Dual& b) { return a /= b; }
    friend Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
};

template <class T>
Dual<T> log(const Dual<T>& a) { return {std::log(a.v), a.d / a.v}; }
template <class T>
Dual<T> exp(const Dual<T>& a) {
    const T e = std::exp(a.v);
    return {e, e * a.d};
}
template <class T>
Dual<T> sqrt(const Dual<T>& a) {
    const T s = std::sqrt(a.v);
    return {s, a.d / (T(2) * s)};
}

inline double value_of(double x) { return x; }
template <class T>
double value_of(const Dual<T>& x) { return value_of(x.v); }

inline bool is_finite(double x) { return std::isfinite(x); }
template <class T>
bool is_finite(const Dual<T>& x) { return is_finite(x.v) && is_finite(x.d); }

/// Dense row-major tensor.
template <class T>
class Tensor {
public:
    using value_type = T;
    using Shape = std::vector<std::size_t>;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{})
        : shape_(std::move(shape)), data_(count(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        require(count(shape_) == data_.size(), "Tensor: product(shape) != data size");
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
    static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T{}) {
        return Tensor(Shape{rows, cols}, fill);
    }

    static std::size_t count(const Shape& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t rank() const { return shape_.size(); }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t i) const { return shape_.at(i); }
    // Matrix view helpers; a rank-1 tensor is a single row.
    [[nodiscard]] std::size_t rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }
    [[nodiscard]] std::size_t cols() const {
        if (shape_.empty()) return 1;
        if (shape_.size() == 1) return shape_[0];
        return count(Shape(shape_.begin() + 1, shape_.end()));
    }

    [[nodiscard]] std::vector<T>& data() { return data_; }
    [[nodiscard]] const std::vector<T>& data() const { return data_; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }
    T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    Tensor reshaped(Shape s) const {
        require(count(s) == data_.size(), "Tensor::reshaped: size mismatch");
        return Tensor(std::move(s), data_);
    }

    [[nodiscard]] bool all_finite() const {
        for (const auto& x : data_)
            if (!is_finite(x)) return false;
        return true;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        if (a.shape_ != b.shape_ || a.data_.size() != b.data_.size()) return false;
        for (std::size_t i = 0; i < a.data_.size(); ++i)
            if (value_of(a.data_[i]) != value_of(b.data_[i])) return false;
        return true;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace metagate
