#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "metagate/core/autodiff.hpp"
#include "metagate/core/errors.hpp"
#include "metagate/core/tensor.hpp"

namespace metagate {

/// Named, shaped slice of a flat parameter buffer.
struct Segment {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t fan_in = 1;  // used only by initialization

    [[nodiscard]] std::size_t size() const { return Tensor<double>::count(shape); }
};

/// Layer layout of a parameter vector. Segments tile the buffer in order.
class ParamLayout {
public:
    ParamLayout& add(std::string name, std::vector<std::size_t> shape, std::size_t fan_in = 1) {
        for (const auto& s : segments_)
            require(s.name != name, "ParamLayout: duplicate segment name '" + name + "'");
        Segment seg{std::move(name), std::move(shape), total_, fan_in};
        total_ += seg.size();
        segments_.push_back(std::move(seg));
        return *this;
    }

    [[nodiscard]] const std::vector<Segment>& segments() const { return segments_; }
    [[nodiscard]] std::size_t total() const { return total_; }

    [[nodiscard]] const Segment& find(const std::string& name) const {
        for (const auto& s : segments_)
            if (s.name == name) return s;
        throw ContractViolation("ParamLayout: no segment named '" + name + "'");
    }

    friend bool operator==(const ParamLayout& a, const ParamLayout& b) {
        if (a.segments_.size() != b.segments_.size()) return false;
        for (std::size_t i = 0; i < a.segments_.size(); ++i)
            if (a.segments_[i].name != b.segments_[i].name || a.segments_[i].shape != b.segments_[i].shape)
                return false;
        return true;
    }

private:
    std::vector<Segment> segments_;
    std::size_t total_ = 0;
};

/// Flat parameter values plus the layout describing them.
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(std::shared_ptr<const ParamLayout> layout)
        : layout_(std::move(layout)), values_(layout_->total(), 0.0) {}
    ParamVector(std::shared_ptr<const ParamLayout> layout, std::vector<double> values)
        : layout_(std::move(layout)), values_(std::move(values)) {
        require(values_.size() == layout_->total(), "ParamVector: value count does not match layout");
    }

    [[nodiscard]] const ParamLayout& layout() const { return *layout_; }
    [[nodiscard]] const std::shared_ptr<const ParamLayout>& layout_ptr() const { return layout_; }
    [[nodiscard]] std::size_t size() const { return values_.size(); }
    [[nodiscard]] const std::vector<double>& values() const { return values_; }
    [[nodiscard]] std::vector<double>& values() { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    [[nodiscard]] Tensor<double> as_tensor() const { return Tensor<double>({values_.size()}, values_); }

    /// Same layout, new values.
    [[nodiscard]] ParamVector with_values(std::vector<double> v) const { return {layout_, std::move(v)}; }
    [[nodiscard]] ParamVector zeros_like() const { return ParamVector(layout_); }

    /// Fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) per segment.
    static ParamVector init_uniform(std::shared_ptr<const ParamLayout> layout, std::uint64_t seed) {
        ParamVector p(std::move(layout));
        std::mt19937_64 rng(seed);
        for (const auto& s : p.layout().segments()) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, s.fan_in)));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (std::size_t i = 0; i < s.size(); ++i) p.values_[s.offset + i] = u(rng);
        }
        return p;
    }

    friend bool operator==(const ParamVector& a, const ParamVector& b) {
        return a.values_ == b.values_ && *a.layout_ == *b.layout_;
    }

private:
    std::shared_ptr<const ParamLayout> layout_;
    std::vector<double> values_;
};

/// Segment accessor over a flat parameter Var living on a tape.
template <class T>
class ParamView {
public:
    ParamView(const ParamLayout& layout, ad::Var<T> flat) : layout_(&layout), flat_(flat) {
        require(flat.value().size() == layout.total(), "ParamView: buffer does not match layout");
    }
    [[nodiscard]] ad::Var<T> operator[](const std::string& name) const {
        const Segment& s = layout_->find(name);
        return ad::slice(flat_, s.offset, s.shape);
    }
    [[nodiscard]] ad::Var<T> flat() const { return flat_; }

private:
    const ParamLayout* layout_;
    ad::Var<T> flat_;
};

/// Converts a plain double vector to the tape scalar type.
template <class T>
Tensor<T> lift(const std::vector<double>& v) {
    std::vector<T> out(v.begin(), v.end());
    return Tensor<T>({v.size()}, std::move(out));
}

template <class T>
Tensor<T> lift(const std::vector<double>& v, const std::vector<double>& tangent) {
    require(v.size() == tangent.size(), "lift: tangent length mismatch");
    std::vector<T> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = T(v[i], tangent[i]);
    return Tensor<T>({v.size()}, std::move(out));
}

/// Reverse-mode gradient of a scalar function of a parameter vector.
/// `loss_fn(tape, flat_var)` must return a scalar Var built from tape primitives.
template <class F>
ParamVector grad(F&& loss_fn, const ParamVector& params) {
    ad::Tape<double> tape;
    auto x = tape.variable(params.as_tensor());
    ad::Var<double> loss = loss_fn(tape, x);
    Tensor<double> g = tape.gradient(loss, x);
    return params.with_values(std::move(g.data()));
}

// Small vector helpers used across training code.
namespace vec {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), "dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}
inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }
inline std::vector<double> sub(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), "sub: length mismatch");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}
inline void axpy(double alpha, const std::vector<double>& x, std::vector<double>& y) {
    require(x.size() == y.size(), "axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace vec

}  // namespace metagate
