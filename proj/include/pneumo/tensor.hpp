#ifndef PNEUMO_TENSOR_HPP
#define PNEUMO_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "pneumo/errors.hpp"

namespace pneumo {

// Dense row-major tensor. Image batches use (N,C,H,W) order.
// Storage is 32-bit float in production (Tensor); the gradient-check
// harness instantiates the same code at 64 bits (DTensor).
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
        std::int64_t n = checked_numel(shape_);
        data_.assign(static_cast<std::size_t>(n), fill);
    }

    static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape), T(0)); }

    static TensorT from_data(std::vector<int> shape, std::vector<T> data) {
        std::int64_t n = checked_numel(shape);
        if (static_cast<std::size_t>(n) != data.size()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape (" + shape_string(shape) + ")");
        }
        TensorT t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // 2-d indexing (matrices, dense activations).
    T& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    const T& at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }

    // 3-d indexing (C,H,W), used by single images.
    T& at(int c, int h, int w) {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }
    const T& at(int c, int h, int w) const {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }

    // 4-d indexing (N,C,H,W).
    T& at(int n, int c, int h, int w) {
        return data_[(((static_cast<std::size_t>(n) * shape_[1]) + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at(int n, int c, int h, int w) const {
        return data_[(((static_cast<std::size_t>(n) * shape_[1]) + c) * shape_[2] + h) * shape_[3] + w];
    }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    TensorT reshaped(std::vector<int> new_shape) const {
        std::int64_t n = checked_numel(new_shape);
        if (static_cast<std::size_t>(n) != data_.size()) {
            throw ShapeError("cannot reshape " + std::to_string(data_.size()) + " elements to (" +
                             shape_string(new_shape) + ")");
        }
        TensorT t;
        t.shape_ = std::move(new_shape);
        t.data_ = data_;
        return t;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    // Sum of all elements, accumulated at 64 bits.
    double sum() const {
        double acc = 0.0;
        for (T v : data_) acc += static_cast<double>(v);
        return acc;
    }

    double mean() const {
        if (data_.empty()) throw ShapeError("mean of empty tensor");
        return sum() / static_cast<double>(data_.size());
    }

    static std::string shape_string(const std::vector<int>& shape) {
        std::ostringstream os;
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) os << ",";
            os << shape[i];
        }
        return os.str();
    }

private:
    static std::int64_t checked_numel(const std::vector<int>& shape) {
        if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
        std::int64_t n = 1;
        for (int d : shape) {
            if (d < 1) {
                throw ShapeError("tensor dimensions must be >= 1, got (" + shape_string(shape) + ")");
            }
            n *= d;
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

// c[i,j] = sum_t a[i,t] * b[t,j], accumulated at 64 bits then rounded to T.
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2) {
        throw ShapeError("matmul expects 2-d tensors");
    }
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul inner dimensions differ: " + std::to_string(a.dim(1)) + " vs " +
                         std::to_string(b.dim(0)));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorT<T> c({m, n}, T(0));
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) {
                acc += static_cast<double>(a.at(i, t)) * static_cast<double>(b.at(t, j));
            }
            c.at(i, j) = static_cast<T>(acc);
        }
    }
    return c;
}

// PCG32 (O'Neill). One fixed generator for all stochastic behavior so that a
// seed reproduces identical sequences across runs and platforms.
// A SeededRng is single-owner: never share one instance between workers.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0) {
        state_ = 0u;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    std::uint32_t next_u32() {
        std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
    }

    // Uniform in [0,1) with 24 bits of mantissa.
    float uniform() {
        return static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f);
    }

    std::vector<float> uniform_n(std::size_t n) {
        std::vector<float> out(n);
        for (auto& v : out) v = uniform();
        return out;
    }

    // Unbiased integer in [0, bound).
    std::uint32_t bounded(std::uint32_t bound) {
        if (bound == 0) throw ValueError("bounded(0) is undefined");
        std::uint32_t threshold = (-bound) % bound;
        for (;;) {
            std::uint32_t r = next_u32();
            if (r >= threshold) return r % bound;
        }
    }

    // Standard normal via Box-Muller; consumes exactly two draws per value.
    double normal() {
        double u1 = (static_cast<double>(next_u32()) + 1.0) * (1.0 / 4294967296.0);
        double u2 = static_cast<double>(next_u32()) * (1.0 / 4294967296.0);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <typename It>
    void shuffle(It first, It last) {
        auto n = static_cast<std::uint32_t>(last - first);
        for (std::uint32_t i = n; i > 1; --i) {
            std::uint32_t j = bounded(i);
            std::swap(first[i - 1], first[j]);
        }
    }

    template <typename C>
    void shuffle(C& container) {
        shuffle(container.begin(), container.end());
    }

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 1;
};

} // namespace pneumo

#endif
