#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "fieldgen/errors.hpp"

namespace fieldgen {

// Dense row-major tensor. Ops interpret the shape; this type only owns storage.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw ConfigError("tensor dimensions must be positive");
            n *= d;
        }
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }
    T& operator[](std::size_t i) { return data[i]; }
    T operator[](std::size_t i) const { return data[i]; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(T(0)); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape[i]);
        return s + "]";
    }
};

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// View a tensor's storage as a rows x cols row-major matrix.
template <typename T>
MatMap<T> as_matrix(Tensor<T>& t, int rows, int cols) {
    if (static_cast<std::int64_t>(rows) * cols != t.numel())
        throw ConfigError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                          " does not cover tensor " + t.shape_str());
    return MatMap<T>(t.ptr(), rows, cols);
}

template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t, int rows, int cols) {
    if (static_cast<std::int64_t>(rows) * cols != t.numel())
        throw ConfigError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                          " does not cover tensor " + t.shape_str());
    return ConstMatMap<T>(t.ptr(), rows, cols);
}

template <typename T>
VecMap<T> as_vector(Tensor<T>& t) {
    return VecMap<T>(t.ptr(), t.numel());
}

template <typename T>
ConstVecMap<T> as_vector(const Tensor<T>& t) {
    return ConstVecMap<T>(t.ptr(), t.numel());
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    return as_vector(t).allFinite();
}

}  // namespace fieldgen
