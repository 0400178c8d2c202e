#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "erpkit/common.hpp"

namespace erpkit {

/// Dense row-major tensor. Rank is dynamic but stays small (<= 3) in practice.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> values;

    Tensor() = default;

    explicit Tensor(std::vector<int> shape_in) : shape(std::move(shape_in)) {
        values.assign(numel_of(shape), T(0));
    }

    Tensor(std::vector<int> shape_in, std::vector<T> values_in)
        : shape(std::move(shape_in)), values(std::move(values_in)) {
        require(values.size() == numel_of(shape), "tensor value count does not match shape");
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            require(d >= 0, "negative tensor dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return values.size(); }

    T* data() { return values.data(); }
    const T* data() const { return values.data(); }

    T& operator[](std::size_t i) { return values[i]; }
    const T& operator[](std::size_t i) const { return values[i]; }

    // 2-D / 3-D accessors for the fixed layouts used by the kernels.
    T& at(int i, int j) { return values[static_cast<std::size_t>(i) * shape[1] + j]; }
    const T& at(int i, int j) const {
        return values[static_cast<std::size_t>(i) * shape[1] + j];
    }
    T& at(int i, int j, int k) {
        return values[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    const T& at(int i, int j, int k) const {
        return values[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }

    Tensor reshaped(std::vector<int> new_shape) const {
        require(numel_of(new_shape) == values.size(), "reshape changes element count");
        return Tensor(std::move(new_shape), values);
    }

    void fill(T v) { values.assign(values.size(), v); }

    void zero() { fill(T(0)); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.values.resize(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<U>(values[i]);
        return out;
    }
};

} // namespace erpkit
