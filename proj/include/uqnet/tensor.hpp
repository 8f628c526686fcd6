#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "uqnet/errors.hpp"

namespace uqnet {

// Dense n-d array, row-major. T is float for training, double for the
// verification oracles.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, T fill = T(0)) : shape(std::move(s)) {
        data.assign(numel(shape), fill);
    }
    Tensor(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel(shape))
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape product " + std::to_string(numel(shape)));
    }

    static std::size_t numel(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }
    std::size_t size() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // indexed access, up to rank 4 is all the network needs
    T& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    const T& at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    T& at3(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    const T& at3(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    T& at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    const T& at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ")";
        return os.str();
    }
};

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
    return Tensor<T>(t.shape);
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                             b.shape_str());
}

}  // namespace uqnet
