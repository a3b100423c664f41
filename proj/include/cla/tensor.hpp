#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "cla/errors.hpp"

namespace cla {

/// Dense row-major tensor of 64-bit floats. Rank is 1 or 2 in practice;
/// a rank-1 tensor of length n behaves as a single row [1 x n] wherever a
/// row structure is needed.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until backward reaches this leaf

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> s) {
        Tensor t;
        t.shape = std::move(s);
        t.data.assign(t.count(), 0.0);
        return t;
    }

    static Tensor scalar(double v) {
        Tensor t;
        t.shape = {1};
        t.data = {v};
        return t;
    }

    static Tensor row(std::vector<double> v) {
        Tensor t;
        t.shape = {v.size()};
        t.data = std::move(v);
        return t;
    }

    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
        if (v.size() != r * c) throw DimensionError("matrix: data length does not match rows*cols");
        Tensor t;
        t.shape = {r, c};
        t.data = std::move(v);
        return t;
    }

    std::size_t count() const {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return rank() == 2 ? shape[0] : 1; }
    std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool is_scalar() const { return count() == 1; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    void zero_grad() { grad.clear(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

}  // namespace cla
