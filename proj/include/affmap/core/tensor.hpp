#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "affmap/core/error.hpp"
#include "affmap/core/rng.hpp"

namespace affmap {

// Dense row-major tensor of doubles. Rank is arbitrary; the networks use
// (batch, features) for dense stacks and (batch, channels, height, width)
// for convolutional ones.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), 0.0) {}
    Tensor(std::vector<int> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
        require(v.size() == count(shape), "tensor data size ", v.size(),
                " does not match shape volume ", count(shape));
    }

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            require(d > 0, "tensor dims must be positive, got ", d);
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return v.size(); }
    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(shape.size()); }

    // Leading dimension (batch) and the product of the rest (features).
    int batch() const { return shape.empty() ? 1 : shape[0]; }
    int features() const {
        int f = 1;
        for (std::size_t i = 1; i < shape.size(); ++i) f *= shape[i];
        return f;
    }

    double& at4(int n, int c, int y, int x) {
        return v[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    double at4(int n, int c, int y, int x) const {
        return v[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    Tensor& fill(double x) {
        std::fill(v.begin(), v.end(), x);
        return *this;
    }

    Tensor& add_scaled(const Tensor& o, double a) {
        require(same_shape(o), "add_scaled shape mismatch");
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += a * o.v[i];
        return *this;
    }

    static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape); }

    static Tensor randn(std::vector<int> s, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (double& x : t.v) x = stddev * rng.normal();
        return t;
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

}  // namespace affmap
