#pragma once

#include <cmath>

#include "affmap/core/rng.hpp"
#include "affmap/core/tensor.hpp"

namespace affmap {

// 2D Swiss-roll benchmark distribution:
//   nu1 ~ N(mu1, s1²), nu2 ~ N(mu2, s2²), r = 0.4·nu1 + nu2,
//   y = (cos(nu1)·r, sin(nu1)·r).
// The LR observation is x = (y1 + y2)/2.
struct SwissRollParams {
    double mu1 = 10.0, s1 = 3.0;
    double mu2 = 0.0, s2 = 0.2;

    static SwissRollParams noiseless() { return {10.0, 3.0, 0.0, 0.0}; }
};

inline Tensor sample_swiss_roll(const SwissRollParams& p, int n, Rng& rng) {
    Tensor y({n, 2});
    for (int i = 0; i < n; ++i) {
        const double nu1 = rng.normal(p.mu1, p.s1);
        const double nu2 = rng.normal(p.mu2, p.s2);
        const double r = 0.4 * nu1 + nu2;
        y.v[2 * static_cast<std::size_t>(i)] = std::cos(nu1) * r;
        y.v[2 * static_cast<std::size_t>(i) + 1] = std::sin(nu1) * r;
    }
    return y;
}

inline Tensor observe_lr(const Tensor& y) {
    Tensor x({y.dim(0), 1});
    for (int i = 0; i < y.dim(0); ++i)
        x.v[i] = 0.5 * (y.v[2 * static_cast<std::size_t>(i)] +
                        y.v[2 * static_cast<std::size_t>(i) + 1]);
    return x;
}

}  // namespace affmap
