#pragma once

#include "affmap/core/error.hpp"
#include "affmap/core/rng.hpp"
#include "affmap/core/tensor.hpp"
#include "affmap/linops/projector.hpp"
#include "affmap/nn/net.hpp"

namespace affmap {

// Stochastic generator variant: the network takes [x, z] with z ∼ N(0, I), so
// one observation yields a distribution of reconstructions — every one of
// which still satisfies Aŷ = x thanks to the projection.
inline Tensor stochastic_generator_sample(const NetSpec& gen_spec, const NetState& gen,
                                          const AffineProjector& projector, const Tensor& x_row,
                                          int n, int z_dim, Rng& rng) {
    require(x_row.rank() == 2 && x_row.dim(0) == 1, "x_row must be a single (1,d) observation");
    require(n >= 1 && z_dim >= 1, "need n >= 1 samples and z_dim >= 1 noise inputs");
    const int d_lr = x_row.dim(1);
    Tensor input({n, d_lr + z_dim});
    Tensor x_rep({n, d_lr});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d_lr; ++j) {
            input.v[static_cast<std::size_t>(i) * (d_lr + z_dim) + j] = x_row.v[j];
            x_rep.v[static_cast<std::size_t>(i) * d_lr + j] = x_row.v[j];
        }
        for (int j = 0; j < z_dim; ++j)
            input.v[static_cast<std::size_t>(i) * (d_lr + z_dim) + d_lr + j] = rng.normal();
    }
    const Tensor f = infer(gen_spec, gen, input);
    return projector.project(f, x_rep);
}

}  // namespace affmap
