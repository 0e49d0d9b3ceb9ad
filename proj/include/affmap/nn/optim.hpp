#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "affmap/core/error.hpp"
#include "affmap/nn/net.hpp"

namespace affmap {

struct OptimConfig {
    enum class Algo { sgd, adam };
    Algo algorithm = Algo::adam;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 256;
    long iterations = 20000;
    std::uint64_t seed = 1;
};

namespace detail {
inline bool grads_finite(const std::vector<LayerParams>& grads) {
    for (const auto& g : grads)
        if ((!g.W.v.empty() && !g.W.all_finite()) || (!g.b.v.empty() && !g.b.all_finite()))
            return false;
    return true;
}
}  // namespace detail

// acc += more, layer by layer (for losses summed over several backward passes,
// e.g. a discriminator update over real and generated batches).
inline void add_grads(std::vector<LayerParams>& acc, const std::vector<LayerParams>& more) {
    require(acc.size() == more.size(), "add_grads: layer count mismatch");
    for (std::size_t i = 0; i < acc.size(); ++i) {
        if (acc[i].empty()) continue;
        acc[i].W.add_scaled(more[i].W, 1.0);
        acc[i].b.add_scaled(more[i].b, 1.0);
    }
}

// Deterministic parameter update. Adam keeps standard bias-corrected moments
// in the state; non-finite gradients throw before anything is touched.
inline void optimizer_step(NetState& state, const std::vector<LayerParams>& grads,
                           const OptimConfig& cfg) {
    require(grads.size() == state.params.size(), "optimizer_step: gradient/param layer count");
    require(detail::grads_finite(grads), "optimizer_step: non-finite gradients; state untouched");

    if (cfg.algorithm == OptimConfig::Algo::sgd) {
        for (std::size_t i = 0; i < grads.size(); ++i) {
            if (state.params[i].empty()) continue;
            state.params[i].W.add_scaled(grads[i].W, -cfg.lr);
            state.params[i].b.add_scaled(grads[i].b, -cfg.lr);
        }
        ++state.version;
        return;
    }

    AdamSlots& a = state.adam;
    if (a.m.empty()) {
        a.m.resize(state.params.size());
        a.v.resize(state.params.size());
        for (std::size_t i = 0; i < state.params.size(); ++i) {
            if (state.params[i].empty()) continue;
            a.m[i].W = Tensor::zeros_like(state.params[i].W);
            a.m[i].b = Tensor::zeros_like(state.params[i].b);
            a.v[i].W = Tensor::zeros_like(state.params[i].W);
            a.v[i].b = Tensor::zeros_like(state.params[i].b);
        }
    }
    ++a.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(a.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(a.t));
    auto update = [&](Tensor& p, Tensor& m, Tensor& v, const Tensor& g) {
        for (std::size_t j = 0; j < p.v.size(); ++j) {
            m.v[j] = cfg.beta1 * m.v[j] + (1.0 - cfg.beta1) * g.v[j];
            v.v[j] = cfg.beta2 * v.v[j] + (1.0 - cfg.beta2) * g.v[j] * g.v[j];
            const double mh = m.v[j] / bc1;
            const double vh = v.v[j] / bc2;
            p.v[j] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
        }
    };
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (state.params[i].empty()) continue;
        update(state.params[i].W, a.m[i].W, a.v[i].W, grads[i].W);
        update(state.params[i].b, a.m[i].b, a.v[i].b, grads[i].b);
    }
    ++state.version;
}

}  // namespace affmap
