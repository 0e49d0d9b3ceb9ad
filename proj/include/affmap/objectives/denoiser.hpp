#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "affmap/core/error.hpp"
#include "affmap/core/rng.hpp"
#include "affmap/core/tensor.hpp"
#include "affmap/linops/projector.hpp"
#include "affmap/nn/net.hpp"
#include "affmap/nn/optim.hpp"
#include "affmap/objectives/gan.hpp"  // SoftConstraintConfig + soft gradient

namespace affmap {

// Descending noise levels with the generator iteration at which each trained
// checkpoint is swapped in as the gradient estimator.
struct DenoiserLevel {
    double sigma = 0.0;
    long swap_in = 0;
};

struct DenoiserSchedule {
    std::vector<DenoiserLevel> levels;

    void validate() const {
        require(!levels.empty(), "denoiser schedule is empty");
        for (std::size_t i = 0; i < levels.size(); ++i) {
            require(levels[i].sigma > 0.0, "denoiser sigma must be positive");
            if (i) require(levels[i].sigma < levels[i - 1].sigma,
                           "denoiser sigmas must be strictly decreasing");
        }
    }

    // σ annealed 0.5 → 0.25 for the 2D benchmark.
    static DenoiserSchedule toy() { return from_sigmas({0.5, 0.4, 0.3, 0.25}); }
    // σ annealed 0.5 → 0.01 for image experiments.
    static DenoiserSchedule image() { return from_sigmas({0.5, 0.3, 0.1, 0.05, 0.01}); }

    static DenoiserSchedule from_sigmas(std::vector<double> sigmas) {
        DenoiserSchedule s;
        for (double v : sigmas) s.levels.push_back({v, 0});
        s.validate();
        return s;
    }

    // Checkpoint swap points at evenly spaced fractions of the budget.
    void assign_swap_points(long total_iterations) {
        const long k = static_cast<long>(levels.size());
        for (long i = 0; i < k; ++i) levels[i].swap_in = total_iterations * i / k;
    }

    int level_at(long iteration) const {
        int idx = 0;
        for (std::size_t i = 0; i < levels.size(); ++i)
            if (iteration >= levels[i].swap_in) idx = static_cast<int>(i);
        return idx;
    }
};

struct DaeCheckpoints {
    NetSpec spec;
    std::vector<NetState> states;  // one per schedule level, same order
    std::vector<double> sigmas;
};

using DataSampler = std::function<Tensor(int, Rng&)>;

// Train one denoiser through the schedule's σ levels in order (the anneal),
// snapshotting a checkpoint at the end of each level. Total budget
// opt.iterations is split evenly across levels.
inline DaeCheckpoints dae_pretrain(const NetSpec& spec, const DataSampler& sample,
                                   const DenoiserSchedule& schedule, const OptimConfig& opt,
                                   Rng& rng) {
    schedule.validate();
    DaeCheckpoints out;
    out.spec = spec;
    NetState state = init_state(spec);
    const long per_level = std::max<long>(1, opt.iterations / static_cast<long>(schedule.levels.size()));
    for (const auto& level : schedule.levels) {
        for (long it = 0; it < per_level; ++it) {
            Tensor y = sample(opt.batch_size, rng);
            Tensor noisy = y;
            for (double& v : noisy.v) v += level.sigma * rng.normal();
            auto f = forward(spec, state, noisy, RunMode::train);
            double loss = 0.0;
            Tensor up = Tensor::zeros_like(f.output);
            const double inv = 1.0 / static_cast<double>(f.output.v.size());
            for (std::size_t i = 0; i < f.output.v.size(); ++i) {
                const double d = f.output.v[i] - y.v[i];
                loss += d * d * inv;
                up.v[i] = 2.0 * d * inv;
            }
            if (!std::isfinite(loss))
                fail<DivergenceError>("DAE training diverged at sigma=", level.sigma,
                                      ", iteration ", it);
            auto b = backward(spec, state, f.tape, up);
            optimizer_step(state, b.grads, opt);
        }
        out.states.push_back(state);
        out.sigmas.push_back(level.sigma);
    }
    return out;
}

// (f(y) − y)/σ² — the denoiser-residual estimate of ∇log p(y), exact as σ→0
// with O(σ²) bias.
inline Tensor denoiser_gradient(const NetSpec& spec, const NetState& state, double sigma,
                                const Tensor& y) {
    require(sigma > 0.0, "denoiser_gradient: sigma must be positive");
    Tensor g = infer(spec, state, y);
    const double inv = 1.0 / (sigma * sigma);
    for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] = (g.v[i] - y.v[i]) * inv;
    return g;
}

// One denoiser-guided generator run: spec/state/optimizer plus the routing
// (affine projector for AffDG, downsampler + soft penalty for SoftDG) and the
// pretrained denoiser checkpoints.
struct GuidedModel {
    NetSpec gen_spec;
    NetState gen;
    OptimConfig gen_opt;
    const DaeCheckpoints* dae = nullptr;
    int dae_level = 0;
    const AffineProjector* projector = nullptr;
    const DownsampleOperator* down = nullptr;
    SoftConstraintConfig soft;
    int skipped_batches = 0;  // batches dropped for non-finite guidance
};

// Ascend E_x log p(ŷ) using the denoiser residual as the upstream signal.
// Returns false when the batch was skipped (non-finite guidance).
inline bool denoiser_guided_step(GuidedModel& m, const Tensor& x_lr) {
    require(m.dae != nullptr, "denoiser_guided_step: missing denoiser checkpoints");
    require((m.projector != nullptr) != (m.down != nullptr),
            "denoiser_guided_step: set exactly one of projector (affine) or down (soft)");
    const int n = x_lr.dim(0);
    auto gfwd = forward(m.gen_spec, m.gen, x_lr, RunMode::train);
    const bool affine = m.projector != nullptr;
    const Tensor yhat = affine ? m.projector->project(gfwd.output, x_lr) : gfwd.output;
    const Tensor score = denoiser_gradient(m.dae->spec, m.dae->states[m.dae_level],
                                           m.dae->sigmas[m.dae_level], yhat);
    if (!score.all_finite()) {
        ++m.skipped_batches;
        return false;
    }
    Tensor up = Tensor::zeros_like(score);
    up.add_scaled(score, -1.0 / n);  // descend −mean log p
    if (affine) {
        up = m.projector->project_gradient(up);
    } else {
        detail::add_soft_constraint_grad(up, yhat, x_lr, *m.down, m.soft.lambda);
    }
    auto gb = backward(m.gen_spec, m.gen, gfwd.tape, up);
    optimizer_step(m.gen, gb.grads, m.gen_opt);
    return true;
}

}  // namespace affmap
