#pragma once

#include <cmath>

#include "affmap/core/error.hpp"
#include "affmap/core/rng.hpp"
#include "affmap/core/tensor.hpp"
#include "affmap/linops/projector.hpp"
#include "affmap/nn/net.hpp"
#include "affmap/nn/optim.hpp"

namespace affmap {

// Discriminators end in a raw score z; probabilities enter only through
// softplus/sigmoid of z, which keeps both losses finite for any z. The
// probability clamp (ε, 1−ε) therefore only defines when an output counts as
// saturated: |z| > log((1−ε)/ε).
inline const double kDiscProbEps = 1e-7;
inline const double kDiscLogitClamp = std::log((1.0 - kDiscProbEps) / kDiscProbEps);

struct GanLosses {
    double d_loss = 0.0;  // −E log D(y) − E log(1−D(ŷ))
    double g_loss = 0.0;  // −E log[D(ŷ)/(1−D(ŷ))] = −E z(ŷ)
};

// Instance-noise level σ(t) applied to both real and generated samples.
// linear: deterministic ramp σ_start → σ_end over the horizon. adaptive:
// ±5% multiplicative feedback that holds the discriminator loss near its
// equilibrium 2·ln2, clamped between σ_end and the linear ramp — so the
// envelope still anneals to σ_end while the controller absorbs transients.
struct InstanceNoiseSchedule {
    enum class Family { none, linear, adaptive };
    Family family = Family::none;
    double sigma_start = 0.0;
    double sigma_end = 0.0;
    long horizon = 1;
    double target_d_loss = 2.0 * std::log(2.0);
    double sigma = 0.0;  // current level (adaptive state)

    void validate() const {
        require(sigma_start >= sigma_end && sigma_end >= 0.0,
                "instance noise requires sigma_start >= sigma_end >= 0");
        require(horizon >= 1, "instance noise horizon must be >= 1");
    }

    void reset() { sigma = family == Family::none ? 0.0 : sigma_start; }

    double envelope(long t) const {
        const double a = std::min(1.0, static_cast<double>(t) / static_cast<double>(horizon));
        return sigma_start + (sigma_end - sigma_start) * a;
    }

    // Level to use for iteration t; call once per iteration with the previous
    // iteration's d_loss (any value on the first call).
    double advance(long t, double last_d_loss) {
        switch (family) {
            case Family::none: sigma = 0.0; break;
            case Family::linear: sigma = envelope(t); break;
            case Family::adaptive:
                if (last_d_loss < target_d_loss - 0.1) sigma *= 1.05;
                else if (last_d_loss > target_d_loss + 0.1) sigma *= 0.95;
                sigma = std::max(sigma_end, std::min(sigma, envelope(t)));
                break;
        }
        return sigma;
    }
};

struct SoftConstraintConfig {
    double lambda = 10.0;  // weight on ℓ_LR = MAE(x, Aŷ)
};

// Everything one adversarial training run owns. Exactly one of projector
// (affine routing) or down (soft-constraint routing) is set.
struct GanModel {
    NetSpec gen_spec, disc_spec;
    NetState gen, disc;
    OptimConfig gen_opt, disc_opt;
    const AffineProjector* projector = nullptr;
    const DownsampleOperator* down = nullptr;
    SoftConstraintConfig soft;
    int saturation_warnings = 0;  // batches with >50% of |z| beyond the clamp
};

namespace detail {

inline void add_noise(Tensor& t, double sigma, Rng& rng) {
    if (sigma <= 0.0) return;
    for (double& v : t.v) v += sigma * rng.normal();
}

// d softplus(−z)/dz = −sigmoid(−z); d softplus(z)/dz = sigmoid(z).
inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// λ·MAE(x, Aŷ) gradient w.r.t. ŷ: λ·Aᵀ sign(Aŷ−x) / (batch · d_lr).
inline void add_soft_constraint_grad(Tensor& upstream, const Tensor& yhat, const Tensor& x,
                                     const DownsampleOperator& down, double lambda) {
    Tensor r = down.apply(yhat);
    require(r.same_shape(x), "soft constraint: downsample/observation shape mismatch");
    const double scale = lambda / static_cast<double>(r.v.size());
    for (std::size_t i = 0; i < r.v.size(); ++i) {
        const double d = r.v[i] - x.v[i];
        r.v[i] = (d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0) * scale;
    }
    const Tensor back = down.apply_adjoint(r);
    upstream.add_scaled(back, 1.0);
}

}  // namespace detail

// One adversarial iteration: k_d discriminator updates (instance noise σ on
// both real and generated samples, fresh draws each pass), then one generator
// update on −E z(ŷ) routed through the affine projection (AffGAN) or
// augmented with the soft LR penalty (SoftGAN).
inline GanLosses gan_step(GanModel& m, const Tensor& real, const Tensor& x_lr, double sigma,
                          int k_d, Rng& rng) {
    require(k_d >= 1, "gan_step: k_d must be >= 1");
    require(sigma >= 0.0, "gan_step: negative instance noise");
    require((m.projector != nullptr) != (m.down != nullptr),
            "gan_step: set exactly one of projector (affine) or down (soft)");
    require(real.all_finite() && x_lr.all_finite(), "gan_step: non-finite batch");
    const int n = real.dim(0);
    GanLosses out;

    auto gfwd = forward(m.gen_spec, m.gen, x_lr, RunMode::train);
    const bool affine = m.projector != nullptr;
    const Tensor yhat = affine ? m.projector->project(gfwd.output, x_lr) : gfwd.output;

    for (int s = 0; s < k_d; ++s) {
        Tensor noisy_real = real, noisy_fake = yhat;
        detail::add_noise(noisy_real, sigma, rng);
        detail::add_noise(noisy_fake, sigma, rng);
        auto fr = forward(m.disc_spec, m.disc, noisy_real, RunMode::train);
        auto ff = forward(m.disc_spec, m.disc, noisy_fake, RunMode::train);
        double d_loss = 0.0;
        int saturated = 0;
        Tensor up_r = Tensor::zeros_like(fr.output), up_f = Tensor::zeros_like(ff.output);
        for (int i = 0; i < n; ++i) {
            const double zr = fr.output.v[i], zf = ff.output.v[i];
            d_loss += (std::log1p(std::exp(-std::abs(zr))) + std::max(-zr, 0.0)) / n;
            d_loss += (std::log1p(std::exp(-std::abs(zf))) + std::max(zf, 0.0)) / n;
            up_r.v[i] = -detail::sigmoid(-zr) / n;
            up_f.v[i] = detail::sigmoid(zf) / n;
            saturated += std::abs(zr) > kDiscLogitClamp;
            saturated += std::abs(zf) > kDiscLogitClamp;
        }
        if (saturated > n) ++m.saturation_warnings;
        auto br = backward(m.disc_spec, m.disc, fr.tape, up_r);
        auto bf = backward(m.disc_spec, m.disc, ff.tape, up_f);
        add_grads(br.grads, bf.grads);
        optimizer_step(m.disc, br.grads, m.disc_opt);
        out.d_loss = d_loss;
    }

    Tensor noisy = yhat;
    detail::add_noise(noisy, sigma, rng);
    auto df = forward(m.disc_spec, m.disc, noisy, RunMode::train);
    out.g_loss = 0.0;
    Tensor up = Tensor::zeros_like(df.output);
    for (int i = 0; i < n; ++i) {
        out.g_loss -= df.output.v[i] / n;
        up.v[i] = -1.0 / n;
    }
    auto db = backward(m.disc_spec, m.disc, df.tape, up);
    Tensor gen_up = db.input_grad;
    if (affine) {
        gen_up = m.projector->project_gradient(gen_up);
    } else {
        detail::add_soft_constraint_grad(gen_up, yhat, x_lr, *m.down, m.soft.lambda);
    }
    auto gb = backward(m.gen_spec, m.gen, gfwd.tape, gen_up);
    optimizer_step(m.gen, gb.grads, m.gen_opt);
    return out;
}

// Train a fresh discriminator to separate two fixed sample sets (minibatched
// logistic regression in logit space). Used by the KL estimator below.
inline void fit_discriminator(const NetSpec& spec, NetState& state, const Tensor& samples_q,
                              const Tensor& samples_p, const OptimConfig& opt, Rng& rng) {
    const int nq = samples_q.dim(0), np = samples_p.dim(0), d = samples_q.dim(1);
    require(samples_p.dim(1) == d, "fit_discriminator: dimension mismatch");
    const int bs = opt.batch_size;
    Tensor bq({bs, d}), bp({bs, d});
    for (long it = 0; it < opt.iterations; ++it) {
        for (int i = 0; i < bs; ++i) {
            const int iq = rng.integer(nq), ip = rng.integer(np);
            for (int j = 0; j < d; ++j) {
                bq.v[static_cast<std::size_t>(i) * d + j] =
                    samples_q.v[static_cast<std::size_t>(iq) * d + j];
                bp.v[static_cast<std::size_t>(i) * d + j] =
                    samples_p.v[static_cast<std::size_t>(ip) * d + j];
            }
        }
        auto fp = forward(spec, state, bp, RunMode::train);  // label 1 (real)
        auto fq = forward(spec, state, bq, RunMode::train);  // label 0 (fake)
        Tensor up_p = Tensor::zeros_like(fp.output), up_q = Tensor::zeros_like(fq.output);
        for (int i = 0; i < bs; ++i) {
            up_p.v[i] = -detail::sigmoid(-fp.output.v[i]) / bs;
            up_q.v[i] = detail::sigmoid(fq.output.v[i]) / bs;
        }
        auto gp = backward(spec, state, fp.tape, up_p);
        auto gq = backward(spec, state, fq.tape, up_q);
        add_grads(gp.grads, gq.grads);
        optimizer_step(state, gp.grads, opt);
    }
}

// With D trained to separate q (label 0) from p (label 1), the Bayes-optimal
// score is z*(y) = log[p(y)/q(y)], so −E_{y∼q} z(y) estimates KL[q‖p].
// Evaluate on samples not used for fitting to avoid an optimistic bias.
inline double discriminator_as_kl_estimator(const NetSpec& spec, const NetState& state,
                                            const Tensor& eval_q) {
    const Tensor z = infer(spec, state, eval_q);
    double acc = 0.0;
    for (double v : z.v) acc -= v;
    return acc / static_cast<double>(z.v.size());
}

}  // namespace affmap
