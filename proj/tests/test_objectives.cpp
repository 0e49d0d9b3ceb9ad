// Training criteria: pixel losses, adversarial steps, denoiser guidance.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "affmap/core/rng.hpp"
#include "affmap/core/tensor.hpp"
#include "affmap/densities/kde.hpp"
#include "affmap/densities/oracles.hpp"
#include "affmap/densities/swiss_roll.hpp"
#include "affmap/linops/projector.hpp"
#include "affmap/metrics/metrics.hpp"
#include "affmap/objectives/denoiser.hpp"
#include "affmap/objectives/gan.hpp"
#include "affmap/objectives/pixel.hpp"
#include "affmap/objectives/stochastic.hpp"

using namespace affmap;

namespace {

AffineProjector toy_projector() {
    Eigen::MatrixXd a(1, 2);
    a << 0.5, 0.5;
    auto op = DownsampleOperator::matrix(a);
    return AffineProjector::make(op, closed_form_pseudoinverse(op));
}

}  // namespace

TEST_CASE("pixel losses reproduce hand-computed values") {
    Tensor y({1, 1}, {0.4});
    Tensor yhat({1, 1}, {0.6});
    const auto mse = pixel_loss(yhat, y, PixelLoss::mse);
    const auto mae = pixel_loss(yhat, y, PixelLoss::mae);
    REQUIRE(std::abs(mse.value - 0.04) <= 1e-15);
    REQUIRE(std::abs(mae.value - 0.2) <= 1e-15);

    const auto zero = pixel_loss(y, y, PixelLoss::mse);
    REQUIRE(zero.value == 0.0);
    for (double g : zero.grad.v) REQUIRE(g == 0.0);

    Tensor bad({2, 1});
    REQUIRE_THROWS(pixel_loss(bad, y, PixelLoss::mse));
}

TEST_CASE("pixel loss gradients match central finite differences") {
    Rng rng(3);
    Tensor y = Tensor::randn({2, 3}, rng);
    Tensor yhat = Tensor::randn({2, 3}, rng);
    const double h = 1e-6;
    for (PixelLoss kind : {PixelLoss::mse, PixelLoss::mae}) {
        const auto base = pixel_loss(yhat, y, kind);
        for (std::size_t i = 0; i < yhat.numel(); ++i) {
            Tensor p = yhat, m = yhat;
            p.v[i] += h;
            m.v[i] -= h;
            const double fd =
                (pixel_loss(p, y, kind).value - pixel_loss(m, y, kind).value) / (2 * h);
            REQUIRE(std::abs(fd - base.grad.v[i]) <= 1e-6 * (1.0 + std::abs(fd)));
        }
    }
}

TEST_CASE("instance noise schedules anneal monotonically and stay in their band") {
    InstanceNoiseSchedule lin;
    lin.family = InstanceNoiseSchedule::Family::linear;
    lin.sigma_start = 1.0;
    lin.sigma_end = 0.25;
    lin.horizon = 100;
    lin.validate();
    lin.reset();
    double prev = 1e9;
    for (long t = 0; t <= 150; ++t) {
        const double s = lin.advance(t, 1.0);
        REQUIRE(s <= prev + 1e-15);
        REQUIRE(s >= 0.25);
        REQUIRE(s <= 1.0);
        prev = s;
    }
    REQUIRE(std::abs(lin.envelope(0) - 1.0) <= 1e-15);
    REQUIRE(std::abs(lin.envelope(50) - 0.625) <= 1e-15);
    REQUIRE(std::abs(lin.envelope(100) - 0.25) <= 1e-15);
    REQUIRE(std::abs(lin.envelope(140) - 0.25) <= 1e-15);

    InstanceNoiseSchedule ad = lin;
    ad.family = InstanceNoiseSchedule::Family::adaptive;
    ad.reset();
    const double target = ad.target_d_loss;
    // An easy discriminator (tiny loss) pushes sigma up against the envelope;
    // a losing one (large loss) lets it decay 5% per step until sigma_end.
    ad.advance(0, target);  // inside the dead band: unchanged
    REQUIRE(std::abs(ad.sigma - 1.0) <= 1e-15);
    const double up = ad.advance(1, 0.1);
    REQUIRE(up <= ad.envelope(1) + 1e-15);
    double cur = up;
    for (long t = 2; t < 60; ++t) {
        const double nxt = ad.advance(t, 3.0);
        REQUIRE(nxt <= cur + 1e-15);
        cur = nxt;
    }
    REQUIRE(std::abs(cur - 0.25) <= 0.05);

    InstanceNoiseSchedule bad;
    bad.family = InstanceNoiseSchedule::Family::linear;
    bad.sigma_start = 0.1;
    bad.sigma_end = 0.5;
    REQUIRE_THROWS(bad.validate());
}

TEST_CASE("adversarial step at the zero-logit equilibrium reports the textbook losses") {
    auto proj = toy_projector();
    GanModel m;
    m.gen_spec = NetSpec::make(1);
    m.gen_spec.dense(1, 8).relu().dense(8, 2);
    m.disc_spec = NetSpec::make(2);
    m.disc_spec.dense(2, 8).relu().dense(8, 1);
    m.gen = init_state(m.gen_spec);
    m.disc = init_state(m.disc_spec);
    for (auto& p : m.disc.params) {  // zero logits: D == 0.5 everywhere
        p.W.fill(0.0);
        p.b.fill(0.0);
    }
    m.gen_opt.lr = 0.0;   // freeze both nets so the reported losses are exact
    m.disc_opt.lr = 0.0;
    m.projector = &proj;

    Rng rng(4);
    const Tensor real = sample_swiss_roll(SwissRollParams(), 32, rng);
    const Tensor x = observe_lr(real);
    const auto losses = gan_step(m, real, x, 0.0, 1, rng);
    REQUIRE(std::abs(losses.d_loss - 2.0 * std::log(2.0)) <= 1e-12);
    REQUIRE(std::abs(losses.g_loss) <= 1e-12);
}

TEST_CASE("generator update direction matches finite differences of the adversarial loss") {
    auto proj = toy_projector();
    auto base = [&] {
        GanModel m;
        m.gen_spec = NetSpec::make(6);
        m.gen_spec.dense(1, 6).relu().dense(6, 2);
        m.disc_spec = NetSpec::make(7);
        m.disc_spec.dense(2, 6).relu().dense(6, 1);
        m.gen = init_state(m.gen_spec);
        m.disc = init_state(m.disc_spec);
        m.disc_opt.lr = 0.0;  // frozen discriminator
        m.gen_opt.algorithm = OptimConfig::Algo::sgd;
        m.gen_opt.lr = 1.0;  // parameter delta IS the negative gradient
        m.projector = &proj;
        return m;
    };

    Rng data_rng(8);
    const Tensor real = sample_swiss_roll(SwissRollParams(), 8, data_rng);
    const Tensor x = observe_lr(real);

    // -E z(project(f(x))) as a pure function of the generator parameters.
    auto g_loss_at = [&](GanModel& m) {
        const Tensor yhat = proj.project(infer(m.gen_spec, m.gen, x), x);
        const Tensor z = infer(m.disc_spec, m.disc, yhat);
        double s = 0.0;
        for (double v : z.v) s -= v;
        return s / z.v.size();
    };

    GanModel stepped = base();
    Rng rng(9);
    gan_step(stepped, real, x, 0.0, 1, rng);

    GanModel probe = base();
    const double h = 1e-6;
    for (std::size_t layer : {std::size_t{0}, std::size_t{2}}) {
        for (std::size_t j = 0; j < probe.gen.params[layer].W.numel(); j += 5) {
            const double keep = probe.gen.params[layer].W.v[j];
            probe.gen.params[layer].W.v[j] = keep + h;
            const double up = g_loss_at(probe);
            probe.gen.params[layer].W.v[j] = keep - h;
            const double dn = g_loss_at(probe);
            probe.gen.params[layer].W.v[j] = keep;
            const double fd = (up - dn) / (2 * h);
            const double applied = keep - stepped.gen.params[layer].W.v[j];  // lr = 1
            REQUIRE(std::abs(applied - fd) <= 1e-5 * (1.0 + std::abs(fd)));
        }
    }
}

TEST_CASE("affine adversarial training never leaves the consistent subspace") {
    auto proj = toy_projector();
    GanModel m;
    m.gen_spec = NetSpec::make(11);
    m.gen_spec.dense(1, 16).relu().dense(16, 2);
    m.disc_spec = NetSpec::make(12);
    m.disc_spec.dense(2, 16).relu().dense(16, 1);
    m.gen = init_state(m.gen_spec);
    m.disc = init_state(m.disc_spec);
    m.gen_opt.lr = 1e-3;
    m.disc_opt.lr = 1e-3;
    m.projector = &proj;

    Rng rng(13);
    for (int it = 0; it < 30; ++it) {
        const Tensor real = sample_swiss_roll(SwissRollParams(), 16, rng);
        const Tensor x = observe_lr(real);
        gan_step(m, real, x, 0.0, 1, rng);
        const Tensor yhat = proj.project(infer(m.gen_spec, m.gen, x), x);
        REQUIRE(lr_consistency(x, yhat, proj.down) <= 1e-12);
    }
}

TEST_CASE("instance noise lifts the discriminator loss on separable point masses") {
    auto proj = toy_projector();
    auto make = [&] {
        GanModel m;
        m.gen_spec = NetSpec::make(14);
        m.gen_spec.dense(1, 8).relu().dense(8, 2);
        m.disc_spec = NetSpec::make(15);
        m.disc_spec.dense(2, 16).relu().dense(16, 1);
        m.gen = init_state(m.gen_spec);
        m.disc = init_state(m.disc_spec);
        m.gen_opt.lr = 0.0;  // generator pinned: two fixed point masses
        m.disc_opt.lr = 1e-2;
        m.projector = &proj;
        return m;
    };

    GanModel m = make();
    Tensor real({32, 2});
    for (int i = 0; i < 32; ++i) {
        real.v[2 * i] = 3.0;
        real.v[2 * i + 1] = 3.0;
    }
    const Tensor x = observe_lr(real);  // generator output is fixed at f(3)

    Rng rng(16);
    double clean = 0.0;
    for (int it = 0; it < 300; ++it) clean = gan_step(m, real, x, 0.0, 1, rng).d_loss;
    REQUIRE(clean < 0.5);  // separable: discriminator wins

    GanModel noisy = m;
    Rng ra(17), rb(17);
    const double with_noise = gan_step(noisy, real, x, 3.0, 1, ra).d_loss;
    const double without = gan_step(m, real, x, 0.0, 1, rb).d_loss;
    REQUIRE(with_noise > without + 0.2);
}

TEST_CASE("saturated discriminator outputs are counted") {
    auto proj = toy_projector();
    GanModel m;
    m.gen_spec = NetSpec::make(18);
    m.gen_spec.dense(1, 4).relu().dense(4, 2);
    m.disc_spec = NetSpec::make(19);
    m.disc_spec.dense(2, 1);
    m.gen = init_state(m.gen_spec);
    m.disc = init_state(m.disc_spec);
    m.disc.params[0].W.fill(0.0);
    m.disc.params[0].b.fill(100.0);  // |z| far past the probability clamp
    m.gen_opt.lr = 0.0;
    m.disc_opt.lr = 0.0;
    m.projector = &proj;

    Rng rng(20);
    const Tensor real = sample_swiss_roll(SwissRollParams(), 16, rng);
    const Tensor x = observe_lr(real);
    gan_step(m, real, x, 0.0, 1, rng);
    REQUIRE(m.saturation_warnings == 1);
}

TEST_CASE("soft-constraint gradient matches finite differences of the penalty") {
    Eigen::MatrixXd a(1, 2);
    a << 0.5, 0.5;
    const auto op = DownsampleOperator::matrix(a);
    const double lambda = 2.5;

    Rng rng(21);
    const Tensor yhat = Tensor::randn({3, 2}, rng);
    const Tensor x = Tensor::randn({3, 1}, rng);
    auto penalty = [&](const Tensor& y) {
        const Tensor r = op.apply(y);
        double s = 0.0;
        for (std::size_t i = 0; i < r.numel(); ++i) s += std::abs(r.v[i] - x.v[i]);
        return lambda * s / static_cast<double>(r.numel());
    };

    Tensor grad = Tensor::zeros_like(yhat);
    detail::add_soft_constraint_grad(grad, yhat, x, op, lambda);

    const double h = 1e-7;
    for (std::size_t i = 0; i < yhat.numel(); ++i) {
        Tensor p = yhat, mns = yhat;
        p.v[i] += h;
        mns.v[i] -= h;
        const double fd = (penalty(p) - penalty(mns)) / (2 * h);
        REQUIRE(std::abs(fd - grad.v[i]) <= 1e-6 * (1.0 + std::abs(fd)));
    }
}

TEST_CASE("closed-form density-ratio logits recover the Gaussian KL") {
    // z(y) = log p(y)/q(y) for q=N(0,1), p=N(1,1) is the linear map y - 0.5.
    auto spec = NetSpec::make(1);
    spec.dense(1, 1);
    auto st = init_state(spec);
    st.params[0].W.v[0] = 1.0;
    st.params[0].b.v[0] = -0.5;

    Rng rng(22);
    Tensor q({100000, 1});
    for (double& v : q.v) v = rng.normal();
    const double est = discriminator_as_kl_estimator(spec, st, q);
    REQUIRE(std::abs(est - 0.5) <= 0.05);
}

TEST_CASE("a trained discriminator estimates small Gaussian KLs") {
    auto run = [&](double mu, double s, double want, double tol) {
        auto spec = NetSpec::make(23);
        spec.dense(1, 64).relu().dense(64, 64).relu().dense(64, 1);
        auto st = init_state(spec);
        Rng rng(24);
        const int n = 20000;
        Tensor q({n, 1}), p({n, 1});
        for (double& v : q.v) v = rng.normal();
        for (double& v : p.v) v = mu + s * rng.normal();
        OptimConfig opt;
        opt.lr = 1e-3;
        opt.batch_size = 128;
        opt.iterations = 4000;
        fit_discriminator(spec, st, q, p, opt, rng);

        Tensor fresh_q({n, 1});
        for (double& v : fresh_q.v) v = rng.normal();
        const double est = discriminator_as_kl_estimator(spec, st, fresh_q);
        REQUIRE(std::abs(est - want) <= tol);
    };
    run(1.0, 1.0, 0.5, 0.1);                                  // mean shift
    run(0.0, 1.0, 0.0, 0.05);                                 // identical laws
    run(0.0, 2.0, 0.5 * (0.25 + std::log(4.0) - 1.0), 0.1);   // variance change
}

TEST_CASE("denoiser residual of a perfect identity map is exactly zero") {
    auto spec = NetSpec::make(25);
    spec.dense(2, 2);
    auto st = init_state(spec);
    st.params[0].W = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
    st.params[0].b.fill(0.0);
    Rng rng(26);
    const Tensor y = Tensor::randn({5, 2}, rng);
    const Tensor g = denoiser_gradient(spec, st, 0.3, y);
    for (double v : g.v) REQUIRE(v == 0.0);
}

TEST_CASE("analytic denoiser residual error shrinks fourfold per noise halving") {
    const std::vector<double> mu{0.7, -0.4};
    const double s = 0.9;
    Rng rng(27);
    std::vector<double> y{1.9, 0.5};
    double prev_err = -1.0;
    for (double sigma : {0.4, 0.2, 0.1}) {
        const auto f = analytic_denoiser_gaussian(mu, s, sigma, y);
        double err = 0.0;
        for (int i = 0; i < 2; ++i) {
            const double est = (f[i] - y[i]) / (sigma * sigma);
            const double score = (mu[i] - y[i]) / (s * s);
            err += std::abs(est - score);
        }
        if (prev_err > 0.0) {
            const double ratio = prev_err / err;
            REQUIRE(ratio >= 3.0);
            REQUIRE(ratio <= 5.0);
        }
        prev_err = err;
    }
}

TEST_CASE("denoiser pretraining approaches the analytic Gaussian denoiser") {
    const std::vector<double> mu{1.5, -0.8};
    const double s = 0.5;
    auto spec = NetSpec::make(28);
    spec.dense(2, 64).relu().dense(64, 64).relu().dense(64, 2);
    DataSampler sampler = [&](int n, Rng& r) {
        Tensor y({n, 2});
        for (int i = 0; i < n; ++i) {
            y.v[2 * i] = mu[0] + s * r.normal();
            y.v[2 * i + 1] = mu[1] + s * r.normal();
        }
        return y;
    };
    const auto schedule = DenoiserSchedule::from_sigmas({0.3});
    OptimConfig opt;
    opt.lr = 1e-3;
    opt.batch_size = 128;
    opt.iterations = 4000;
    Rng rng(29);
    const auto ckpt = dae_pretrain(spec, sampler, schedule, opt, rng);

    Rng eval(30);
    double gap = 0.0;
    const int n_eval = 500;
    for (int i = 0; i < n_eval; ++i) {
        std::vector<double> y{mu[0] + s * eval.normal() + 0.3 * eval.normal(),
                              mu[1] + s * eval.normal() + 0.3 * eval.normal()};
        const auto want = analytic_denoiser_gaussian(mu, s, 0.3, y);
        Tensor in({1, 2}, {y[0], y[1]});
        const Tensor got = infer(ckpt.spec, ckpt.states[0], in);
        gap += std::hypot(got.v[0] - want[0], got.v[1] - want[1]);
    }
    REQUIRE(gap / n_eval <= 0.05);
}

TEST_CASE("very heavy noise collapses the trained denoiser to the dataset mean") {
    const std::vector<double> mu{1.5, -0.8};
    const double s = 0.5, sigma = 10.0;
    auto spec = NetSpec::make(31);
    spec.dense(2, 64).relu().dense(64, 2);
    DataSampler sampler = [&](int n, Rng& r) {
        Tensor y({n, 2});
        for (int i = 0; i < n; ++i) {
            y.v[2 * i] = mu[0] + s * r.normal();
            y.v[2 * i + 1] = mu[1] + s * r.normal();
        }
        return y;
    };
    OptimConfig opt;
    opt.lr = 1e-3;
    opt.batch_size = 128;
    opt.iterations = 6000;
    Rng rng(32);
    const auto ckpt = dae_pretrain(spec, sampler, DenoiserSchedule::from_sigmas({sigma}), opt, rng);

    Rng eval(33);
    double gap = 0.0;
    const int n_eval = 200;
    for (int i = 0; i < n_eval; ++i) {
        Tensor in({1, 2}, {mu[0] + s * eval.normal() + sigma * eval.normal(),
                           mu[1] + s * eval.normal() + sigma * eval.normal()});
        const Tensor got = infer(ckpt.spec, ckpt.states[0], in);
        gap += std::hypot(got.v[0] - mu[0], got.v[1] - mu[1]);
    }
    REQUIRE(gap / n_eval <= 0.2);
}

TEST_CASE("denoiser schedules validate ordering and assign swap points evenly") {
    REQUIRE_THROWS(DenoiserSchedule::from_sigmas({0.3, 0.4}));
    REQUIRE_THROWS(DenoiserSchedule::from_sigmas({0.3, -0.1}));
    auto s = DenoiserSchedule::toy();
    REQUIRE(s.levels.size() == 4);
    s.assign_swap_points(8000);
    REQUIRE(s.levels[0].swap_in == 0);
    REQUIRE(s.levels[1].swap_in == 2000);
    REQUIRE(s.levels[3].swap_in == 6000);
    REQUIRE(s.level_at(0) == 0);
    REQUIRE(s.level_at(1999) == 0);
    REQUIRE(s.level_at(2000) == 1);
    REQUIRE(s.level_at(7999) == 3);
}

TEST_CASE("guided chain gradient matches finite differences of log-density after projection") {
    const auto kde = KdeModel::toy_reference(7, 5000, 0.2);
    auto proj = toy_projector();

    auto spec = NetSpec::make(34);
    spec.dense(1, 8).relu().dense(8, 2);
    auto st = init_state(spec);
    Tensor x({3, 1}, {0.3, -0.9, 1.4});

    // L(theta) = mean log-kde(project(f_theta(x), x)).
    auto loss_at = [&] {
        const Tensor yhat = proj.project(infer(spec, st, x), x);
        double s = 0.0;
        for (int i = 0; i < 3; ++i) s += kde.log_density(yhat.v[2 * i], yhat.v[2 * i + 1]);
        return s / 3.0;
    };

    auto fw = forward(spec, st, x, RunMode::train);
    const Tensor yhat = proj.project(fw.output, x);
    Tensor up({3, 2});
    for (int i = 0; i < 3; ++i) {
        double g1, g2;
        kde.grad_log_density(yhat.v[2 * i], yhat.v[2 * i + 1], g1, g2);
        up.v[2 * i] = g1 / 3.0;
        up.v[2 * i + 1] = g2 / 3.0;
    }
    const Tensor routed = proj.project_gradient(up);
    const auto bw = backward(spec, st, fw.tape, routed);

    const double h = 1e-5;
    for (std::size_t layer : {std::size_t{0}, std::size_t{2}}) {
        Tensor& W = st.params[layer].W;
        for (std::size_t j = 0; j < W.numel(); j += 3) {
            const double keep = W.v[j];
            W.v[j] = keep + h;
            const double upv = loss_at();
            W.v[j] = keep - h;
            const double dnv = loss_at();
            W.v[j] = keep;
            const double fd = (upv - dnv) / (2 * h);
            REQUIRE(std::abs(fd - bw.grads[layer].W.v[j]) <= 1e-3 * (1.0 + std::abs(fd)));
        }
    }
}

TEST_CASE("guided ascent with an exact linear denoiser finds the restricted mode") {
    // For p_Y = N(mu, s^2 I) the optimal denoiser is linear and exactly
    // representable; guided ascent must then converge to the projection of mu
    // onto the observation line: argmax_{Ay=x} log N(y; mu, s^2).
    const std::vector<double> mu{1.0, -2.0};
    const double s = 0.8, sigma = 0.25;

    DaeCheckpoints dae;
    dae.spec = NetSpec::make(35);
    dae.spec.dense(2, 2);
    auto dst = init_state(dae.spec);
    const double shrink = s * s / (s * s + sigma * sigma);
    dst.params[0].W = Tensor({2, 2}, {shrink, 0.0, 0.0, shrink});
    dst.params[0].b = Tensor({2}, {(1.0 - shrink) * mu[0], (1.0 - shrink) * mu[1]});
    dae.states.push_back(dst);
    dae.sigmas.push_back(sigma);

    auto proj = toy_projector();
    GuidedModel m;
    m.gen_spec = NetSpec::make(36);
    m.gen_spec.dense(1, 16).relu().dense(16, 2);
    m.gen = init_state(m.gen_spec);
    m.gen_opt.lr = 3e-3;
    m.dae = &dae;
    m.projector = &proj;

    Tensor x({1, 1}, {0.4});
    for (int it = 0; it < 3000; ++it) REQUIRE(denoiser_guided_step(m, x));

    const Tensor yhat = proj.project(infer(m.gen_spec, m.gen, x), x);
    // Closed form: y* = mu + A'(AA')^{-1}(x - A mu) with A = (0.5, 0.5).
    const double a_mu = 0.5 * (mu[0] + mu[1]);
    const double corr = (0.4 - a_mu) / 0.5;  // A A' = 0.5
    const double want1 = mu[0] + 0.5 * corr, want2 = mu[1] + 0.5 * corr;
    REQUIRE(std::abs(yhat.v[0] - want1) <= 0.05);
    REQUIRE(std::abs(yhat.v[1] - want2) <= 0.05);
    REQUIRE(m.skipped_batches == 0);
}

TEST_CASE("score is nearly zero at a density mode and large away from it") {
    const auto kde = KdeModel::toy_reference(7, 20000, 0.2);
    // Ascend from a decent starting point to a genuine 2D mode.
    double y1 = map_oracle(kde, 0.3).y1, y2 = 2.0 * 0.3 - y1;
    for (int it = 0; it < 400; ++it) {
        double g1, g2;
        kde.grad_log_density(y1, y2, g1, g2);
        y1 += 5e-3 * g1;
        y2 += 5e-3 * g2;
    }
    double g1, g2;
    kde.grad_log_density(y1, y2, g1, g2);
    const double at_mode = std::hypot(g1, g2);

    Rng rng(37);
    const Tensor pts = sample_swiss_roll(SwissRollParams(), 200, rng);
    double avg = 0.0;
    for (int i = 0; i < 200; ++i) {
        kde.grad_log_density(pts.v[2 * i], pts.v[2 * i + 1], g1, g2);
        avg += std::hypot(g1, g2);
    }
    avg /= 200;
    REQUIRE(at_mode <= 0.1 * avg);
}

TEST_CASE("stochastic generator samples stay consistent and spread along the line") {
    auto proj = toy_projector();
    auto spec = NetSpec::make(38);
    spec.dense(3, 16).relu().dense(16, 2);  // input [x, z1, z2]
    auto st = init_state(spec);

    Tensor x({1, 1}, {0.7});
    Rng rng(39);
    const Tensor samples = stochastic_generator_sample(spec, st, proj, x, 64, 2, rng);
    REQUIRE(samples.shape == std::vector<int>{64, 2});

    double spread = 0.0;
    for (int i = 0; i < 64; ++i) {
        REQUIRE(std::abs(0.5 * (samples.v[2 * i] + samples.v[2 * i + 1]) - 0.7) <= 1e-10);
        spread += std::abs(samples.v[2 * i] - samples.v[0]);
    }
    REQUIRE(spread > 1e-3);  // the noise input actually moves the output
}
