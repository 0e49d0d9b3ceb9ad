#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "affmap/cli/config.hpp"
#include "affmap/core/error.hpp"
#include "affmap/core/rng.hpp"
#include "affmap/core/tensor.hpp"
#include "affmap/densities/kde.hpp"
#include "affmap/densities/oracles.hpp"
#include "affmap/densities/swiss_roll.hpp"
#include "affmap/io/container.hpp"
#include "affmap/io/csv.hpp"
#include "affmap/io/image.hpp"
#include "affmap/linops/downsample.hpp"
#include "affmap/linops/projector.hpp"
#include "affmap/linops/pseudoinverse.hpp"
#include "affmap/metrics/metrics.hpp"
#include "affmap/nn/net.hpp"
#include "affmap/nn/optim.hpp"
#include "affmap/objectives/denoiser.hpp"
#include "affmap/objectives/gan.hpp"
#include "affmap/objectives/pixel.hpp"

namespace affmap::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Task-level parallelism: run fn(0..n-1) on up to n_threads workers. Callers
// write results into pre-allocated slots so output never depends on thread
// scheduling. Exceptions are captured per task and the first (in task order)
// is rethrown after all workers join.
// ---------------------------------------------------------------------------
inline void parallel_tasks(int n, int n_threads, const std::function<void(int)>& fn) {
    const int workers = std::max(1, std::min(n_threads, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errs(static_cast<std::size_t>(n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    errs[static_cast<std::size_t>(i)] = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

inline std::string csv_safe(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}

// ===========================================================================
// swissroll: the 2D benchmark. A = [0.5, 0.5], A⁺ = (1, 1)ᵀ closed form.
// ===========================================================================

struct ToyTrained {
    NetSpec spec;
    NetState state;
    bool affine = false;  // project outputs onto the observation subspace
};

struct TrialResult {
    std::string variant;
    unsigned long seed = 0;
    double ce = 0.0;
    double consistency = 0.0;
    bool failed = false;
    std::string note;
    std::optional<ToyTrained> trained;
};

struct SwissrollShared {
    SwissRollParams params;
    KdeModel kde;
    DownsampleOperator down;
    PseudoInverseOperator up;
    AffineProjector proj;
    Tensor eval_x;  // (n,1) observations drawn from p_X
    std::optional<DaeCheckpoints> dae;
    DenoiserSchedule dae_schedule;
};

inline NetSpec toy_generator_spec(std::uint64_t seed) {
    return NetSpec::make(seed).dense(1, 64).relu().dense(64, 64).relu().dense(64, 2);
}

inline NetSpec toy_discriminator_spec(std::uint64_t seed) {
    return NetSpec::make(seed).dense(2, 64).relu().dense(64, 64).relu().dense(64, 1);
}

inline SwissrollShared make_swissroll_shared(const SwissrollConfig& cfg) {
    SwissrollShared sh;
    sh.params = SwissRollParams{};
    sh.kde = KdeModel::toy_reference(cfg.kde_seed, static_cast<int>(cfg.kde_samples),
                                     cfg.kde_bandwidth);
    Eigen::MatrixXd A(1, 2);
    A << 0.5, 0.5;
    sh.down = DownsampleOperator::matrix(A);
    sh.up = closed_form_pseudoinverse(sh.down);
    sh.proj = AffineProjector::make(sh.down, sh.up);
    Rng erng(Rng::mix(cfg.eval_seed, 0xe7a1));
    const Tensor ev = sample_swiss_roll(sh.params, static_cast<int>(cfg.eval_samples), erng);
    sh.eval_x = observe_lr(ev);

    bool needs_dae = false;
    for (const auto& v : cfg.variants)
        if (v == "AffDG" || v == "SoftDG") needs_dae = true;
    if (needs_dae) {
        // One denoiser stack serves every guided trial: it approximates the
        // data density, which does not depend on the trial seed.
        sh.dae_schedule = DenoiserSchedule::from_sigmas(cfg.dae.sigmas);
        const int hidden = static_cast<int>(cfg.dae.hidden);
        const NetSpec dspec = NetSpec::make(101)
                                  .dense(2, hidden)
                                  .relu()
                                  .dense(hidden, hidden)
                                  .relu()
                                  .dense(hidden, 2);
        OptimConfig opt;
        opt.lr = cfg.dae.learning_rate;
        opt.batch_size = static_cast<int>(cfg.dae.batch_size);
        opt.iterations = cfg.dae.iterations;
        Rng drng(Rng::mix(101, 0xdae0));
        const SwissRollParams params = sh.params;
        sh.dae = dae_pretrain(
            dspec, [params](int n, Rng& r) { return sample_swiss_roll(params, n, r); },
            sh.dae_schedule, opt, drng);
    }
    return sh;
}

// Evaluate a trained generator on the shared observation set: cross-entropy
// under the KDE reference and the LR-consistency MSE of its outputs.
inline void evaluate_generator(const SwissrollShared& sh, TrialResult& r) {
    const ToyTrained& t = *r.trained;
    const Tensor f = infer(t.spec, t.state, sh.eval_x);
    const Tensor yhat = t.affine ? sh.proj.project(f, sh.eval_x) : f;
    r.ce = cross_entropy(sh.kde, yhat).value;
    r.consistency = lr_consistency(sh.eval_x, yhat, sh.down);
}

// Per-iteration multiplier that takes a step size from its starting value to
// `end` over the annealed stretch of the run (1.0 when annealing is off or
// when this particular step size has no target to anneal to).
inline double anneal_factor(const TrainConfig& cfg, double start, double end) {
    if (cfg.lr_decay_from <= 0 || start <= 0.0 || end <= 0.0) return 1.0;
    return std::pow(end / start,
                    1.0 / static_cast<double>(cfg.iterations - cfg.lr_decay_from));
}

// Exponential moving average of generator weights, used only at evaluation.
struct WeightAverager {
    double decay = 0.0;
    NetState shadow;

    void init(const NetState& s) {
        if (decay > 0.0) shadow = s;
    }
    void update(const NetState& s) {
        if (decay <= 0.0) return;
        for (std::size_t l = 0; l < s.params.size(); ++l) {
            auto blend = [&](Tensor& e, const Tensor& p) {
                for (std::size_t i = 0; i < e.v.size(); ++i)
                    e.v[i] = decay * e.v[i] + (1.0 - decay) * p.v[i];
            };
            blend(shadow.params[l].W, s.params[l].W);
            blend(shadow.params[l].b, s.params[l].b);
        }
        shadow.bn_mean = s.bn_mean;
        shadow.bn_var = s.bn_var;
    }
    NetState result(NetState live) const {
        if (decay <= 0.0) return live;
        NetState out = std::move(live);
        out.params = shadow.params;
        out.bn_mean = shadow.bn_mean;
        out.bn_var = shadow.bn_var;
        return out;
    }
};

inline TrialResult train_toy_pixel(const SwissrollShared& sh, const TrainConfig& cfg,
                                   unsigned long seed, PixelLoss kind) {
    TrialResult r;
    r.trained = ToyTrained{toy_generator_spec(Rng::mix(seed, 0x11)), {}, false};
    const NetSpec& spec = r.trained->spec;
    NetState& state = r.trained->state;
    state = init_state(spec);
    OptimConfig opt;
    opt.lr = cfg.learning_rate;
    opt.batch_size = static_cast<int>(cfg.batch_size);
    const double fac = anneal_factor(cfg, cfg.learning_rate, cfg.lr_decay_to);
    WeightAverager avg{cfg.ema_decay, {}};
    avg.init(state);
    Rng rng(Rng::mix(seed, 0x5a17));
    for (long it = 0; it < cfg.iterations; ++it) {
        if (cfg.lr_decay_from > 0 && it >= cfg.lr_decay_from) opt.lr *= fac;
        const Tensor y = sample_swiss_roll(sh.params, opt.batch_size, rng);
        const Tensor x = observe_lr(y);
        auto fw = forward(spec, state, x, RunMode::train);
        const LossValue loss = pixel_loss(fw.output, y, kind);
        if (!std::isfinite(loss.value))
            fail<DivergenceError>("pixel training diverged at iteration ", it);
        auto bw = backward(spec, state, fw.tape, loss.grad);
        optimizer_step(state, bw.grads, opt);
        avg.update(state);
    }
    state = avg.result(std::move(state));
    evaluate_generator(sh, r);
    return r;
}

inline TrialResult train_toy_gan(const SwissrollShared& sh, const TrainConfig& cfg,
                                 unsigned long seed, bool soft) {
    GanModel m;
    m.gen_spec = toy_generator_spec(Rng::mix(seed, 0x21));
    m.disc_spec = toy_discriminator_spec(Rng::mix(seed, 0x22));
    m.gen = init_state(m.gen_spec);
    m.disc = init_state(m.disc_spec);
    m.gen_opt.lr = cfg.learning_rate;
    m.disc_opt.lr = cfg.disc_learning_rate;
    if (soft) {
        m.down = &sh.down;
        m.soft.lambda = cfg.lambda_soft;
    } else {
        m.projector = &sh.proj;
    }
    InstanceNoiseSchedule noise = cfg.noise.make(cfg.iterations);
    noise.reset();
    const double gfac = anneal_factor(cfg, cfg.learning_rate, cfg.lr_decay_to);
    const double dfac =
        anneal_factor(cfg, cfg.disc_learning_rate, cfg.disc_lr_decay_to);
    WeightAverager avg{cfg.ema_decay, {}};
    avg.init(m.gen);
    Rng rng(Rng::mix(seed, 0x6a2f));
    const int bs = static_cast<int>(cfg.batch_size);
    double last_d = noise.target_d_loss;
    for (long it = 0; it < cfg.iterations; ++it) {
        if (cfg.lr_decay_from > 0 && it >= cfg.lr_decay_from) {
            m.gen_opt.lr *= gfac;
            m.disc_opt.lr *= dfac;
        }
        const double sigma = noise.advance(it, last_d);
        const Tensor real = sample_swiss_roll(sh.params, bs, rng);
        const Tensor x = observe_lr(sample_swiss_roll(sh.params, bs, rng));
        const GanLosses l = gan_step(m, real, x, sigma, static_cast<int>(cfg.k_disc), rng);
        if (!std::isfinite(l.d_loss) || !std::isfinite(l.g_loss))
            fail<DivergenceError>("adversarial training diverged at iteration ", it);
        last_d = l.d_loss;
        avg.update(m.gen);
    }
    TrialResult r;
    r.trained = ToyTrained{std::move(m.gen_spec), avg.result(std::move(m.gen)), !soft};
    evaluate_generator(sh, r);
    return r;
}

inline TrialResult train_toy_dg(const SwissrollShared& sh, const TrainConfig& cfg,
                                unsigned long seed, bool soft) {
    require(sh.dae.has_value(), "denoiser-guided training needs the pretrained denoiser");
    GuidedModel m;
    m.gen_spec = toy_generator_spec(Rng::mix(seed, 0x31));
    m.gen = init_state(m.gen_spec);
    m.gen_opt.lr = cfg.learning_rate;
    m.dae = &*sh.dae;
    if (soft) {
        m.down = &sh.down;
        m.soft.lambda = cfg.lambda_soft;
    } else {
        m.projector = &sh.proj;
    }
    DenoiserSchedule sched = sh.dae_schedule;
    sched.assign_swap_points(cfg.iterations);
    const double gfac = anneal_factor(cfg, cfg.learning_rate, cfg.lr_decay_to);
    WeightAverager avg{cfg.ema_decay, {}};
    avg.init(m.gen);
    Rng rng(Rng::mix(seed, 0x7b3d));
    const int bs = static_cast<int>(cfg.batch_size);
    for (long it = 0; it < cfg.iterations; ++it) {
        if (cfg.lr_decay_from > 0 && it >= cfg.lr_decay_from) m.gen_opt.lr *= gfac;
        m.dae_level = sched.level_at(it);
        const Tensor x = observe_lr(sample_swiss_roll(sh.params, bs, rng));
        denoiser_guided_step(m, x);
        if (!m.gen.all_finite())
            fail<DivergenceError>("denoiser-guided training diverged at iteration ", it);
        avg.update(m.gen);
    }
    TrialResult r;
    r.trained = ToyTrained{std::move(m.gen_spec), avg.result(std::move(m.gen)), !soft};
    evaluate_generator(sh, r);
    return r;
}

inline TrialResult run_toy_trial(const SwissrollShared& sh, const SwissrollConfig& cfg,
                                 const std::string& variant, unsigned long seed) {
    const TrainConfig tc = cfg.train_for(variant);
    TrialResult r;
    try {
        if (variant == "MSE") r = train_toy_pixel(sh, tc, seed, PixelLoss::mse);
        else if (variant == "MAE") r = train_toy_pixel(sh, tc, seed, PixelLoss::mae);
        else if (variant == "AffGAN") r = train_toy_gan(sh, tc, seed, /*soft=*/false);
        else if (variant == "SoftGAN") r = train_toy_gan(sh, tc, seed, /*soft=*/true);
        else if (variant == "AffDG") r = train_toy_dg(sh, tc, seed, /*soft=*/false);
        else if (variant == "SoftDG") r = train_toy_dg(sh, tc, seed, /*soft=*/true);
        else fail<ConfigError>("unknown trained variant ", variant);
    } catch (const DivergenceError& e) {
        r.failed = true;
        r.note = e.what();
        r.trained.reset();
    }
    r.variant = variant;
    r.seed = seed;
    return r;
}

// Deterministic reference rows: point estimators evaluated on every
// observation of the shared evaluation set. Their outputs lie on the
// observation line by construction, so consistency is exactly zero;
// off-support observations are skipped and counted.
struct OracleRows {
    TrialResult map, mean, median;
};

inline OracleRows compute_oracle_rows(const SwissrollShared& sh, int n_threads) {
    const int n = sh.eval_x.dim(0);
    struct PointEval {
        bool ok = false;
        double lp_map = 0.0, lp_mean = 0.0, lp_median = 0.0;
    };
    std::vector<PointEval> pts(static_cast<std::size_t>(n));
    parallel_tasks(n, n_threads, [&](int i) {
        const double x = sh.eval_x.v[static_cast<std::size_t>(i)];
        PointEval& pe = pts[static_cast<std::size_t>(i)];
        try {
            const OraclePoint pm = map_oracle(sh.kde, x);
            const OraclePoint pmean = posterior_moment_oracle(sh.kde, x, Moment::mean);
            const OraclePoint pmed = posterior_moment_oracle(sh.kde, x, Moment::median);
            pe.lp_map = pm.log_density;
            pe.lp_mean = sh.kde.log_density(pmean.y1, pmean.y2);
            pe.lp_median = sh.kde.log_density(pmed.y1, pmed.y2);
            pe.ok = true;
        } catch (const DivergenceError&) {
            pe.ok = false;
        }
    });
    double ce_map = 0.0, ce_mean = 0.0, ce_median = 0.0;
    int failures = 0;
    for (const auto& pe : pts) {
        if (!pe.ok) {
            ++failures;
            continue;
        }
        ce_map -= pe.lp_map;
        ce_mean -= pe.lp_mean;
        ce_median -= pe.lp_median;
    }
    const double m = static_cast<double>(n - failures);
    require(m > 0.0, "every oracle evaluation failed: observation set outside support");
    OracleRows out;
    auto fill = [&](TrialResult& r, const char* name, double ce_sum) {
        r.variant = name;
        r.ce = ce_sum / m;
        r.consistency = 0.0;
        if (failures > 0) r.note = std::to_string(failures) + " off-support observations skipped";
    };
    fill(out.map, "MAP", ce_map);
    fill(out.mean, "MSE-oracle", ce_mean);
    fill(out.median, "MAE-oracle", ce_median);
    return out;
}

struct VariantSummary {
    std::string variant;
    double ce_mean = 0.0, ce_std = 0.0, consistency_mean = 0.0;
    int trials = 0, failures = 0;
};

inline VariantSummary summarize(const std::string& variant,
                                const std::vector<const TrialResult*>& trials) {
    VariantSummary s;
    s.variant = variant;
    double ce = 0.0, cons = 0.0;
    std::vector<double> ces;
    for (const TrialResult* t : trials) {
        ++s.trials;
        if (t->failed) {
            ++s.failures;
            continue;
        }
        ce += t->ce;
        cons += t->consistency;
        ces.push_back(t->ce);
    }
    const int ok = s.trials - s.failures;
    if (ok > 0) {
        s.ce_mean = ce / ok;
        s.consistency_mean = cons / ok;
        double var = 0.0;
        for (double c : ces) var += (c - s.ce_mean) * (c - s.ce_mean);
        s.ce_std = std::sqrt(var / ok);
    }
    return s;
}

// Model outputs and reference curves over a uniform sweep x ∈ [−8, 8]: the
// data behind the benchmark scatter figure. Each trained variant contributes
// the first seed that finished successfully.
inline void write_toy_sweep(const fs::path& out_dir, const SwissrollConfig& cfg,
                            const SwissrollShared& sh,
                            const std::vector<std::pair<std::string, const ToyTrained*>>& models,
                            int n_threads) {
    const int np = static_cast<int>(cfg.sweep_points);
    require<ConfigError>(np >= 2, "sweep needs at least two points");
    Tensor xs({np, 1});
    for (int i = 0; i < np; ++i)
        xs.v[static_cast<std::size_t>(i)] = -8.0 + 16.0 * i / (np - 1);

    struct CurvePoint {
        bool ok = false;
        OraclePoint map, mean, median;
    };
    std::vector<CurvePoint> curve(static_cast<std::size_t>(np));
    parallel_tasks(np, n_threads, [&](int i) {
        const double x = xs.v[static_cast<std::size_t>(i)];
        CurvePoint& c = curve[static_cast<std::size_t>(i)];
        try {
            c.map = map_oracle(sh.kde, x);
            c.mean = posterior_moment_oracle(sh.kde, x, Moment::mean);
            c.median = posterior_moment_oracle(sh.kde, x, Moment::median);
            c.ok = true;
        } catch (const DivergenceError&) {
            c.ok = false;
        }
    });

    std::vector<std::string> cols = {"x",       "map_y1",    "map_y2",   "mean_y1",
                                     "mean_y2", "median_y1", "median_y2"};
    std::vector<Tensor> outs;
    for (const auto& [name, tt] : models) {
        const Tensor f = infer(tt->spec, tt->state, xs);
        outs.push_back(tt->affine ? sh.proj.project(f, xs) : f);
        cols.push_back(name + "_y1");
        cols.push_back(name + "_y2");
    }

    CsvWriter csv(out_dir / "sweep.csv", cols);
    for (int i = 0; i < np; ++i) {
        std::vector<std::string> row;
        row.push_back(csv_num(xs.v[static_cast<std::size_t>(i)]));
        const CurvePoint& c = curve[static_cast<std::size_t>(i)];
        auto push_pt = [&](const OraclePoint& p) {
            row.push_back(c.ok ? csv_num(p.y1) : "nan");
            row.push_back(c.ok ? csv_num(p.y2) : "nan");
        };
        push_pt(c.map);
        push_pt(c.mean);
        push_pt(c.median);
        for (const Tensor& o : outs) {
            row.push_back(csv_num(o.v[2 * static_cast<std::size_t>(i)]));
            row.push_back(csv_num(o.v[2 * static_cast<std::size_t>(i) + 1]));
        }
        csv.row(row);
    }
}

inline void cmd_swissroll(const RunConfig& run) {
    require<ConfigError>(run.swissroll.has_value(),
                         "swissroll experiment needs its config section");
    const SwissrollConfig& cfg = *run.swissroll;
    const int threads = thread_cap();
    const SwissrollShared sh = make_swissroll_shared(cfg);

    std::vector<std::string> trained;
    bool want_oracles = false;
    for (const auto& v : cfg.variants) {
        if (v == "MAP" || v == "MSE-oracle" || v == "MAE-oracle") want_oracles = true;
        else trained.push_back(v);
    }

    // seed-level parallelism: one task per (variant, seed), slot-collected so
    // every artifact is byte-identical regardless of scheduling
    const int ns = static_cast<int>(run.seeds.size());
    std::vector<TrialResult> slots(trained.size() * static_cast<std::size_t>(ns));
    parallel_tasks(static_cast<int>(slots.size()), threads, [&](int idx) {
        const std::size_t vi = static_cast<std::size_t>(idx) / static_cast<std::size_t>(ns);
        const int si = idx % ns;
        slots[static_cast<std::size_t>(idx)] =
            run_toy_trial(sh, cfg, trained[vi], run.seeds[static_cast<std::size_t>(si)]);
    });

    std::optional<OracleRows> oracle;
    if (want_oracles) oracle = compute_oracle_rows(sh, threads);

    fs::create_directories(run.output_dir);
    const fs::path out_dir(run.output_dir);
    CsvWriter table(out_dir / "table1.csv",
                    {"variant", "ce_mean", "ce_std", "consistency_mean", "trials", "failures"});
    CsvWriter trials_csv(out_dir / "trials.csv",
                         {"variant", "seed", "status", "ce", "consistency", "note"});

    std::map<std::string, std::vector<const TrialResult*>> by_variant;
    for (const auto& t : slots) by_variant[t.variant].push_back(&t);

    auto table_row = [&](const VariantSummary& s) {
        table.row({s.variant, csv_num(s.ce_mean), csv_num(s.ce_std), csv_num(s.consistency_mean),
                   csv_num(static_cast<long>(s.trials)), csv_num(static_cast<long>(s.failures))});
    };
    auto oracle_summary = [&](const TrialResult& r) {
        VariantSummary s;
        s.variant = r.variant;
        s.ce_mean = r.ce;
        s.consistency_mean = r.consistency;
        s.trials = 1;
        return s;
    };
    for (const auto& v : cfg.variants) {
        if (v == "MAP") table_row(oracle_summary(oracle->map));
        else if (v == "MSE-oracle") table_row(oracle_summary(oracle->mean));
        else if (v == "MAE-oracle") table_row(oracle_summary(oracle->median));
        else table_row(summarize(v, by_variant[v]));
    }
    for (const auto& t : slots)
        trials_csv.row({t.variant, csv_num(static_cast<long>(t.seed)),
                        t.failed ? "diverged" : "ok", csv_num(t.ce), csv_num(t.consistency),
                        csv_safe(t.note)});

    std::vector<std::pair<std::string, const ToyTrained*>> sweep_models;
    for (const auto& v : trained) {
        for (const TrialResult* t : by_variant[v])
            if (!t->failed && t->trained.has_value()) {
                sweep_models.emplace_back(v, &*t->trained);
                break;
            }
    }
    write_toy_sweep(out_dir, cfg, sh, sweep_models, threads);
    std::printf("swissroll: wrote %s/{table1,trials,sweep}.csv (%d trials, %d threads)\n",
                run.output_dir.c_str(), static_cast<int>(slots.size()), threads);
}

// ===========================================================================
// fit-pinv
// ===========================================================================

inline DownsampleOperator operator_from_config(const OperatorConfig& oc) {
    if (oc.mode == "matrix") {
        require<ConfigError>(!oc.matrix.empty() && !oc.matrix[0].empty(),
                             "matrix operator mode needs a non-empty matrix");
        const Eigen::Index rows = static_cast<Eigen::Index>(oc.matrix.size());
        const Eigen::Index cols = static_cast<Eigen::Index>(oc.matrix[0].size());
        Eigen::MatrixXd A(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            const auto& r = oc.matrix[static_cast<std::size_t>(i)];
            require<ConfigError>(static_cast<Eigen::Index>(r.size()) == cols,
                                 "matrix operator rows must have equal length");
            for (Eigen::Index j = 0; j < cols; ++j) A(i, j) = r[static_cast<std::size_t>(j)];
        }
        return DownsampleOperator::matrix(A);
    }
    return DownsampleOperator::gaussian(static_cast<int>(oc.kernel_size), oc.gaussian_sigma,
                                        static_cast<int>(oc.stride), static_cast<int>(oc.canvas),
                                        static_cast<int>(oc.canvas));
}

inline void cmd_fit_pinv(const FitPinvConfig& cfg) {
    const DownsampleOperator down = operator_from_config(cfg.op);
    const PseudoInverseOperator p = fit_pseudoinverse(down, cfg.fit_config());
    save_pseudoinverse(cfg.output_dir, cfg.name, p);
    if (down.mode == DownsampleOperator::Mode::matrix) {
        std::printf("fitted B (%ld x %ld):\n", static_cast<long>(p.B.rows()),
                    static_cast<long>(p.B.cols()));
        for (Eigen::Index i = 0; i < p.B.rows(); ++i) {
            for (Eigen::Index j = 0; j < p.B.cols(); ++j) std::printf(" % .6f", p.B(i, j));
            std::printf("\n");
        }
    }
    std::printf("final l1+l2 fit loss: %.6e\n", p.fit_loss);
    std::printf("fit-pinv: wrote %s/%s.{json,f32}\n", cfg.output_dir.c_str(), cfg.name.c_str());
}

// ===========================================================================
// Procedural toy image data: band-limited noise textures. White noise blurred
// by a unit-sum Gaussian (stride 1 preserves dimensions) and min–max
// normalised to [0,1] per image. The LR side always comes from the actual
// downsampling operator, never from an independent resizer.
// ===========================================================================

inline Tensor make_texture_dataset(int n, int size, unsigned long seed) {
    Tensor out({n, 1, size, size});
    const DownsampleOperator blur = DownsampleOperator::gaussian(9, 1.8, 1, size, size);
    Rng rng(Rng::mix(seed, 0x7e47));
    Tensor noise({1, 1, size, size});
    const std::size_t px = static_cast<std::size_t>(size) * size;
    for (int i = 0; i < n; ++i) {
        for (double& v : noise.v) v = rng.normal();
        const Tensor smooth = blur.apply(noise);
        double lo = smooth.v[0], hi = smooth.v[0];
        for (double v : smooth.v) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double span = hi > lo ? hi - lo : 1.0;
        for (std::size_t j = 0; j < px; ++j)
            out.v[static_cast<std::size_t>(i) * px + j] = (smooth.v[j] - lo) / span;
    }
    return out;
}

inline Tensor slice_batch(const Tensor& data, const std::vector<int>& idx) {
    std::vector<int> shape = data.shape;
    shape[0] = static_cast<int>(idx.size());
    Tensor out(shape);
    const std::size_t step = data.v.size() / static_cast<std::size_t>(data.dim(0));
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(data.v.begin() + static_cast<std::size_t>(idx[i]) * step, step,
                    out.v.begin() + i * step);
    return out;
}

inline NetSpec sr_cnn_spec(std::uint64_t seed, int hidden, int stride, bool sigmoid_out) {
    NetSpec s = NetSpec::make(seed)
                    .conv2d(1, hidden, 3)
                    .relu()
                    .conv2d(hidden, hidden, 3)
                    .relu()
                    .conv2d(hidden, stride * stride, 3)
                    .pixel_shuffle(stride);
    if (sigmoid_out) s.sigmoid();
    return s;
}

// ===========================================================================
// mse-affine: identically-initialised CNNs trained under MSE, differing only
// in how (and whether) the affine projection wraps their output.
// ===========================================================================

namespace detail {

enum class ProjVariant { fixed_pretrained, train_pretrained, train_random, none };

inline ProjVariant proj_variant_from_name(const std::string& v) {
    if (v == "MSE-fixedproj") return ProjVariant::fixed_pretrained;
    if (v == "MSE-trainproj") return ProjVariant::train_pretrained;
    if (v == "MSE-randproj") return ProjVariant::train_random;
    if (v == "MSE-noproj") return ProjVariant::none;
    fail<ConfigError>("unknown mse-affine variant ", v);
}

}  // namespace detail

inline void cmd_mse_affine(const RunConfig& run) {
    require<ConfigError>(run.mse_affine.has_value(),
                         "mse-affine experiment needs its config section");
    const MseAffineConfig& cfg = *run.mse_affine;
    const int size = static_cast<int>(cfg.image_size);
    const DownsampleOperator down = DownsampleOperator::gaussian(
        static_cast<int>(cfg.op.kernel_size), cfg.op.gaussian_sigma,
        static_cast<int>(cfg.op.stride), size, size);
    PseudoInverseOperator fitted;
    if (!cfg.pinv_file.empty()) {
        fitted = load_pseudoinverse(cfg.pinv_file);
        require<ConfigError>(fitted.mode == DownsampleOperator::Mode::conv &&
                                 fitted.stride == static_cast<int>(cfg.op.stride),
                             "pinv_file operator does not match the configured downsampler");
    } else {
        FitConfig fc;
        fc.canvas_h = fc.canvas_w = 32;
        fitted = fit_pseudoinverse(down, fc);
    }

    const Tensor data =
        make_texture_dataset(static_cast<int>(cfg.dataset_size), size, cfg.dataset_seed);
    const Tensor lr_data = down.apply(data);
    const int n_eval = std::min(16, data.dim(0));
    std::vector<int> eval_idx(static_cast<std::size_t>(n_eval));
    for (int i = 0; i < n_eval; ++i) eval_idx[static_cast<std::size_t>(i)] = i;
    const Tensor eval_y = slice_batch(data, eval_idx);
    const Tensor eval_x = slice_batch(lr_data, eval_idx);

    fs::create_directories(run.output_dir);
    const fs::path out_dir(run.output_dir);
    const unsigned long seed0 = run.seeds.front();

    const int nv = static_cast<int>(cfg.variants.size());
    parallel_tasks(nv, thread_cap(), [&](int vi) {
        const std::string& vname = cfg.variants[static_cast<std::size_t>(vi)];
        const detail::ProjVariant kind = detail::proj_variant_from_name(vname);
        const bool projected = kind != detail::ProjVariant::none;
        const bool train_bank = kind == detail::ProjVariant::train_pretrained ||
                                kind == detail::ProjVariant::train_random;

        AffineProjector proj;
        if (projected) {
            PseudoInverseOperator pinv = fitted;
            if (kind == detail::ProjVariant::train_random) {
                Rng brng(Rng::mix(seed0, 0xba9c));
                for (double& v : pinv.bank) v = 0.05 * brng.normal();
            }
            proj = AffineProjector::make(down, std::move(pinv));
            // a trainable (or random) upsampler is not an exact pseudoinverse,
            // so the post-projection consistency check must not fire
            if (train_bank) proj.enforce = false;
        }

        const NetSpec spec = sr_cnn_spec(Rng::mix(seed0, 0x41),
                                         static_cast<int>(cfg.hidden_channels),
                                         static_cast<int>(cfg.op.stride), /*sigmoid_out=*/false);
        NetState state = init_state(spec);
        OptimConfig opt;
        opt.lr = cfg.learning_rate;
        opt.batch_size = static_cast<int>(cfg.batch_size);
        Rng rng(Rng::mix(seed0, 0x8c1));

        const std::string run_id = vname + "_seed" + std::to_string(seed0);
        CsvWriter csv(out_dir / ("curves_" + vname + ".csv"),
                      {"run_id", "iteration", "psnr", "ssim", "lr_consistency", "hr_mse"});
        std::vector<double> bank_g(projected ? proj.up.bank.size() : 0);

        auto log_row = [&](long iter) {
            const Tensor f = infer(spec, state, eval_x);
            const Tensor yhat = projected ? proj.project(f, eval_x) : f;
            csv.row({run_id, csv_num(iter), csv_num(psnr(yhat, eval_y)),
                     csv_num(ssim(yhat, eval_y)), csv_num(lr_consistency(eval_x, yhat, down)),
                     csv_num(pixel_loss(yhat, eval_y, PixelLoss::mse).value)});
        };

        log_row(0);
        std::vector<int> batch_idx(static_cast<std::size_t>(opt.batch_size));
        for (long it = 1; it <= cfg.iterations; ++it) {
            for (int& b : batch_idx) b = static_cast<int>(rng.integer(data.dim(0)));
            const Tensor y = slice_batch(data, batch_idx);
            const Tensor x = slice_batch(lr_data, batch_idx);
            auto fw = forward(spec, state, x, RunMode::train);
            const Tensor yhat = projected ? proj.project(fw.output, x) : fw.output;
            const LossValue loss = pixel_loss(yhat, y, PixelLoss::mse);
            if (!std::isfinite(loss.value))
                fail<DivergenceError>(vname, ": training diverged at iteration ", it);
            Tensor up = loss.grad;
            if (projected) {
                if (train_bank) {
                    std::fill(bank_g.begin(), bank_g.end(), 0.0);
                    proj.project_bank_gradient(fw.output, x, loss.grad, bank_g);
                    for (std::size_t i = 0; i < bank_g.size(); ++i)
                        proj.up.bank[i] -= cfg.learning_rate * bank_g[i];
                }
                up = proj.project_gradient(loss.grad);
            }
            auto bw = backward(spec, state, fw.tape, up);
            optimizer_step(state, bw.grads, opt);
            if (it % cfg.log_every == 0) log_row(it);
        }
        save_checkpoint(out_dir, "net_" + vname, spec, state, cfg.iterations);
    });

    std::printf("mse-affine: wrote curves for %d variants into %s\n", nv,
                run.output_dir.c_str());
}

// ===========================================================================
// texture-gan: 4× adversarial SR against an MSE baseline on the same
// textures, both affine-projected. Emits sample grids and metric curves; on
// divergence the last stable generator checkpoint is retained before the
// error propagates.
// ===========================================================================

inline void cmd_texture_gan(const RunConfig& run) {
    require<ConfigError>(run.texture_gan.has_value(),
                         "texture-gan experiment needs its config section");
    const TextureGanConfig& cfg = *run.texture_gan;
    const int size = static_cast<int>(cfg.image_size);
    const int stride = static_cast<int>(cfg.op.stride);
    const DownsampleOperator down = DownsampleOperator::gaussian(
        static_cast<int>(cfg.op.kernel_size), cfg.op.gaussian_sigma, stride, size, size);
    PseudoInverseOperator fitted;
    if (!cfg.pinv_file.empty()) {
        fitted = load_pseudoinverse(cfg.pinv_file);
    } else {
        FitConfig fc;
        fc.canvas_h = fc.canvas_w = 32;
        fitted = fit_pseudoinverse(down, fc);
    }
    const AffineProjector proj = AffineProjector::make(down, fitted);

    const Tensor data =
        make_texture_dataset(static_cast<int>(cfg.dataset_size), size, cfg.dataset_seed);
    const Tensor lr_data = down.apply(data);
    const int n_grid = std::min(static_cast<int>(cfg.grid_cols * cfg.grid_rows), data.dim(0));
    std::vector<int> grid_idx(static_cast<std::size_t>(n_grid));
    for (int i = 0; i < n_grid; ++i) grid_idx[static_cast<std::size_t>(i)] = i;
    const Tensor grid_y = slice_batch(data, grid_idx);
    const Tensor grid_x = slice_batch(lr_data, grid_idx);

    fs::create_directories(run.output_dir);
    const fs::path out_dir(run.output_dir);
    write_pgm(out_dir / "target.pgm", tile_images(grid_y, static_cast<int>(cfg.grid_cols)));
    write_pgm(out_dir / "input.pgm", tile_images(grid_x, static_cast<int>(cfg.grid_cols)));

    const unsigned long seed0 = run.seeds.front();
    const std::vector<std::string> metric_cols = {
        "run_id", "iteration", "psnr",   "ssim",  "lr_consistency",
        "hr_mse", "d_loss",    "g_loss", "sigma"};

    auto emit_samples = [&](const std::string& name, const NetSpec& spec, const NetState& state,
                            long iter) {
        const Tensor f = infer(spec, state, grid_x);
        const Tensor yhat = proj.project(f, grid_x);
        write_pgm(out_dir / ("samples_" + name + "_" + std::to_string(iter) + ".pgm"),
                  tile_images(yhat, static_cast<int>(cfg.grid_cols)));
    };

    // --- MSE baseline under the same projection ---
    {
        const NetSpec spec = sr_cnn_spec(Rng::mix(seed0, 0x51),
                                         static_cast<int>(cfg.hidden_channels), stride, true);
        NetState state = init_state(spec);
        OptimConfig opt;
        opt.lr = cfg.lr_gen;
        opt.batch_size = static_cast<int>(cfg.batch_size);
        Rng rng(Rng::mix(seed0, 0x91d));
        CsvWriter csv(out_dir / "metrics_affmse.csv", metric_cols);
        NetState last_stable = state;
        long last_iter = 0;
        std::vector<int> batch_idx(static_cast<std::size_t>(opt.batch_size));
        try {
            for (long it = 1; it <= cfg.iterations; ++it) {
                for (int& b : batch_idx) b = static_cast<int>(rng.integer(data.dim(0)));
                const Tensor y = slice_batch(data, batch_idx);
                const Tensor x = slice_batch(lr_data, batch_idx);
                auto fw = forward(spec, state, x, RunMode::train);
                const Tensor yhat = proj.project(fw.output, x);
                const LossValue loss = pixel_loss(yhat, y, PixelLoss::mse);
                if (!std::isfinite(loss.value))
                    fail<DivergenceError>("AffMSE: training diverged at iteration ", it);
                auto bw = backward(spec, state, fw.tape, proj.project_gradient(loss.grad));
                optimizer_step(state, bw.grads, opt);
                if (it % cfg.log_every == 0) {
                    const Tensor fe = infer(spec, state, grid_x);
                    const Tensor ye = proj.project(fe, grid_x);
                    csv.row({"AffMSE", csv_num(it), csv_num(psnr(ye, grid_y)),
                             csv_num(ssim(ye, grid_y)), csv_num(lr_consistency(grid_x, ye, down)),
                             csv_num(pixel_loss(ye, grid_y, PixelLoss::mse).value), "0", "0",
                             "0"});
                    last_stable = state;
                    last_iter = it;
                }
            }
        } catch (const DivergenceError&) {
            save_checkpoint(out_dir, "gen_affmse_last", spec, last_stable, last_iter);
            throw;
        }
        emit_samples("affmse", spec, state, cfg.iterations);
        save_checkpoint(out_dir, "gen_affmse_last", spec, state, cfg.iterations);
    }

    // --- adversarial, affine-projected ---
    {
        GanModel m;
        m.gen_spec = sr_cnn_spec(Rng::mix(seed0, 0x61), static_cast<int>(cfg.hidden_channels),
                                 stride, true);
        m.disc_spec = NetSpec::make(Rng::mix(seed0, 0x62))
                          .conv2d(1, 8, 3, 2)
                          .relu()
                          .conv2d(8, 16, 3, 2)
                          .relu()
                          .dense(16 * (size / 4) * (size / 4), 1);
        m.gen = init_state(m.gen_spec);
        m.disc = init_state(m.disc_spec);
        m.gen_opt.lr = cfg.lr_gen;
        m.disc_opt.lr = cfg.lr_disc;
        m.projector = &proj;
        InstanceNoiseSchedule noise = cfg.noise.make(cfg.iterations);
        noise.reset();
        Rng rng(Rng::mix(seed0, 0xa2e));
        CsvWriter csv(out_dir / "metrics_affgan.csv", metric_cols);
        NetState last_stable = m.gen;
        long last_iter = 0;
        long in_band = 0;
        double last_d = noise.target_d_loss;
        std::vector<int> batch_idx(static_cast<std::size_t>(cfg.batch_size));
        emit_samples("affgan", m.gen_spec, m.gen, 0);
        try {
            for (long it = 1; it <= cfg.iterations; ++it) {
                const double sigma = noise.advance(it - 1, last_d);
                for (int& b : batch_idx) b = static_cast<int>(rng.integer(data.dim(0)));
                const Tensor real = slice_batch(data, batch_idx);
                for (int& b : batch_idx) b = static_cast<int>(rng.integer(data.dim(0)));
                const Tensor x = slice_batch(lr_data, batch_idx);
                const GanLosses l =
                    gan_step(m, real, x, sigma, static_cast<int>(cfg.k_disc), rng);
                if (!std::isfinite(l.d_loss) || !std::isfinite(l.g_loss))
                    fail<DivergenceError>("AffGAN: training diverged at iteration ", it);
                last_d = l.d_loss;
                if (l.d_loss > 0.5 && l.d_loss < 2.5) ++in_band;
                if (it % cfg.log_every == 0) {
                    const Tensor fe = infer(m.gen_spec, m.gen, grid_x);
                    const Tensor ye = proj.project(fe, grid_x);
                    csv.row({"AffGAN", csv_num(it), csv_num(psnr(ye, grid_y)),
                             csv_num(ssim(ye, grid_y)), csv_num(lr_consistency(grid_x, ye, down)),
                             csv_num(pixel_loss(ye, grid_y, PixelLoss::mse).value),
                             csv_num(l.d_loss), csv_num(l.g_loss), csv_num(sigma)});
                    last_stable = m.gen;
                    last_iter = it;
                }
                if (it == cfg.iterations / 2) emit_samples("affgan", m.gen_spec, m.gen, it);
            }
        } catch (const DivergenceError&) {
            save_checkpoint(out_dir, "gen_affgan_last", m.gen_spec, last_stable, last_iter);
            throw;
        }
        emit_samples("affgan", m.gen_spec, m.gen, cfg.iterations);
        save_checkpoint(out_dir, "gen_affgan_last", m.gen_spec, m.gen, cfg.iterations);
        const double band = static_cast<double>(in_band) / static_cast<double>(cfg.iterations);
        CsvWriter summary(out_dir / "gan_summary.csv",
                          {"run_id", "iterations", "d_loss_band_fraction", "saturation_warnings"});
        summary.row({"AffGAN", csv_num(cfg.iterations), csv_num(band),
                     csv_num(static_cast<long>(m.saturation_warnings))});
    }

    std::printf("texture-gan: wrote metrics and sample grids into %s\n", run.output_dir.c_str());
}

// ===========================================================================
// report: read-only pretty-print of a result directory.
// ===========================================================================

inline void cmd_report(const std::string& dir) {
    require<ConfigError>(fs::is_directory(dir), dir, " is not a directory");
    bool found = false;
    auto print_table = [&](const fs::path& p) {
        const CsvTable t = read_csv(p);
        std::printf("== %s ==\n", p.filename().string().c_str());
        std::vector<std::size_t> width(t.columns.size());
        for (std::size_t c = 0; c < t.columns.size(); ++c) width[c] = t.columns[c].size();
        for (const auto& r : t.rows)
            for (std::size_t c = 0; c < r.size() && c < width.size(); ++c)
                width[c] = std::max(width[c], r[c].size());
        auto print_row = [&](const std::vector<std::string>& r) {
            for (std::size_t c = 0; c < r.size(); ++c)
                std::printf("%-*s  ", static_cast<int>(width[c]), r[c].c_str());
            std::printf("\n");
        };
        print_row(t.columns);
        for (const auto& r : t.rows) print_row(r);
        std::printf("\n");
    };
    for (const char* name : {"table1.csv", "trials.csv", "gan_summary.csv"}) {
        const fs::path p = fs::path(dir) / name;
        if (!fs::exists(p)) continue;
        found = true;
        print_table(p);
    }
    std::vector<std::string> curve_files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string fname = entry.path().filename().string();
        if (fname.rfind("curves_", 0) == 0 || fname.rfind("metrics_", 0) == 0)
            curve_files.push_back(fname);
    }
    std::sort(curve_files.begin(), curve_files.end());
    for (const auto& fname : curve_files) {
        found = true;
        const CsvTable t = read_csv(fs::path(dir) / fname);
        std::printf("== %s == %zu rows", fname.c_str(), t.rows.size());
        if (!t.rows.empty()) {
            std::printf("; final:");
            const auto& last = t.rows.back();
            for (std::size_t c = 0; c < t.columns.size() && c < last.size(); ++c)
                std::printf(" %s=%s", t.columns[c].c_str(), last[c].c_str());
        }
        std::printf("\n");
    }
    require<ConfigError>(found, "no experiment outputs found in ", dir);
}

}  // namespace affmap::cli
