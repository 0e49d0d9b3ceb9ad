#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "affmap/core/error.hpp"
#include "affmap/densities/kde.hpp"

namespace affmap {

// A point on the observation line {(t, 2x−t)} together with its KDE
// log-density (always re-evaluated with the exact 2D kernel sum).
struct OraclePoint {
    double y1 = 0.0, y2 = 0.0;
    double log_density = kLogFloor;
};

enum class Moment { mean, median };

namespace detail {

struct LineGrid {
    std::vector<double> t, logp;
};

// Coarse scan of the observation line for x: 20,001 uniformly spaced line
// parameters t over [2x−20, 20] (covering the box |y1|,|y2| ≤ 20).
inline LineGrid scan_line(const KdeModel::LineBumps& lb, double x) {
    constexpr int kGridPoints = 20001;
    LineGrid g;
    const double lo = 2.0 * x - 20.0, hi = 20.0;
    const double step = (hi - lo) / (kGridPoints - 1);
    g.t.resize(kGridPoints);
    for (int i = 0; i < kGridPoints; ++i) g.t[i] = lo + step * i;
    KdeModel::line_log_density(lb, g.t, g.logp);
    return g;
}

inline int argmax_index(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

// Brute-force restricted-mode search: argmax of the KDE log-density over the
// observation line, coarse grid then 3 rounds of 10× local refinement around
// the incumbent (41 points spanning ±2 cells of the current spacing).
inline OraclePoint map_oracle(const KdeModel& m, double x) {
    const auto lb = m.line_bumps(x);
    auto grid = detail::scan_line(lb, x);
    int best = detail::argmax_index(grid.logp);
    if (grid.logp[best] <= kLogFloor)
        fail<DivergenceError>("map_oracle: observation line for x=", x,
                              " carries no density mass (x outside support)");
    double t = grid.t[best];
    double delta = grid.t[1] - grid.t[0];
    std::vector<double> ts(41), lp;
    for (int round = 0; round < 3; ++round) {
        const double fine = delta / 10.0;
        for (int i = 0; i < 41; ++i) ts[i] = t + (i - 20) * fine;
        KdeModel::line_log_density(lb, ts, lp);
        t = ts[detail::argmax_index(lp)];
        delta = fine;
    }
    return {t, 2.0 * x - t, m.log_density(t, 2.0 * x - t)};
}

// Importance-weighted grid integration along the line. mean: density-weighted
// centroid of t; median: weighted median of t. Both land exactly on the
// observation subspace by construction.
inline OraclePoint posterior_moment_oracle(const KdeModel& m, double x, Moment which) {
    const auto lb = m.line_bumps(x);
    const auto grid = detail::scan_line(lb, x);
    const int best = detail::argmax_index(grid.logp);
    const double peak = grid.logp[best];
    if (peak <= kLogFloor)
        fail<DivergenceError>("posterior_moment_oracle: observation line for x=", x,
                              " carries no density mass (x outside support)");
    const int n = static_cast<int>(grid.t.size());
    std::vector<double> w(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        w[i] = grid.logp[i] > kLogFloor ? std::exp(grid.logp[i] - peak) : 0.0;
        total += w[i];
    }
    double t = 0.0;
    if (which == Moment::mean) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += w[i] * grid.t[i];
        t = acc / total;
    } else {
        const double half = 0.5 * total;
        double cum = 0.0;
        int k = n - 1;
        for (int i = 0; i < n; ++i) {
            cum += w[i];
            if (cum >= half) { k = i; break; }
        }
        t = grid.t[k];
    }
    return {t, 2.0 * x - t, m.log_density(t, 2.0 * x - t)};
}

// Bayes-optimal denoiser for p_Y = N(μ, s²I) under additive N(0, σ²I) noise:
// E[y | ỹ] = (s²·ỹ + σ²·μ)/(s² + σ²).
inline std::vector<double> analytic_denoiser_gaussian(const std::vector<double>& mu, double s,
                                                      double sigma,
                                                      const std::vector<double>& y_noisy) {
    require(s > 0.0 && sigma > 0.0, "analytic_denoiser_gaussian: s and sigma must be positive");
    require(mu.size() == y_noisy.size(), "analytic_denoiser_gaussian: dimension mismatch");
    const double s2 = s * s, n2 = sigma * sigma;
    std::vector<double> out(y_noisy.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (s2 * y_noisy[i] + n2 * mu[i]) / (s2 + n2);
    return out;
}

struct GaussComponent {
    double weight = 1.0;
    std::vector<double> mu;
    double s = 1.0;  // isotropic standard deviation
};

// Mixture extension: the exact posterior mean is the responsibility-weighted
// combination of per-component posterior means, with responsibilities from
// the marginal N(ỹ; μ_k, (s_k²+σ²)I).
inline std::vector<double> analytic_denoiser_mixture(const std::vector<GaussComponent>& comps,
                                                     double sigma,
                                                     const std::vector<double>& y_noisy) {
    require(!comps.empty(), "analytic_denoiser_mixture: empty mixture");
    require(sigma > 0.0, "analytic_denoiser_mixture: sigma must be positive");
    const std::size_t d = y_noisy.size();
    std::vector<double> logr(comps.size());
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < comps.size(); ++k) {
        const auto& c = comps[k];
        require(c.mu.size() == d, "analytic_denoiser_mixture: component dimension mismatch");
        require(c.weight > 0.0 && c.s > 0.0, "analytic_denoiser_mixture: invalid component");
        const double var = c.s * c.s + sigma * sigma;
        double q = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double dlt = y_noisy[i] - c.mu[i];
            q += dlt * dlt;
        }
        logr[k] = std::log(c.weight) - 0.5 * q / var -
                  0.5 * static_cast<double>(d) * std::log(2.0 * M_PI * var);
        best = std::max(best, logr[k]);
    }
    double norm = 0.0;
    for (double& l : logr) {
        l = std::exp(l - best);
        norm += l;
    }
    std::vector<double> out(d, 0.0);
    for (std::size_t k = 0; k < comps.size(); ++k) {
        const double r = logr[k] / norm;
        const auto part = analytic_denoiser_gaussian(comps[k].mu, comps[k].s, sigma, y_noisy);
        for (std::size_t i = 0; i < d; ++i) out[i] += r * part[i];
    }
    return out;
}

// Closed-form KL[N(μ0,s0²) ‖ N(μ1,s1²)] between 1D normals.
inline double analytic_kl_gaussians(double mu0, double s0, double mu1, double s1) {
    require(s0 > 0.0 && s1 > 0.0, "analytic_kl_gaussians: standard deviations must be positive");
    const double r = s0 / s1, dm = mu0 - mu1;
    return std::log(s1 / s0) + 0.5 * (r * r + dm * dm / (s1 * s1)) - 0.5;
}

}  // namespace affmap
