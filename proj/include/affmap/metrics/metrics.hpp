#pragma once

#include <cmath>
#include <string>

#include "affmap/core/error.hpp"
#include "affmap/core/tensor.hpp"
#include "affmap/linops/downsample.hpp"

namespace affmap {

// One logged evaluation point of a training run.
struct MetricsRow {
    std::string run_id;
    long iteration = 0;
    double psnr = 0.0;            // dB
    double ssim = 0.0;            // in [-1, 1]
    double lr_consistency = 0.0;  // mean squared (A·yhat − x)
    double hr_mse = 0.0;
};

// Peak signal-to-noise ratio in dB; identical inputs cap at 99 dB (and any
// pair whose MSE is small enough to exceed the cap reports the cap).
inline double psnr(const Tensor& yhat, const Tensor& y, double peak = 1.0) {
    require(yhat.same_shape(y), "psnr: shape mismatch");
    require(peak > 0.0, "psnr: peak must be positive");
    double mse = 0.0;
    for (std::size_t i = 0; i < y.v.size(); ++i) {
        const double d = yhat.v[i] - y.v[i];
        mse += d * d;
    }
    mse /= static_cast<double>(y.v.size());
    if (mse <= 0.0) return 99.0;
    const double db = 10.0 * std::log10(peak * peak / mse);
    return db > 99.0 ? 99.0 : db;
}

namespace detail {

// Mean local SSIM of one (h,w) channel pair under a uniform win×win window
// slid at stride 1. Prefix sums keep the sweep O(h·w).
inline double ssim_channel(const double* a, const double* b, int h, int w, int win, double c1,
                           double c2) {
    const int ph = h + 1, pw = w + 1;
    std::vector<double> sa(static_cast<std::size_t>(ph) * pw, 0.0), sb = sa, saa = sa, sbb = sa,
                        sab = sa;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const std::size_t p = static_cast<std::size_t>(y + 1) * pw + (x + 1);
            const std::size_t up = p - pw, left = p - 1, diag = up - 1;
            sa[p] = a[i] + sa[up] + sa[left] - sa[diag];
            sb[p] = b[i] + sb[up] + sb[left] - sb[diag];
            saa[p] = a[i] * a[i] + saa[up] + saa[left] - saa[diag];
            sbb[p] = b[i] * b[i] + sbb[up] + sbb[left] - sbb[diag];
            sab[p] = a[i] * b[i] + sab[up] + sab[left] - sab[diag];
        }
    auto box = [pw](const std::vector<double>& s, int y0, int x0, int y1, int x1) {
        return s[static_cast<std::size_t>(y1) * pw + x1] - s[static_cast<std::size_t>(y0) * pw + x1] -
               s[static_cast<std::size_t>(y1) * pw + x0] + s[static_cast<std::size_t>(y0) * pw + x0];
    };
    const double n = static_cast<double>(win) * win;
    double acc = 0.0;
    int count = 0;
    for (int y = 0; y + win <= h; ++y)
        for (int x = 0; x + win <= w; ++x) {
            const double ma = box(sa, y, x, y + win, x + win) / n;
            const double mb = box(sb, y, x, y + win, x + win) / n;
            const double va = box(saa, y, x, y + win, x + win) / n - ma * ma;
            const double vb = box(sbb, y, x, y + win, x + win) / n - mb * mb;
            const double cab = box(sab, y, x, y + win, x + win) / n - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cab + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return acc / count;
}

}  // namespace detail

// Structural similarity with uniform 8×8 windows at stride 1, averaged over
// windows, channels and batch. Constants c1=(0.01·peak)², c2=(0.03·peak)².
inline double ssim(const Tensor& yhat, const Tensor& y, double peak = 1.0, int window = 8) {
    require(yhat.same_shape(y), "ssim: shape mismatch");
    require(y.rank() == 4, "ssim expects (n,c,h,w) images");
    const int n = y.dim(0), c = y.dim(1), h = y.dim(2), w = y.dim(3);
    require(h >= window && w >= window, "ssim: image smaller than the ", window, "×", window,
            " window");
    const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    double acc = 0.0;
    for (int i = 0; i < n * c; ++i)
        acc += detail::ssim_channel(yhat.v.data() + i * plane, y.v.data() + i * plane, h, w,
                                    window, c1, c2);
    return acc / (n * c);
}

// Mean squared error between the observation and the downsampled candidate —
// the consistency column: exactly 0 (to precision) for projected outputs.
inline double lr_consistency(const Tensor& x, const Tensor& yhat, const DownsampleOperator& op) {
    const Tensor down = op.apply(yhat);
    require(down.same_shape(x), "lr_consistency: downsampled shape does not match observation");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        const double d = down.v[i] - x.v[i];
        acc += d * d;
    }
    return acc / static_cast<double>(x.v.size());
}

}  // namespace affmap
