#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "affmap/core/error.hpp"
#include "affmap/core/tensor.hpp"

namespace affmap {

// Half-sample symmetric reflection of index i into [0, n): the edge pixel is
// duplicated (…, 1, 0 | 0, 1, …), giving period 2n. A unit-sum kernel then maps
// constant images to the same constant exactly, and because 2n is commensurate
// with any stride dividing n, the strided operator stays well-conditioned near
// the boundary (whole-sample reflection, period 2n-2, does not share a period
// with the stride and makes the pseudoinverse fit dramatically harder).
inline int mirror_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -1 - i;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

inline std::vector<double> gaussian_kernel2d(int k, double sigma) {
    require(k >= 1 && sigma > 0.0, "gaussian kernel needs k>=1, sigma>0");
    std::vector<double> g(static_cast<std::size_t>(k) * k);
    const double c = (k - 1) / 2.0;
    double sum = 0.0;
    for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x) {
            const double dy = y - c, dx = x - c;
            g[static_cast<std::size_t>(y) * k + x] = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
            sum += g[static_cast<std::size_t>(y) * k + x];
        }
    for (double& w : g) w /= sum;
    return g;
}

// The linear downsampling map A. Two representations:
//  - conv: strided correlation with a k×k unit-sum kernel, reflect padding,
//    applied channelwise to (N,C,H,W) tensors;
//  - matrix: an explicit d_LR × d_HR matrix acting on flat (N, d_HR) tensors
//    (the 2D benchmark uses A = [0.5, 0.5]).
struct DownsampleOperator {
    enum class Mode { matrix, conv };

    Mode mode = Mode::conv;
    // conv mode
    int kernel_size = 0;
    int stride = 1;
    int in_h = 0, in_w = 0;
    int channels = 1;
    std::vector<double> kernel;  // k*k row-major
    // matrix mode
    Eigen::MatrixXd A;

    static DownsampleOperator conv(std::vector<double> kernel, int k, int stride, int in_h,
                                   int in_w, int channels = 1) {
        DownsampleOperator op;
        op.mode = Mode::conv;
        op.kernel = std::move(kernel);
        op.kernel_size = k;
        op.stride = stride;
        op.in_h = in_h;
        op.in_w = in_w;
        op.channels = channels;
        op.validate();
        return op;
    }

    static DownsampleOperator gaussian(int k, double sigma, int stride, int in_h, int in_w,
                                       int channels = 1) {
        return conv(gaussian_kernel2d(k, sigma), k, stride, in_h, in_w, channels);
    }

    static DownsampleOperator matrix(Eigen::MatrixXd m) {
        DownsampleOperator op;
        op.mode = Mode::matrix;
        op.A = std::move(m);
        op.validate();
        return op;
    }

    int out_h() const { return in_h / stride; }
    int out_w() const { return in_w / stride; }
    int d_hr() const { return mode == Mode::matrix ? static_cast<int>(A.cols()) : in_h * in_w; }
    int d_lr() const { return mode == Mode::matrix ? static_cast<int>(A.rows()) : out_h() * out_w(); }

    void validate() const {
        if (mode == Mode::matrix) {
            require(A.rows() >= 1 && A.cols() >= 1, "matrix operator must be non-empty");
            require(A.allFinite(), "matrix operator has non-finite entries");
            return;
        }
        require(kernel_size >= 1 && static_cast<int>(kernel.size()) == kernel_size * kernel_size,
                "kernel size mismatch: expected ", kernel_size * kernel_size, " weights, got ",
                kernel.size());
        require(stride >= 1, "stride must be >= 1");
        require(in_h % stride == 0 && in_w % stride == 0, "input dims ", in_h, "x", in_w,
                " must divide exactly by stride ", stride);
        double sum = 0.0;
        for (double w : kernel) {
            require(std::isfinite(w), "kernel has non-finite entries");
            sum += w;
        }
        require(std::abs(sum - 1.0) <= 1e-12, "kernel must sum to 1 within 1e-12, got ", sum);
    }

    // --- single-canvas kernels (row-major H×W doubles), the building blocks
    // for both the batched public ops and the pseudoinverse fit. ---

    // Strided correlation: out[oy,ox] = sum_t kernel[t] * img[mirror(oy*s + s/2 + ty - c), ...].
    // The kernel is centred on the middle of each stride block.
    void down_single(const double* img, double* out) const {
        const int k = kernel_size, s = stride, c = (k - 1) / 2;
        const int h = out_h(), w = out_w();
        for (int oy = 0; oy < h; ++oy)
            for (int ox = 0; ox < w; ++ox) {
                double acc = 0.0;
                const int by = oy * s + s / 2 - c, bx = ox * s + s / 2 - c;
                for (int ty = 0; ty < k; ++ty) {
                    const int iy = mirror_index(by + ty, in_h);
                    const double* row = img + static_cast<std::size_t>(iy) * in_w;
                    const double* kr = kernel.data() + static_cast<std::size_t>(ty) * k;
                    for (int tx = 0; tx < k; ++tx) acc += kr[tx] * row[mirror_index(bx + tx, in_w)];
                }
                out[static_cast<std::size_t>(oy) * w + ox] = acc;
            }
    }

    // Exact adjoint of down_single: scatter each output's taps back into the
    // input grid, folding reflected positions onto their source pixel.
    void down_adjoint_single(const double* lr, double* out) const {
        const int k = kernel_size, s = stride, c = (k - 1) / 2;
        const int h = out_h(), w = out_w();
        std::fill(out, out + static_cast<std::size_t>(in_h) * in_w, 0.0);
        for (int oy = 0; oy < h; ++oy)
            for (int ox = 0; ox < w; ++ox) {
                const double u = lr[static_cast<std::size_t>(oy) * w + ox];
                const int by = oy * s + s / 2 - c, bx = ox * s + s / 2 - c;
                for (int ty = 0; ty < k; ++ty) {
                    const int iy = mirror_index(by + ty, in_h);
                    double* row = out + static_cast<std::size_t>(iy) * in_w;
                    const double* kr = kernel.data() + static_cast<std::size_t>(ty) * k;
                    for (int tx = 0; tx < k; ++tx) row[mirror_index(bx + tx, in_w)] += kr[tx] * u;
                }
            }
    }

    // x = A y, batched. conv: (N,C,H,W) -> (N,C,h,w); matrix: (N,d_hr) -> (N,d_lr).
    Tensor apply(const Tensor& y) const {
        require(y.all_finite(), "downsample input has non-finite entries");
        if (mode == Mode::matrix) {
            require(y.features() == d_hr(), "downsample shape mismatch: expected ", d_hr(),
                    " features, got ", y.features(), " in ", shape_str(y.shape));
            Tensor out({y.batch(), d_lr()});
            Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
                in(y.v.data(), y.batch(), d_hr());
            Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> o(
                out.v.data(), y.batch(), d_lr());
            o = in * A.transpose();
            return out;
        }
        require(y.rank() == 4 && y.dim(2) == in_h && y.dim(3) == in_w,
                "downsample shape mismatch: expected (N,C,", in_h, ",", in_w, "), got ",
                shape_str(y.shape));
        const int n = y.dim(0), ch = y.dim(1);
        Tensor out({n, ch, out_h(), out_w()});
        const std::size_t ystep = static_cast<std::size_t>(in_h) * in_w;
        const std::size_t xstep = static_cast<std::size_t>(out_h()) * out_w();
        for (int i = 0; i < n * ch; ++i)
            down_single(y.v.data() + i * ystep, out.v.data() + i * xstep);
        return out;
    }

    // Aᵀ u for LR-shaped u, batched; used by gradients.
    Tensor apply_adjoint(const Tensor& u) const {
        if (mode == Mode::matrix) {
            require(u.features() == d_lr(), "adjoint shape mismatch: expected ", d_lr(),
                    " features, got ", u.features());
            Tensor out({u.batch(), d_hr()});
            Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
                in(u.v.data(), u.batch(), d_lr());
            Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> o(
                out.v.data(), u.batch(), d_hr());
            o = in * A;
            return out;
        }
        require(u.rank() == 4 && u.dim(2) == out_h() && u.dim(3) == out_w(),
                "adjoint shape mismatch: expected (N,C,", out_h(), ",", out_w(), "), got ",
                shape_str(u.shape));
        const int n = u.dim(0), ch = u.dim(1);
        Tensor out({n, ch, in_h, in_w});
        const std::size_t ystep = static_cast<std::size_t>(in_h) * in_w;
        const std::size_t xstep = static_cast<std::size_t>(out_h()) * out_w();
        for (int i = 0; i < n * ch; ++i)
            down_adjoint_single(u.v.data() + i * xstep, out.v.data() + i * ystep);
        return out;
    }
};

}  // namespace affmap
