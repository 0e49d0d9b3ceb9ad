#pragma once

#include <cmath>

#include "affmap/core/error.hpp"
#include "affmap/core/tensor.hpp"
#include "affmap/linops/downsample.hpp"
#include "affmap/linops/pseudoinverse.hpp"

namespace affmap {

// The affine projection ŷ = (I − A⁺A) f + A⁺ x: places any candidate output f
// onto the subspace {y : Ay = x} of reconstructions consistent with the
// observation x. `enforce` controls the post-projection consistency check —
// it stays on for fixed, well-fitted A⁺ and is disabled when A⁺ itself is
// being trained (the guarantee genuinely degrades there).
struct AffineProjector {
    DownsampleOperator down;
    PseudoInverseOperator up;
    double tolerance = 1e-6;  // conv default; matrix-mode constructions use 1e-10
    bool enforce = true;

    static AffineProjector make(DownsampleOperator a, PseudoInverseOperator b) {
        AffineProjector p{std::move(a), std::move(b),
                          /*tolerance=*/1e-6, /*enforce=*/true};
        if (p.down.mode == DownsampleOperator::Mode::matrix) p.tolerance = 1e-10;
        return p;
    }

    // ŷ = f − A⁺(A f) + A⁺ x
    Tensor project(const Tensor& f_out, const Tensor& x) const {
        require(f_out.all_finite() && x.all_finite(), "project inputs must be finite");
        const Tensor af = down.apply(f_out);
        require(af.same_shape(x), "project: x shape ", shape_str(x.shape),
                " does not match A·f shape ", shape_str(af.shape));
        Tensor d = x;
        for (std::size_t i = 0; i < d.v.size(); ++i) d.v[i] -= af.v[i];
        Tensor y = f_out;
        const Tensor corr = up.apply(d);
        for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += corr.v[i];
        if (enforce) {
            const double r = consistency_residual(y, x);
            require(r <= tolerance, "projection consistency check failed: |Ay - x|_inf = ", r,
                    " > tolerance ", tolerance);
        }
        return y;
    }

    // Backward pass w.r.t. f: (I − A⁺A)ᵀ u = u − Aᵀ(A⁺ᵀ u).
    Tensor project_gradient(const Tensor& upstream) const {
        Tensor g = upstream;
        const Tensor bt = up.apply_adjoint(upstream);
        const Tensor abt = down.apply_adjoint(bt);
        for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] -= abt.v[i];
        return g;
    }

    // Gradient of project w.r.t. the conv kernel bank of A⁺ (for the trainable-
    // projection variants): ŷ = f + B(x − Af) is linear in the bank with input
    // (x − Af), so the weight gradient is the usual correlate-with-upstream.
    void project_bank_gradient(const Tensor& f_out, const Tensor& x, const Tensor& upstream,
                               std::vector<double>& bank_grad) const {
        require(up.mode == DownsampleOperator::Mode::conv, "bank gradient needs conv mode");
        require(bank_grad.size() == up.bank.size(), "bank gradient buffer size mismatch");
        const Tensor af = down.apply(f_out);
        Tensor d = x;
        for (std::size_t i = 0; i < d.v.size(); ++i) d.v[i] -= af.v[i];
        const int n = d.dim(0), ch = d.dim(1), h = d.dim(2), w = d.dim(3);
        const std::size_t lr_step = static_cast<std::size_t>(h) * w;
        const std::size_t hr_step = lr_step * up.stride * up.stride;
        for (int i = 0; i < n * ch; ++i)
            up.up_weight_grad_single(d.v.data() + i * lr_step, h, w,
                                     upstream.v.data() + i * hr_step, bank_grad.data());
    }

    double consistency_residual(const Tensor& y, const Tensor& x) const {
        const Tensor ay = down.apply(y);
        double r = 0.0;
        for (std::size_t i = 0; i < x.v.size(); ++i)
            r = std::max(r, std::abs(ay.v[i] - x.v[i]));
        return r;
    }
};

}  // namespace affmap
