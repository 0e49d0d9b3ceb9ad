#pragma once

#include <cmath>

#include "affmap/core/error.hpp"
#include "affmap/core/tensor.hpp"

namespace affmap {

enum class PixelLoss { mse, mae };

struct LossValue {
    double value = 0.0;
    Tensor grad;  // d value / d yhat, same shape as yhat
};

// Mean over every element of the batch: MSE ‖y−ŷ‖² or MAE ‖y−ŷ‖₁.
inline LossValue pixel_loss(const Tensor& yhat, const Tensor& y, PixelLoss kind) {
    require(yhat.same_shape(y), "pixel_loss: shape mismatch ", shape_str(yhat.shape), " vs ",
            shape_str(y.shape));
    LossValue out;
    out.grad = Tensor::zeros_like(yhat);
    const double inv_n = 1.0 / static_cast<double>(yhat.v.size());
    for (std::size_t i = 0; i < yhat.v.size(); ++i) {
        const double d = yhat.v[i] - y.v[i];
        if (kind == PixelLoss::mse) {
            out.value += d * d * inv_n;
            out.grad.v[i] = 2.0 * d * inv_n;
        } else {
            out.value += std::abs(d) * inv_n;
            out.grad.v[i] = (d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0) * inv_n;
        }
    }
    return out;
}

}  // namespace affmap
