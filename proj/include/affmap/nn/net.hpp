#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "affmap/core/error.hpp"
#include "affmap/core/rng.hpp"
#include "affmap/core/tensor.hpp"

namespace affmap {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

enum class LayerKind { dense, conv2d, pixel_shuffle, relu, sigmoid, batch_norm, skip_connection };

struct LayerSpec {
    LayerKind kind;
    int in = 0, out = 0;  // dense: features; conv2d: channels; batch_norm: channels (in)
    int k = 0, stride = 1;  // conv2d
    int r = 1;              // pixel_shuffle factor
    int from = -1;          // skip_connection source (absolute layer index)
};

// Architecture description. Build with the fluent helpers:
//   NetSpec::make(seed).dense(1,64).relu().dense(64,64).relu().dense(64,2)
struct NetSpec {
    std::vector<LayerSpec> layers;
    std::uint64_t init_seed = 1;

    static NetSpec make(std::uint64_t seed) {
        NetSpec s;
        s.init_seed = seed;
        return s;
    }
    NetSpec& dense(int in, int out) {
        layers.push_back({LayerKind::dense, in, out});
        return *this;
    }
    NetSpec& conv2d(int in_ch, int out_ch, int k, int stride = 1) {
        require(k >= 1 && k % 2 == 1, "conv2d kernel must be odd, got ", k);
        layers.push_back({LayerKind::conv2d, in_ch, out_ch, k, stride});
        return *this;
    }
    NetSpec& pixel_shuffle(int r) {
        require(r >= 1, "pixel_shuffle factor must be >= 1");
        LayerSpec l{LayerKind::pixel_shuffle};
        l.r = r;
        layers.push_back(l);
        return *this;
    }
    NetSpec& relu() {
        layers.push_back({LayerKind::relu});
        return *this;
    }
    NetSpec& sigmoid() {
        layers.push_back({LayerKind::sigmoid});
        return *this;
    }
    NetSpec& batch_norm(int ch) {
        layers.push_back({LayerKind::batch_norm, ch, ch});
        return *this;
    }
    NetSpec& skip_connection(int from) {
        require(from >= 0 && from < static_cast<int>(layers.size()),
                "skip source must precede the skip layer, got ", from, " at layer ",
                layers.size());
        LayerSpec l{LayerKind::skip_connection};
        l.from = from;
        layers.push_back(l);
        return *this;
    }
};

// Per-layer trainable tensors: dense/conv use {W, b}; batch_norm uses {gamma, beta}.
struct LayerParams {
    Tensor W, b;
    bool empty() const { return W.v.empty() && b.v.empty(); }
};

struct AdamSlots {
    std::vector<LayerParams> m, v;
    long t = 0;
};

// Trainable state: parameters, batch-norm running statistics, optimizer
// moments, and a version counter used to invalidate stale tapes.
struct NetState {
    std::vector<LayerParams> params;   // indexed by layer
    std::vector<Tensor> bn_mean, bn_var;  // indexed by layer (batch_norm only)
    AdamSlots adam;
    std::uint64_t version = 0;

    bool all_finite() const {
        for (const auto& p : params)
            if ((!p.W.v.empty() && !p.W.all_finite()) || (!p.b.v.empty() && !p.b.all_finite()))
                return false;
        return true;
    }
};

namespace detail {

inline bool next_activation_is_relu(const NetSpec& spec, std::size_t i) {
    for (std::size_t j = i + 1; j < spec.layers.size(); ++j) {
        switch (spec.layers[j].kind) {
            case LayerKind::relu: return true;
            case LayerKind::sigmoid: return false;
            case LayerKind::dense:
            case LayerKind::conv2d: return false;
            default: break;  // norm/shuffle/skip are activation-transparent
        }
    }
    return false;
}

}  // namespace detail

// Deterministic initialization: He-uniform ahead of ReLU, Xavier-uniform
// otherwise; biases zero; batch-norm gamma=1, beta=0.
inline NetState init_state(const NetSpec& spec) {
    NetState st;
    st.params.resize(spec.layers.size());
    st.bn_mean.resize(spec.layers.size());
    st.bn_var.resize(spec.layers.size());
    Rng rng(Rng::mix(spec.init_seed, 0xa11c));
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        if (l.kind == LayerKind::dense || l.kind == LayerKind::conv2d) {
            const int fan_in = l.kind == LayerKind::dense ? l.in : l.in * l.k * l.k;
            const int fan_out = l.kind == LayerKind::dense ? l.out : l.out * l.k * l.k;
            const double limit = detail::next_activation_is_relu(spec, i)
                                     ? std::sqrt(6.0 / fan_in)
                                     : std::sqrt(6.0 / (fan_in + fan_out));
            st.params[i].W = l.kind == LayerKind::dense
                                 ? Tensor({l.out, l.in})
                                 : Tensor({l.out, l.in, l.k, l.k});
            for (double& w : st.params[i].W.v) w = rng.uniform(-limit, limit);
            st.params[i].b = Tensor({l.out});
        } else if (l.kind == LayerKind::batch_norm) {
            st.params[i].W = Tensor({l.in});  // gamma
            st.params[i].W.fill(1.0);
            st.params[i].b = Tensor({l.in});  // beta
            st.bn_mean[i] = Tensor({l.in});
            st.bn_var[i] = Tensor({l.in});
            st.bn_var[i].fill(1.0);
        }
    }
    return st;
}

enum class RunMode { train, eval };

// Everything backward needs: per-layer inputs/outputs plus batch-norm batch
// statistics, stamped with the state version that produced them.
struct Tape {
    RunMode mode = RunMode::train;
    std::uint64_t state_version = 0;
    std::vector<Tensor> inputs;      // input to each layer
    std::vector<Tensor> outputs;     // output of each layer
    std::vector<Tensor> bn_xhat;     // normalized activations (batch_norm)
    std::vector<Tensor> bn_stats;    // {mean..., var...} used in the pass
};

namespace detail {

// (channel, spatial) view of (N,C,H,W) slices. For rank-2 (N,F) tensors the
// per-channel reductions treat F as channels with one spatial location.
struct ChanView {
    int n, c, sp;  // batch, channels, spatial elements per channel
};

inline ChanView chan_view(const Tensor& t, int expected_c) {
    ChanView v;
    v.n = t.dim(0);
    if (t.rank() == 2) {
        v.c = t.dim(1);
        v.sp = 1;
    } else {
        require(t.rank() == 4, "batch_norm expects rank-2 or rank-4 input, got rank ", t.rank());
        v.c = t.dim(1);
        v.sp = t.dim(2) * t.dim(3);
    }
    require(v.c == expected_c, "batch_norm channel mismatch: spec has ", expected_c,
            ", input has ", v.c);
    return v;
}

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;  // running = m*running + (1-m)*batch

inline void im2col(const Tensor& in, int sample, int k, int stride, int pad, int oh, int ow,
                   std::vector<double>& cols) {
    const int c = in.dim(1), h = in.dim(2), w = in.dim(3);
    // cols is (c*k*k) × (oh*ow), row-major
    std::size_t idx = 0;
    for (int ch = 0; ch < c; ++ch)
        for (int ty = 0; ty < k; ++ty)
            for (int tx = 0; tx < k; ++tx)
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ty - pad;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) cols[idx++] = 0.0;
                        continue;
                    }
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + tx - pad;
                        cols[idx++] =
                            (ix < 0 || ix >= w) ? 0.0 : in.at4(sample, ch, iy, ix);
                    }
                }
}

inline void col2im_add(const std::vector<double>& cols, int sample, int k, int stride, int pad,
                       int oh, int ow, Tensor& out) {
    const int c = out.dim(1), h = out.dim(2), w = out.dim(3);
    std::size_t idx = 0;
    for (int ch = 0; ch < c; ++ch)
        for (int ty = 0; ty < k; ++ty)
            for (int tx = 0; tx < k; ++tx)
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ty - pad;
                    if (iy < 0 || iy >= h) {
                        idx += ow;
                        continue;
                    }
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + tx - pad;
                        if (ix >= 0 && ix < w) out.at4(sample, ch, iy, ix) += cols[idx];
                        ++idx;
                    }
                }
}

}  // namespace detail

struct ForwardResult {
    Tensor output;
    Tape tape;
};

// Run the network. Deterministic given (state, input, mode); the tape records
// everything backward needs. Throws with the layer index if an activation
// goes non-finite.
inline ForwardResult forward(const NetSpec& spec, NetState& state, const Tensor& input,
                             RunMode mode = RunMode::train) {
    Tape tape;
    tape.mode = mode;
    tape.state_version = state.version;
    const std::size_t L = spec.layers.size();
    tape.inputs.resize(L);
    tape.outputs.resize(L);
    tape.bn_xhat.resize(L);
    tape.bn_stats.resize(L);

    Tensor x = input;
    for (std::size_t i = 0; i < L; ++i) {
        const LayerSpec& l = spec.layers[i];
        tape.inputs[i] = x;
        Tensor y;
        switch (l.kind) {
            case LayerKind::dense: {
                require(x.features() == l.in, "layer ", i, " (dense): expected ", l.in,
                        " input features, got ", x.features(), " from ", shape_str(x.shape));
                y = Tensor({x.batch(), l.out});
                CMapMat in(x.v.data(), x.batch(), l.in);
                CMapMat W(state.params[i].W.v.data(), l.out, l.in);
                MapMat o(y.v.data(), x.batch(), l.out);
                o.noalias() = in * W.transpose();
                o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(state.params[i].b.v.data(), l.out);
                break;
            }
            case LayerKind::conv2d: {
                require(x.rank() == 4 && x.dim(1) == l.in, "layer ", i, " (conv2d): expected (N,",
                        l.in, ",H,W), got ", shape_str(x.shape));
                const int pad = (l.k - 1) / 2;
                const int oh = (x.dim(2) + 2 * pad - l.k) / l.stride + 1;
                const int ow = (x.dim(3) + 2 * pad - l.k) / l.stride + 1;
                y = Tensor({x.dim(0), l.out, oh, ow});
                std::vector<double> cols(static_cast<std::size_t>(l.in) * l.k * l.k * oh * ow);
                CMapMat W(state.params[i].W.v.data(), l.out, l.in * l.k * l.k);
                for (int s = 0; s < x.dim(0); ++s) {
                    detail::im2col(x, s, l.k, l.stride, pad, oh, ow, cols);
                    CMapMat cm(cols.data(), l.in * l.k * l.k, oh * ow);
                    MapMat om(y.v.data() + static_cast<std::size_t>(s) * l.out * oh * ow, l.out,
                              oh * ow);
                    om.noalias() = W * cm;
                    for (int c = 0; c < l.out; ++c)
                        om.row(c).array() += state.params[i].b.v[c];
                }
                break;
            }
            case LayerKind::pixel_shuffle: {
                require(x.rank() == 4 && x.dim(1) % (l.r * l.r) == 0, "layer ", i,
                        " (pixel_shuffle): channels ", x.rank() == 4 ? x.dim(1) : -1,
                        " not divisible by r^2=", l.r * l.r);
                const int r = l.r, c = x.dim(1) / (r * r), h = x.dim(2), w = x.dim(3);
                y = Tensor({x.dim(0), c, h * r, w * r});
                for (int s = 0; s < x.dim(0); ++s)
                    for (int oc = 0; oc < c; ++oc)
                        for (int dy = 0; dy < r; ++dy)
                            for (int dx = 0; dx < r; ++dx)
                                for (int yy = 0; yy < h; ++yy)
                                    for (int xx = 0; xx < w; ++xx)
                                        y.at4(s, oc, yy * r + dy, xx * r + dx) =
                                            x.at4(s, oc * r * r + dy * r + dx, yy, xx);
                break;
            }
            case LayerKind::relu: {
                y = x;
                for (double& t : y.v) t = t > 0.0 ? t : 0.0;
                break;
            }
            case LayerKind::sigmoid: {
                y = x;
                for (double& t : y.v)
                    t = t >= 0.0 ? 1.0 / (1.0 + std::exp(-t))
                                 : std::exp(t) / (1.0 + std::exp(t));
                break;
            }
            case LayerKind::batch_norm: {
                const auto cv = detail::chan_view(x, l.in);
                y = x;
                Tensor xhat = x;
                Tensor stats({2, cv.c});
                const double cnt = static_cast<double>(cv.n) * cv.sp;
                for (int c = 0; c < cv.c; ++c) {
                    double mean, var;
                    if (mode == RunMode::train) {
                        double s = 0.0, s2 = 0.0;
                        for (int s_i = 0; s_i < cv.n; ++s_i) {
                            const double* p =
                                x.v.data() + (static_cast<std::size_t>(s_i) * cv.c + c) * cv.sp;
                            for (int j = 0; j < cv.sp; ++j) {
                                s += p[j];
                                s2 += p[j] * p[j];
                            }
                        }
                        mean = s / cnt;
                        var = s2 / cnt - mean * mean;
                        if (var < 0.0) var = 0.0;
                        state.bn_mean[i].v[c] = detail::kBnMomentum * state.bn_mean[i].v[c] +
                                                (1.0 - detail::kBnMomentum) * mean;
                        state.bn_var[i].v[c] = detail::kBnMomentum * state.bn_var[i].v[c] +
                                               (1.0 - detail::kBnMomentum) * var;
                    } else {
                        mean = state.bn_mean[i].v[c];
                        var = state.bn_var[i].v[c];
                    }
                    stats.v[c] = mean;
                    stats.v[cv.c + c] = var;
                    const double inv = 1.0 / std::sqrt(var + detail::kBnEps);
                    const double gamma = state.params[i].W.v[c], beta = state.params[i].b.v[c];
                    for (int s_i = 0; s_i < cv.n; ++s_i) {
                        const std::size_t off = (static_cast<std::size_t>(s_i) * cv.c + c) * cv.sp;
                        for (int j = 0; j < cv.sp; ++j) {
                            const double xh = (x.v[off + j] - mean) * inv;
                            xhat.v[off + j] = xh;
                            y.v[off + j] = gamma * xh + beta;
                        }
                    }
                }
                tape.bn_xhat[i] = std::move(xhat);
                tape.bn_stats[i] = std::move(stats);
                break;
            }
            case LayerKind::skip_connection: {
                const Tensor& src = tape.outputs[l.from];
                require(src.same_shape(x), "layer ", i, " (skip from ", l.from,
                        "): shape ", shape_str(src.shape), " does not match ",
                        shape_str(x.shape));
                y = x;
                for (std::size_t j = 0; j < y.v.size(); ++j) y.v[j] += src.v[j];
                break;
            }
        }
        require(y.all_finite(), "layer ", i, " produced non-finite activations");
        tape.outputs[i] = y;
        x = std::move(y);
    }
    return {x, std::move(tape)};
}

struct BackwardResult {
    std::vector<LayerParams> grads;  // same structure as state.params
    Tensor input_grad;
};

// Reverse pass. Accumulates into per-layer-output gradient slots so that skip
// connections (a DAG, not a chain) route correctly.
inline BackwardResult backward(const NetSpec& spec, const NetState& state, const Tape& tape,
                               const Tensor& upstream) {
    require(tape.state_version == state.version,
            "stale tape: network state was mutated after forward (version ",
            tape.state_version, " vs ", state.version, ")");
    require(tape.mode == RunMode::train, "backward requires a tape from a train-mode forward");
    const std::size_t L = spec.layers.size();
    require(L > 0 && upstream.same_shape(tape.outputs[L - 1]),
            "upstream shape does not match network output");

    BackwardResult res;
    res.grads.resize(L);
    for (std::size_t i = 0; i < L; ++i) {
        if (!state.params[i].empty()) {
            res.grads[i].W = Tensor::zeros_like(state.params[i].W);
            res.grads[i].b = Tensor::zeros_like(state.params[i].b);
        }
    }
    std::vector<Tensor> out_grad(L);  // gradient w.r.t. each layer's output
    out_grad[L - 1] = upstream;

    for (std::size_t ii = L; ii-- > 0;) {
        const LayerSpec& l = spec.layers[ii];
        if (out_grad[ii].v.empty()) out_grad[ii] = Tensor::zeros_like(tape.outputs[ii]);
        const Tensor& g = out_grad[ii];
        const Tensor& x = tape.inputs[ii];
        Tensor gin;  // gradient w.r.t. this layer's input
        switch (l.kind) {
            case LayerKind::dense: {
                gin = Tensor(x.shape);
                CMapMat gm(g.v.data(), g.batch(), l.out);
                CMapMat in(x.v.data(), x.batch(), l.in);
                CMapMat W(state.params[ii].W.v.data(), l.out, l.in);
                MapMat gW(res.grads[ii].W.v.data(), l.out, l.in);
                gW.noalias() = gm.transpose() * in;
                Eigen::Map<Eigen::RowVectorXd>(res.grads[ii].b.v.data(), l.out) =
                    gm.colwise().sum();
                MapMat gi(gin.v.data(), x.batch(), l.in);
                gi.noalias() = gm * W;
                break;
            }
            case LayerKind::conv2d: {
                gin = Tensor(x.shape);
                const int pad = (l.k - 1) / 2;
                const int oh = g.dim(2), ow = g.dim(3);
                std::vector<double> cols(static_cast<std::size_t>(l.in) * l.k * l.k * oh * ow);
                std::vector<double> gcols(cols.size());
                CMapMat W(state.params[ii].W.v.data(), l.out, l.in * l.k * l.k);
                MapMat gW(res.grads[ii].W.v.data(), l.out, l.in * l.k * l.k);
                for (int s = 0; s < x.dim(0); ++s) {
                    detail::im2col(x, s, l.k, l.stride, pad, oh, ow, cols);
                    CMapMat cm(cols.data(), l.in * l.k * l.k, oh * ow);
                    CMapMat gm(g.v.data() + static_cast<std::size_t>(s) * l.out * oh * ow, l.out,
                               oh * ow);
                    gW.noalias() += gm * cm.transpose();
                    for (int c = 0; c < l.out; ++c) res.grads[ii].b.v[c] += gm.row(c).sum();
                    MapMat gc(gcols.data(), l.in * l.k * l.k, oh * ow);
                    gc.noalias() = W.transpose() * gm;
                    detail::col2im_add(gcols, s, l.k, l.stride, pad, oh, ow, gin);
                }
                break;
            }
            case LayerKind::pixel_shuffle: {
                gin = Tensor(x.shape);
                const int r = l.r, c = x.dim(1) / (r * r), h = x.dim(2), w = x.dim(3);
                for (int s = 0; s < x.dim(0); ++s)
                    for (int oc = 0; oc < c; ++oc)
                        for (int dy = 0; dy < r; ++dy)
                            for (int dx = 0; dx < r; ++dx)
                                for (int yy = 0; yy < h; ++yy)
                                    for (int xx = 0; xx < w; ++xx)
                                        gin.at4(s, oc * r * r + dy * r + dx, yy, xx) =
                                            g.at4(s, oc, yy * r + dy, xx * r + dx);
                break;
            }
            case LayerKind::relu: {
                gin = g;
                for (std::size_t j = 0; j < gin.v.size(); ++j)
                    if (x.v[j] <= 0.0) gin.v[j] = 0.0;
                break;
            }
            case LayerKind::sigmoid: {
                gin = g;
                const Tensor& y = tape.outputs[ii];
                for (std::size_t j = 0; j < gin.v.size(); ++j)
                    gin.v[j] *= y.v[j] * (1.0 - y.v[j]);
                break;
            }
            case LayerKind::batch_norm: {
                const auto cv = detail::chan_view(x, l.in);
                gin = Tensor(x.shape);
                const Tensor& xhat = tape.bn_xhat[ii];
                const double cnt = static_cast<double>(cv.n) * cv.sp;
                for (int c = 0; c < cv.c; ++c) {
                    const double var = tape.bn_stats[ii].v[cv.c + c];
                    const double inv = 1.0 / std::sqrt(var + detail::kBnEps);
                    const double gamma = state.params[ii].W.v[c];
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (int s_i = 0; s_i < cv.n; ++s_i) {
                        const std::size_t off = (static_cast<std::size_t>(s_i) * cv.c + c) * cv.sp;
                        for (int j = 0; j < cv.sp; ++j) {
                            sum_g += g.v[off + j];
                            sum_gx += g.v[off + j] * xhat.v[off + j];
                        }
                    }
                    res.grads[ii].W.v[c] += sum_gx;  // d/d gamma
                    res.grads[ii].b.v[c] += sum_g;   // d/d beta
                    for (int s_i = 0; s_i < cv.n; ++s_i) {
                        const std::size_t off =
                            (static_cast<std::size_t>(s_i) * cv.c + c) * cv.sp;
                        for (int j = 0; j < cv.sp; ++j)
                            gin.v[off + j] = gamma * inv / cnt *
                                             (cnt * g.v[off + j] - sum_g -
                                              xhat.v[off + j] * sum_gx);
                    }
                }
                break;
            }
            case LayerKind::skip_connection: {
                gin = g;
                Tensor& src_grad = out_grad[l.from];
                if (src_grad.v.empty()) src_grad = Tensor::zeros_like(tape.outputs[l.from]);
                for (std::size_t j = 0; j < g.v.size(); ++j) src_grad.v[j] += g.v[j];
                break;
            }
        }
        if (ii > 0) {
            Tensor& prev = out_grad[ii - 1];
            if (prev.v.empty())
                prev = std::move(gin);
            else
                prev.add_scaled(gin, 1.0);
        } else {
            res.input_grad = std::move(gin);
        }
    }
    return res;
}

// Convenience: forward in eval mode without touching running statistics
// (state stays logically const; the version is untouched).
inline Tensor infer(const NetSpec& spec, const NetState& state, const Tensor& input) {
    NetState& mut = const_cast<NetState&>(state);
    return forward(spec, mut, input, RunMode::eval).output;
}

}  // namespace affmap
