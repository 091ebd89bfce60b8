// DnCNN-style residual denoiser with spectral normalization: forward
// evaluation plus hand-written reverse-mode VJPs with respect to the input
// image and the parameters. The tape caches one forward pass so the adjoint
// fixed-point solve can apply J^T repeatedly at the same linearization point.
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pnpttt/conv.hpp"
#include "pnpttt/image.hpp"
#include "pnpttt/rng.hpp"

namespace pnpttt {

struct DenoiserConfig {
    int depth = 5;       // number of conv layers
    int channels = 16;   // hidden width
    int kernel_size = 3;
    bool residual = true;
    double lipschitz_target = 1.0;
    int power_iters = 1;
    int sn_ref_size = 32;  // spatial size at which conv operator norms are estimated
};

// Power-iteration state per layer: left singular-vector estimate u (a feature
// map at the reference size) and the cached norm estimate for the stored weights.
struct LayerSnState {
    std::vector<double> u;
    double sigma = 0.0;
};

struct DenoiserParams {
    DenoiserConfig config;
    std::vector<ConvKernel> layers;
    std::vector<LayerSnState> sn_state;
};

// Kernel-shaped parameter gradient (bias field carries the bias gradient).
struct ParamGrad {
    std::vector<ConvKernel> layers;
};

namespace detail {

inline int layer_in_channels(const DenoiserConfig& cfg, int l) { return l == 0 ? 1 : cfg.channels; }
inline int layer_out_channels(const DenoiserConfig& cfg, int l) {
    return l == cfg.depth - 1 ? 1 : cfg.channels;
}

// weight / max(1, sigma/target) applied on the fly in conv calls
inline double sn_scale(const DenoiserParams& p, int l) {
    const double s = std::max(1.0, p.sn_state[l].sigma / p.config.lipschitz_target);
    return 1.0 / s;
}

inline void relu_inplace(FeatureMap& f) {
    for (double& v : f.data) v = v > 0.0 ? v : 0.0;
}

inline FeatureMap conv_nobias(const FeatureMap& input, const ConvKernel& k) {
    ConvKernel kz = k;
    std::fill(kz.bias.begin(), kz.bias.end(), 0.0);
    return conv2d(input, kz);
}

}  // namespace detail

inline void validate_config(const DenoiserConfig& cfg) {
    if (cfg.depth < 2) throw std::invalid_argument("DenoiserConfig: depth must be >= 2");
    if (cfg.channels < 1) throw std::invalid_argument("DenoiserConfig: channels must be >= 1");
    if (cfg.kernel_size < 1 || cfg.kernel_size % 2 == 0)
        throw std::invalid_argument("DenoiserConfig: kernel_size must be odd positive");
    if (!(cfg.lipschitz_target > 0.0))
        throw std::invalid_argument("DenoiserConfig: lipschitz_target must be positive");
    if (cfg.power_iters < 1) throw std::invalid_argument("DenoiserConfig: power_iters must be >= 1");
    if (cfg.sn_ref_size < cfg.kernel_size)
        throw std::invalid_argument("DenoiserConfig: sn_ref_size too small");
}

// One-sided power iteration refining u in place; returns the sigma estimate.
inline double sn_power_iterate(const ConvKernel& k, LayerSnState& st, int ref, int iters) {
    double sigma = st.sigma;
    for (int it = 0; it < iters; ++it) {
        FeatureMap uf(k.out_channels, ref, ref);
        uf.data = st.u;
        FeatureMap v = conv2d_adjoint(k, uf);
        double vn = 0.0;
        for (double x : v.data) vn += x * x;
        vn = std::sqrt(vn);
        if (vn < 1e-300) return 0.0;
        for (double& x : v.data) x /= vn;
        FeatureMap kv = detail::conv_nobias(v, k);
        double un = 0.0;
        for (double x : kv.data) un += x * x;
        un = std::sqrt(un);
        sigma = un;
        if (un < 1e-300) break;
        for (double& x : kv.data) x /= un;
        st.u = kv.data;
    }
    return sigma;
}

// sigma estimate from the current u without touching it: v = normalize(K^T u),
// sigma = ||K v||.
inline double sn_sigma_from_state(const ConvKernel& k, const LayerSnState& st, int ref) {
    FeatureMap uf(k.out_channels, ref, ref);
    uf.data = st.u;
    FeatureMap v = conv2d_adjoint(k, uf);
    double vn = 0.0;
    for (double x : v.data) vn += x * x;
    vn = std::sqrt(vn);
    if (vn < 1e-300) return 0.0;
    for (double& x : v.data) x /= vn;
    FeatureMap kv = detail::conv_nobias(v, k);
    double s = 0.0;
    for (double x : kv.data) s += x * x;
    return std::sqrt(s);
}

// He init rescaled to unit spectral norm per layer, with the output layer
// damped by 0.1 so the residual denoiser starts close to the identity map
// (raw He layers amplify by 2-4x each, which puts a fresh net thousands of
// optimizer steps away from even matching its noisy input). Zero biases,
// power-iteration vectors warmed up on the init weights; fully determined by
// the seed.
inline DenoiserParams init_params(const DenoiserConfig& cfg, uint64_t seed) {
    validate_config(cfg);
    DenoiserParams p;
    p.config = cfg;
    Rng rng(derive_seed(seed, 0xd03));
    for (int l = 0; l < cfg.depth; ++l) {
        const int in_c = detail::layer_in_channels(cfg, l);
        const int out_c = detail::layer_out_channels(cfg, l);
        ConvKernel k(out_c, in_c, cfg.kernel_size, cfg.kernel_size);
        const double stdev = std::sqrt(2.0 / (in_c * cfg.kernel_size * cfg.kernel_size));
        for (double& w : k.weights) w = stdev * rng.normal();
        p.layers.push_back(std::move(k));
    }
    for (int l = 0; l < cfg.depth; ++l) {
        LayerSnState st;
        const size_t n = static_cast<size_t>(detail::layer_out_channels(cfg, l)) *
                         cfg.sn_ref_size * cfg.sn_ref_size;
        st.u.resize(n);
        double norm = 0.0;
        for (double& v : st.u) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double& v : st.u) v /= norm;
        ConvKernel& k = p.layers[l];
        double sigma = sn_power_iterate(k, st, cfg.sn_ref_size, 30);
        if (sigma > 1e-300) {
            double scale = 1.0 / sigma;
            if (l == cfg.depth - 1) scale *= 0.1;
            for (double& w : k.weights) w *= scale;
            sigma *= scale;
        }
        st.sigma = sigma;
        p.sn_state.push_back(std::move(st));
    }
    return p;
}

// Forward pass with per-layer activation cache. net = conv -> relu -> ... -> conv,
// denoise(x) = x - net(x) in residual mode.
class DenoiserTape {
public:
    DenoiserTape(const RealImage& x, const DenoiserParams& p) : params_(&p), x_(x) {
        const auto& cfg = p.config;
        if (static_cast<int>(p.layers.size()) != cfg.depth ||
            static_cast<int>(p.sn_state.size()) != cfg.depth)
            throw std::invalid_argument("DenoiserTape: params inconsistent with config");
        scales_.resize(cfg.depth);
        acts_.reserve(cfg.depth);
        acts_.push_back(to_feature(x));
        for (int l = 0; l < cfg.depth; ++l) {
            scales_[l] = detail::sn_scale(p, l);
            FeatureMap z = conv2d(acts_[l], p.layers[l], scales_[l]);
            if (l < cfg.depth - 1) {
                detail::relu_inplace(z);
                acts_.push_back(std::move(z));
            } else {
                RealImage net = to_image(z);
                out_ = cfg.residual ? x - net : net;
            }
        }
    }

    const RealImage& output() const { return out_; }

    // v^T (d denoise / d x)
    RealImage vjp_input(const RealImage& v) const {
        require_same_shape(v, x_, "denoiser vjp_input");
        RealImage g = net_backward(v, nullptr);
        if (params_->config.residual) return v - g;
        return g;
    }

    // v^T (d denoise / d theta), sigma scales held constant
    ParamGrad vjp_params(const RealImage& v) const {
        require_same_shape(v, x_, "denoiser vjp_params");
        ParamGrad grads;
        grads.layers.resize(params_->config.depth);
        RealImage cot = params_->config.residual ? -1.0 * v : v;
        net_backward(cot, &grads);
        return grads;
    }

private:
    // Reverse pass through the net with output cotangent g0; fills layer
    // gradients when grads is non-null and returns the input cotangent.
    RealImage net_backward(const RealImage& g0, ParamGrad* grads) const {
        const auto& cfg = params_->config;
        FeatureMap g = to_feature(g0);
        for (int l = cfg.depth - 1; l >= 0; --l) {
            const ConvKernel& k = params_->layers[l];
            if (grads) {
                ConvKernel gk = conv2d_vjp_kernel(acts_[l], k.out_channels, k.kh, k.kw, g);
                // d(effective W)/d(stored W) = scale; bias enters unscaled
                for (double& w : gk.weights) w *= scales_[l];
                grads->layers[l] = std::move(gk);
            }
            g = conv2d_adjoint(k, g, scales_[l]);
            if (l > 0) {
                const FeatureMap& a = acts_[l];  // relu output = conv input, mask a > 0
                for (size_t i = 0; i < g.data.size(); ++i)
                    if (!(a.data[i] > 0.0)) g.data[i] = 0.0;
            }
        }
        return to_image(g);
    }

    const DenoiserParams* params_;
    RealImage x_;
    RealImage out_;
    std::vector<FeatureMap> acts_;  // input feature map of each conv layer
    std::vector<double> scales_;
};

inline RealImage denoise(const RealImage& x, const DenoiserParams& params) {
    return DenoiserTape(x, params).output();
}

inline RealImage denoiser_vjp_input(const RealImage& x, const DenoiserParams& params,
                                    const RealImage& v) {
    return DenoiserTape(x, params).vjp_input(v);
}

inline ParamGrad denoiser_vjp_params(const RealImage& x, const DenoiserParams& params,
                                     const RealImage& v) {
    return DenoiserTape(x, params).vjp_params(v);
}

// Runs power_iters power-iteration steps per layer at the reference spatial
// size, refreshes sn_state, and rescales stored weights so the estimated
// operator norm stays at or below the Lipschitz target.
inline DenoiserParams spectral_normalize(DenoiserParams params) {
    const auto& cfg = params.config;
    const int ref = cfg.sn_ref_size;
    for (int l = 0; l < cfg.depth; ++l) {
        ConvKernel& k = params.layers[l];
        LayerSnState& st = params.sn_state[l];
        double sigma = sn_power_iterate(k, st, ref, cfg.power_iters);
        const double s = std::max(1.0, sigma / cfg.lipschitz_target);
        if (s > 1.0) {
            for (double& w : k.weights) w /= s;
            sigma /= s;
        }
        st.sigma = sigma;
    }
    return params;
}

// -------- parameter-gradient arithmetic --------

inline ParamGrad zero_grad_like(const DenoiserParams& p) {
    ParamGrad g;
    for (const auto& k : p.layers)
        g.layers.emplace_back(k.out_channels, k.in_channels, k.kh, k.kw);
    return g;
}

inline void grad_axpy(double a, const ParamGrad& x, ParamGrad& y) {
    for (size_t l = 0; l < y.layers.size(); ++l) {
        for (size_t i = 0; i < y.layers[l].weights.size(); ++i)
            y.layers[l].weights[i] += a * x.layers[l].weights[i];
        for (size_t i = 0; i < y.layers[l].bias.size(); ++i)
            y.layers[l].bias[i] += a * x.layers[l].bias[i];
    }
}

inline void grad_scale(ParamGrad& g, double a) {
    for (auto& k : g.layers) {
        for (double& w : k.weights) w *= a;
        for (double& b : k.bias) b *= a;
    }
}

inline double grad_norm(const ParamGrad& g) {
    double s = 0.0;
    for (const auto& k : g.layers) {
        for (double w : k.weights) s += w * w;
        for (double b : k.bias) s += b * b;
    }
    return std::sqrt(s);
}

inline bool grad_finite(const ParamGrad& g) {
    for (const auto& k : g.layers) {
        for (double w : k.weights)
            if (!std::isfinite(w)) return false;
        for (double b : k.bias)
            if (!std::isfinite(b)) return false;
    }
    return true;
}

}  // namespace pnpttt
