// Test-time training: adapt denoiser weights on one measurement by SGD on the
// self-supervised DEQ gradient, re-solving the PnP fixed point after every
// update. The caller's parameter object is never touched; adaptation works on
// a private copy so weights reset naturally between measurements.
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pnpttt/deq.hpp"
#include "pnpttt/denoiser.hpp"
#include "pnpttt/fixed_point.hpp"
#include "pnpttt/forward_model.hpp"
#include "pnpttt/image.hpp"
#include "pnpttt/metrics.hpp"

namespace pnpttt {

enum class TTTOptimizer { sgd };

struct TTTConfig {
    int num_iter = 50;
    double lr = 1e-5;
    TTTOptimizer optimizer = TTTOptimizer::sgd;
    LossKind loss = LossKind::l2sq;
    int record_every = 1;
    bool renormalize = true;  // reapply spectral normalization after each step
    bool warm_start = true;   // re-solve from the previous fixed point
};

struct TTTTraceRow {
    int index = 0;  // TTT iteration the row describes (0 = unadapted)
    double loss = 0.0;
    bool has_metrics = false;
    double psnr_db = 0.0;
    double ssim = 0.0;
    double forward_residual = 0.0;
    int forward_iters = 0;
    bool forward_converged = false;
    double adjoint_residual = 0.0;
    bool adjoint_converged = true;
};

using TTTTrace = std::vector<TTTTraceRow>;

struct TTTResult {
    DenoiserParams adapted;
    RealImage reconstruction;
    TTTTrace trace;
    std::vector<RealImage> iterates;  // recorded x*_i, parallel to trace
    bool failed = false;
    std::string error;
};

inline DenoiserParams sgd_step(const DenoiserParams& params, const ParamGrad& grad, double lr) {
    if (grad.layers.size() != params.layers.size())
        throw std::invalid_argument("sgd_step: layer count mismatch");
    DenoiserParams out = params;  // sn_state carried over
    for (size_t l = 0; l < out.layers.size(); ++l) {
        auto& k = out.layers[l];
        const auto& g = grad.layers[l];
        if (g.weights.size() != k.weights.size() || g.bias.size() != k.bias.size())
            throw std::invalid_argument("sgd_step: layer shape mismatch");
        for (size_t i = 0; i < k.weights.size(); ++i) k.weights[i] -= lr * g.weights[i];
        for (size_t i = 0; i < k.bias.size(); ++i) k.bias[i] -= lr * g.bias[i];
    }
    return out;
}

inline TTTResult ttt_adapt(const RealImage& x0, const ComplexImage& y, const MeasurementOp& op,
                           const DenoiserParams& params, const PnPConfig& pnp_cfg,
                           const DeqBackwardConfig& deq_cfg, const TTTConfig& ttt_cfg,
                           const RealImage* ground_truth = nullptr) {
    if (ttt_cfg.num_iter < 0) throw std::invalid_argument("ttt_adapt: num_iter must be >= 0");
    if (ttt_cfg.lr < 0.0) throw std::invalid_argument("ttt_adapt: lr must be >= 0");
    if (ttt_cfg.record_every < 1)
        throw std::invalid_argument("ttt_adapt: record_every must be >= 1");

    TTTResult res;
    res.adapted = params;  // private copy; caller's object is never mutated

    auto record = [&](int i, double loss, const FixedPointResult<RealImage>& fwd,
                      double adj_residual, bool adj_converged) {
        TTTTraceRow row;
        row.index = i;
        row.loss = loss;
        row.forward_residual = fwd.residuals.empty() ? 0.0 : fwd.residuals.back();
        row.forward_iters = fwd.iters_used;
        row.forward_converged = fwd.converged;
        row.adjoint_residual = adj_residual;
        row.adjoint_converged = adj_converged;
        if (ground_truth) {
            row.has_metrics = true;
            row.psnr_db = psnr(fwd.x_bar, *ground_truth);
            row.ssim = ssim(fwd.x_bar, *ground_truth);
        }
        res.trace.push_back(row);
        res.iterates.push_back(fwd.x_bar);
    };

    try {
        FixedPointResult<RealImage> fwd = run_pnp(x0, y, op, res.adapted, pnp_cfg);
        record(0, loss_selfsup(fwd.x_bar, y, op, res.adapted, pnp_cfg.gamma, ttt_cfg.loss), fwd,
               0.0, true);
        res.reconstruction = fwd.x_bar;

        for (int i = 1; i <= ttt_cfg.num_iter; ++i) {
            // loss and gradient are evaluated at the previous fixed point with
            // the previous weights, then the weights move and PnP re-solves
            DeqGradResult g =
                deq_gradient(fwd.x_bar, y, op, res.adapted, pnp_cfg.gamma, deq_cfg, ttt_cfg.loss);
            res.adapted = sgd_step(res.adapted, g.grad, ttt_cfg.lr);
            if (ttt_cfg.renormalize) res.adapted = spectral_normalize(res.adapted);
            // warm start: one SGD step barely moves the fixed point, so the
            // previous solution is a few iterations away from the new one
            fwd = run_pnp(ttt_cfg.warm_start ? fwd.x_bar : x0, y, op, res.adapted, pnp_cfg);
            res.reconstruction = fwd.x_bar;
            if (i % ttt_cfg.record_every == 0)
                record(i, g.loss, fwd, g.adjoint_residual, g.adjoint_converged);
        }
    } catch (const DivergenceError& e) {
        res.failed = true;
        res.error = e.what();
    }
    return res;
}

// Oracle best-iterate selection for reporting: argmax PSNR over the recorded
// trace, ties broken toward the earlier index.
inline std::pair<int, RealImage> best_iterate(const TTTTrace& trace,
                                              const std::vector<RealImage>& results) {
    if (trace.empty() || trace.size() != results.size())
        throw std::invalid_argument("best_iterate: trace/results mismatch or empty");
    int best = -1;
    double best_psnr = 0.0;
    for (size_t i = 0; i < trace.size(); ++i) {
        if (!trace[i].has_metrics)
            throw std::invalid_argument("best_iterate: trace has no PSNR entries");
        if (best < 0 || trace[i].psnr_db > best_psnr) {
            best = static_cast<int>(i);
            best_psnr = trace[i].psnr_db;
        }
    }
    return {trace[static_cast<size_t>(best)].index, results[static_cast<size_t>(best)]};
}

}  // namespace pnpttt
