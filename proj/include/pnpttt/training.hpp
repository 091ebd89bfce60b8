// Prior pre-training: make (noisy, clean) patch pairs from an image set and
// fit the denoiser as an AWGN remover by minibatch Adam/SGD on
// mean 1/2 ||denoise(noisy) - clean||^2, with spectral normalization after
// every step. Fully deterministic per seed.
#pragma once

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pnpttt/denoiser.hpp"
#include "pnpttt/image.hpp"
#include "pnpttt/metrics.hpp"
#include "pnpttt/rng.hpp"

namespace pnpttt {

enum class TrainOptimizer { sgd, adam };

struct TrainConfig {
    double noise_sigma = 5.0 / 255.0;
    int epochs = 30;
    int batch_size = 16;
    double lr = 1e-3;
    TrainOptimizer optimizer = TrainOptimizer::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int patch_size = 32;
    int patches_per_image = 16;
    double val_fraction = 0.1;  // held out from the supplied pairs for the report
    uint64_t seed = 0;
};

struct PatchPair {
    RealImage noisy;
    RealImage clean;
};

struct TrainingPairs {
    std::vector<PatchPair> pairs;
    int skipped_images = 0;  // images smaller than the patch size
};

struct TrainReport {
    std::vector<double> epoch_mse;  // per-pixel training MSE per epoch
    double val_psnr = 0.0;
    int val_pairs = 0;
    int steps = 0;
};

inline void validate_train_config(const TrainConfig& cfg) {
    if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
    if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(cfg.lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
    if (cfg.noise_sigma < 0.0) throw std::invalid_argument("train: noise_sigma must be >= 0");
    if (cfg.patch_size < 1) throw std::invalid_argument("train: patch_size must be >= 1");
    if (cfg.patches_per_image < 1)
        throw std::invalid_argument("train: patches_per_image must be >= 1");
}

// Seed-deterministic random crops with i.i.d. Gaussian noise added; noisy
// values are intentionally not clipped so the noise stays exactly Gaussian.
inline TrainingPairs make_training_pairs(const std::vector<RealImage>& images,
                                         const TrainConfig& cfg) {
    validate_train_config(cfg);
    TrainingPairs out;
    Rng rng(derive_seed(cfg.seed, 0x7a1b5));
    const int ps = cfg.patch_size;
    for (const auto& img : images) {
        if (img.height < ps || img.width < ps) {
            ++out.skipped_images;
            continue;
        }
        for (int p = 0; p < cfg.patches_per_image; ++p) {
            const int r0 = rng.uniform_int(0, img.height - ps);
            const int c0 = rng.uniform_int(0, img.width - ps);
            PatchPair pair{RealImage(ps, ps), RealImage(ps, ps)};
            for (int r = 0; r < ps; ++r)
                for (int c = 0; c < ps; ++c) pair.clean.at(r, c) = img.at(r0 + r, c0 + c);
            pair.noisy = pair.clean;
            for (double& v : pair.noisy.data) v += cfg.noise_sigma * rng.normal();
            out.pairs.push_back(std::move(pair));
        }
    }
    return out;
}

// Mean over the batch of 1/2 ||denoise(noisy) - clean||^2 and its exact
// parameter gradient (cotangent = residual, scaled by 1/batch).
inline std::pair<double, ParamGrad> batch_loss_grad(const DenoiserParams& params,
                                                    const std::vector<PatchPair>& batch) {
    if (batch.empty()) throw std::invalid_argument("batch_loss_grad: empty batch");
    double loss = 0.0;
    ParamGrad grad = zero_grad_like(params);
    for (const auto& pair : batch) {
        DenoiserTape tape(pair.noisy, params);
        RealImage resid = tape.output();
        state_axpy(-1.0, pair.clean, resid);
        loss += 0.5 * state_dot(resid, resid);
        grad_axpy(1.0, tape.vjp_params(resid), grad);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    grad_scale(grad, inv);
    return {loss * inv, grad};
}

struct TrainOutcome {
    DenoiserParams params;
    TrainReport report;
};

inline TrainOutcome train_denoiser(const DenoiserParams& params0,
                                   const std::vector<PatchPair>& all_pairs,
                                   const TrainConfig& cfg) {
    validate_train_config(cfg);
    if (all_pairs.empty()) throw std::invalid_argument("train_denoiser: no training pairs");

    Rng rng(derive_seed(cfg.seed, 0xada9));
    std::vector<size_t> order(all_pairs.size());
    std::iota(order.begin(), order.end(), size_t{0});
    auto shuffle = [&](std::vector<size_t>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    };

    shuffle(order);
    size_t val_count = 0;
    if (all_pairs.size() >= 2 && cfg.val_fraction > 0.0)
        val_count = std::max<size_t>(
            1, static_cast<size_t>(cfg.val_fraction * static_cast<double>(all_pairs.size())));
    std::vector<size_t> val_idx(order.end() - static_cast<long>(val_count), order.end());
    std::vector<size_t> train_idx(order.begin(), order.end() - static_cast<long>(val_count));
    if (train_idx.empty()) throw std::invalid_argument("train_denoiser: no training split left");

    TrainOutcome out;
    out.params = params0;
    const double npix = static_cast<double>(cfg.patch_size) * cfg.patch_size;

    // Adam moments stored in ParamGrad-shaped buffers
    ParamGrad m = zero_grad_like(out.params), v = zero_grad_like(out.params);
    int t = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle(train_idx);
        double epoch_se = 0.0;
        size_t epoch_samples = 0;
        for (size_t b0 = 0; b0 < train_idx.size(); b0 += static_cast<size_t>(cfg.batch_size)) {
            const size_t b1 = std::min(train_idx.size(), b0 + static_cast<size_t>(cfg.batch_size));
            std::vector<PatchPair> batch;
            batch.reserve(b1 - b0);
            for (size_t i = b0; i < b1; ++i) batch.push_back(all_pairs[train_idx[i]]);
            auto [loss, grad] = batch_loss_grad(out.params, batch);
            if (!std::isfinite(loss) || !grad_finite(grad))
                throw std::runtime_error("train_denoiser: non-finite loss at epoch " +
                                         std::to_string(epoch) + " batch " +
                                         std::to_string(b0 / cfg.batch_size));
            ++t;
            if (cfg.optimizer == TrainOptimizer::adam) {
                const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
                const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
                for (size_t l = 0; l < out.params.layers.size(); ++l) {
                    auto& k = out.params.layers[l];
                    const auto& g = grad.layers[l];
                    auto step = [&](std::vector<double>& theta, const std::vector<double>& gv,
                                    std::vector<double>& mv, std::vector<double>& vv) {
                        for (size_t i = 0; i < theta.size(); ++i) {
                            mv[i] = cfg.adam_beta1 * mv[i] + (1.0 - cfg.adam_beta1) * gv[i];
                            vv[i] = cfg.adam_beta2 * vv[i] + (1.0 - cfg.adam_beta2) * gv[i] * gv[i];
                            theta[i] -= cfg.lr * (mv[i] / bc1) /
                                        (std::sqrt(vv[i] / bc2) + cfg.adam_eps);
                        }
                    };
                    step(k.weights, g.weights, m.layers[l].weights, v.layers[l].weights);
                    step(k.bias, g.bias, m.layers[l].bias, v.layers[l].bias);
                }
            } else {
                for (size_t l = 0; l < out.params.layers.size(); ++l) {
                    auto& k = out.params.layers[l];
                    const auto& g = grad.layers[l];
                    for (size_t i = 0; i < k.weights.size(); ++i)
                        k.weights[i] -= cfg.lr * g.weights[i];
                    for (size_t i = 0; i < k.bias.size(); ++i) k.bias[i] -= cfg.lr * g.bias[i];
                }
            }
            out.params = spectral_normalize(out.params);
            epoch_se += loss * 2.0 * static_cast<double>(batch.size());  // undo 1/2 and mean
            epoch_samples += batch.size();
            ++out.report.steps;
        }
        out.report.epoch_mse.push_back(epoch_se / (static_cast<double>(epoch_samples) * npix));
    }

    if (!val_idx.empty()) {
        double acc = 0.0;
        for (size_t i : val_idx)
            acc += psnr(denoise(all_pairs[i].noisy, out.params), all_pairs[i].clean);
        out.report.val_psnr = acc / static_cast<double>(val_idx.size());
        out.report.val_pairs = static_cast<int>(val_idx.size());
    }
    return out;
}

}  // namespace pnpttt
