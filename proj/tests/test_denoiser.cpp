#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <limits>

#include "pnpttt/denoiser.hpp"
#include "support/oracles.hpp"

using namespace pnpttt;

namespace {

DenoiserConfig small_config() {
    DenoiserConfig cfg;
    cfg.depth = 3;
    cfg.channels = 4;
    cfg.kernel_size = 3;
    cfg.residual = true;
    cfg.lipschitz_target = 1e6;  // keep sn scales at exactly 1 unless a test wants otherwise
    cfg.power_iters = 1;
    cfg.sn_ref_size = 8;
    return cfg;
}

double img_dot(const RealImage& a, const RealImage& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

// Dense matrix of the bias-free conv operator on (in_channels, ref, ref)
// feature maps, built one basis vector at a time.
Eigen::MatrixXd conv_matrix(const ConvKernel& k, int ref) {
    const int rows = k.out_channels * ref * ref;
    const int cols = k.in_channels * ref * ref;
    Eigen::MatrixXd M(rows, cols);
    for (int j = 0; j < cols; ++j) {
        FeatureMap e(k.in_channels, ref, ref);
        e.data[j] = 1.0;
        FeatureMap col = detail::conv_nobias(e, k);
        for (int i = 0; i < rows; ++i) M(i, j) = col.data[i];
    }
    return M;
}

double true_sigma(const ConvKernel& k, int ref) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(conv_matrix(k, ref));
    return svd.singularValues()(0);
}

}  // namespace

TEST(Denoiser, InitIsDeterministicInSeed) {
    DenoiserConfig cfg = small_config();
    DenoiserParams a = init_params(cfg, 42);
    DenoiserParams b = init_params(cfg, 42);
    DenoiserParams c = init_params(cfg, 43);
    ASSERT_EQ(a.layers.size(), b.layers.size());
    for (size_t l = 0; l < a.layers.size(); ++l) {
        EXPECT_EQ(a.layers[l].weights, b.layers[l].weights);
        EXPECT_EQ(a.sn_state[l].u, b.sn_state[l].u);
    }
    EXPECT_NE(a.layers[0].weights, c.layers[0].weights);
}

TEST(Denoiser, LayerShapesFollowConfig) {
    DenoiserConfig cfg = small_config();
    DenoiserParams p = init_params(cfg, 7);
    ASSERT_EQ(static_cast<int>(p.layers.size()), cfg.depth);
    EXPECT_EQ(p.layers[0].in_channels, 1);
    EXPECT_EQ(p.layers[0].out_channels, cfg.channels);
    EXPECT_EQ(p.layers[1].in_channels, cfg.channels);
    EXPECT_EQ(p.layers[1].out_channels, cfg.channels);
    EXPECT_EQ(p.layers[2].in_channels, cfg.channels);
    EXPECT_EQ(p.layers[2].out_channels, 1);
    for (const auto& k : p.layers)
        for (double b : k.bias) EXPECT_EQ(b, 0.0);
}

TEST(Denoiser, ZeroWeightsResidualIsIdentity) {
    DenoiserConfig cfg = small_config();
    DenoiserParams p = init_params(cfg, 9);
    for (auto& k : p.layers) std::fill(k.weights.begin(), k.weights.end(), 0.0);
    RealImage x = oracle::random_image(8, 8, 100);
    RealImage y = denoise(x, p);
    for (size_t i = 0; i < x.data.size(); ++i) EXPECT_DOUBLE_EQ(y.data[i], x.data[i]);

    p.config.residual = false;
    RealImage z = denoise(x, p);
    for (double v : z.data) EXPECT_EQ(v, 0.0);
}

TEST(Denoiser, ConfigValidation) {
    DenoiserConfig cfg = small_config();
    cfg.depth = 1;
    EXPECT_THROW(init_params(cfg, 1), std::invalid_argument);
    cfg = small_config();
    cfg.kernel_size = 4;
    EXPECT_THROW(init_params(cfg, 1), std::invalid_argument);
    cfg = small_config();
    cfg.lipschitz_target = 0.0;
    EXPECT_THROW(init_params(cfg, 1), std::invalid_argument);
    cfg = small_config();
    cfg.sn_ref_size = 2;
    EXPECT_THROW(init_params(cfg, 1), std::invalid_argument);
}

TEST(DenoiserVjp, InputGradientMatchesFiniteDifferences) {
    DenoiserConfig cfg = small_config();
    DenoiserParams p = init_params(cfg, 11);
    RealImage x = oracle::random_image(8, 8, 101, -1.0, 1.0);
    RealImage v = oracle::random_image(8, 8, 102, -1.0, 1.0);
    RealImage g = denoiser_vjp_input(x, p, v);
    auto f = [&]() { return img_dot(denoise(x, p), v); };
    for (size_t i = 0; i < x.data.size(); i += 5) {
        const double fd = oracle::central_diff(f, x.data[i], 1e-6);
        EXPECT_LT(oracle::fd_err(g.data[i], fd), 1e-5) << "pixel " << i;
    }
}

TEST(DenoiserVjp, ParamGradientMatchesFiniteDifferences) {
    DenoiserConfig cfg = small_config();
    DenoiserParams p = init_params(cfg, 12);
    RealImage x = oracle::random_image(8, 8, 103, -1.0, 1.0);
    RealImage v = oracle::random_image(8, 8, 104, -1.0, 1.0);
    ParamGrad g = denoiser_vjp_params(x, p, v);
    auto f = [&]() { return img_dot(denoise(x, p), v); };
    for (int l = 0; l < cfg.depth; ++l) {
        auto& k = p.layers[l];
        for (size_t i = 0; i < k.weights.size(); i += 7) {
            const double fd = oracle::central_diff(f, k.weights[i], 1e-6);
            EXPECT_LT(oracle::fd_err(g.layers[l].weights[i], fd), 1e-5)
                << "layer " << l << " weight " << i;
        }
        for (size_t i = 0; i < k.bias.size(); ++i) {
            const double fd = oracle::central_diff(f, k.bias[i], 1e-6);
            EXPECT_LT(oracle::fd_err(g.layers[l].bias[i], fd), 1e-5)
                << "layer " << l << " bias " << i;
        }
    }
}

TEST(DenoiserVjp, ParamGradientRespectsSnScale) {
    // With a small Lipschitz target the effective weights are scale * stored
    // weights; finite differences on the stored weights must still match,
    // which exercises the scale factor in the weight gradient.
    DenoiserConfig cfg = small_config();
    cfg.lipschitz_target = 0.05;
    DenoiserParams p = spectral_normalize(init_params(cfg, 13));
    // Force a non-unit runtime scale by inflating weights after normalization.
    for (auto& k : p.layers)
        for (double& w : k.weights) w *= 3.0;
    for (int l = 0; l < cfg.depth; ++l) {
        p.sn_state[l].sigma = sn_sigma_from_state(p.layers[l], p.sn_state[l], cfg.sn_ref_size);
        ASSERT_GT(p.sn_state[l].sigma, cfg.lipschitz_target);
    }
    RealImage x = oracle::random_image(8, 8, 105, -1.0, 1.0);
    RealImage v = oracle::random_image(8, 8, 106, -1.0, 1.0);
    ParamGrad g = denoiser_vjp_params(x, p, v);
    auto f = [&]() { return img_dot(denoise(x, p), v); };
    for (int l = 0; l < cfg.depth; ++l) {
        for (size_t i = 0; i < p.layers[l].weights.size(); i += 11) {
            const double fd = oracle::central_diff(f, p.layers[l].weights[i], 1e-6);
            EXPECT_LT(oracle::fd_err(g.layers[l].weights[i], fd), 1e-5)
                << "layer " << l << " weight " << i;
        }
    }
}

TEST(DenoiserVjp, TapeOutputMatchesFreeFunction) {
    DenoiserConfig cfg = small_config();
    DenoiserParams p = init_params(cfg, 14);
    RealImage x = oracle::random_image(8, 8, 107);
    DenoiserTape tape(x, p);
    RealImage direct = denoise(x, p);
    EXPECT_EQ(oracle::max_abs_diff(tape.output().data, direct.data), 0.0);
    // Repeated VJP calls on one tape are consistent (needed by the adjoint solve).
    RealImage v = oracle::random_image(8, 8, 108);
    RealImage g1 = tape.vjp_input(v);
    RealImage g2 = tape.vjp_input(v);
    EXPECT_EQ(oracle::max_abs_diff(g1.data, g2.data), 0.0);
}

TEST(SpectralNorm, SigmaEstimateConvergesToDenseSvd) {
    DenoiserConfig cfg = small_config();
    cfg.power_iters = 200;
    cfg.lipschitz_target = 1e6;  // no rescale: isolate the estimator
    DenoiserParams p = spectral_normalize(init_params(cfg, 15));
    for (int l = 0; l < cfg.depth; ++l) {
        const double want = true_sigma(p.layers[l], cfg.sn_ref_size);
        EXPECT_LE(p.sn_state[l].sigma, want * (1.0 + 1e-10)) << "layer " << l;
        EXPECT_NEAR(p.sn_state[l].sigma, want, 1e-3 * want) << "layer " << l;
    }
}

TEST(SpectralNorm, EnforcesLipschitzTarget) {
    DenoiserConfig cfg = small_config();
    cfg.power_iters = 100;
    cfg.lipschitz_target = 0.7;
    DenoiserParams p = init_params(cfg, 16);
    for (auto& k : p.layers)
        for (double& w : k.weights) w *= 5.0;  // make layers clearly expansive
    DenoiserParams q = spectral_normalize(p);
    for (int l = 0; l < cfg.depth; ++l) {
        EXPECT_LE(q.sn_state[l].sigma, cfg.lipschitz_target * (1.0 + 1e-12));
        // The dense oracle agrees the normalized layer is within target, up to
        // the residual power-iteration error.
        const double want = true_sigma(q.layers[l], cfg.sn_ref_size);
        EXPECT_LE(want, cfg.lipschitz_target * (1.0 + 1e-2)) << "layer " << l;
    }
}

TEST(SpectralNorm, ContractiveLayersAreLeftUntouched) {
    DenoiserConfig cfg = small_config();
    cfg.lipschitz_target = 1e6;
    DenoiserParams p = init_params(cfg, 17);
    std::vector<std::vector<double>> before;
    for (const auto& k : p.layers) before.push_back(k.weights);
    DenoiserParams q = spectral_normalize(p);
    for (size_t l = 0; l < before.size(); ++l) EXPECT_EQ(q.layers[l].weights, before[l]);
}

TEST(SpectralNorm, NormalizationIsIdempotentOnSigma) {
    DenoiserConfig cfg = small_config();
    cfg.power_iters = 50;
    cfg.lipschitz_target = 0.9;
    DenoiserParams p = init_params(cfg, 18);
    for (auto& k : p.layers)
        for (double& w : k.weights) w *= 4.0;
    DenoiserParams q = spectral_normalize(spectral_normalize(p));
    for (int l = 0; l < cfg.depth; ++l)
        EXPECT_LE(q.sn_state[l].sigma, cfg.lipschitz_target * (1.0 + 1e-12));
}

TEST(ParamGradOps, Arithmetic) {
    DenoiserConfig cfg = small_config();
    DenoiserParams p = init_params(cfg, 19);
    ParamGrad z = zero_grad_like(p);
    EXPECT_EQ(grad_norm(z), 0.0);
    EXPECT_TRUE(grad_finite(z));
    ParamGrad g = denoiser_vjp_params(oracle::random_image(8, 8, 109), p,
                                      oracle::random_image(8, 8, 110));
    ParamGrad acc = zero_grad_like(p);
    grad_axpy(2.0, g, acc);
    grad_axpy(-2.0, g, acc);
    EXPECT_NEAR(grad_norm(acc), 0.0, 1e-12 * grad_norm(g));
    ParamGrad s = g;
    grad_scale(s, -3.0);
    EXPECT_NEAR(grad_norm(s), 3.0 * grad_norm(g), 1e-9 * grad_norm(g));
    s.layers[0].weights[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_FALSE(grad_finite(s));
}
