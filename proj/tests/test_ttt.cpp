#include <gtest/gtest.h>

#include <cmath>

#include "pnpttt/synth.hpp"
#include "pnpttt/training.hpp"
#include "pnpttt/ttt.hpp"
#include "support/oracles.hpp"

using namespace pnpttt;

namespace {

// A quickly trained prior shared by the TTT scenarios below.  A freshly
// initialized residual denoiser is too close to the identity, which makes the
// PnP map contract at a uselessly slow rate on the unmeasured modes; a few
// epochs of denoising give realistic contraction so forward solves actually
// converge within a sane budget.
const DenoiserParams& shared_prior() {
    static const DenoiserParams prior = [] {
        DenoiserConfig d;
        d.depth = 3;
        d.channels = 4;
        d.lipschitz_target = 1.0;
        d.power_iters = 10;
        d.sn_ref_size = 16;
        TrainConfig tc;
        tc.noise_sigma = 25.0 / 255.0;
        tc.patch_size = 16;
        tc.patches_per_image = 6;
        tc.epochs = 25;
        tc.batch_size = 16;
        tc.lr = 2e-3;
        tc.seed = 41;
        std::vector<RealImage> imgs;
        for (int i = 0; i < 6; ++i) imgs.push_back(gen_phantom(48, 100 + i));
        DenoiserParams p0 = spectral_normalize(init_params(d, 73));
        return train_denoiser(p0, make_training_pairs(imgs, tc).pairs, tc).params;
    }();
    return prior;
}

struct Scenario {
    MeasurementOp op;
    ComplexImage y;
    RealImage truth;
    RealImage x0;
    DenoiserParams params;
    PnPConfig pnp;
    DeqBackwardConfig deq;

    explicit Scenario(int n = 32, double ratio = 0.3) {
        op.mask = mask_for_ratio(n, ratio, 71);
        truth = gen_phantom(n, 72);
        y = apply_A(truth, op);
        x0 = RealImage(n, n);
        params = shared_prior();
        // Residual denoisers carry no contraction certificate; the measured
        // tail rate here is ~0.985, so 1e-6 lands near iteration 400.
        pnp.max_iter = 600;
        pnp.tol = 1e-6;
        pnp.acceleration = PnPAccel::plain;
        deq.anderson.tol = 1e-8;
        deq.anderson.max_iter = 60;
    }
};

bool params_equal(const DenoiserParams& a, const DenoiserParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (size_t l = 0; l < a.layers.size(); ++l)
        if (a.layers[l].weights != b.layers[l].weights || a.layers[l].bias != b.layers[l].bias)
            return false;
    return true;
}

}  // namespace

TEST(SgdStep, AppliesUpdateAndValidatesShapes) {
    DenoiserConfig d;
    d.depth = 2;
    d.channels = 2;
    d.sn_ref_size = 8;
    DenoiserParams p = init_params(d, 74);
    ParamGrad g = zero_grad_like(p);
    g.layers[0].weights[3] = 2.0;
    g.layers[1].bias[0] = -4.0;
    DenoiserParams q = sgd_step(p, g, 0.5);
    EXPECT_DOUBLE_EQ(q.layers[0].weights[3], p.layers[0].weights[3] - 1.0);
    EXPECT_DOUBLE_EQ(q.layers[1].bias[0], p.layers[1].bias[0] + 2.0);
    // untouched coordinates are bit-identical
    EXPECT_EQ(q.layers[0].weights[0], p.layers[0].weights[0]);
    EXPECT_EQ(q.sn_state[0].u, p.sn_state[0].u);

    ParamGrad bad;
    bad.layers.emplace_back(1, 1, 3, 3);
    EXPECT_THROW(sgd_step(p, bad, 0.5), std::invalid_argument);
    ParamGrad badshape = zero_grad_like(p);
    badshape.layers[0] = ConvKernel(1, 1, 3, 3);
    EXPECT_THROW(sgd_step(p, badshape, 0.5), std::invalid_argument);
}

TEST(TttAdapt, ZeroIterationsReproducesPlainPnp) {
    Scenario s;
    TTTConfig t;
    t.num_iter = 0;
    TTTResult res = ttt_adapt(s.x0, s.y, s.op, s.params, s.pnp, s.deq, t, &s.truth);
    FixedPointResult<RealImage> direct = run_pnp(s.x0, s.y, s.op, s.params, s.pnp);
    EXPECT_FALSE(res.failed);
    ASSERT_EQ(res.trace.size(), 1u);
    EXPECT_EQ(res.trace[0].index, 0);
    EXPECT_TRUE(res.trace[0].has_metrics);
    EXPECT_EQ(res.reconstruction.data, direct.x_bar.data);
    EXPECT_EQ(res.iterates[0].data, direct.x_bar.data);
    EXPECT_DOUBLE_EQ(res.trace[0].loss,
                     loss_selfsup(direct.x_bar, s.y, s.op, s.params, s.pnp.gamma));
    EXPECT_TRUE(params_equal(res.adapted, s.params));
}

TEST(TttAdapt, ZeroLearningRateKeepsEverythingFixed) {
    Scenario s;
    TTTConfig t;
    t.num_iter = 3;
    t.lr = 0.0;
    t.renormalize = false;
    t.warm_start = false;  // bitwise repeatability needs identical solves
    DenoiserParams before = s.params;
    TTTResult res = ttt_adapt(s.x0, s.y, s.op, s.params, s.pnp, s.deq, t, &s.truth);
    EXPECT_FALSE(res.failed);
    // caller's params untouched
    EXPECT_TRUE(params_equal(s.params, before));
    // lr = 0: every recorded iterate equals the unadapted reconstruction
    ASSERT_EQ(res.trace.size(), 4u);
    for (size_t i = 1; i < res.iterates.size(); ++i)
        EXPECT_EQ(res.iterates[i].data, res.iterates[0].data) << "iterate " << i;
    EXPECT_TRUE(params_equal(res.adapted, before));
    // rows 1..N all re-derive the same loss as row 0
    for (size_t i = 1; i < res.trace.size(); ++i)
        EXPECT_DOUBLE_EQ(res.trace[i].loss, res.trace[0].loss);
}

TEST(TttAdapt, TraceLossIsRecomputableFromStoredState) {
    // Row i >= 1 stores the loss evaluated at the previous recorded fixed point
    // with the previous weights; with record_every = 1 row 1 must equal the
    // direct recomputation at (iterates[0], theta_0).
    Scenario s;
    TTTConfig t;
    t.num_iter = 2;
    t.lr = 1e-4;
    TTTResult res = ttt_adapt(s.x0, s.y, s.op, s.params, s.pnp, s.deq, t, &s.truth);
    EXPECT_FALSE(res.failed);
    ASSERT_EQ(res.trace.size(), 3u);
    const double want = loss_selfsup(res.iterates[0], s.y, s.op, s.params, s.pnp.gamma);
    EXPECT_LT(oracle::rel_err(res.trace[1].loss, want), 1e-12);
    EXPECT_DOUBLE_EQ(res.trace[0].loss, want);
}

TEST(TttAdapt, RecordEveryControlsTraceLength) {
    Scenario s(32, 0.4);
    TTTConfig t;
    t.num_iter = 10;
    t.lr = 1e-5;
    t.record_every = 5;
    TTTResult res = ttt_adapt(s.x0, s.y, s.op, s.params, s.pnp, s.deq, t, &s.truth);
    EXPECT_FALSE(res.failed);
    ASSERT_EQ(res.trace.size(), 3u);  // rows 0, 5, 10
    EXPECT_EQ(res.trace[0].index, 0);
    EXPECT_EQ(res.trace[1].index, 5);
    EXPECT_EQ(res.trace[2].index, 10);
    EXPECT_EQ(res.iterates.size(), res.trace.size());

    TTTConfig bad = t;
    bad.record_every = 0;
    EXPECT_THROW(ttt_adapt(s.x0, s.y, s.op, s.params, s.pnp, s.deq, bad), std::invalid_argument);
    bad = t;
    bad.num_iter = -1;
    EXPECT_THROW(ttt_adapt(s.x0, s.y, s.op, s.params, s.pnp, s.deq, bad), std::invalid_argument);
    bad = t;
    bad.lr = -1.0;
    EXPECT_THROW(ttt_adapt(s.x0, s.y, s.op, s.params, s.pnp, s.deq, bad), std::invalid_argument);
}

TEST(TttAdapt, AdaptationReducesSelfSupervisedLoss) {
    Scenario s;
    TTTConfig t;
    t.num_iter = 8;
    t.lr = 5e-5;
    TTTResult res = ttt_adapt(s.x0, s.y, s.op, s.params, s.pnp, s.deq, t, &s.truth);
    EXPECT_FALSE(res.failed);
    ASSERT_EQ(res.trace.size(), 9u);
    // final recomputed loss beats the unadapted one
    const double final_loss =
        loss_selfsup(res.reconstruction, s.y, s.op, res.adapted, s.pnp.gamma);
    EXPECT_LT(final_loss, res.trace[0].loss);
    // adapted weights actually moved
    EXPECT_FALSE(params_equal(res.adapted, s.params));
    // metrics recorded against the supplied ground truth
    for (const auto& row : res.trace) {
        EXPECT_TRUE(row.has_metrics);
        EXPECT_GT(row.psnr_db, 0.0);
        EXPECT_GT(row.ssim, 0.0);
        EXPECT_TRUE(row.forward_converged);
    }
}

TEST(TttAdapt, WithoutGroundTruthNoMetrics) {
    Scenario s;
    TTTConfig t;
    t.num_iter = 1;
    TTTResult res = ttt_adapt(s.x0, s.y, s.op, s.params, s.pnp, s.deq, t);
    EXPECT_FALSE(res.failed);
    for (const auto& row : res.trace) {
        EXPECT_FALSE(row.has_metrics);
        EXPECT_EQ(row.psnr_db, 0.0);
    }
    EXPECT_THROW(best_iterate(res.trace, res.iterates), std::invalid_argument);
}

TEST(TttAdapt, DivergenceIsReportedNotThrown) {
    Scenario s;
    DenoiserParams wild = s.params;
    wild.config.lipschitz_target = 1e12;  // renormalization becomes a no-op
    for (auto& k : wild.layers)
        for (double& w : k.weights) w *= 50.0;  // strongly expansive net
    for (size_t l = 0; l < wild.layers.size(); ++l)
        wild.sn_state[l].sigma =
            sn_sigma_from_state(wild.layers[l], wild.sn_state[l], wild.config.sn_ref_size);
    TTTConfig t;
    t.num_iter = 5;
    t.renormalize = false;
    TTTResult res = ttt_adapt(s.x0, s.y, s.op, wild, s.pnp, s.deq, t, &s.truth);
    EXPECT_TRUE(res.failed);
    EXPECT_FALSE(res.error.empty());
    EXPECT_NE(res.error.find("diverged"), std::string::npos);
}

TEST(BestIterate, PicksArgmaxPsnrWithEarlierTieBreak) {
    TTTTrace trace(3);
    std::vector<RealImage> results;
    const double psnrs[3] = {30.0, 31.2, 30.9};
    for (int i = 0; i < 3; ++i) {
        trace[i].index = i;
        trace[i].has_metrics = true;
        trace[i].psnr_db = psnrs[i];
        RealImage img(4, 4);
        img.data[0] = static_cast<double>(i);
        results.push_back(img);
    }
    auto [idx, img] = best_iterate(trace, results);
    EXPECT_EQ(idx, 1);
    EXPECT_EQ(img.data[0], 1.0);

    trace[2].psnr_db = 31.2;  // tie with index 1 -> earlier wins
    auto [idx2, img2] = best_iterate(trace, results);
    EXPECT_EQ(idx2, 1);
    EXPECT_EQ(img2.data[0], 1.0);

    EXPECT_THROW(best_iterate({}, {}), std::invalid_argument);
    TTTTrace longer(4);
    EXPECT_THROW(best_iterate(longer, results), std::invalid_argument);
}
