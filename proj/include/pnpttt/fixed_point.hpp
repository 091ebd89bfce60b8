// Fixed-point machinery: the PnP-PGM operator T = D(I - gamma grad g), a
// plain/Nesterov forward solver, and a generic Anderson-accelerated solver.
// Both solvers accept arbitrary operators so either can drive either pass.
#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "pnpttt/denoiser.hpp"
#include "pnpttt/forward_model.hpp"
#include "pnpttt/image.hpp"

namespace pnpttt {

enum class PnPAccel { plain, nesterov };

struct PnPConfig {
    double gamma = 1.0;
    int max_iter = 100;
    double tol = 1e-6;  // relative-change stopping criterion
    PnPAccel acceleration = PnPAccel::nesterov;
};

struct AndersonConfig {
    int depth_m = 5;
    double damping_beta = 1.0;
    double reg_lambda = 1e-4;  // Tikhonov weight on alpha, scaled by the Gram trace
    int max_iter = 100;
    double tol = 1e-6;
};

template <class State>
struct FixedPointResult {
    State x_bar;
    std::vector<double> residuals;  // ||x_k - x_{k-1}|| / max(||x_k||, eps)
    int iters_used = 0;
    bool converged = false;
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr double kDivergenceGuard = 1e6;

namespace detail {

// The reported residual is the relative change, which stays bounded even when
// iterates blow up geometrically; divergence is therefore detected on the
// absolute step size (and on non-finite values, which poison the relative
// form into NaN).
template <class State>
double guarded_step(const State& x, const State& x_prev, const char* who) {
    State d = x;
    state_axpy(-1.0, x_prev, d);
    const double abs_change = state_norm(d);
    if (!std::isfinite(abs_change) || abs_change > kDivergenceGuard)
        throw DivergenceError(std::string(who) + ": iteration diverged (residual > 1e6)");
    return abs_change / std::max(state_norm(x), 1e-12);
}

}  // namespace detail

// x_{k+1} = T(x_k), optionally with the Nesterov t-sequence extrapolation
// s_{k+1} = x_k + ((t_k - 1)/t_{k+1})(x_k - x_{k-1}).
template <class State, class Op>
FixedPointResult<State> run_fixed_point(const Op& T, State x0, const PnPConfig& cfg) {
    if (cfg.max_iter < 1) throw std::invalid_argument("run_fixed_point: max_iter must be >= 1");
    FixedPointResult<State> res;
    State x_prev = x0;
    State s = std::move(x0);  // extrapolated point (equals iterate in plain mode)
    double t = 1.0;
    for (int k = 1; k <= cfg.max_iter; ++k) {
        State x = T(s);
        const double r = detail::guarded_step(x, x_prev, "run_fixed_point");
        res.residuals.push_back(r);
        res.iters_used = k;
        if (r <= cfg.tol) {
            res.x_bar = std::move(x);
            res.converged = true;
            return res;
        }
        if (cfg.acceleration == PnPAccel::nesterov) {
            // Adaptive restart: drop the momentum whenever the operator step
            // at the extrapolated point opposes the actual movement. Without
            // it the t-sequence overshoots and oscillates on strongly
            // contractive problems and can end up slower than plain iteration.
            State step = x;
            state_axpy(-1.0, s, step);
            State move = x;
            state_axpy(-1.0, x_prev, move);
            if (state_dot(step, move) < 0.0) t = 1.0;
            const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
            s = x;
            state_axpy((t - 1.0) / t_next, x, s);
            state_axpy(-(t - 1.0) / t_next, x_prev, s);
            t = t_next;
        } else {
            s = x;
        }
        x_prev = std::move(x);
    }
    res.x_bar = std::move(x_prev);
    res.converged = false;
    return res;
}

// One PnP-PGM application: D(x - gamma * grad g(x)).
inline RealImage pnp_operator(const RealImage& x, const ComplexImage& y, const MeasurementOp& op,
                              const DenoiserParams& params, double gamma) {
    RealImage z = x;
    state_axpy(-gamma, grad_datafit(x, y, op), z);
    return denoise(z, params);
}

inline FixedPointResult<RealImage> run_pnp(const RealImage& x0, const ComplexImage& y,
                                           const MeasurementOp& op, const DenoiserParams& params,
                                           const PnPConfig& cfg) {
    if (!(cfg.gamma > 0.0)) throw std::invalid_argument("run_pnp: gamma must be positive");
    auto T = [&](const RealImage& x) { return pnp_operator(x, y, op, params, cfg.gamma); };
    return run_fixed_point(T, x0, cfg);
}

namespace detail {

// Dense Gaussian elimination with partial pivoting; returns false on a
// (numerically) singular system.
inline bool solve_dense(std::vector<double>& a, std::vector<double>& b, int n) {
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a[static_cast<size_t>(r) * n + col]) >
                std::abs(a[static_cast<size_t>(piv) * n + col]))
                piv = r;
        if (std::abs(a[static_cast<size_t>(piv) * n + col]) < 1e-300) return false;
        if (piv != col) {
            for (int c = 0; c < n; ++c)
                std::swap(a[static_cast<size_t>(piv) * n + c], a[static_cast<size_t>(col) * n + c]);
            std::swap(b[piv], b[col]);
        }
        const double d = a[static_cast<size_t>(col) * n + col];
        for (int r = col + 1; r < n; ++r) {
            const double f = a[static_cast<size_t>(r) * n + col] / d;
            if (f == 0.0) continue;
            for (int c = col; c < n; ++c)
                a[static_cast<size_t>(r) * n + c] -= f * a[static_cast<size_t>(col) * n + c];
            b[r] -= f * b[col];
        }
    }
    for (int r = n - 1; r >= 0; --r) {
        double s = b[r];
        for (int c = r + 1; c < n; ++c) s -= a[static_cast<size_t>(r) * n + c] * b[c];
        b[r] = s / a[static_cast<size_t>(r) * n + r];
    }
    return true;
}

}  // namespace detail

// Anderson(m): keep the last m iterates and residuals f_i = G(x_i) - x_i,
// solve min ||sum alpha_i f_i||^2 + lambda ||alpha||^2 s.t. sum alpha = 1 via
// the dense KKT system, and update
// x_{k+1} = (1-beta) sum alpha_i x_i + beta sum alpha_i G(x_i).
// The Tikhonov weight is scaled by the Gram trace so the solve stays
// scale-invariant as the residuals shrink.
template <class State, class Op>
FixedPointResult<State> anderson_solve(const Op& G, State x0, const AndersonConfig& cfg) {
    if (cfg.depth_m < 1) throw std::invalid_argument("anderson_solve: depth_m must be >= 1");
    if (!(cfg.damping_beta > 0.0) || cfg.damping_beta > 1.0)
        throw std::invalid_argument("anderson_solve: damping_beta must be in (0,1]");
    FixedPointResult<State> res;
    std::deque<State> xs, gs;
    xs.push_back(x0);
    gs.push_back(G(xs.back()));

    for (int k = 1; k <= cfg.max_iter; ++k) {
        const int m = static_cast<int>(xs.size());
        std::vector<State> f;
        f.reserve(m);
        for (int i = 0; i < m; ++i) {
            State fi = gs[i];
            state_axpy(-1.0, xs[i], fi);
            f.push_back(std::move(fi));
        }
        // KKT for the equality-constrained regularized least squares
        std::vector<double> gram(static_cast<size_t>(m) * m);
        double trace = 0.0;
        for (int i = 0; i < m; ++i)
            for (int j = i; j < m; ++j) {
                const double d = state_dot(f[i], f[j]);
                gram[static_cast<size_t>(i) * m + j] = d;
                gram[static_cast<size_t>(j) * m + i] = d;
                if (i == j) trace += d;
            }
        const double lambda = cfg.reg_lambda * (m > 0 ? trace / m : 0.0);
        const int dim = m + 1;
        std::vector<double> kkt(static_cast<size_t>(dim) * dim, 0.0), rhs(dim, 0.0);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j)
                kkt[static_cast<size_t>(i) * dim + j] = 2.0 * gram[static_cast<size_t>(i) * m + j];
            kkt[static_cast<size_t>(i) * dim + i] += 2.0 * lambda;
            kkt[static_cast<size_t>(i) * dim + m] = 1.0;
            kkt[static_cast<size_t>(m) * dim + i] = 1.0;
        }
        rhs[m] = 1.0;

        std::vector<double> alpha(m, 0.0);
        if (detail::solve_dense(kkt, rhs, dim)) {
            for (int i = 0; i < m; ++i) alpha[i] = rhs[i];
        } else {
            alpha[m - 1] = 1.0;  // singular even with regularization: plain step
        }

        State x_new = xs.back();
        state_fill_zero(x_new);
        for (int i = 0; i < m; ++i) {
            if ((1.0 - cfg.damping_beta) != 0.0)
                state_axpy((1.0 - cfg.damping_beta) * alpha[i], xs[i], x_new);
            state_axpy(cfg.damping_beta * alpha[i], gs[i], x_new);
        }

        const double r = detail::guarded_step(x_new, xs.back(), "anderson_solve");
        res.residuals.push_back(r);
        res.iters_used = k;
        if (r <= cfg.tol) {
            res.x_bar = std::move(x_new);
            res.converged = true;
            return res;
        }
        xs.push_back(x_new);
        gs.push_back(G(xs.back()));
        if (static_cast<int>(xs.size()) > cfg.depth_m) {
            xs.pop_front();
            gs.pop_front();
        }
    }
    res.x_bar = xs.back();
    res.converged = false;
    return res;
}

}  // namespace pnpttt
