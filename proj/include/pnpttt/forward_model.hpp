// CS-MRI style measurement operator A = M F: radial k-space sampling mask
// composed with the unitary 2-D DFT, its adjoint, and the least-squares
// data-fidelity gradient. Masked k-space stays on the full grid with exact
// zeros off-mask, so A and A^H are shape-preserving.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pnpttt/fft.hpp"
#include "pnpttt/image.hpp"
#include "pnpttt/rng.hpp"

namespace pnpttt {

struct SamplingMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> keep;  // height*width, unshifted DFT coordinates
    double ratio = 0.0;
    bool fallback_full = false;  // set when mask_for_ratio could not reach the target

    bool kept(int r, int c) const { return keep[static_cast<size_t>(r) * width + c] != 0; }
};

struct MeasurementOp {
    SamplingMask mask;
    double noise_sigma = 0.0;  // k-space complex AWGN std (E|z|^2 = sigma^2)
};

// Union of num_lines discrete lines through the centered k-space origin at
// angles pi*(i+u)/num_lines, u drawn once from the seed. Each line is
// rasterized by rounding (r cos, r sin) to the nearest cell for integer radii
// in both directions, then the grid is translated to unshifted DFT
// coordinates. DC is always kept.
inline SamplingMask radial_mask(int n, int num_lines, uint64_t seed) {
    if (n < 8) throw std::invalid_argument("radial_mask: image size must be >= 8");
    if (num_lines < 1 || num_lines > 2 * n)
        throw std::invalid_argument("radial_mask: num_lines out of range [1, 2n]");
    Rng rng(derive_seed(seed, 0x7ad1a1));
    const double offset = rng.uniform01();
    const int center = n / 2;
    const int rmax = static_cast<int>(std::ceil(n / std::sqrt(2.0)));

    std::vector<uint8_t> centered(static_cast<size_t>(n) * n, 0);
    for (int i = 0; i < num_lines; ++i) {
        const double theta = M_PI * (i + offset) / num_lines;
        const double ct = std::cos(theta), st = std::sin(theta);
        for (int r = 0; r <= rmax; ++r) {
            for (int sign : {+1, -1}) {
                const int col = center + static_cast<int>(std::lround(sign * r * ct));
                const int row = center + static_cast<int>(std::lround(sign * r * st));
                if (row >= 0 && row < n && col >= 0 && col < n)
                    centered[static_cast<size_t>(row) * n + col] = 1;
            }
        }
    }

    SamplingMask m;
    m.height = m.width = n;
    m.keep.assign(static_cast<size_t>(n) * n, 0);
    for (int row = 0; row < n; ++row)
        for (int col = 0; col < n; ++col)
            if (centered[static_cast<size_t>(row) * n + col]) {
                const int ur = ((row - center) % n + n) % n;
                const int uc = ((col - center) % n + n) % n;
                m.keep[static_cast<size_t>(ur) * n + uc] = 1;
            }
    m.keep[0] = 1;  // DC
    // Conjugate closure: for even n the centered raster range [-n/2, n/2-1]
    // can keep a Nyquist-edge bin whose mirror fell off the grid, and a real
    // image then sees only "half" of that frequency pair (A^H A would stop
    // being an orthogonal projector). Mirrors of mirrors are the original
    // bins, so marking them in place converges.
    for (int row = 0; row < n; ++row)
        for (int col = 0; col < n; ++col)
            if (m.keep[static_cast<size_t>(row) * n + col]) {
                const int mr = (n - row) % n;
                const int mc = (n - col) % n;
                m.keep[static_cast<size_t>(mr) * n + mc] = 1;
            }
    size_t count = 0;
    for (uint8_t k : m.keep) count += k;
    m.ratio = static_cast<double>(count) / (static_cast<double>(n) * n);
    return m;
}

// Smallest num_lines whose mask reaches the target ratio. Unreachable targets
// fall back to the full mask with fallback_full set.
inline SamplingMask mask_for_ratio(int n, double target_ratio, uint64_t seed) {
    if (!(target_ratio > 0.0) || target_ratio > 1.0)
        throw std::invalid_argument("mask_for_ratio: target ratio must be in (0,1]");
    for (int lines = 1; lines <= 2 * n; ++lines) {
        SamplingMask m = radial_mask(n, lines, seed);
        if (m.ratio >= target_ratio) return m;
    }
    SamplingMask full;
    full.height = full.width = n;
    full.keep.assign(static_cast<size_t>(n) * n, 1);
    full.ratio = 1.0;
    full.fallback_full = true;
    return full;
}

inline void apply_mask(ComplexImage& y, const SamplingMask& mask) {
    for (size_t i = 0; i < y.data.size(); ++i)
        if (!mask.keep[i]) y.data[i] = 0.0;
}

// A x = M F x, kept on the full k-space grid (exact zeros off-mask).
inline ComplexImage apply_A(const RealImage& x, const MeasurementOp& op) {
    if (x.height != op.mask.height || x.width != op.mask.width)
        throw std::invalid_argument("apply_A: image/mask shape mismatch");
    ComplexImage y = dft2(to_complex(x));
    apply_mask(y, op.mask);
    return y;
}

// A^H y = Re(F^H M y), the real part of the zero-filled inverse transform.
inline RealImage apply_A_adj(const ComplexImage& y, const MeasurementOp& op) {
    if (y.height != op.mask.height || y.width != op.mask.width)
        throw std::invalid_argument("apply_A_adj: measurement/mask shape mismatch");
    ComplexImage masked = y;
    apply_mask(masked, op.mask);
    return real_part(idft2(masked));
}

// grad of g(x) = 1/2 ||y - A x||^2, i.e. A^H (A x - y). Carries no 1/m
// scaling; ||A|| <= 1 keeps the gamma=1 gradient step nonexpansive.
inline RealImage grad_datafit(const RealImage& x, const ComplexImage& y, const MeasurementOp& op) {
    if (y.height != op.mask.height || y.width != op.mask.width)
        throw std::invalid_argument("grad_datafit: measurement/mask shape mismatch");
    ComplexImage r = apply_A(x, op);
    for (size_t i = 0; i < r.data.size(); ++i) r.data[i] -= y.data[i];
    return apply_A_adj(r, op);
}

// y = A x plus i.i.d. complex Gaussian noise on kept entries only
// (per-component std sigma/sqrt(2), so E|z|^2 = sigma^2).
inline ComplexImage simulate_measurement(const RealImage& x, const MeasurementOp& op,
                                         uint64_t seed) {
    ComplexImage y = apply_A(x, op);
    if (op.noise_sigma > 0.0) {
        Rng rng(derive_seed(seed, 0x5e15e));
        const double s = op.noise_sigma / std::sqrt(2.0);
        for (size_t i = 0; i < y.data.size(); ++i)
            if (op.mask.keep[i]) y.data[i] += std::complex<double>(s * rng.normal(), s * rng.normal());
    }
    return y;
}

}  // namespace pnpttt
