// Synthetic image generators used as the two test-time distributions:
// piecewise-smooth ellipse phantoms and smoothed-noise textures with step
// edges. Both are pure functions of (n, seed).
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pnpttt/image.hpp"
#include "pnpttt/rng.hpp"

namespace pnpttt {

namespace detail {

// One-pass 3x3 box smoothing, normalizing by the in-bounds neighbor count.
inline RealImage box3_smooth(const RealImage& img) {
    RealImage out(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            double s = 0.0;
            int cnt = 0;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= img.height || cc < 0 || cc >= img.width) continue;
                    s += img.at(rr, cc);
                    ++cnt;
                }
            out.at(r, c) = s / cnt;
        }
    return out;
}

}  // namespace detail

// Piecewise-smooth phantom: 4-8 random ellipses composited by overwrite, one
// pass of 3x3 box smoothing, clamped to [0,1].
inline RealImage gen_phantom(int n, uint64_t seed) {
    if (n < 32) throw std::invalid_argument("gen_phantom: n must be >= 32");
    Rng rng(derive_seed(seed, 0x94a27));
    RealImage img(n, n);
    const int count = rng.uniform_int(4, 8);
    for (int e = 0; e < count; ++e) {
        const double cx = rng.uniform(0.15 * n, 0.85 * n);
        const double cy = rng.uniform(0.15 * n, 0.85 * n);
        const double a = rng.uniform(0.06 * n, 0.34 * n);
        const double b = rng.uniform(0.06 * n, 0.34 * n);
        const double phi = rng.uniform(0.0, 3.14159265358979323846);
        const double val = rng.uniform01();
        const double cphi = std::cos(phi), sphi = std::sin(phi);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                const double dy = r - cy, dx = c - cx;
                const double u = (dx * cphi + dy * sphi) / a;
                const double v = (-dx * sphi + dy * cphi) / b;
                if (u * u + v * v <= 1.0) img.at(r, c) = val;
            }
    }
    img = detail::box3_smooth(img);
    for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
    return img;
}

// Texture: Gaussian-filtered white noise (seed-random sigma in [1,4]) plus
// 1-3 straight step edges, then renormalized so min=0 and max=1 exactly.
inline RealImage gen_texture(int n, uint64_t seed) {
    if (n < 32) throw std::invalid_argument("gen_texture: n must be >= 32");
    Rng rng(derive_seed(seed, 0x7e47));
    RealImage noise(n, n);
    for (double& v : noise.data) v = rng.normal();

    const double sigma = rng.uniform(1.0, 4.0);
    const int rad = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> g(static_cast<size_t>(2 * rad + 1));
    double gsum = 0.0;
    for (int i = -rad; i <= rad; ++i) {
        g[static_cast<size_t>(i + rad)] = std::exp(-0.5 * i * i / (sigma * sigma));
        gsum += g[static_cast<size_t>(i + rad)];
    }
    for (double& v : g) v /= gsum;

    // separable zero-padded Gaussian filter
    RealImage tmp(n, n), img(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            double s = 0.0;
            for (int i = -rad; i <= rad; ++i) {
                const int cc = c + i;
                if (cc < 0 || cc >= n) continue;
                s += g[static_cast<size_t>(i + rad)] * noise.at(r, cc);
            }
            tmp.at(r, c) = s;
        }
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            double s = 0.0;
            for (int i = -rad; i <= rad; ++i) {
                const int rr = r + i;
                if (rr < 0 || rr >= n) continue;
                s += g[static_cast<size_t>(i + rad)] * tmp.at(rr, c);
            }
            img.at(r, c) = s;
        }

    const int edges = rng.uniform_int(1, 3);
    for (int e = 0; e < edges; ++e) {
        const double px = rng.uniform(0.2 * n, 0.8 * n);
        const double py = rng.uniform(0.2 * n, 0.8 * n);
        const double phi = rng.uniform(0.0, 3.14159265358979323846);
        const double nx = std::cos(phi), ny = std::sin(phi);
        const double amp = rng.uniform(-0.5, 0.5);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c)
                if ((c - px) * nx + (r - py) * ny > 0.0) img.at(r, c) += amp;
    }

    const auto [mn_it, mx_it] = std::minmax_element(img.data.begin(), img.data.end());
    const double mn = *mn_it, mx = *mx_it;
    if (mx - mn < 1e-300) return RealImage(n, n);  // degenerate; all zeros
    for (double& v : img.data) v = (v - mn) / (mx - mn);
    return img;
}

}  // namespace pnpttt
