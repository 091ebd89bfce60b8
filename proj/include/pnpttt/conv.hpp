// 2-D cross-correlation ("conv" in CNN convention, no kernel flip) with
// same-size zero padding, plus its two vector-Jacobian products. These three
// primitives carry the entire hand-written backward pass of the denoiser.
#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "pnpttt/image.hpp"

namespace pnpttt {

struct ConvKernel {
    int out_channels = 0;
    int in_channels = 0;
    int kh = 0;
    int kw = 0;
    std::vector<double> weights;  // out*in*kh*kw
    std::vector<double> bias;     // out

    ConvKernel() = default;
    ConvKernel(int out_c, int in_c, int kh_, int kw_)
        : out_channels(out_c), in_channels(in_c), kh(kh_), kw(kw_) {
        if (out_c <= 0 || in_c <= 0 || kh_ <= 0 || kw_ <= 0 || kh_ % 2 == 0 || kw_ % 2 == 0)
            throw std::invalid_argument("ConvKernel: channels positive, kernel dims odd positive");
        weights.assign(static_cast<size_t>(out_c) * in_c * kh_ * kw_, 0.0);
        bias.assign(static_cast<size_t>(out_c), 0.0);
    }

    double& w(int o, int c, int ky, int kx) {
        return weights[((static_cast<size_t>(o) * in_channels + c) * kh + ky) * kw + kx];
    }
    double w(int o, int c, int ky, int kx) const {
        return weights[((static_cast<size_t>(o) * in_channels + c) * kh + ky) * kw + kx];
    }
};

namespace detail {

// out_plane[y][x] += w * in_plane[y+dy][x+dx] over the in-bounds range
// (zero padding contributes nothing, so out-of-range pixels are skipped).
inline void accumulate_shifted(double* out, const double* in, int h, int wdt, int dy, int dx,
                               double weight) {
    const int y0 = std::max(0, -dy), y1 = h - std::max(0, dy);
    const int x0 = std::max(0, -dx), x1 = wdt - std::max(0, dx);
    for (int y = y0; y < y1; ++y) {
        double* orow = out + static_cast<size_t>(y) * wdt;
        const double* irow = in + static_cast<size_t>(y + dy) * wdt + dx;
        for (int x = x0; x < x1; ++x) orow[x] += weight * irow[x];
    }
}

// sum over valid (y,x) of a[y][x] * b[y+dy][x+dx]
inline double dot_shifted(const double* a, const double* b, int h, int wdt, int dy, int dx) {
    const int y0 = std::max(0, -dy), y1 = h - std::max(0, dy);
    const int x0 = std::max(0, -dx), x1 = wdt - std::max(0, dx);
    double s = 0.0;
    for (int y = y0; y < y1; ++y) {
        const double* arow = a + static_cast<size_t>(y) * wdt;
        const double* brow = b + static_cast<size_t>(y + dy) * wdt + dx;
        for (int x = x0; x < x1; ++x) s += arow[x] * brow[x];
    }
    return s;
}

}  // namespace detail

// weight_scale multiplies every weight on the fly (spectral normalization
// divides by the estimated operator norm without touching stored weights).
inline FeatureMap conv2d(const FeatureMap& input, const ConvKernel& k, double weight_scale = 1.0) {
    if (k.in_channels != input.channels)
        throw std::invalid_argument("conv2d: kernel/input channel mismatch");
    const int h = input.height, wdt = input.width;
    const int ph = k.kh / 2, pw = k.kw / 2;
    FeatureMap out(k.out_channels, h, wdt);
    for (int o = 0; o < k.out_channels; ++o) {
        double* op = out.plane(o);
        std::fill(op, op + static_cast<size_t>(h) * wdt, k.bias[o]);
        for (int c = 0; c < k.in_channels; ++c) {
            const double* ip = input.plane(c);
            for (int ky = 0; ky < k.kh; ++ky)
                for (int kx = 0; kx < k.kw; ++kx)
                    detail::accumulate_shifted(op, ip, h, wdt, ky - ph, kx - pw,
                                               weight_scale * k.w(o, c, ky, kx));
        }
    }
    return out;
}

// Adjoint of the bias-free conv operator: cross-correlation with the
// spatially flipped, channel-transposed kernel.
inline FeatureMap conv2d_adjoint(const ConvKernel& k, const FeatureMap& cotangent,
                                 double weight_scale = 1.0) {
    if (cotangent.channels != k.out_channels)
        throw std::invalid_argument("conv2d_adjoint: cotangent channel mismatch");
    ConvKernel flipped(k.in_channels, k.out_channels, k.kh, k.kw);
    for (int o = 0; o < k.out_channels; ++o)
        for (int c = 0; c < k.in_channels; ++c)
            for (int ky = 0; ky < k.kh; ++ky)
                for (int kx = 0; kx < k.kw; ++kx)
                    flipped.w(c, o, k.kh - 1 - ky, k.kw - 1 - kx) = k.w(o, c, ky, kx);
    return conv2d(cotangent, flipped, weight_scale);
}

// v^T (d conv2d / d input)
inline FeatureMap conv2d_vjp_input(const FeatureMap& input, const ConvKernel& k,
                                   const FeatureMap& cotangent, double weight_scale = 1.0) {
    if (cotangent.channels != k.out_channels || cotangent.height != input.height ||
        cotangent.width != input.width)
        throw std::invalid_argument("conv2d_vjp_input: cotangent shape mismatch");
    return conv2d_adjoint(k, cotangent, weight_scale);
}

// v^T (d conv2d / d weights) and v^T (d conv2d / d bias), returned as a
// kernel-shaped gradient (bias field holds the bias gradient).
inline ConvKernel conv2d_vjp_kernel(const FeatureMap& input, int out_channels, int kh, int kw,
                                    const FeatureMap& cotangent) {
    if (cotangent.channels != out_channels || cotangent.height != input.height ||
        cotangent.width != input.width)
        throw std::invalid_argument("conv2d_vjp_kernel: cotangent shape mismatch");
    const int h = input.height, wdt = input.width;
    const int ph = kh / 2, pw = kw / 2;
    ConvKernel grad(out_channels, input.channels, kh, kw);
    for (int o = 0; o < out_channels; ++o) {
        const double* cp = cotangent.plane(o);
        double bsum = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < wdt; ++x) bsum += cp[static_cast<size_t>(y) * wdt + x];
        grad.bias[o] = bsum;
        for (int c = 0; c < input.channels; ++c) {
            const double* ip = input.plane(c);
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx)
                    grad.w(o, c, ky, kx) =
                        detail::dot_shifted(cp, ip, h, wdt, ky - ph, kx - pw);
        }
    }
    return grad;
}

}  // namespace pnpttt
