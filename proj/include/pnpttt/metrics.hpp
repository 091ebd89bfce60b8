// PSNR and SSIM. SSIM uses the standard 11x11 Gaussian window (sigma 1.5,
// K1=0.01, K2=0.03, dynamic range 1.0) aggregated over the valid region only;
// local moments are computed by separable filtering.
#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pnpttt/image.hpp"

namespace pnpttt {

struct MetricReport {
    double psnr_db = 0.0;
    double ssim = 0.0;
};

inline double psnr(const RealImage& x, const RealImage& ref, double peak = 1.0) {
    require_same_shape(x, ref);
    if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be positive");
    double se = 0.0;
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double d = x.data[i] - ref.data[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(x.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline std::array<double, 11> ssim_window_1d() {
    std::array<double, 11> g{};
    const double sigma = 1.5;
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5.0;
        g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += g[i];
    }
    for (double& v : g) v /= sum;
    return g;
}

// Weighted local means of `f`, rows then columns; output is (H-10)x(W-10).
inline std::vector<double> ssim_filter(const std::vector<double>& f, int h, int w) {
    const auto g = ssim_window_1d();
    const int wv = w - 10;
    std::vector<double> rowpass(static_cast<size_t>(h) * wv);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < wv; ++c) {
            double s = 0.0;
            for (int i = 0; i < 11; ++i) s += g[i] * f[static_cast<size_t>(r) * w + c + i];
            rowpass[static_cast<size_t>(r) * wv + c] = s;
        }
    const int hv = h - 10;
    std::vector<double> out(static_cast<size_t>(hv) * wv);
    for (int r = 0; r < hv; ++r)
        for (int c = 0; c < wv; ++c) {
            double s = 0.0;
            for (int j = 0; j < 11; ++j) s += g[j] * rowpass[static_cast<size_t>(r + j) * wv + c];
            out[static_cast<size_t>(r) * wv + c] = s;
        }
    return out;
}

}  // namespace detail

inline double ssim(const RealImage& x, const RealImage& ref) {
    require_same_shape(x, ref);
    if (x.height < 11 || x.width < 11)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    const int h = x.height, w = x.width;
    const size_t n = x.data.size();
    std::vector<double> xx(n), yy(n), xy(n);
    for (size_t i = 0; i < n; ++i) {
        xx[i] = x.data[i] * x.data[i];
        yy[i] = ref.data[i] * ref.data[i];
        xy[i] = x.data[i] * ref.data[i];
    }
    const auto mu_x = detail::ssim_filter(x.data, h, w);
    const auto mu_y = detail::ssim_filter(ref.data, h, w);
    const auto e_xx = detail::ssim_filter(xx, h, w);
    const auto e_yy = detail::ssim_filter(yy, h, w);
    const auto e_xy = detail::ssim_filter(xy, h, w);

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // (K*L)^2 with L = 1
    double acc = 0.0;
    for (size_t i = 0; i < mu_x.size(); ++i) {
        const double mx = mu_x[i], my = mu_y[i];
        const double vx = e_xx[i] - mx * mx;
        const double vy = e_yy[i] - my * my;
        const double cxy = e_xy[i] - mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    return acc / static_cast<double>(mu_x.size());
}

inline MetricReport compute_metrics(const RealImage& x, const RealImage& ref) {
    return MetricReport{psnr(x, ref), ssim(x, ref)};
}

}  // namespace pnpttt
