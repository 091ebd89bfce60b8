// Unitary 2-D discrete Fourier transform. Radix-2 Cooley-Tukey on
// power-of-two sizes, direct O(n^2) transform otherwise. Both directions
// carry 1/sqrt(HW) so dft2 and idft2 are exact adjoints of each other.
#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "pnpttt/image.hpp"

namespace pnpttt {

namespace detail {

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place radix-2 DIT, unnormalized. sign = -1 forward, +1 inverse.
inline void fft_pow2(std::complex<double>* a, int n, int stride, double sign) {
    // bit-reversal permutation
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[static_cast<size_t>(i) * stride], a[static_cast<size_t>(j) * stride]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * M_PI / len;
        for (int i = 0; i < n; i += len) {
            for (int k = 0; k < len / 2; ++k) {
                // direct trig per twiddle keeps the transform accurate to ~1 ulp
                const std::complex<double> w(std::cos(ang * k), std::sin(ang * k));
                auto& lo = a[static_cast<size_t>(i + k) * stride];
                auto& hi = a[static_cast<size_t>(i + k + len / 2) * stride];
                const std::complex<double> t = w * hi;
                hi = lo - t;
                lo += t;
            }
        }
    }
}

// Direct O(n^2) transform for non-power-of-two sizes.
inline void dft_direct(std::complex<double>* a, int n, int stride, double sign) {
    std::vector<std::complex<double>> out(n);
    for (int k = 0; k < n; ++k) {
        std::complex<double> s = 0.0;
        for (int j = 0; j < n; ++j) {
            const double ang = sign * 2.0 * M_PI * k * j / n;
            s += a[static_cast<size_t>(j) * stride] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = s;
    }
    for (int k = 0; k < n; ++k) a[static_cast<size_t>(k) * stride] = out[k];
}

inline void transform_1d(std::complex<double>* a, int n, int stride, double sign) {
    if (is_pow2(n))
        fft_pow2(a, n, stride, sign);
    else
        dft_direct(a, n, stride, sign);
}

inline ComplexImage transform_2d(const ComplexImage& x, double sign) {
    if (x.height <= 0 || x.width <= 0)
        throw std::invalid_argument("dft2: image dimensions must be positive");
    ComplexImage y = x;
    for (int r = 0; r < y.height; ++r) transform_1d(&y.at(r, 0), y.width, 1, sign);
    for (int c = 0; c < y.width; ++c) transform_1d(&y.at(0, c), y.height, y.width, sign);
    const double scale = 1.0 / std::sqrt(static_cast<double>(y.height) * y.width);
    for (auto& z : y.data) z *= scale;
    return y;
}

}  // namespace detail

inline ComplexImage dft2(const ComplexImage& x) { return detail::transform_2d(x, -1.0); }

inline ComplexImage idft2(const ComplexImage& y) { return detail::transform_2d(y, +1.0); }

}  // namespace pnpttt
