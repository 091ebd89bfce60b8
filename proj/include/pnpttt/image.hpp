// Dense 2-D image containers and the small vector-space algebra the
// solvers are written against.
#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace pnpttt {

struct RealImage {
    int height = 0;
    int width = 0;
    std::vector<double> data;  // row-major, height*width

    RealImage() = default;
    RealImage(int h, int w, double fill = 0.0) : height(h), width(w) {
        if (h <= 0 || w <= 0)
            throw std::invalid_argument("RealImage: dimensions must be positive");
        data.assign(static_cast<size_t>(h) * w, fill);
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }
    size_t size() const { return data.size(); }
};

struct ComplexImage {
    int height = 0;
    int width = 0;
    std::vector<std::complex<double>> data;  // row-major

    ComplexImage() = default;
    ComplexImage(int h, int w, std::complex<double> fill = {}) : height(h), width(w) {
        if (h <= 0 || w <= 0)
            throw std::invalid_argument("ComplexImage: dimensions must be positive");
        data.assign(static_cast<size_t>(h) * w, fill);
    }

    std::complex<double>& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
    const std::complex<double>& at(int r, int c) const {
        return data[static_cast<size_t>(r) * width + c];
    }
    size_t size() const { return data.size(); }
};

// Channel-major stack of image planes (CNN activations).
struct FeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;  // channels*height*width

    FeatureMap() = default;
    FeatureMap(int c, int h, int w, double fill = 0.0) : channels(c), height(h), width(w) {
        if (c <= 0 || h <= 0 || w <= 0)
            throw std::invalid_argument("FeatureMap: dimensions must be positive");
        data.assign(static_cast<size_t>(c) * h * w, fill);
    }

    double* plane(int c) { return data.data() + static_cast<size_t>(c) * height * width; }
    const double* plane(int c) const {
        return data.data() + static_cast<size_t>(c) * height * width;
    }
    size_t size() const { return data.size(); }
};

inline bool same_shape(const RealImage& a, const RealImage& b) {
    return a.height == b.height && a.width == b.width;
}
inline bool same_shape(const ComplexImage& a, const ComplexImage& b) {
    return a.height == b.height && a.width == b.width;
}

inline void require_same_shape(const RealImage& a, const RealImage& b,
                               const char* where = "images") {
    if (!same_shape(a, b)) throw std::invalid_argument(std::string(where) + ": shape mismatch");
}
inline void require_same_shape(const ComplexImage& a, const ComplexImage& b,
                               const char* where = "images") {
    if (!same_shape(a, b)) throw std::invalid_argument(std::string(where) + ": shape mismatch");
}

inline FeatureMap to_feature(const RealImage& x) {
    FeatureMap f(1, x.height, x.width);
    f.data = x.data;
    return f;
}

inline RealImage to_image(const FeatureMap& f) {
    if (f.channels != 1) throw std::invalid_argument("to_image: expected single channel");
    RealImage x(f.height, f.width);
    x.data = f.data;
    return x;
}

inline ComplexImage to_complex(const RealImage& x) {
    ComplexImage y(x.height, x.width);
    for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i];
    return y;
}

inline RealImage real_part(const ComplexImage& y) {
    RealImage x(y.height, y.width);
    for (size_t i = 0; i < y.data.size(); ++i) x.data[i] = y.data[i].real();
    return x;
}

// -------- flat-array algebra (shared by images and plain vectors) --------

inline double state_dot(const RealImage& a, const RealImage& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}
inline double state_dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

template <class State>
double state_norm(const State& a) {
    return std::sqrt(state_dot(a, a));
}

// y += alpha * x
inline void state_axpy(double alpha, const RealImage& x, RealImage& y) {
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += alpha * x.data[i];
}
inline void state_axpy(double alpha, const std::vector<double>& x, std::vector<double>& y) {
    for (size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

inline void state_scale(RealImage& x, double alpha) {
    for (double& v : x.data) v *= alpha;
}
inline void state_scale(std::vector<double>& x, double alpha) {
    for (double& v : x) v *= alpha;
}

inline void state_fill_zero(RealImage& x) { std::fill(x.data.begin(), x.data.end(), 0.0); }
inline void state_fill_zero(std::vector<double>& x) { std::fill(x.begin(), x.end(), 0.0); }

template <class State>
double rel_change(const State& x_new, const State& x_old) {
    State d = x_new;
    state_axpy(-1.0, x_old, d);
    return state_norm(d) / std::max(state_norm(x_new), 1e-12);
}

inline double dot(const RealImage& a, const RealImage& b) { return state_dot(a, b); }
inline double l2_norm(const RealImage& a) { return state_norm(a); }

inline double l2_norm(const ComplexImage& a) {
    double s = 0.0;
    for (const auto& z : a.data) s += std::norm(z);
    return std::sqrt(s);
}
inline double l2_norm_sq(const ComplexImage& a) {
    double s = 0.0;
    for (const auto& z : a.data) s += std::norm(z);
    return s;
}
inline double l1_norm(const ComplexImage& a) {
    double s = 0.0;
    for (const auto& z : a.data) s += std::abs(z);
    return s;
}

// Real inner product Re<a, b> on complex grids.
inline double dot_real(const ComplexImage& a, const ComplexImage& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        s += a.data[i].real() * b.data[i].real() + a.data[i].imag() * b.data[i].imag();
    return s;
}

inline RealImage operator+(const RealImage& a, const RealImage& b) {
    require_same_shape(a, b, "operator+");
    RealImage r = a;
    state_axpy(1.0, b, r);
    return r;
}
inline RealImage operator-(const RealImage& a, const RealImage& b) {
    require_same_shape(a, b, "operator-");
    RealImage r = a;
    state_axpy(-1.0, b, r);
    return r;
}
inline RealImage operator*(double alpha, const RealImage& a) {
    RealImage r = a;
    state_scale(r, alpha);
    return r;
}
inline ComplexImage operator-(const ComplexImage& a, const ComplexImage& b) {
    require_same_shape(a, b, "operator-");
    ComplexImage r = a;
    for (size_t i = 0; i < r.data.size(); ++i) r.data[i] -= b.data[i];
    return r;
}

inline bool all_finite(const RealImage& x) {
    for (double v : x.data)
        if (!std::isfinite(v)) return false;
    return true;
}
inline bool all_finite(const ComplexImage& x) {
    for (const auto& z : x.data)
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
    return true;
}

}  // namespace pnpttt
