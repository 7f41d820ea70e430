#pragma once

// Dense row-major double tensor plus the handful of kernels the trainer needs.
// Loops are written with fixed accumulation order so results are reproducible
// bit-for-bit across runs; the 8-lane dot splits are there to let the compiler
// vectorize without reassociating sums behind our back.

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "lowbit/errors.hpp"

namespace lowbit {

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

    Tensor(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_size(shape_))
            throw ShapeError("tensor data length does not match shape");
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }

    static Tensor row(std::initializer_list<double> xs) {
        return Tensor({static_cast<int>(xs.size())}, std::vector<double>(xs));
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-d accessors (matrices are [rows, cols]).
    double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }
    double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_string() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    static std::size_t checked_size(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw ShapeError("negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() +
                         " vs " + b.shape_string());
}

inline Tensor elementwise_add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "elementwise_add");
    Tensor out = a;
    double* o = out.data();
    const double* q = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] += q[i];
    return out;
}

inline Tensor elementwise_sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "elementwise_sub");
    Tensor out = a;
    double* o = out.data();
    const double* q = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] -= q[i];
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (double& x : out.values()) x *= c;
    return out;
}

// a += c * b, in place; the axpy workhorse for optimizer updates.
inline void add_scaled(Tensor& a, const Tensor& b, double c) {
    require_same_shape(a, b, "add_scaled");
    double* p = a.data();
    const double* q = b.data();
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) p[i] += c * q[i];
}

namespace detail {

// Split-accumulator dot product: deterministic order, still vectorizes.
inline double dot_n(const double* a, const double* b, std::size_t n) {
    double s[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (int k = 0; k < 8; ++k) s[k] += a[i + k] * b[i + k];
    double tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7])) + tail;
}

inline void axpy_n(double* y, double c, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += c * x[i];
}

} // namespace detail

inline double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    return detail::dot_n(a.data(), b.data(), a.size());
}

inline double squared_norm(const Tensor& a) { return detail::dot_n(a.data(), a.data(), a.size()); }

inline double norm(const Tensor& a) { return std::sqrt(squared_norm(a)); }

inline double max_abs(const Tensor& a) {
    double m = 0;
    for (double x : a.values())
        if (std::fabs(x) > m) m = std::fabs(x);
    return m;
}

// [m,k] x [k,n] -> [m,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expects rank-2 operands");
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul: inner dimension mismatch " + a.shape_string() +
                         " vs " + b.shape_string());
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        double* orow = out.data() + static_cast<std::size_t>(i) * n;
        const double* arow = a.data() + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p)
            detail::axpy_n(orow, arow[p], b.data() + static_cast<std::size_t>(p) * n,
                           static_cast<std::size_t>(n));
    }
    return out;
}

// input [n,c,h,w], kernel [oc,ic,kh,kw] -> [n,oc,oh,ow]; zero padding.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride = 1, int pad = 0) {
    if (input.rank() != 4 || kernel.rank() != 4)
        throw ShapeError("conv2d: expects rank-4 input and kernel");
    if (stride < 1) throw ShapeError("conv2d: stride must be positive");
    const int n = input.dim(0), ic = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int oc = kernel.dim(0), kic = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    if (ic != kic) throw ShapeError("conv2d: channel mismatch");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: kernel larger than padded input");
    Tensor out({n, oc, oh, ow});
    const double* in = input.data();
    const double* ker = kernel.data();
    double* o = out.data();
    const std::size_t in_cs = static_cast<std::size_t>(h) * w;
    const std::size_t in_ns = in_cs * ic;
    const std::size_t out_cs = static_cast<std::size_t>(oh) * ow;
    const std::size_t out_ns = out_cs * oc;
    const std::size_t ker_cs = static_cast<std::size_t>(kh) * kw;
    const std::size_t ker_os = ker_cs * ic;
    for (int b = 0; b < n; ++b)
        for (int co = 0; co < oc; ++co) {
            double* oplane = o + b * out_ns + co * out_cs;
            for (int ci = 0; ci < ic; ++ci) {
                const double* iplane = in + b * in_ns + ci * in_cs;
                const double* kplane = ker + co * ker_os + ci * ker_cs;
                for (int y = 0; y < oh; ++y)
                    for (int x = 0; x < ow; ++x) {
                        const int iy0 = y * stride - pad, ix0 = x * stride - pad;
                        double acc = 0;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = iy0 + ky;
                            if (iy < 0 || iy >= h) continue;
                            const double* irow = iplane + static_cast<std::size_t>(iy) * w;
                            const double* krow = kplane + static_cast<std::size_t>(ky) * kw;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = ix0 + kx;
                                if (ix < 0 || ix >= w) continue;
                                acc += irow[ix] * krow[kx];
                            }
                        }
                        oplane[static_cast<std::size_t>(y) * ow + x] += acc;
                    }
            }
        }
    return out;
}

} // namespace lowbit
