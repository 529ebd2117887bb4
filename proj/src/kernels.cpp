#include "contproto/kernels.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace contproto::kernels {

namespace {

// Below this many output elements the OpenMP fork costs more than the loop.
constexpr std::size_t kParallelThreshold = 4096;

void check_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2 && t.ndim() != 1) {
        throw std::invalid_argument(std::string(op) + ": expected rank 1 or 2, got " +
                                    t.shape_str());
    }
}

struct MatShape {
    std::size_t m, k, n, ak, bn; // ak = op(A) inner stride basis, see matmul_into
};

MatShape matmul_shape(const Tensor& a, const Tensor& b, bool ta, bool tb, const char* op) {
    check_2d(a, op);
    check_2d(b, op);
    std::size_t am = ta ? a.cols() : a.rows();
    std::size_t ak = ta ? a.rows() : a.cols();
    std::size_t bk = tb ? b.cols() : b.rows();
    std::size_t bn = tb ? b.rows() : b.cols();
    if (ak != bk) {
        throw std::invalid_argument(std::string(op) + ": inner dimensions differ, " +
                                    a.shape_str() + (ta ? "^T" : "") + " * " + b.shape_str() +
                                    (tb ? "^T" : ""));
    }
    return {am, ak, bn, a.cols(), b.cols()};
}

inline double mm_cell(const double* A, const double* B, std::size_t i, std::size_t j,
                      std::size_t k, std::size_t acols, std::size_t bcols, bool ta, bool tb) {
    double s = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
        double av = ta ? A[t * acols + i] : A[i * acols + t];
        double bv = tb ? B[j * bcols + t] : B[t * bcols + j];
        s += av * bv;
    }
    return s;
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
    MatShape s = matmul_shape(a, b, ta, tb, "matmul");
    Tensor c({s.m, s.n});
    matmul_acc(c, a, b, ta, tb);
    return c;
}

void matmul_acc(Tensor& c, const Tensor& a, const Tensor& b, bool ta, bool tb) {
    MatShape s = matmul_shape(a, b, ta, tb, "matmul");
    if (c.rows() != s.m || c.cols() != s.n) {
        throw std::invalid_argument("matmul: output shape " + c.shape_str() + " mismatch");
    }
    const double* A = a.data();
    const double* B = b.data();
    double* C = c.data();
    const std::int64_t m = static_cast<std::int64_t>(s.m);
#pragma omp parallel for schedule(static) if (s.m * s.n >= kParallelThreshold)
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < s.n; ++j) {
            C[static_cast<std::size_t>(i) * s.n + j] +=
                mm_cell(A, B, static_cast<std::size_t>(i), j, s.k, s.ak, s.bn, ta, tb);
        }
    }
}

Tensor softmax_rows(const Tensor& x) {
    check_2d(x, "softmax_rows");
    Tensor y({x.rows(), x.cols()});
    const std::size_t n = x.cols();
    const std::int64_t r = static_cast<std::int64_t>(x.rows());
#pragma omp parallel for schedule(static) if (x.size() >= kParallelThreshold)
    for (std::int64_t i = 0; i < r; ++i) {
        const double* in = x.data() + static_cast<std::size_t>(i) * n;
        double* out = y.data() + static_cast<std::size_t>(i) * n;
        double mx = in[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
    }
    return y;
}

Tensor softmax_rows_backward(const Tensor& y, const Tensor& grad_y) {
    Tensor dx({y.rows(), y.cols()});
    const std::size_t n = y.cols();
    const std::int64_t r = static_cast<std::int64_t>(y.rows());
#pragma omp parallel for schedule(static) if (y.size() >= kParallelThreshold)
    for (std::int64_t i = 0; i < r; ++i) {
        const double* yr = y.data() + static_cast<std::size_t>(i) * n;
        const double* gr = grad_y.data() + static_cast<std::size_t>(i) * n;
        double* dr = dx.data() + static_cast<std::size_t>(i) * n;
        double gy = 0.0;
        for (std::size_t j = 0; j < n; ++j) gy += gr[j] * yr[j];
        for (std::size_t j = 0; j < n; ++j) dr[j] = (gr[j] - gy) * yr[j];
    }
    return dx;
}

Tensor l2_normalize_rows(const Tensor& x) {
    check_2d(x, "l2_normalize_rows");
    Tensor y({x.rows(), x.cols()});
    const std::size_t n = x.cols();
    const std::int64_t r = static_cast<std::int64_t>(x.rows());
#pragma omp parallel for schedule(static) if (x.size() >= kParallelThreshold)
    for (std::int64_t i = 0; i < r; ++i) {
        const double* in = x.data() + static_cast<std::size_t>(i) * n;
        double* out = y.data() + static_cast<std::size_t>(i) * n;
        double sq = 0.0;
        for (std::size_t j = 0; j < n; ++j) sq += in[j] * in[j];
        if (sq == 0.0) continue; // zero row passes through as zeros
        double inv = 1.0 / std::sqrt(sq);
        for (std::size_t j = 0; j < n; ++j) out[j] = in[j] * inv;
    }
    return y;
}

Tensor l2_normalize_rows_backward(const Tensor& x, const Tensor& y, const Tensor& grad_y) {
    Tensor dx({x.rows(), x.cols()});
    const std::size_t n = x.cols();
    const std::int64_t r = static_cast<std::int64_t>(x.rows());
#pragma omp parallel for schedule(static) if (x.size() >= kParallelThreshold)
    for (std::int64_t i = 0; i < r; ++i) {
        const double* xr = x.data() + static_cast<std::size_t>(i) * n;
        const double* yr = y.data() + static_cast<std::size_t>(i) * n;
        const double* gr = grad_y.data() + static_cast<std::size_t>(i) * n;
        double* dr = dx.data() + static_cast<std::size_t>(i) * n;
        double sq = 0.0;
        for (std::size_t j = 0; j < n; ++j) sq += xr[j] * xr[j];
        if (sq == 0.0) continue; // non-differentiable point, defined as 0
        double inv = 1.0 / std::sqrt(sq);
        double gy = 0.0;
        for (std::size_t j = 0; j < n; ++j) gy += gr[j] * yr[j];
        for (std::size_t j = 0; j < n; ++j) dr[j] = (gr[j] - gy * yr[j]) * inv;
    }
    return dx;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("add: shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    }
    Tensor c(a.shape());
    const std::int64_t n = static_cast<std::int64_t>(a.size());
#pragma omp parallel for schedule(static) if (a.size() >= kParallelThreshold)
    for (std::int64_t i = 0; i < n; ++i) c[static_cast<std::size_t>(i)] = a[i] + b[i];
    return c;
}

Tensor scale(const Tensor& a, double s) {
    Tensor c(a.shape());
    const std::int64_t n = static_cast<std::int64_t>(a.size());
#pragma omp parallel for schedule(static) if (a.size() >= kParallelThreshold)
    for (std::int64_t i = 0; i < n; ++i) c[static_cast<std::size_t>(i)] = a[i] * s;
    return c;
}

Tensor elementwise_exp(const Tensor& x) {
    Tensor y(x.shape());
    const std::int64_t n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static) if (x.size() >= kParallelThreshold)
    for (std::int64_t i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = std::exp(x[i]);
    return y;
}

Tensor elementwise_log(const Tensor& x, double eps, std::size_t* clamp_count) {
    Tensor y(x.shape());
    std::size_t clamped = 0;
    // Serial: the clamp counter would race, and log inputs are small tensors.
    for (std::size_t i = 0; i < x.size(); ++i) {
        double v = x[i];
        if (v <= eps) {
            v = eps;
            ++clamped;
        }
        y[i] = std::log(v);
    }
    if (clamp_count) *clamp_count += clamped;
    return y;
}

Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("mul: shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    }
    Tensor c(a.shape());
    const std::int64_t n = static_cast<std::int64_t>(a.size());
#pragma omp parallel for schedule(static) if (a.size() >= kParallelThreshold)
    for (std::int64_t i = 0; i < n; ++i) c[static_cast<std::size_t>(i)] = a[i] * b[i];
    return c;
}

Tensor tanh_forward(const Tensor& x) {
    Tensor y(x.shape());
    const std::int64_t n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static) if (x.size() >= kParallelThreshold)
    for (std::int64_t i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = std::tanh(x[i]);
    return y;
}

Tensor relu_forward(const Tensor& x) {
    Tensor y(x.shape());
    const std::int64_t n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static) if (x.size() >= kParallelThreshold)
    for (std::int64_t i = 0; i < n; ++i)
        y[static_cast<std::size_t>(i)] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("dot: size mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    }
    // Fixed left-to-right summation; kept serial so the result does not
    // depend on the thread count.
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

namespace serial {

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
    MatShape s = matmul_shape(a, b, ta, tb, "matmul");
    Tensor c({s.m, s.n});
    const double* A = a.data();
    const double* B = b.data();
    double* C = c.data();
    for (std::size_t i = 0; i < s.m; ++i)
        for (std::size_t j = 0; j < s.n; ++j)
            C[i * s.n + j] = mm_cell(A, B, i, j, s.k, s.ak, s.bn, ta, tb);
    return c;
}

Tensor softmax_rows(const Tensor& x) {
    check_2d(x, "softmax_rows");
    Tensor y({x.rows(), x.cols()});
    const std::size_t n = x.cols();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* in = x.data() + i * n;
        double* out = y.data() + i * n;
        double mx = in[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
    }
    return y;
}

Tensor l2_normalize_rows(const Tensor& x) {
    check_2d(x, "l2_normalize_rows");
    Tensor y({x.rows(), x.cols()});
    const std::size_t n = x.cols();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* in = x.data() + i * n;
        double* out = y.data() + i * n;
        double sq = 0.0;
        for (std::size_t j = 0; j < n; ++j) sq += in[j] * in[j];
        if (sq == 0.0) continue;
        double inv = 1.0 / std::sqrt(sq);
        for (std::size_t j = 0; j < n; ++j) out[j] = in[j] * inv;
    }
    return y;
}

Tensor elementwise_exp(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::exp(x[i]);
    return y;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace serial

} // namespace contproto::kernels
