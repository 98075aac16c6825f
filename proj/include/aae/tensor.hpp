#pragma once

// Dense row-major matrix of doubles plus the handful of kernels the engine
// needs. Matrix products are delegated to CBLAS when AAE_USE_CBLAS is set
// (single-threaded for reproducibility); the fallback kernel is a blocked
// i-k-j loop that produces identical results for the same operand order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include "aae/errors.hpp"
#include "aae/rng.hpp"

#if defined(AAE_USE_CBLAS)
#include <cblas.h>
#endif

namespace aae {

struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

    static Tensor randn(std::size_t r, std::size_t c, double stddev, Rng& rng) {
        Tensor t(r, c);
        for (auto& x : t.v) x = rng.normal(0.0, stddev);
        return t;
    }

    static Tensor from_rows(std::size_t r, std::size_t c, std::vector<double> data) {
        if (data.size() != r * c) throw ShapeError("from_rows: data length != rows*cols");
        Tensor t;
        t.rows = r;
        t.cols = c;
        t.v = std::move(data);
        return t;
    }

    double& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }

    double* row(std::size_t i) { return v.data() + i * cols; }
    const double* row(std::size_t i) const { return v.data() + i * cols; }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
    std::size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline std::string shape_str(const Tensor& t) {
    return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

inline void require_shape(const Tensor& t, std::size_t r, std::size_t c, const char* what) {
    if (t.rows != r || t.cols != c)
        throw ShapeError(std::string(what) + ": expected " + std::to_string(r) + "x" +
                         std::to_string(c) + ", got " + shape_str(t));
}

namespace detail {

inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
                 double beta, double* c, std::size_t ldc) {
#if defined(AAE_USE_CBLAS)
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                beta, c, static_cast<int>(ldc));
#else
    if (beta == 0.0) {
        for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0);
    } else if (beta != 1.0) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
    }
    auto a_at = [&](std::size_t i, std::size_t p) { return trans_a ? a[p * lda + i] : a[i * lda + p]; };
    auto b_at = [&](std::size_t p, std::size_t j) { return trans_b ? b[j * ldb + p] : b[p * ldb + j]; };
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = alpha * a_at(i, p);
            if (av == 0.0) continue;
            double* crow = c + i * ldc;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * b_at(p, j);
        }
    }
#endif
}

}  // namespace detail

/// C = A * B
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: " + shape_str(a) + " * " + shape_str(b));
    Tensor c(a.rows, b.cols);
    if (a.rows && b.cols && a.cols)
        detail::gemm(false, false, a.rows, b.cols, a.cols, 1.0, a.data(), a.cols, b.data(), b.cols,
                     0.0, c.data(), c.cols);
    return c;
}

/// C = A * B^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols != b.cols)
        throw ShapeError("matmul_nt: " + shape_str(a) + " * " + shape_str(b) + "^T");
    Tensor c(a.rows, b.rows);
    if (a.rows && b.rows && a.cols)
        detail::gemm(false, true, a.rows, b.rows, a.cols, 1.0, a.data(), a.cols, b.data(), b.cols,
                     0.0, c.data(), c.cols);
    return c;
}

/// C = A^T * B
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rows != b.rows)
        throw ShapeError("matmul_tn: " + shape_str(a) + "^T * " + shape_str(b));
    Tensor c(a.cols, b.cols);
    if (a.cols && b.cols && a.rows)
        detail::gemm(true, false, a.cols, b.cols, a.rows, 1.0, a.data(), a.cols, b.data(), b.cols,
                     0.0, c.data(), c.cols);
    return c;
}

inline void add_inplace(Tensor& a, const Tensor& b, double scale = 1.0) {
    if (!a.same_shape(b)) throw ShapeError("add_inplace: " + shape_str(a) + " vs " + shape_str(b));
    for (std::size_t i = 0; i < a.size(); ++i) a.v[i] += scale * b.v[i];
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("sub: " + shape_str(a) + " vs " + shape_str(b));
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.v[i] -= b.v[i];
    return c;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("hadamard: " + shape_str(a) + " vs " + shape_str(b));
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.v[i] *= b.v[i];
    return c;
}

inline void scale_inplace(Tensor& a, double s) {
    for (auto& x : a.v) x *= s;
}

/// Adds a 1xC row vector to every row.
inline void add_row_broadcast(Tensor& a, const Tensor& row) {
    if (row.rows != 1 || row.cols != a.cols)
        throw ShapeError("add_row_broadcast: " + shape_str(a) + " += " + shape_str(row));
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* r = a.row(i);
        for (std::size_t j = 0; j < a.cols; ++j) r[j] += row.v[j];
    }
}

/// 1xC column sums.
inline Tensor colsum(const Tensor& a) {
    Tensor s(1, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* r = a.row(i);
        for (std::size_t j = 0; j < a.cols; ++j) s.v[j] += r[j];
    }
    return s;
}

inline Tensor colmean(const Tensor& a) {
    Tensor m = colsum(a);
    if (a.rows) scale_inplace(m, 1.0 / static_cast<double>(a.rows));
    return m;
}

/// Horizontal concatenation [a | b].
inline Tensor hcat(const Tensor& a, const Tensor& b) {
    if (a.rows != b.rows) throw ShapeError("hcat: " + shape_str(a) + " | " + shape_str(b));
    Tensor c(a.rows, a.cols + b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        std::memcpy(c.row(i), a.row(i), a.cols * sizeof(double));
        std::memcpy(c.row(i) + a.cols, b.row(i), b.cols * sizeof(double));
    }
    return c;
}

/// Columns [j0, j1) as a new tensor.
inline Tensor slice_cols(const Tensor& a, std::size_t j0, std::size_t j1) {
    if (j1 > a.cols || j0 > j1) throw ShapeError("slice_cols out of range on " + shape_str(a));
    Tensor c(a.rows, j1 - j0);
    for (std::size_t i = 0; i < a.rows; ++i)
        std::memcpy(c.row(i), a.row(i) + j0, (j1 - j0) * sizeof(double));
    return c;
}

inline Tensor transpose(const Tensor& a) {
    Tensor t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

inline double squared_norm(const Tensor& a) {
    double s = 0.0;
    for (double x : a.v) s += x * x;
    return s;
}

/// Neumaier-compensated sum; evaluation order is fixed and documented.
inline double compensated_sum(const std::vector<double>& xs) {
    double sum = 0.0, comp = 0.0;
    for (double x : xs) {
        double t = sum + x;
        if (std::abs(sum) >= std::abs(x))
            comp += (sum - t) + x;
        else
            comp += (x - t) + sum;
        sum = t;
    }
    return sum + comp;
}

inline double compensated_mean(const std::vector<double>& xs) {
    return xs.empty() ? 0.0 : compensated_sum(xs) / static_cast<double>(xs.size());
}

#if defined(AAE_OPENBLAS)
extern "C" void openblas_set_num_threads(int);
/// Pins BLAS to one thread: summation order inside gemm then never depends
/// on the host's core count.
inline void pin_blas_single_thread() { openblas_set_num_threads(1); }
/// Raises the BLAS thread count. Metrics logs are reproducible only at a
/// fixed thread count; runs at different counts may differ in the last bits.
inline void set_blas_threads(int n) { openblas_set_num_threads(n > 0 ? n : 1); }
#else
inline void pin_blas_single_thread() {}
inline void set_blas_threads(int) {}
#endif

}  // namespace aae
