#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "rehab/common.hpp"

namespace rehab {

// Row-major dense matrix of doubles. Time-series use rows = frames,
// cols = dimensions.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(std::size_t(r) * std::size_t(c), fill) {}

    double& operator()(int r, int c) { return a[std::size_t(r) * std::size_t(cols) + std::size_t(c)]; }
    double operator()(int r, int c) const { return a[std::size_t(r) * std::size_t(cols) + std::size_t(c)]; }

    double* row(int r) { return a.data() + std::size_t(r) * std::size_t(cols); }
    const double* row(int r) const { return a.data() + std::size_t(r) * std::size_t(cols); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : a)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(a.begin(), a.end(), v); }

    bool operator==(const Mat& o) const { return rows == o.rows && cols == o.cols && a == o.a; }
};

inline double dot(const double* x, const double* y, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

// y += alpha * x
inline void axpy(double alpha, const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline Mat transpose(const Mat& m) {
    Mat t(m.cols, m.rows);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
    return t;
}

inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) throw ShapeError("matmul: inner dimensions differ");
    Mat c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        double* ci = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            axpy(aik, b.row(k), ci, b.cols);
        }
    }
    return c;
}

// Column means of the stacked frame matrix.
inline std::vector<double> column_mean(const Mat& m) {
    std::vector<double> mu(std::size_t(m.cols), 0.0);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) mu[std::size_t(c)] += m(r, c);
    for (double& v : mu) v /= double(m.rows);
    return mu;
}

// Unbiased sample covariance (divides by N-1) of rows of m.
inline Mat covariance(const Mat& m, const std::vector<double>& mean) {
    if (m.rows < 2) throw DataError("covariance: need at least 2 rows");
    Mat cov(m.cols, m.cols);
    std::vector<double> d(static_cast<std::size_t>(m.cols));
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) d[std::size_t(c)] = m(r, c) - mean[std::size_t(c)];
        for (int i = 0; i < m.cols; ++i) {
            if (d[std::size_t(i)] == 0.0) continue;
            axpy(d[std::size_t(i)], d.data(), cov.row(i), m.cols);
        }
    }
    const double k = 1.0 / double(m.rows - 1);
    for (double& v : cov.a) v *= k;
    return cov;
}

struct EigenDecomposition {
    std::vector<double> values;  // descending
    Mat vectors;                 // row i = eigenvector of values[i]
};

// Cyclic Jacobi eigendecomposition for symmetric matrices. Adequate for the
// covariance sizes used here (up to a few hundred).
inline EigenDecomposition jacobi_eigen(const Mat& sym, int max_sweeps = 64) {
    const int n = sym.rows;
    if (sym.cols != n) throw ShapeError("jacobi_eigen: matrix not square");
    Mat a = sym;
    Mat v(n, n);
    for (int i = 0; i < n; ++i) v(i, i) = 1.0;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-24) break;

        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[std::size_t(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return a(i, i) > a(j, j); });

    EigenDecomposition out;
    out.values.resize(std::size_t(n));
    out.vectors = Mat(n, n);
    for (int i = 0; i < n; ++i) {
        const int src = order[std::size_t(i)];
        out.values[std::size_t(i)] = a(src, src);
        for (int k = 0; k < n; ++k) out.vectors(i, k) = v(k, src);
    }
    return out;
}

// Cholesky factorization A = L L^T. Returns false if A is not positive
// definite (within the tolerance of the running sums).
inline bool cholesky(const Mat& a, Mat& l) {
    const int n = a.rows;
    if (a.cols != n) throw ShapeError("cholesky: matrix not square");
    l = Mat(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s)) return false;
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return true;
}

// Solves L z = b for lower-triangular L.
inline void forward_solve(const Mat& l, const double* b, double* z) {
    const int n = l.rows;
    for (int i = 0; i < n; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= l(i, k) * z[k];
        z[i] = s / l(i, i);
    }
}

// Squared Mahalanobis form d^T A^{-1} d given the Cholesky factor of A.
inline double quad_form_inv(const Mat& l, const double* d) {
    std::vector<double> z(static_cast<std::size_t>(l.rows));
    forward_solve(l, d, z.data());
    return dot(z.data(), z.data(), l.rows);
}

inline double log_det_from_cholesky(const Mat& l) {
    double s = 0.0;
    for (int i = 0; i < l.rows; ++i) s += std::log(l(i, i));
    return 2.0 * s;
}

}  // namespace rehab
