#pragma once

// Per-repetition performance metrics: Euclidean and Mahalanobis deviation
// from a reference template, dynamic time warping, plus the shared scaling
// to [1, 20] and the separation degree between two scaled value sequences.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rehab/common.hpp"
#include "rehab/linalg.hpp"

namespace rehab {

enum class MetricKind { euclidean, mahalanobis, dtw, gmm_nll };

inline const char* to_string(MetricKind k) {
    switch (k) {
        case MetricKind::euclidean: return "euclidean";
        case MetricKind::mahalanobis: return "mahalanobis";
        case MetricKind::dtw: return "dtw";
        default: return "gmm_nll";
    }
}

inline MetricKind metric_kind_from_string(const std::string& s) {
    if (s == "euclid" || s == "euclidean") return MetricKind::euclidean;
    if (s == "mahal" || s == "mahalanobis") return MetricKind::mahalanobis;
    if (s == "dtw") return MetricKind::dtw;
    if (s == "gmm" || s == "gmm_nll") return MetricKind::gmm_nll;
    throw ConfigError("unknown metric: " + s);
}

// Scalar metric values for the reference repetitions (x) and the patient
// repetitions (y) of one exercise.
struct MetricSeries {
    MetricKind kind = MetricKind::euclidean;
    std::vector<double> reference_values;
    std::vector<double> patient_values;
    std::string pairing = "unpaired";
};

// Element-wise mean across repetitions; all sequences must share T and M.
inline Mat reference_mean(const std::vector<Mat>& refs) {
    if (refs.empty()) throw DataError("reference_mean: empty reference list");
    Mat mean(refs[0].rows, refs[0].cols);
    for (const auto& r : refs) {
        if (!r.same_shape(mean)) throw ShapeError("reference_mean: sequences differ in shape");
        for (std::size_t i = 0; i < r.a.size(); ++i) mean.a[i] += r.a[i];
    }
    for (double& v : mean.a) v /= double(refs.size());
    return mean;
}

// Mean over frames of the per-frame Euclidean distance to the template.
inline double euclidean_metric(const Mat& rep, const Mat& tmpl) {
    if (!rep.same_shape(tmpl)) throw ShapeError("euclidean_metric: shape mismatch");
    double total = 0.0;
    for (int t = 0; t < rep.rows; ++t) {
        double d2 = 0.0;
        for (int c = 0; c < rep.cols; ++c) {
            const double d = rep(t, c) - tmpl(t, c);
            d2 += d * d;
        }
        total += std::sqrt(d2);
    }
    return total / double(rep.rows);
}

// Per-frame reference mean plus a covariance pooled over every reference
// frame, ridge-regularized so the Cholesky factor exists.
struct ReferenceStats {
    Mat mean_seq;   // T x M
    Mat covariance; // M x M, after ridge
    Mat chol;

    static ReferenceStats fit(const std::vector<Mat>& refs, double eps_cov = 1e-6) {
        ReferenceStats s;
        s.mean_seq = reference_mean(refs);
        const int m = s.mean_seq.cols;
        Mat cov(m, m);
        long n = 0;
        std::vector<double> d(static_cast<std::size_t>(m));
        for (const auto& r : refs) {
            for (int t = 0; t < r.rows; ++t) {
                for (int c = 0; c < m; ++c) d[std::size_t(c)] = r(t, c) - s.mean_seq(t, c);
                for (int a = 0; a < m; ++a) axpy(d[std::size_t(a)], d.data(), cov.row(a), m);
                ++n;
            }
        }
        if (n > 1)
            for (double& v : cov.a) v /= double(n - 1);
        for (int i = 0; i < m; ++i) cov(i, i) += eps_cov;
        s.covariance = cov;
        if (!cholesky(s.covariance, s.chol))
            throw NumericalError("mahalanobis: pooled covariance singular after regularization");
        return s;
    }
};

inline double mahalanobis_metric(const Mat& rep, const ReferenceStats& stats) {
    if (!rep.same_shape(stats.mean_seq)) throw ShapeError("mahalanobis_metric: shape mismatch");
    const int m = rep.cols;
    std::vector<double> d(static_cast<std::size_t>(m));
    double total = 0.0;
    for (int t = 0; t < rep.rows; ++t) {
        for (int c = 0; c < m; ++c) d[std::size_t(c)] = rep(t, c) - stats.mean_seq(t, c);
        total += std::sqrt(quad_form_inv(stats.chol, d.data()));
    }
    return total / double(rep.rows);
}

// Classic DTW with per-frame Euclidean local cost and unit steps
// {(1,0),(0,1),(1,1)}, normalized by the summed lengths.
inline double dtw_metric(const Mat& a, const Mat& b) {
    if (a.rows == 0 || b.rows == 0) throw DataError("dtw_metric: empty sequence");
    if (a.cols != b.cols) throw ShapeError("dtw_metric: dimension mismatch");
    const int n = a.rows, m = b.rows;
    auto local = [&](int i, int j) {
        double d2 = 0.0;
        for (int c = 0; c < a.cols; ++c) {
            const double d = a(i, c) - b(j, c);
            d2 += d * d;
        }
        return std::sqrt(d2);
    };
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> prev(std::size_t(m) + 1, inf), cur(std::size_t(m) + 1, inf);
    prev[0] = 0.0;
    for (int i = 1; i <= n; ++i) {
        cur[0] = inf;
        for (int j = 1; j <= m; ++j) {
            const double best = std::min(prev[std::size_t(j)],
                                         std::min(cur[std::size_t(j) - 1], prev[std::size_t(j) - 1]));
            cur[std::size_t(j)] = local(i - 1, j - 1) + best;
        }
        std::swap(prev, cur);
    }
    return prev[std::size_t(m)] / double(n + m);
}

// Linear scaling of the joint value range onto [1, 20].
struct ScaledSeries {
    std::vector<double> reference_values;
    std::vector<double> patient_values;
};

inline ScaledSeries scale_to_range(const std::vector<double>& x, const std::vector<double>& y) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : x) { lo = std::min(lo, v); hi = std::max(hi, v); }
    for (double v : y) { lo = std::min(lo, v); hi = std::max(hi, v); }
    if (x.empty() && y.empty()) throw DataError("scale_to_range: no values");
    if (!(hi > lo)) throw NumericalError("scale_to_range: degenerate range (max == min)");
    auto map = [&](double v) { return 19.0 * (v - lo) / (hi - lo) + 1.0; };
    ScaledSeries out;
    out.reference_values.reserve(x.size());
    out.patient_values.reserve(y.size());
    for (double v : x) out.reference_values.push_back(map(v));
    for (double v : y) out.patient_values.push_back(map(v));
    return out;
}

// Mean pairwise (x - y) / (x + y) over all cross pairs; in [-1, 1] for
// positive inputs.
inline double separation_degree(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.empty() || y.empty()) throw DataError("separation_degree: empty sequence");
    for (double v : x)
        if (!(v > 0.0)) throw DataError("separation_degree: values must be strictly positive");
    for (double v : y)
        if (!(v > 0.0)) throw DataError("separation_degree: values must be strictly positive");
    double s = 0.0;
    for (double xv : x)
        for (double yv : y) s += (xv - yv) / (xv + yv);
    return s / (double(x.size()) * double(y.size()));
}

}  // namespace rehab
