#pragma once

// Logistic-style mapping of performance-metric values onto movement quality
// scores in (0, 1). Reference scores depend on the reference distribution
// alone; patient scores add a scaled correction for the deviation from the
// paired reference value, keeping the map strictly monotone decreasing.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "rehab/common.hpp"

namespace rehab {

struct ScoringParams {
    double alpha1 = 3.2;
    double alpha2 = 10.0;
    double mu = 0.0;     // mean of |x_k|
    double delta = 0.0;  // population standard deviation of |x_k|

    double scale() const { return mu + 3.0 * delta; }

    // mu and delta always come from the reference metric values
    static ScoringParams from_reference(const std::vector<double>& x, double alpha1 = 3.2,
                                        double alpha2 = 10.0) {
        if (x.empty()) throw DataError("scoring: empty reference metric series");
        ScoringParams p;
        p.alpha1 = alpha1;
        p.alpha2 = alpha2;
        for (double v : x) p.mu += std::abs(v);
        p.mu /= double(x.size());
        double var = 0.0;
        for (double v : x) {
            const double d = std::abs(v) - p.mu;
            var += d * d;
        }
        p.delta = std::sqrt(var / double(x.size()));
        if (p.alpha2 == 0.0) throw ConfigError("scoring: alpha2 must be nonzero");
        if (!(p.scale() > 0.0))
            throw NumericalError("scoring: degenerate scale, mu + 3*delta is zero");
        return p;
    }
};

inline double score_reference_value(double xk, const ScoringParams& p) {
    return 1.0 / (1.0 + std::exp(xk / p.scale() - p.alpha1));
}

inline double score_patient_value(double xk, double yk, const ScoringParams& p) {
    return 1.0 / (1.0 + std::exp(xk / p.scale() - p.alpha1 + (yk - xk) / (p.alpha2 * p.scale())));
}

inline std::vector<double> score_reference(const std::vector<double>& x, const ScoringParams& p) {
    std::vector<double> out;
    out.reserve(x.size());
    for (double v : x) out.push_back(score_reference_value(v, p));
    return out;
}

// Patient values are paired with reference values at the same rank: both
// series are sorted and matched by index, and scores are returned in the
// original order of y. When lengths differ, every y pairs with the
// reference mean.
inline std::vector<double> score_patient(const std::vector<double>& x, const std::vector<double>& y,
                                         const ScoringParams& p) {
    if (y.empty()) throw DataError("score_patient: empty patient metric series");
    if (x.empty()) throw DataError("score_patient: empty reference metric series");
    std::vector<double> out(y.size());
    if (x.size() == y.size()) {
        std::vector<double> xs = x;
        std::sort(xs.begin(), xs.end());
        std::vector<std::size_t> order(y.size());
        std::iota(order.begin(), order.end(), std::size_t(0));
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return y[a] < y[b]; });
        for (std::size_t k = 0; k < order.size(); ++k)
            out[order[k]] = score_patient_value(xs[k], y[order[k]], p);
    } else {
        const double x_mean = std::accumulate(x.begin(), x.end(), 0.0) / double(x.size());
        for (std::size_t k = 0; k < y.size(); ++k) out[k] = score_patient_value(x_mean, y[k], p);
    }
    return out;
}

}  // namespace rehab
