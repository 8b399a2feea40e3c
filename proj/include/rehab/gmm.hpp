#pragma once

// Gaussian mixture model fitted with expectation maximization. The mixture
// log-likelihood of a reduced repetition is the model-based performance
// metric of the toolkit.

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "rehab/common.hpp"
#include "rehab/linalg.hpp"

namespace rehab {

struct GmmModel {
    std::vector<double> weights;      // pi_c, sum to 1
    Mat means;                        // C x M
    std::vector<Mat> covariances;     // C of M x M, eigenvalues >= eps_cov
    double eps_cov = 1e-6;

    // derived quantities, rebuilt by finalize()
    std::vector<Mat> chol;
    std::vector<double> log_norm;     // -0.5 (M log 2pi + log det)

    int components() const { return int(weights.size()); }
    int dim() const { return means.cols; }

    void finalize() {
        const int c_count = components();
        chol.resize(std::size_t(c_count));
        log_norm.resize(std::size_t(c_count));
        double wsum = 0.0;
        for (int c = 0; c < c_count; ++c) {
            if (weights[std::size_t(c)] < 0.0) throw NumericalError("gmm: negative component weight");
            wsum += weights[std::size_t(c)];
            if (!cholesky(covariances[std::size_t(c)], chol[std::size_t(c)]))
                throw NumericalError("gmm: covariance of component " + std::to_string(c) +
                                     " is not positive definite");
            log_norm[std::size_t(c)] =
                -0.5 * (double(dim()) * std::log(2.0 * 3.14159265358979323846) +
                        log_det_from_cholesky(chol[std::size_t(c)]));
        }
        if (std::abs(wsum - 1.0) > 1e-9) throw NumericalError("gmm: weights do not sum to 1");
    }

    // log p(x) via log-sum-exp over components
    double log_density(const double* x) const {
        const int m = dim();
        std::vector<double> d(static_cast<std::size_t>(m));
        double best = -std::numeric_limits<double>::infinity();
        std::vector<double> terms(static_cast<std::size_t>(components()));
        for (int c = 0; c < components(); ++c) {
            for (int k = 0; k < m; ++k) d[std::size_t(k)] = x[k] - means(c, k);
            const double q = quad_form_inv(chol[std::size_t(c)], d.data());
            const double t = std::log(weights[std::size_t(c)]) + log_norm[std::size_t(c)] - 0.5 * q;
            terms[std::size_t(c)] = t;
            if (t > best) best = t;
        }
        double s = 0.0;
        for (double t : terms) s += std::exp(t - best);
        return best + std::log(s);
    }
};

struct GmmFitOptions {
    int max_iters = 200;
    double tol = 1e-6;       // stop when mean log-likelihood improves by less
    double eps_cov = 1e-6;   // eigenvalue floor on covariances
    int kmeans_iters = 10;
};

struct GmmFitResult {
    GmmModel model;
    std::vector<double> ll_curve;  // mean log-likelihood per EM iteration
    int iterations = 0;
    bool converged = false;
};

namespace detail {

inline Mat floor_eigenvalues(const Mat& sym, double floor) {
    auto eig = jacobi_eigen(sym);
    bool ok = true;
    for (double v : eig.values)
        if (v < floor) ok = false;
    if (ok) return sym;
    const int n = sym.rows;
    Mat out(n, n);
    for (int i = 0; i < n; ++i) {
        const double lam = std::max(eig.values[std::size_t(i)], floor);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) out(r, c) += lam * eig.vectors(i, r) * eig.vectors(i, c);
    }
    return out;
}

inline std::vector<int> kmeans_assign(const Mat& x, const Mat& centers) {
    std::vector<int> assign(static_cast<std::size_t>(x.rows));
    for (int n = 0; n < x.rows; ++n) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int c = 0; c < centers.rows; ++c) {
            double d2 = 0.0;
            for (int k = 0; k < x.cols; ++k) {
                const double d = x(n, k) - centers(c, k);
                d2 += d * d;
            }
            if (d2 < best) {
                best = d2;
                arg = c;
            }
        }
        assign[std::size_t(n)] = arg;
    }
    return assign;
}

// k-means++ seeding followed by a few Lloyd iterations
inline Mat kmeans_init(const Mat& x, int c_count, Rng& rng, int iters) {
    Mat centers(c_count, x.cols);
    const int first = int(rng.below(std::uint64_t(x.rows)));
    for (int k = 0; k < x.cols; ++k) centers(0, k) = x(first, k);
    std::vector<double> mind2(static_cast<std::size_t>(x.rows), std::numeric_limits<double>::infinity());
    for (int c = 1; c < c_count; ++c) {
        double total = 0.0;
        for (int n = 0; n < x.rows; ++n) {
            double d2 = 0.0;
            for (int k = 0; k < x.cols; ++k) {
                const double d = x(n, k) - centers(c - 1, k);
                d2 += d * d;
            }
            mind2[std::size_t(n)] = std::min(mind2[std::size_t(n)], d2);
            total += mind2[std::size_t(n)];
        }
        int pick = 0;
        if (total > 0.0) {
            double target = rng.uniform() * total, acc = 0.0;
            for (int n = 0; n < x.rows; ++n) {
                acc += mind2[std::size_t(n)];
                if (acc >= target) {
                    pick = n;
                    break;
                }
            }
        } else {
            pick = int(rng.below(std::uint64_t(x.rows)));
        }
        for (int k = 0; k < x.cols; ++k) centers(c, k) = x(pick, k);
    }
    for (int it = 0; it < iters; ++it) {
        const auto assign = kmeans_assign(x, centers);
        Mat sums(c_count, x.cols);
        std::vector<int> counts(std::size_t(c_count), 0);
        for (int n = 0; n < x.rows; ++n) {
            ++counts[std::size_t(assign[std::size_t(n)])];
            axpy(1.0, x.row(n), sums.row(assign[std::size_t(n)]), x.cols);
        }
        for (int c = 0; c < c_count; ++c)
            if (counts[std::size_t(c)] > 0)
                for (int k = 0; k < x.cols; ++k) centers(c, k) = sums(c, k) / double(counts[std::size_t(c)]);
    }
    return centers;
}

}  // namespace detail

// EM fit of a C-component mixture on pooled frame vectors (rows of x).
inline GmmFitResult fit_gmm(const Mat& x, int c_count, std::uint64_t seed,
                            const GmmFitOptions& opts = {}) {
    if (c_count < 1) throw ConfigError("fit_gmm: component count must be >= 1");
    if (x.rows < c_count)
        throw DataError("fit_gmm: " + std::to_string(x.rows) + " frames for " + std::to_string(c_count) +
                        " components");
    const int n = x.rows, m = x.cols;
    Rng rng(seed);

    // initialization from k-means clusters
    GmmModel g;
    g.eps_cov = opts.eps_cov;
    g.means = detail::kmeans_init(x, c_count, rng, opts.kmeans_iters);
    g.weights.assign(std::size_t(c_count), 1.0 / double(c_count));
    g.covariances.assign(std::size_t(c_count), Mat(m, m));
    {
        const auto assign = detail::kmeans_assign(x, g.means);
        std::vector<int> counts(std::size_t(c_count), 0);
        for (int i = 0; i < n; ++i) ++counts[std::size_t(assign[std::size_t(i)])];
        for (int c = 0; c < c_count; ++c) {
            Mat cov(m, m);
            int cnt = counts[std::size_t(c)];
            if (cnt > 0) {
                for (int i = 0; i < n; ++i) {
                    if (assign[std::size_t(i)] != c) continue;
                    for (int r = 0; r < m; ++r)
                        for (int k = 0; k < m; ++k)
                            cov(r, k) += (x(i, r) - g.means(c, r)) * (x(i, k) - g.means(c, k));
                }
                for (double& v : cov.a) v /= double(cnt);
                g.weights[std::size_t(c)] = double(cnt) / double(n);
            }
            g.covariances[std::size_t(c)] = detail::floor_eigenvalues(cov, opts.eps_cov);
        }
        double wsum = 0.0;
        for (double w : g.weights) wsum += w;
        for (double& w : g.weights) w /= wsum;
    }
    g.finalize();

    GmmFitResult res;
    Mat resp(n, c_count);
    std::vector<bool> reinitialized(std::size_t(c_count), false);
    double prev_ll = -std::numeric_limits<double>::infinity();

    for (int it = 0; it < opts.max_iters; ++it) {
        // E step
        double ll = 0.0;
        std::vector<double> d(static_cast<std::size_t>(m));
        for (int i = 0; i < n; ++i) {
            double best = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < c_count; ++c) {
                for (int k = 0; k < m; ++k) d[std::size_t(k)] = x(i, k) - g.means(c, k);
                const double q = quad_form_inv(g.chol[std::size_t(c)], d.data());
                const double t = std::log(g.weights[std::size_t(c)]) + g.log_norm[std::size_t(c)] - 0.5 * q;
                resp(i, c) = t;
                if (t > best) best = t;
            }
            double s = 0.0;
            for (int c = 0; c < c_count; ++c) s += std::exp(resp(i, c) - best);
            const double log_px = best + std::log(s);
            if (!std::isfinite(log_px))
                throw NumericalError("fit_gmm: non-finite likelihood at frame " + std::to_string(i));
            ll += log_px;
            for (int c = 0; c < c_count; ++c) resp(i, c) = std::exp(resp(i, c) - log_px);
        }
        ll /= double(n);
        res.ll_curve.push_back(ll);
        res.iterations = it + 1;
        if (ll - prev_ll < opts.tol && it > 0) {
            res.converged = true;
            break;
        }
        prev_ll = ll;

        // M step
        for (int c = 0; c < c_count; ++c) {
            double nc = 0.0;
            for (int i = 0; i < n; ++i) nc += resp(i, c);
            if (nc / double(n) < 1e-8) {
                if (reinitialized[std::size_t(c)])
                    throw NumericalError("fit_gmm: component " + std::to_string(c) +
                                         " collapsed twice (weight < 1e-8)");
                reinitialized[std::size_t(c)] = true;
                const int pick = int(rng.below(std::uint64_t(n)));
                for (int k = 0; k < m; ++k) g.means(c, k) = x(pick, k);
                const auto mu = column_mean(x);
                g.covariances[std::size_t(c)] = detail::floor_eigenvalues(covariance(x, mu), opts.eps_cov);
                g.weights[std::size_t(c)] = 1.0 / double(n);
                continue;
            }
            g.weights[std::size_t(c)] = nc / double(n);
            for (int k = 0; k < m; ++k) {
                double s = 0.0;
                for (int i = 0; i < n; ++i) s += resp(i, c) * x(i, k);
                g.means(c, k) = s / nc;
            }
            Mat cov(m, m);
            std::vector<double> dv(static_cast<std::size_t>(m));
            for (int i = 0; i < n; ++i) {
                const double r = resp(i, c);
                if (r == 0.0) continue;
                for (int k = 0; k < m; ++k) dv[std::size_t(k)] = x(i, k) - g.means(c, k);
                for (int a = 0; a < m; ++a) axpy(r * dv[std::size_t(a)], dv.data(), cov.row(a), m);
            }
            for (double& v : cov.a) v /= nc;
            g.covariances[std::size_t(c)] = detail::floor_eigenvalues(cov, opts.eps_cov);
        }
        double wsum = 0.0;
        for (double w : g.weights) wsum += w;
        for (double& w : g.weights) w /= wsum;
        g.finalize();
    }

    res.model = std::move(g);
    return res;
}

inline std::string gmm_to_text(const GmmModel& g) {
    std::ostringstream out;
    out << "rehab-gmm v1\n";
    out << "components = " << g.components() << "\n";
    out << "dim = " << g.dim() << "\n";
    out << "eps_cov = " << format_hex_double(g.eps_cov) << "\n";
    out << "weights =";
    for (double w : g.weights) out << ' ' << format_hex_double(w);
    out << '\n';
    for (int c = 0; c < g.components(); ++c) {
        out << "mean" << c << " =";
        for (int k = 0; k < g.dim(); ++k) out << ' ' << format_hex_double(g.means(c, k));
        out << '\n';
        out << "cov" << c << " =";
        for (double v : g.covariances[std::size_t(c)].a) out << ' ' << format_hex_double(v);
        out << '\n';
    }
    return out.str();
}

inline GmmModel gmm_from_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || trim(line) != "rehab-gmm v1")
        throw ParseError("not a gmm file");
    GmmModel g;
    int c_count = 0, dim = 0;
    auto doubles = [](const std::string& s) {
        std::istringstream ss(s);
        std::vector<double> v;
        std::string tok;
        while (ss >> tok) v.push_back(std::strtod(tok.c_str(), nullptr));
        return v;
    };
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ParseError("gmm file: expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        if (key == "components") {
            c_count = std::stoi(val);
        } else if (key == "dim") {
            dim = std::stoi(val);
            g.means = Mat(c_count, dim);
            g.covariances.assign(std::size_t(c_count), Mat(dim, dim));
        } else if (key == "eps_cov") {
            g.eps_cov = std::strtod(val.c_str(), nullptr);
        } else if (key == "weights") {
            g.weights = doubles(val);
        } else if (key.rfind("mean", 0) == 0) {
            const int c = std::stoi(key.substr(4));
            const auto v = doubles(val);
            for (int k = 0; k < dim; ++k) g.means(c, k) = v[std::size_t(k)];
        } else if (key.rfind("cov", 0) == 0) {
            const int c = std::stoi(key.substr(3));
            g.covariances[std::size_t(c)].a = doubles(val);
        } else {
            throw ParseError("gmm file: unknown key '" + key + "'");
        }
    }
    g.finalize();
    return g;
}

// Negative log-likelihood of a reduced repetition (rows = frames) under the
// model. Additivity over frames makes it the per-repetition metric.
inline double gmm_nll(const GmmModel& model, const Mat& rep) {
    if (rep.cols != model.dim())
        throw ShapeError("gmm_nll: frame dimension " + std::to_string(rep.cols) + " != model dimension " +
                         std::to_string(model.dim()));
    double nll = 0.0;
    for (int t = 0; t < rep.rows; ++t) {
        const double lp = model.log_density(rep.row(t));
        if (!std::isfinite(lp))
            throw NumericalError("gmm_nll: non-finite density at frame " + std::to_string(t));
        nll -= lp;
    }
    return nll;
}

}  // namespace rehab
