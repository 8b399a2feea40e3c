#pragma once

// Dimensionality reduction of frame vectors: maximum variance column
// selection, PCA on the pooled reference frames, or a sequence-to-sequence
// LSTM autoencoder whose bottleneck activations form the code. Reducers are
// fitted on reference (correct) data only.

#include <algorithm>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rehab/common.hpp"
#include "rehab/dataset.hpp"
#include "rehab/linalg.hpp"
#include "rehab/nn.hpp"

namespace rehab {

enum class ReducerKind { raw, max_variance, pca, autoencoder };

inline const char* to_string(ReducerKind k) {
    switch (k) {
        case ReducerKind::raw: return "raw";
        case ReducerKind::max_variance: return "max_variance";
        case ReducerKind::pca: return "pca";
        default: return "autoencoder";
    }
}

inline ReducerKind reducer_kind_from_string(const std::string& s) {
    if (s == "raw" || s == "none") return ReducerKind::raw;
    if (s == "mv" || s == "max_variance") return ReducerKind::max_variance;
    if (s == "pca") return ReducerKind::pca;
    if (s == "ae" || s == "autoencoder") return ReducerKind::autoencoder;
    throw ConfigError("unknown reducer: " + s);
}

struct AeTrainConfig {
    std::vector<int> encoder_units = {30, 10};  // code width is appended
    int max_epochs = 300;
    double lr = 1e-3;
    int patience = 20;   // epochs without reconstruction-loss improvement
    int batch_size = 5;
    double val_fraction = 0.0;
};

struct AeTrainTrace {
    std::vector<double> train_curve;
    std::vector<double> val_curve;
    double init_loss = 0.0;
    double final_loss = 0.0;
    int epochs = 0;
};

namespace detail {

inline Mat pool_reference_frames(const ExerciseDataset& ds) {
    ds.require_reference();
    long total = 0;
    for (const auto& r : ds.reference) total += r.frames();
    Mat frames(int(total), ds.dims);
    int row = 0;
    for (const auto& r : ds.reference)
        for (int t = 0; t < r.frames(); ++t, ++row)
            for (int c = 0; c < ds.dims; ++c) frames(row, c) = r.values(t, c);
    return frames;
}

inline long count_distinct_rows(const Mat& m) {
    std::set<std::uint64_t> seen;
    for (int r = 0; r < m.rows; ++r)
        seen.insert(fnv1a64(m.row(r), std::size_t(m.cols) * sizeof(double)));
    return long(seen.size());
}

}  // namespace detail

class Reducer {
public:
    ReducerKind kind = ReducerKind::raw;
    int input_dim = 0;
    int code_dim = 0;

    // max_variance: selected columns, variance-descending, ties to lower index
    std::vector<int> selected;

    // pca
    std::vector<double> mean;
    Mat components;  // code_dim x input_dim, rows orthonormal unless padded
    std::vector<double> explained_variance_ratio;
    std::vector<int> padded_components;  // rank-deficient rows zeroed out

    // autoencoder
    std::vector<int> encoder_units;       // hidden widths before the code layer
    std::vector<double> scale_lo, scale_hi;  // per-dim affine to [-1, 1]
    AeTrainTrace trace;

    Mat encode(const Mat& rep) const {
        if (rep.cols != input_dim)
            throw ShapeError("encode: repetition has " + std::to_string(rep.cols) +
                             " dims, reducer expects " + std::to_string(input_dim));
        switch (kind) {
            case ReducerKind::raw:
                return rep;
            case ReducerKind::max_variance: {
                Mat out(rep.rows, code_dim);
                for (int t = 0; t < rep.rows; ++t)
                    for (int c = 0; c < code_dim; ++c) out(t, c) = rep(t, selected[std::size_t(c)]);
                return out;
            }
            case ReducerKind::pca: {
                Mat out(rep.rows, code_dim);
                for (int t = 0; t < rep.rows; ++t)
                    for (int m = 0; m < code_dim; ++m) {
                        double s = 0.0;
                        for (int c = 0; c < input_dim; ++c)
                            s += (rep(t, c) - mean[std::size_t(c)]) * components(m, c);
                        out(t, m) = s;
                    }
                return out;
            }
            default: {
                ae_graph_.forward(scale_input(rep));
                return ae_graph_.value(code_node_);
            }
        }
    }

    // Maps a repetition through the reducer and back; available for pca (any
    // code) and the autoencoder (full network pass).
    Mat reconstruct(const Mat& rep) const {
        if (kind == ReducerKind::pca) {
            const Mat code = encode(rep);
            Mat out(rep.rows, input_dim);
            for (int t = 0; t < rep.rows; ++t)
                for (int c = 0; c < input_dim; ++c) {
                    double s = mean[std::size_t(c)];
                    for (int m = 0; m < code_dim; ++m) s += code(t, m) * components(m, c);
                    out(t, c) = s;
                }
            return out;
        }
        if (kind == ReducerKind::autoencoder) {
            const Mat& rec = ae_graph_.forward(scale_input(rep));
            return unscale_output(rec);
        }
        throw ConfigError("reconstruct: not defined for this reducer kind");
    }

    Mat scale_input(const Mat& rep) const {
        Mat out(rep.rows, rep.cols);
        for (int t = 0; t < rep.rows; ++t)
            for (int c = 0; c < rep.cols; ++c) {
                const double lo = scale_lo[std::size_t(c)], hi = scale_hi[std::size_t(c)];
                out(t, c) = hi > lo ? 2.0 * (rep(t, c) - lo) / (hi - lo) - 1.0 : 0.0;
            }
        return out;
    }

    Mat unscale_output(const Mat& scaled) const {
        Mat out(scaled.rows, scaled.cols);
        for (int t = 0; t < scaled.rows; ++t)
            for (int c = 0; c < scaled.cols; ++c) {
                const double lo = scale_lo[std::size_t(c)], hi = scale_hi[std::size_t(c)];
                out(t, c) = hi > lo ? lo + 0.5 * (scaled(t, c) + 1.0) * (hi - lo) : lo;
            }
        return out;
    }

    nn::Graph& ae_graph() const { return ae_graph_; }
    int ae_code_node() const { return code_node_; }

    void build_ae_graph(std::uint64_t init_seed) {
        ae_graph_ = nn::Graph();
        ae_graph_.rng = Rng(init_seed);
        Rng init(init_seed);
        const int input = ae_graph_.add(std::make_unique<nn::Input>());
        ae_graph_.input_id = input;
        int prev = input, prev_ch = input_dim, idx = 0;
        auto add_lstm = [&](int units) {
            prev = ae_graph_.add(std::make_unique<nn::Lstm>(prev, prev_ch, units, true,
                                                            "lstm" + std::to_string(idx++), init));
            prev_ch = units;
        };
        for (int u : encoder_units) add_lstm(u);
        add_lstm(code_dim);
        code_node_ = prev;
        for (std::size_t i = encoder_units.size(); i-- > 0;) add_lstm(encoder_units[i]);
        add_lstm(input_dim);
        ae_graph_.output_id = prev;
    }

    void save(const std::filesystem::path& path) const;
    static Reducer load(const std::filesystem::path& path);

private:
    mutable nn::Graph ae_graph_;
    int code_node_ = -1;
};

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

inline Reducer fit_raw(const ExerciseDataset& ds) {
    Reducer r;
    r.kind = ReducerKind::raw;
    r.input_dim = ds.dims;
    r.code_dim = ds.dims;
    return r;
}

// Keeps the code_dim columns with the largest empirical variance over all
// reference frames; ties break toward the lower index.
inline Reducer fit_max_variance(const ExerciseDataset& ds, int code_dim) {
    ds.require_reference();
    if (code_dim < 1 || code_dim > ds.dims)
        throw ConfigError("fit_max_variance: M must be in [1, D]");
    const Mat frames = detail::pool_reference_frames(ds);
    const auto mu = column_mean(frames);
    std::vector<double> var(std::size_t(ds.dims), 0.0);
    for (int t = 0; t < frames.rows; ++t)
        for (int c = 0; c < ds.dims; ++c) {
            const double d = frames(t, c) - mu[std::size_t(c)];
            var[std::size_t(c)] += d * d;
        }
    if (frames.rows > 1)
        for (double& v : var) v /= double(frames.rows - 1);

    std::vector<int> order(static_cast<std::size_t>(ds.dims));
    for (int i = 0; i < ds.dims; ++i) order[std::size_t(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (var[std::size_t(a)] != var[std::size_t(b)]) return var[std::size_t(a)] > var[std::size_t(b)];
        return a < b;
    });

    Reducer r;
    r.kind = ReducerKind::max_variance;
    r.input_dim = ds.dims;
    r.code_dim = code_dim;
    r.selected.assign(order.begin(), order.begin() + code_dim);
    return r;
}

// PCA on the pooled reference frames: center by the reference mean, project
// on the leading eigenvectors of the unbiased covariance. Eigenvector signs
// are fixed so the largest-magnitude entry is positive.
inline Reducer fit_pca(const ExerciseDataset& ds, int code_dim) {
    ds.require_reference();
    if (code_dim < 1 || code_dim > ds.dims) throw ConfigError("fit_pca: M must be in [1, D]");
    const Mat frames = detail::pool_reference_frames(ds);
    if (detail::count_distinct_rows(frames) < code_dim + 1)
        throw DataError("fit_pca: need at least M+1 distinct reference frames");

    Reducer r;
    r.kind = ReducerKind::pca;
    r.input_dim = ds.dims;
    r.code_dim = code_dim;
    r.mean = column_mean(frames);
    const Mat cov = covariance(frames, r.mean);
    const auto eig = jacobi_eigen(cov);

    double total = 0.0;
    for (int i = 0; i < ds.dims; ++i) total += std::max(eig.values[std::size_t(i)], 0.0);
    const double rank_tol = 1e-12 * std::max(1.0, eig.values.empty() ? 0.0 : eig.values[0]);

    r.components = Mat(code_dim, ds.dims);
    for (int m = 0; m < code_dim; ++m) {
        const double lam = eig.values[std::size_t(m)];
        r.explained_variance_ratio.push_back(total > 0.0 ? std::max(lam, 0.0) / total : 0.0);
        if (lam <= rank_tol) {
            r.padded_components.push_back(m);  // below numerical rank, row stays zero
            continue;
        }
        int arg = 0;
        double best = 0.0;
        for (int c = 0; c < ds.dims; ++c) {
            const double mag = std::abs(eig.vectors(m, c));
            if (mag > best) {
                best = mag;
                arg = c;
            }
        }
        const double sign = eig.vectors(m, arg) >= 0.0 ? 1.0 : -1.0;
        for (int c = 0; c < ds.dims; ++c) r.components(m, c) = sign * eig.vectors(m, c);
    }
    return r;
}

// Trains the sequence autoencoder on the reference repetitions by minimizing
// mean squared reconstruction error with Adam, early-stopping on the epoch
// reconstruction loss. Inputs are mapped per dimension to [-1, 1] so the
// tanh-bounded outputs can represent the data range.
inline Reducer fit_autoencoder(const ExerciseDataset& ds, int code_dim, const AeTrainConfig& cfg,
                               std::uint64_t seed) {
    ds.require_reference();
    if (code_dim < 1) throw ConfigError("fit_autoencoder: M must be >= 1");

    Reducer r;
    r.kind = ReducerKind::autoencoder;
    r.input_dim = ds.dims;
    r.code_dim = code_dim;
    r.encoder_units = cfg.encoder_units;
    r.scale_lo.assign(std::size_t(ds.dims), std::numeric_limits<double>::infinity());
    r.scale_hi.assign(std::size_t(ds.dims), -std::numeric_limits<double>::infinity());
    for (const auto& rep : ds.reference)
        for (int t = 0; t < rep.frames(); ++t)
            for (int c = 0; c < ds.dims; ++c) {
                r.scale_lo[std::size_t(c)] = std::min(r.scale_lo[std::size_t(c)], rep.values(t, c));
                r.scale_hi[std::size_t(c)] = std::max(r.scale_hi[std::size_t(c)], rep.values(t, c));
            }
    r.build_ae_graph(seed);

    std::vector<Mat> scaled;
    for (const auto& rep : ds.reference) scaled.push_back(r.scale_input(rep.values));

    // optional held-out slice for the validation curve
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(scaled.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const std::size_t n_val = std::size_t(double(scaled.size()) * cfg.val_fraction);
    std::vector<Mat> train_set, val_set;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_val ? val_set : train_set).push_back(scaled[order[i]]);
    if (train_set.empty()) throw DataError("fit_autoencoder: empty training set");

    nn::Graph& g = r.ae_graph();
    auto mse_of = [&](const std::vector<Mat>& set) {
        g.training = false;
        double total = 0.0;
        for (const auto& x : set) {
            const Mat& rec = g.forward(x);
            double s = 0.0;
            for (std::size_t i = 0; i < x.a.size(); ++i) {
                const double d = rec.a[i] - x.a[i];
                s += d * d;
            }
            total += s / double(x.a.size());
        }
        return total / double(set.size());
    };

    r.trace = AeTrainTrace{};
    r.trace.init_loss = mse_of(train_set);
    double best = std::numeric_limits<double>::infinity();
    int stall = 0;

    nn::Adam opt(cfg.lr);
    const auto params = g.params();
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::vector<std::size_t> idx(train_set.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        rng.shuffle(idx);
        double epoch_loss = 0.0;
        long batches = 0;
        for (std::size_t start = 0; start < idx.size(); start += std::size_t(cfg.batch_size)) {
            const std::size_t end = std::min(idx.size(), start + std::size_t(cfg.batch_size));
            g.zero_grad();
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const Mat& x = train_set[idx[i]];
                g.training = true;
                const Mat& rec = g.forward(x);
                Mat grad(rec.rows, rec.cols);
                const double k = 2.0 / (double(x.a.size()) * double(end - start));
                double s = 0.0;
                for (std::size_t j = 0; j < x.a.size(); ++j) {
                    const double d = rec.a[j] - x.a[j];
                    grad.a[j] = k * d;
                    s += d * d;
                }
                batch_loss += s / double(x.a.size());
                g.backward(grad);
            }
            batch_loss /= double(end - start);
            if (!std::isfinite(batch_loss))
                throw NumericalError("fit_autoencoder: training diverged at epoch " +
                                     std::to_string(epoch) + " (lr=" + format_double(cfg.lr) + ")");
            opt.step(params);
            epoch_loss += batch_loss;
            ++batches;
        }
        epoch_loss /= double(batches);
        r.trace.train_curve.push_back(epoch_loss);
        if (!val_set.empty()) r.trace.val_curve.push_back(mse_of(val_set));
        r.trace.epochs = epoch + 1;

        const double watched = val_set.empty() ? epoch_loss : r.trace.val_curve.back();
        if (watched < best) {
            best = watched;
            stall = 0;
        } else if (++stall >= cfg.patience) {
            break;
        }
    }
    r.trace.final_loss = mse_of(train_set);
    g.training = false;
    return r;
}

struct ReducerSpec {
    ReducerKind kind = ReducerKind::raw;
    int code_dim = 0;  // 0 = kind default (mv/pca: 3, ae: 4, raw: D)
    AeTrainConfig ae;

    std::string label(int dims) const {
        switch (kind) {
            case ReducerKind::raw: return "D=" + std::to_string(dims);
            case ReducerKind::max_variance: return "D=" + std::to_string(effective_dim(dims)) + " (MV)";
            case ReducerKind::pca: return "D=" + std::to_string(effective_dim(dims)) + " (PCA)";
            default: return "D=" + std::to_string(effective_dim(dims)) + " (AE)";
        }
    }

    int effective_dim(int dims) const {
        if (code_dim > 0) return code_dim;
        switch (kind) {
            case ReducerKind::raw: return dims;
            case ReducerKind::autoencoder: return 4;
            default: return 3;
        }
    }
};

inline Reducer fit_reducer(const ExerciseDataset& ds, const ReducerSpec& spec, std::uint64_t seed) {
    const int m = spec.effective_dim(ds.dims);
    switch (spec.kind) {
        case ReducerKind::raw: return fit_raw(ds);
        case ReducerKind::max_variance: return fit_max_variance(ds, m);
        case ReducerKind::pca: return fit_pca(ds, m);
        default: return fit_autoencoder(ds, m, spec.ae, seed);
    }
}

// ---------------------------------------------------------------------------
// Serialization: self-describing text format. Parameters are written as
// hexfloats, so linear reducers round-trip bit-exactly and reloaded
// autoencoders reproduce encodings bit-for-bit.
// ---------------------------------------------------------------------------

inline void Reducer::save(const std::filesystem::path& path) const {
    std::ostringstream out;
    out << "rehab-reducer v1\n";
    out << "kind = " << to_string(kind) << "\n";
    out << "input_dim = " << input_dim << "\n";
    out << "code_dim = " << code_dim << "\n";
    auto write_vec = [&](const std::string& key, const std::vector<double>& v) {
        out << key << " =";
        for (double x : v) out << ' ' << format_hex_double(x);
        out << '\n';
    };
    auto write_ints = [&](const std::string& key, const std::vector<int>& v) {
        out << key << " =";
        for (int x : v) out << ' ' << x;
        out << '\n';
    };
    if (kind == ReducerKind::max_variance) {
        write_ints("selected", selected);
    } else if (kind == ReducerKind::pca) {
        write_vec("mean", mean);
        write_vec("explained_variance_ratio", explained_variance_ratio);
        write_ints("padded", padded_components);
        for (int m = 0; m < code_dim; ++m) {
            std::vector<double> row(components.row(m), components.row(m) + input_dim);
            write_vec("component" + std::to_string(m), row);
        }
    } else if (kind == ReducerKind::autoencoder) {
        write_ints("encoder_units", encoder_units);
        write_vec("scale_lo", scale_lo);
        write_vec("scale_hi", scale_hi);
        nn::Graph& g = ae_graph_;
        for (nn::Param* p : g.params()) {
            out << "param " << p->name << ' ' << p->value.rows << ' ' << p->value.cols << " =";
            for (double x : p->value.a) out << ' ' << format_hex_double(x);
            out << '\n';
        }
    }
    write_text_file(path, out.str());
}

inline Reducer Reducer::load(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || trim(line) != "rehab-reducer v1")
        throw ParseError(path.string() + ": not a reducer file");

    Reducer r;
    std::vector<std::pair<std::string, std::vector<double>>> raw_params;
    auto parse_doubles = [&](const std::string& text) {
        std::istringstream ss(text);
        std::vector<double> v;
        std::string tok;
        while (ss >> tok) v.push_back(std::strtod(tok.c_str(), nullptr));
        return v;
    };
    auto parse_ints = [&](const std::string& text) {
        std::istringstream ss(text);
        std::vector<int> v;
        int x;
        while (ss >> x) v.push_back(x);
        return v;
    };
    std::vector<std::pair<std::string, std::vector<double>>> pca_rows;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t.rfind("param ", 0) == 0) {
            const auto eq = t.find('=');
            std::istringstream hs(t.substr(6, eq - 6));
            std::string pname;
            int pr, pc;
            hs >> pname >> pr >> pc;
            auto vals = parse_doubles(t.substr(eq + 1));
            if (int(vals.size()) != pr * pc) throw ParseError(path.string() + ": bad param block " + pname);
            raw_params.emplace_back(pname, std::move(vals));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ParseError(path.string() + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        if (key == "kind") {
            r.kind = reducer_kind_from_string(val);
        } else if (key == "input_dim") {
            r.input_dim = std::stoi(val);
        } else if (key == "code_dim") {
            r.code_dim = std::stoi(val);
        } else if (key == "selected") {
            r.selected = parse_ints(val);
        } else if (key == "mean") {
            r.mean = parse_doubles(val);
        } else if (key == "explained_variance_ratio") {
            r.explained_variance_ratio = parse_doubles(val);
        } else if (key == "padded") {
            r.padded_components = parse_ints(val);
        } else if (key.rfind("component", 0) == 0) {
            pca_rows.emplace_back(key, parse_doubles(val));
        } else if (key == "encoder_units") {
            r.encoder_units = parse_ints(val);
        } else if (key == "scale_lo") {
            r.scale_lo = parse_doubles(val);
        } else if (key == "scale_hi") {
            r.scale_hi = parse_doubles(val);
        } else {
            throw ParseError(path.string() + ": unknown key '" + key + "'");
        }
    }
    if (r.kind == ReducerKind::pca) {
        r.components = Mat(r.code_dim, r.input_dim);
        for (const auto& [key, vals] : pca_rows) {
            const int m = std::stoi(key.substr(9));
            if (int(vals.size()) != r.input_dim) throw ParseError(path.string() + ": bad component row");
            for (int c = 0; c < r.input_dim; ++c) r.components(m, c) = vals[std::size_t(c)];
        }
    }
    if (r.kind == ReducerKind::autoencoder) {
        r.build_ae_graph(0);
        auto params = r.ae_graph().params();
        if (params.size() != raw_params.size())
            throw ParseError(path.string() + ": parameter count mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i]->name != raw_params[i].first ||
                params[i]->value.a.size() != raw_params[i].second.size())
                throw ParseError(path.string() + ": parameter layout mismatch at " + raw_params[i].first);
            params[i]->value.a = raw_params[i].second;
        }
    }
    return r;
}

}  // namespace rehab
