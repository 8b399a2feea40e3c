#pragma once

// Minimal network engine used by the assessment model and the sequence
// autoencoder. Models are static graphs of nodes over T x C sequence
// matrices; forward runs in construction order, backward in reverse with
// gradient accumulation, so branching and concatenation topologies work
// without special cases. Everything is double precision so gradients can be
// verified against central finite differences.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "rehab/common.hpp"
#include "rehab/linalg.hpp"

namespace rehab::nn {

enum class Act { linear, relu, tanh };

inline double activate(Act a, double v) {
    switch (a) {
        case Act::relu: return v > 0.0 ? v : 0.0;
        case Act::tanh: return std::tanh(v);
        default: return v;
    }
}

inline double activate_grad(Act a, double pre, double post) {
    switch (a) {
        case Act::relu: return pre > 0.0 ? 1.0 : 0.0;
        case Act::tanh: return 1.0 - post * post;
        default: return 1.0;
    }
}

struct Param {
    std::string name;
    Mat value;
    Mat grad;

    Param(std::string n, int r, int c) : name(std::move(n)), value(r, c), grad(r, c) {}
    std::size_t count() const { return value.a.size(); }
};

class Graph;

class Node {
public:
    std::string name;
    std::vector<int> in;
    Mat out;
    Mat gout;  // dL/dout, accumulated by consumers during backward

    virtual ~Node() = default;
    virtual void forward(Graph& g) = 0;
    virtual void backward(Graph& g) = 0;
    virtual std::vector<Param*> params() { return {}; }
};

class Graph {
public:
    std::vector<std::unique_ptr<Node>> nodes;
    int input_id = -1;
    int output_id = -1;
    bool training = false;
    Rng rng{0};  // dropout masks during training

    int add(std::unique_ptr<Node> n) {
        nodes.push_back(std::move(n));
        return int(nodes.size()) - 1;
    }

    Node& at(int id) { return *nodes[std::size_t(id)]; }
    const Mat& value(int id) const { return nodes[std::size_t(id)]->out; }

    const Mat& forward(const Mat& x);
    void backward(const Mat& grad_out);

    std::vector<Param*> params() {
        std::vector<Param*> out;
        for (auto& n : nodes)
            for (Param* p : n->params()) out.push_back(p);
        return out;
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (Param* p : params()) n += p->count();
        return n;
    }

    void zero_grad() {
        for (Param* p : params()) p->grad.fill(0.0);
    }

    std::vector<Mat> snapshot() {
        std::vector<Mat> s;
        for (Param* p : params()) s.push_back(p->value);
        return s;
    }

    void restore(const std::vector<Mat>& s) {
        auto ps = params();
        if (s.size() != ps.size()) throw ShapeError("graph restore: parameter list mismatch");
        for (std::size_t i = 0; i < ps.size(); ++i) {
            if (!ps[i]->value.same_shape(s[i])) throw ShapeError("graph restore: shape mismatch");
            ps[i]->value = s[i];
        }
    }
};

// ---------------------------------------------------------------------------
// Nodes
// ---------------------------------------------------------------------------

class Input : public Node {
public:
    Input() { name = "input"; }
    void forward(Graph&) override {}
    void backward(Graph&) override {}
};

class SliceCols : public Node {
public:
    std::vector<int> cols;

    SliceCols(int src, std::vector<int> c) : cols(std::move(c)) {
        name = "slice";
        in = {src};
    }

    void forward(Graph& g) override {
        const Mat& x = g.value(in[0]);
        out = Mat(x.rows, int(cols.size()));
        for (int t = 0; t < x.rows; ++t)
            for (std::size_t c = 0; c < cols.size(); ++c) out(t, int(c)) = x(t, cols[c]);
    }

    void backward(Graph& g) override {
        Mat& gin = g.at(in[0]).gout;
        for (int t = 0; t < out.rows; ++t)
            for (std::size_t c = 0; c < cols.size(); ++c) gin(t, cols[c]) += gout(t, int(c));
    }
};

// Temporal decimation: keep every step-th frame.
class Subsample : public Node {
public:
    int step;

    Subsample(int src, int s) : step(s) {
        name = "subsample" + std::to_string(s);
        in = {src};
    }

    void forward(Graph& g) override {
        const Mat& x = g.value(in[0]);
        const int t_out = (x.rows - 1) / step + 1;
        out = Mat(t_out, x.cols);
        for (int t = 0; t < t_out; ++t)
            for (int c = 0; c < x.cols; ++c) out(t, c) = x(t * step, c);
    }

    void backward(Graph& g) override {
        Mat& gin = g.at(in[0]).gout;
        for (int t = 0; t < out.rows; ++t)
            for (int c = 0; c < out.cols; ++c) gin(t * step, c) += gout(t, c);
    }
};

// Multi-branch 1-D convolution over time. Each branch has its own filter
// length; branch outputs are concatenated along the feature axis. Zero
// padding of k-1 keeps t_out = ceil(t_in / stride) for every branch, so the
// concatenation is always aligned.
class Conv1D : public Node {
public:
    int in_ch;
    int branch_ch;
    int stride;
    std::vector<int> taps;
    Act act;
    std::vector<Param> w;  // per branch: (taps*in_ch) x branch_ch
    std::vector<Param> b;  // per branch: 1 x branch_ch
    Mat pre;

    Conv1D(int src, int in_channels, std::vector<int> filter_taps, int branch_channels, int stride_,
           Act act_, const std::string& label, Rng& rng)
        : in_ch(in_channels), branch_ch(branch_channels), stride(stride_), taps(std::move(filter_taps)),
          act(act_) {
        name = label;
        in = {src};
        for (std::size_t bi = 0; bi < taps.size(); ++bi) {
            const int k = taps[bi];
            w.emplace_back(label + ".w" + std::to_string(k), k * in_ch, branch_ch);
            b.emplace_back(label + ".b" + std::to_string(k), 1, branch_ch);
            const double limit = std::sqrt(6.0 / double(k * in_ch + k * branch_ch));
            for (double& v : w.back().value.a) v = rng.uniform(-limit, limit);
        }
    }

    int out_channels() const { return int(taps.size()) * branch_ch; }

    void forward(Graph& g) override {
        const Mat& x = g.value(in[0]);
        const int t_out = (x.rows - 1) / stride + 1;
        pre = Mat(t_out, out_channels());
        for (std::size_t bi = 0; bi < taps.size(); ++bi) {
            const int k = taps[bi];
            const int left = (k - 1) / 2;
            const int off = int(bi) * branch_ch;
            const Mat& wb = w[bi].value;
            const Mat& bb = b[bi].value;
            for (int t = 0; t < t_out; ++t) {
                double* dst = pre.row(t) + off;
                for (int c = 0; c < branch_ch; ++c) dst[c] = bb(0, c);
                for (int j = 0; j < k; ++j) {
                    const int ti = t * stride + j - left;
                    if (ti < 0 || ti >= x.rows) continue;
                    const double* xr = x.row(ti);
                    for (int ic = 0; ic < in_ch; ++ic) {
                        const double xv = xr[ic];
                        if (xv == 0.0) continue;
                        axpy(xv, wb.row(j * in_ch + ic), dst, branch_ch);
                    }
                }
            }
        }
        out = pre;
        if (act != Act::linear)
            for (double& v : out.a) v = activate(act, v);
    }

    void backward(Graph& g) override {
        const Mat& x = g.value(in[0]);
        Mat& gin = g.at(in[0]).gout;
        Mat dpre = gout;
        if (act != Act::linear)
            for (std::size_t i = 0; i < dpre.a.size(); ++i)
                dpre.a[i] *= activate_grad(act, pre.a[i], out.a[i]);
        for (std::size_t bi = 0; bi < taps.size(); ++bi) {
            const int k = taps[bi];
            const int left = (k - 1) / 2;
            const int off = int(bi) * branch_ch;
            Mat& dw = w[bi].grad;
            Mat& db = b[bi].grad;
            const Mat& wb = w[bi].value;
            for (int t = 0; t < dpre.rows; ++t) {
                const double* gr = dpre.row(t) + off;
                axpy(1.0, gr, db.row(0), branch_ch);
                for (int j = 0; j < k; ++j) {
                    const int ti = t * stride + j - left;
                    if (ti < 0 || ti >= x.rows) continue;
                    const double* xr = x.row(ti);
                    double* gi = gin.row(ti);
                    for (int ic = 0; ic < in_ch; ++ic) {
                        if (xr[ic] != 0.0) axpy(xr[ic], gr, dw.row(j * in_ch + ic), branch_ch);
                        gi[ic] += dot(wb.row(j * in_ch + ic), gr, branch_ch);
                    }
                }
            }
        }
    }

    std::vector<Param*> params() override {
        std::vector<Param*> out;
        for (auto& p : w) out.push_back(&p);
        for (auto& p : b) out.push_back(&p);
        return out;
    }
};

// Inverted dropout; identity when the graph is in evaluation mode.
class Dropout : public Node {
public:
    double rate;
    Mat mask;

    Dropout(int src, double rate_) : rate(rate_) {
        name = "dropout";
        in = {src};
    }

    void forward(Graph& g) override {
        const Mat& x = g.value(in[0]);
        out = x;
        if (!g.training || rate <= 0.0) {
            mask = Mat();
            return;
        }
        mask = Mat(x.rows, x.cols);
        const double keep = 1.0 - rate;
        for (std::size_t i = 0; i < mask.a.size(); ++i)
            mask.a[i] = g.rng.uniform() < keep ? 1.0 / keep : 0.0;
        for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] *= mask.a[i];
    }

    void backward(Graph& g) override {
        Mat& gin = g.at(in[0]).gout;
        if (mask.a.empty()) {
            for (std::size_t i = 0; i < gout.a.size(); ++i) gin.a[i] += gout.a[i];
        } else {
            for (std::size_t i = 0; i < gout.a.size(); ++i) gin.a[i] += gout.a[i] * mask.a[i];
        }
    }
};

// Feature-axis concatenation of sequences with equal temporal length.
class Concat : public Node {
public:
    explicit Concat(std::vector<int> srcs) {
        name = "concat";
        in = std::move(srcs);
    }

    void forward(Graph& g) override {
        int t = g.value(in[0]).rows, c_total = 0;
        for (int src : in) {
            const Mat& x = g.value(src);
            if (x.rows != t) throw ShapeError(name + ": temporal lengths differ");
            c_total += x.cols;
        }
        out = Mat(t, c_total);
        int off = 0;
        for (int src : in) {
            const Mat& x = g.value(src);
            for (int r = 0; r < t; ++r)
                for (int c = 0; c < x.cols; ++c) out(r, off + c) = x(r, c);
            off += x.cols;
        }
    }

    void backward(Graph& g) override {
        int off = 0;
        for (int src : in) {
            Mat& gin = g.at(src).gout;
            for (int r = 0; r < out.rows; ++r)
                for (int c = 0; c < gin.cols; ++c) gin(r, c) += gout(r, off + c);
            off += gin.cols;
        }
    }
};

// LSTM over the time axis. Gates are sigmoid, candidate and output squash
// tanh; forget-gate bias starts at one. Either returns the full hidden
// sequence or only the last state.
class Lstm : public Node {
public:
    int in_ch;
    int units;
    bool return_sequences;
    Param w;  // in_ch x 4U, gate order i f g o
    Param u;  // units x 4U
    Param b;  // 1 x 4U
    Mat gates, cs, tanh_cs, hs;

    Lstm(int src, int in_channels, int units_, bool return_seq, const std::string& label, Rng& rng)
        : in_ch(in_channels), units(units_), return_sequences(return_seq),
          w(label + ".w", in_channels, 4 * units_), u(label + ".u", units_, 4 * units_),
          b(label + ".b", 1, 4 * units_) {
        name = label;
        in = {src};
        const double lw = std::sqrt(6.0 / double(in_ch + units));
        for (double& v : w.value.a) v = rng.uniform(-lw, lw);
        const double lu = std::sqrt(6.0 / double(units + units));
        for (double& v : u.value.a) v = rng.uniform(-lu, lu);
        for (int k = 0; k < units; ++k) b.value(0, units + k) = 1.0;  // forget gate
    }

    static double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

    void forward(Graph& g) override {
        const Mat& x = g.value(in[0]);
        const int t_len = x.rows;
        gates = Mat(t_len, 4 * units);
        cs = Mat(t_len, units);
        tanh_cs = Mat(t_len, units);
        hs = Mat(t_len, units);
        std::vector<double> z(static_cast<std::size_t>(4 * units));
        for (int t = 0; t < t_len; ++t) {
            for (int k = 0; k < 4 * units; ++k) z[std::size_t(k)] = b.value(0, k);
            const double* xr = x.row(t);
            for (int ic = 0; ic < in_ch; ++ic)
                if (xr[ic] != 0.0) axpy(xr[ic], w.value.row(ic), z.data(), 4 * units);
            if (t > 0) {
                const double* hp = hs.row(t - 1);
                for (int k = 0; k < units; ++k)
                    if (hp[k] != 0.0) axpy(hp[k], u.value.row(k), z.data(), 4 * units);
            }
            double* gt = gates.row(t);
            for (int k = 0; k < units; ++k) {
                const double ig = sigmoid(z[std::size_t(k)]);
                const double fg = sigmoid(z[std::size_t(units + k)]);
                const double cand = std::tanh(z[std::size_t(2 * units + k)]);
                const double og = sigmoid(z[std::size_t(3 * units + k)]);
                gt[k] = ig;
                gt[units + k] = fg;
                gt[2 * units + k] = cand;
                gt[3 * units + k] = og;
                const double c_prev = t > 0 ? cs(t - 1, k) : 0.0;
                const double c = fg * c_prev + ig * cand;
                cs(t, k) = c;
                const double tc = std::tanh(c);
                tanh_cs(t, k) = tc;
                hs(t, k) = og * tc;
            }
        }
        if (return_sequences) {
            out = hs;
        } else {
            out = Mat(1, units);
            if (t_len > 0)
                for (int k = 0; k < units; ++k) out(0, k) = hs(t_len - 1, k);
        }
    }

    void backward(Graph& g) override {
        const Mat& x = g.value(in[0]);
        Mat& gin = g.at(in[0]).gout;
        const int t_len = x.rows;
        std::vector<double> dh(std::size_t(units), 0.0), dc(std::size_t(units), 0.0);
        std::vector<double> dz(static_cast<std::size_t>(4 * units));
        for (int t = t_len - 1; t >= 0; --t) {
            for (int k = 0; k < units; ++k) {
                double dh_t = dh[std::size_t(k)];
                if (return_sequences)
                    dh_t += gout(t, k);
                else if (t == t_len - 1)
                    dh_t += gout(0, k);
                const double ig = gates(t, k);
                const double fg = gates(t, units + k);
                const double cand = gates(t, 2 * units + k);
                const double og = gates(t, 3 * units + k);
                const double tc = tanh_cs(t, k);
                const double c_prev = t > 0 ? cs(t - 1, k) : 0.0;

                const double d_og = dh_t * tc;
                double dct = dc[std::size_t(k)] + dh_t * og * (1.0 - tc * tc);
                const double d_ig = dct * cand;
                const double d_fg = dct * c_prev;
                const double d_cand = dct * ig;
                dc[std::size_t(k)] = dct * fg;

                dz[std::size_t(k)] = d_ig * ig * (1.0 - ig);
                dz[std::size_t(units + k)] = d_fg * fg * (1.0 - fg);
                dz[std::size_t(2 * units + k)] = d_cand * (1.0 - cand * cand);
                dz[std::size_t(3 * units + k)] = d_og * og * (1.0 - og);
            }
            const double* xr = x.row(t);
            double* gx = gin.row(t);
            for (int ic = 0; ic < in_ch; ++ic) {
                if (xr[ic] != 0.0) axpy(xr[ic], dz.data(), w.grad.row(ic), 4 * units);
                gx[ic] += dot(w.value.row(ic), dz.data(), 4 * units);
            }
            axpy(1.0, dz.data(), b.grad.row(0), 4 * units);
            if (t > 0) {
                const double* hp = hs.row(t - 1);
                for (int k = 0; k < units; ++k) {
                    if (hp[k] != 0.0) axpy(hp[k], dz.data(), u.grad.row(k), 4 * units);
                    dh[std::size_t(k)] = dot(u.value.row(k), dz.data(), 4 * units);
                }
            }
        }
    }

    std::vector<Param*> params() override { return {&w, &u, &b}; }
};

// Time-distributed affine map with optional activation.
class Dense : public Node {
public:
    int in_ch;
    int units;
    Act act;
    Param w;  // in_ch x units
    Param b;  // 1 x units
    Mat pre;

    Dense(int src, int in_channels, int units_, Act act_, const std::string& label, Rng& rng)
        : in_ch(in_channels), units(units_), act(act_), w(label + ".w", in_channels, units_),
          b(label + ".b", 1, units_) {
        name = label;
        in = {src};
        const double limit = std::sqrt(6.0 / double(in_ch + units));
        for (double& v : w.value.a) v = rng.uniform(-limit, limit);
    }

    void forward(Graph& g) override {
        const Mat& x = g.value(in[0]);
        pre = Mat(x.rows, units);
        for (int t = 0; t < x.rows; ++t) {
            double* dst = pre.row(t);
            for (int k = 0; k < units; ++k) dst[k] = b.value(0, k);
            const double* xr = x.row(t);
            for (int ic = 0; ic < in_ch; ++ic)
                if (xr[ic] != 0.0) axpy(xr[ic], w.value.row(ic), dst, units);
        }
        out = pre;
        if (act != Act::linear)
            for (double& v : out.a) v = activate(act, v);
    }

    void backward(Graph& g) override {
        const Mat& x = g.value(in[0]);
        Mat& gin = g.at(in[0]).gout;
        Mat dpre = gout;
        if (act != Act::linear)
            for (std::size_t i = 0; i < dpre.a.size(); ++i)
                dpre.a[i] *= activate_grad(act, pre.a[i], out.a[i]);
        for (int t = 0; t < x.rows; ++t) {
            const double* gr = dpre.row(t);
            const double* xr = x.row(t);
            double* gx = gin.row(t);
            axpy(1.0, gr, b.grad.row(0), units);
            for (int ic = 0; ic < in_ch; ++ic) {
                if (xr[ic] != 0.0) axpy(xr[ic], gr, w.grad.row(ic), units);
                gx[ic] += dot(w.value.row(ic), gr, units);
            }
        }
    }

    std::vector<Param*> params() override { return {&w, &b}; }
};

// Mean over the time axis: T x C -> 1 x C.
class MeanPoolTime : public Node {
public:
    explicit MeanPoolTime(int src) {
        name = "meanpool";
        in = {src};
    }

    void forward(Graph& g) override {
        const Mat& x = g.value(in[0]);
        out = Mat(1, x.cols);
        for (int t = 0; t < x.rows; ++t)
            for (int c = 0; c < x.cols; ++c) out(0, c) += x(t, c);
        for (double& v : out.a) v /= double(x.rows);
    }

    void backward(Graph& g) override {
        Mat& gin = g.at(in[0]).gout;
        const double k = 1.0 / double(gin.rows);
        for (int t = 0; t < gin.rows; ++t)
            for (int c = 0; c < gin.cols; ++c) gin(t, c) += k * gout(0, c);
    }
};

// T x C -> 1 x (T*C), row-major over time.
class Flatten : public Node {
public:
    explicit Flatten(int src) {
        name = "flatten";
        in = {src};
    }

    void forward(Graph& g) override {
        const Mat& x = g.value(in[0]);
        out = Mat(1, x.rows * x.cols);
        out.a = x.a;
    }

    void backward(Graph& g) override {
        Mat& gin = g.at(in[0]).gout;
        for (std::size_t i = 0; i < gout.a.size(); ++i) gin.a[i] += gout.a[i];
    }
};

// ---------------------------------------------------------------------------
// Graph driver
// ---------------------------------------------------------------------------

inline const Mat& Graph::forward(const Mat& x) {
    if (input_id < 0 || output_id < 0) throw ConfigError("graph: input/output not set");
    at(input_id).out = x;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        Node& n = *nodes[i];
        if (int(i) != input_id) n.forward(*this);
        if (!n.out.all_finite())
            throw NumericalError("non-finite activation in layer '" + n.name + "'");
    }
    return at(output_id).out;
}

inline void Graph::backward(const Mat& grad_out) {
    for (auto& n : nodes) {
        n->gout = Mat(n->out.rows, n->out.cols);
    }
    at(output_id).gout = grad_out;
    for (std::size_t i = nodes.size(); i-- > 0;) {
        if (int(i) == input_id) continue;
        nodes[i]->backward(*this);
    }
}

// ---------------------------------------------------------------------------
// Adam optimizer with bias correction.
// ---------------------------------------------------------------------------
class Adam {
public:
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit Adam(double lr_ = 1e-3) : lr(lr_) {}

    void step(const std::vector<Param*>& params) {
        if (m_.empty()) {
            for (Param* p : params) {
                m_.emplace_back(p->value.rows, p->value.cols);
                v_.emplace_back(p->value.rows, p->value.cols);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, double(t_));
        const double bc2 = 1.0 - std::pow(beta2, double(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Param& p = *params[i];
            for (std::size_t j = 0; j < p.value.a.size(); ++j) {
                const double g = p.grad.a[j];
                m_[i].a[j] = beta1 * m_[i].a[j] + (1.0 - beta1) * g;
                v_[i].a[j] = beta2 * v_[i].a[j] + (1.0 - beta2) * g * g;
                const double mhat = m_[i].a[j] / bc1;
                const double vhat = v_[i].a[j] / bc2;
                p.value.a[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    void reset() {
        m_.clear();
        v_.clear();
        t_ = 0;
    }

private:
    std::vector<Mat> m_, v_;
    long t_ = 0;
};

}  // namespace rehab::nn
