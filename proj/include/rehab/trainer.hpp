#pragma once

// Supervised-regression harness: trains assessment models against quality
// score targets with Adam on mean squared error, early-stops on validation
// loss with best-weights restoration, and reports the mean absolute
// deviation between targets and predictions over multiple seeded runs.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "rehab/assessnet.hpp"
#include "rehab/common.hpp"
#include "rehab/nn.hpp"

namespace rehab {

struct ScoredRep {
    Mat values;
    double target = 0.0;
    std::string id;
    int subject = 0;
    Correctness label = Correctness::unlabeled;
};

struct TrainConfig {
    int batch_size = 5;
    double learning_rate = 1e-3;
    int max_epochs = 500;
    int patience = 30;  // epochs of non-improving validation loss
    int runs = 5;
    double split_ratio = 0.7;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch_size < 1) throw ConfigError("trainer: batch_size must be >= 1");
        if (!(split_ratio > 0.0 && split_ratio < 1.0))
            throw ConfigError("trainer: split ratio must be in (0, 1)");
        if (runs < 1) throw ConfigError("trainer: runs must be >= 1");
        if (max_epochs < 1) throw ConfigError("trainer: max_epochs must be >= 1");
    }
};

// Stops after `patience` consecutive epochs without strict improvement.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    bool should_stop(double loss) {
        if (loss < best_) {
            best_ = loss;
            stall_ = 0;
            return false;
        }
        return ++stall_ >= patience_;
    }

    double best() const { return best_; }
    int stall() const { return stall_; }

private:
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int stall_ = 0;
};

struct RunResult {
    std::uint64_t seed = 0;
    double mad = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> predictions;  // validation set, input order
    std::vector<double> residuals;    // target - prediction
    std::vector<double> train_curve;
    std::vector<double> val_curve;
    double init_train_loss = 0.0;
    double best_train_loss = 0.0;  // training loss at the restored weights
    int epochs = 0;
    int best_epoch = -1;
    bool diverged = false;
    std::string message;
};

struct TrainReport {
    std::vector<RunResult> runs;
    double mean_mad = std::numeric_limits<double>::quiet_NaN();
    double stderr_mad = 0.0;
    double wall_seconds = 0.0;

    void finalize() {
        double sum = 0.0;
        int n = 0;
        for (const auto& r : runs)
            if (!r.diverged) {
                sum += r.mad;
                ++n;
            }
        if (n == 0) return;
        mean_mad = sum / double(n);
        if (n > 1) {
            double var = 0.0;
            for (const auto& r : runs)
                if (!r.diverged) var += (r.mad - mean_mad) * (r.mad - mean_mad);
            stderr_mad = std::sqrt(var / double(n - 1)) / std::sqrt(double(n));
        }
    }
};

struct Evaluation {
    double mad = 0.0;
    std::vector<double> predictions;
    std::vector<double> residuals;
};

inline Evaluation evaluate(AssessModel& model, const std::vector<ScoredRep>& reps) {
    if (reps.empty()) throw DataError("evaluate: empty repetition set");
    Evaluation ev;
    for (const auto& r : reps) {
        const double pred = model.score_one(r.values);
        ev.predictions.push_back(pred);
        ev.residuals.push_back(r.target - pred);
        ev.mad += std::abs(r.target - pred);
    }
    ev.mad /= double(reps.size());
    return ev;
}

namespace detail {

inline double mse_eval(AssessModel& model, const std::vector<ScoredRep>& reps) {
    double s = 0.0;
    for (const auto& r : reps) {
        const double d = model.score_one(r.values) - r.target;
        s += d * d;
    }
    return s / double(reps.size());
}

inline void check_targets(const std::vector<ScoredRep>& reps, const char* which) {
    for (const auto& r : reps)
        if (!(r.target >= 0.0 && r.target <= 1.0))
            throw DataError(std::string("train: ") + which + " target outside [0, 1] for " + r.id);
}

}  // namespace detail

// One training run. The model is trained in place; weights from the best
// validation epoch are restored before evaluation.
inline RunResult train_single(AssessModel& model, const std::vector<ScoredRep>& train_set,
                              const std::vector<ScoredRep>& val_set, const TrainConfig& cfg,
                              std::uint64_t run_seed) {
    cfg.validate();
    if (train_set.empty() || val_set.empty()) throw DataError("train: empty train or validation set");
    detail::check_targets(train_set, "train");
    detail::check_targets(val_set, "validation");

    RunResult res;
    res.seed = run_seed;
    nn::Graph& g = model.graph;
    g.rng = Rng(run_seed ^ 0xa0761d6478bd642full);  // dropout stream
    Rng shuffle_rng(run_seed ^ 0xe7037ed1a0b428dbull);

    nn::Adam opt(cfg.learning_rate);
    const auto params = g.params();

    double best_val = std::numeric_limits<double>::infinity();
    std::vector<Mat> best_weights = g.snapshot();
    EarlyStopper stopper(cfg.patience);

    std::vector<std::size_t> idx(train_set.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

    try {
        res.init_train_loss = detail::mse_eval(model, train_set);
        for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
            shuffle_rng.shuffle(idx);
            double epoch_loss = 0.0;
            long batches = 0;
            for (std::size_t start = 0; start < idx.size(); start += std::size_t(cfg.batch_size)) {
                const std::size_t end = std::min(idx.size(), start + std::size_t(cfg.batch_size));
                const double inv_b = 1.0 / double(end - start);
                g.zero_grad();
                double batch_loss = 0.0;
                for (std::size_t i = start; i < end; ++i) {
                    const ScoredRep& s = train_set[idx[i]];
                    g.training = true;
                    const double pred = g.forward(s.values)(0, 0);
                    const double err = pred - s.target;
                    batch_loss += err * err;
                    Mat grad(1, 1);
                    grad(0, 0) = 2.0 * err * inv_b;
                    g.backward(grad);
                }
                batch_loss *= inv_b;
                if (!std::isfinite(batch_loss)) throw NumericalError("training loss is not finite");
                opt.step(params);
                epoch_loss += batch_loss;
                ++batches;
            }
            res.train_curve.push_back(epoch_loss / double(batches));
            const double val_loss = detail::mse_eval(model, val_set);
            res.val_curve.push_back(val_loss);
            res.epochs = epoch + 1;
            if (val_loss < best_val) {
                best_val = val_loss;
                res.best_epoch = epoch;
                best_weights = g.snapshot();
            }
            if (stopper.should_stop(val_loss)) break;
        }
        g.restore(best_weights);
        g.training = false;
        res.best_train_loss = detail::mse_eval(model, train_set);
        const Evaluation ev = evaluate(model, val_set);
        res.mad = ev.mad;
        res.predictions = ev.predictions;
        res.residuals = ev.residuals;
    } catch (const NumericalError& e) {
        res.diverged = true;
        res.message = e.what();
    }
    return res;
}

// Multi-run training: runs differ only by initialization/shuffle seed and
// reuse the caller's split. The per-run callback receives the trained model
// (for checkpointing) before it is discarded.
using RunCallback = std::function<void(int run, AssessModel& model, const RunResult& result)>;

inline TrainReport train(const ModelConfig& model_cfg, const std::vector<ScoredRep>& train_set,
                         const std::vector<ScoredRep>& val_set, const TrainConfig& cfg,
                         const RunCallback& on_run = {}) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    TrainReport report;
    for (int run = 0; run < cfg.runs; ++run) {
        const std::uint64_t run_seed = cfg.seed + std::uint64_t(run);
        ModelConfig mc = model_cfg;
        mc.seed = run_seed;
        AssessModel model = AssessModel::build(mc);
        RunResult res = train_single(model, train_set, val_set, cfg, run_seed);
        if (on_run && !res.diverged) on_run(run, model, res);
        report.runs.push_back(std::move(res));
    }
    report.finalize();
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

// ---------------------------------------------------------------------------
// Ablation sweep: identical seeds and splits across the model variants.
// ---------------------------------------------------------------------------

struct AblationEntry {
    std::string variant;
    TrainReport report;
    bool failed = false;
    std::string message;
};

inline std::vector<std::pair<std::string, ModelConfig>> ablation_variants(const ModelConfig& base) {
    std::vector<std::pair<std::string, ModelConfig>> v;
    v.emplace_back("full", base);
    ModelConfig nb = base;
    nb.use_branches = false;
    v.emplace_back("no_branches", nb);
    ModelConfig np = base;
    np.use_pyramids = false;
    v.emplace_back("no_pyramids", np);
    ModelConfig nh = base;
    nh.use_hierarchy = false;
    v.emplace_back("no_hierarchy", nh);
    ModelConfig nr = base;
    nr.use_recurrent = false;
    v.emplace_back("no_recurrent", nr);
    return v;
}

inline std::vector<AblationEntry> ablation_sweep(const ModelConfig& base,
                                                 const std::vector<ScoredRep>& train_set,
                                                 const std::vector<ScoredRep>& val_set,
                                                 const TrainConfig& cfg) {
    std::vector<AblationEntry> out;
    for (const auto& [label, mc] : ablation_variants(base)) {
        AblationEntry entry;
        entry.variant = label;
        try {
            entry.report = train(mc, train_set, val_set, cfg);
        } catch (const std::exception& e) {
            entry.failed = true;
            entry.message = e.what();
        }
        out.push_back(std::move(entry));
    }
    return out;
}

inline std::string ablation_csv(const std::string& exercise_id,
                                const std::vector<AblationEntry>& entries) {
    std::ostringstream out;
    out << "exercise";
    for (const auto& e : entries) out << ',' << e.variant;
    out << '\n' << exercise_id;
    for (const auto& e : entries) {
        if (e.failed)
            out << ",failed";
        else
            out << ',' << format_double(e.report.mean_mad);
    }
    out << '\n';
    return out.str();
}

inline std::string train_report_csv(const TrainReport& report) {
    std::ostringstream out;
    out << "run,seed,mad,epochs,best_epoch,diverged\n";
    for (std::size_t i = 0; i < report.runs.size(); ++i) {
        const RunResult& r = report.runs[i];
        out << i << ',' << r.seed << ',' << format_double(r.mad) << ',' << r.epochs << ','
            << r.best_epoch << ',' << (r.diverged ? 1 : 0) << '\n';
    }
    out << "mean,," << format_double(report.mean_mad) << ",,,\n";
    out << "stderr,," << format_double(report.stderr_mad) << ",,,\n";
    return out.str();
}

}  // namespace rehab
