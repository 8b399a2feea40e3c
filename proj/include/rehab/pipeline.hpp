#pragma once

// End-to-end orchestration: reduce -> metric -> scale -> score -> train ->
// evaluate, with every stage persisting its artifacts under the output
// directory, keyed by a content hash of the configuration sections the
// stage depends on. A stage failure surfaces the stage name; artifacts
// produced before the failure stay on disk.
//
// Artifact layout under the output root:
//   resolved_config.txt            fully resolved configuration of the run
//   manifest_<h>.csv               one record per repetition
//   reducer/reducer_<h>.red        fitted reducer
//   gmm/gmm_<h>.gmm                fitted mixture(s), when the metric is gmm
//   scores/values_<h>.csv          raw + scaled metric values (scatter data)
//   scores/sepdeg_<h>.csv          separation degrees
//   scores/scores_<h>.csv          (repetition, metric value, quality score)
//   checkpoints/model_<h>_run<k>.ckpt and model_<h>_best.ckpt
//   reports/split_<h>.csv          train/validation membership
//   reports/train_<h>.csv          per-run and mean validation MAD
//   reports/loss_<h>_run<k>.csv    loss curves
//   reports/preds_<h>_run<k>.csv   target vs prediction per repetition
//   reports/ablation_<h>.csv       Table-style ablation grid

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rehab/assessnet.hpp"
#include "rehab/config.hpp"
#include "rehab/dataset.hpp"
#include "rehab/dimred.hpp"
#include "rehab/gmm.hpp"
#include "rehab/ingest.hpp"
#include "rehab/metric_table.hpp"
#include "rehab/metrics.hpp"
#include "rehab/scoring.hpp"
#include "rehab/trainer.hpp"

namespace rehab {

// ---------------------------------------------------------------------------
// Config -> module options
// ---------------------------------------------------------------------------

inline SynthConfig synth_config_from(const RunConfig& cfg) {
    SynthConfig s;
    s.dims = int(cfg.get_int("synth.d"));
    s.canonical_T = int(cfg.get_int("synth.t"));
    s.subjects = int(cfg.get_int("synth.subjects"));
    s.reps_per_subject = int(cfg.get_int("synth.reps"));
    s.harmonics = int(cfg.get_int("synth.harmonics"));
    s.noise = cfg.get_double("synth.noise");
    s.perturbation = cfg.get_double("synth.perturbation");
    s.subject_sigma = cfg.get_double("synth.subject_sigma");
    s.length_jitter = cfg.get_double("synth.length_jitter");
    s.exercise_id = cfg.get("dataset.exercise");
    return s;
}

inline ReducerSpec reducer_spec_from(const RunConfig& cfg) {
    ReducerSpec spec;
    spec.kind = reducer_kind_from_string(cfg.get("dimred.kind"));
    spec.code_dim = int(cfg.get_int("dimred.m"));
    spec.ae.encoder_units = cfg.get_ints("dimred.ae.units");
    spec.ae.max_epochs = int(cfg.get_int("dimred.ae.epochs"));
    spec.ae.lr = cfg.get_double("dimred.ae.lr");
    spec.ae.patience = int(cfg.get_int("dimred.ae.patience"));
    spec.ae.batch_size = int(cfg.get_int("dimred.ae.batch"));
    return spec;
}

inline MetricOptions metric_options_from(const RunConfig& cfg) {
    MetricOptions opts;
    opts.gmm_components = int(cfg.get_int("metrics.gmm.components"));
    opts.gmm.max_iters = int(cfg.get_int("metrics.gmm.max_iters"));
    opts.gmm.tol = cfg.get_double("metrics.gmm.tol");
    opts.gmm_max_dim = int(cfg.get_int("metrics.gmm.max_dim"));
    opts.eps_cov = cfg.get_double("metrics.eps_cov");
    opts.gmm.eps_cov = opts.eps_cov;
    opts.seed = cfg.seed();
    return opts;
}

inline ModelConfig model_config_from(const RunConfig& cfg, const ExerciseDataset& ds) {
    ModelConfig mc;
    mc.arch = cfg.get("model.arch");
    mc.input_dim = ds.dims;
    mc.canonical_T = ds.canonical_T;
    mc.body_parts = ds.body_parts;
    mc.pyramid_steps = cfg.get_ints("model.pyramid_steps");
    mc.branch_filter_lengths = cfg.get_ints("model.filters");
    mc.part_channels = int(cfg.get_int("model.part_channels"));
    mc.merge_channels = int(cfg.get_int("model.merge_channels"));
    mc.dropout_rate = cfg.get_double("model.dropout");
    mc.recurrent_units = cfg.get_ints("model.recurrent_units");
    mc.fc_units = int(cfg.get_int("model.fc_units"));
    mc.use_branches = cfg.get_bool("model.use_branches");
    mc.use_pyramids = cfg.get_bool("model.use_pyramids");
    mc.use_hierarchy = cfg.get_bool("model.use_hierarchy");
    mc.use_recurrent = cfg.get_bool("model.use_recurrent");
    mc.seed = cfg.seed();
    return mc;
}

inline TrainConfig train_config_from(const RunConfig& cfg) {
    TrainConfig tc;
    tc.batch_size = int(cfg.get_int("trainer.batch_size"));
    tc.learning_rate = cfg.get_double("trainer.lr");
    tc.max_epochs = int(cfg.get_int("trainer.max_epochs"));
    tc.patience = int(cfg.get_int("trainer.patience"));
    tc.runs = int(cfg.get_int("trainer.runs"));
    tc.split_ratio = cfg.get_double("trainer.ratio");
    tc.seed = cfg.seed();
    return tc;
}

// ---------------------------------------------------------------------------
// Scoring bridge: metric values -> per-repetition training targets on the
// raw repetitions. Correct repetitions carry reference scores, incorrect
// ones patient scores.
// ---------------------------------------------------------------------------

struct ScoredDataset {
    std::vector<ScoredRep> reference;
    std::vector<ScoredRep> patient;
    ScoringParams params;

    std::vector<ScoredRep> all() const {
        std::vector<ScoredRep> out = reference;
        out.insert(out.end(), patient.begin(), patient.end());
        return out;
    }
};

inline ScoredDataset make_scored_dataset(const ExerciseDataset& ds, const ExerciseMetrics& em,
                                         double alpha1, double alpha2) {
    if (em.reference_values.size() != ds.reference.size() ||
        em.patient_values.size() != ds.patient.size())
        throw ShapeError("make_scored_dataset: metric series does not match dataset");
    ScoredDataset out;
    out.params = ScoringParams::from_reference(em.reference_values, alpha1, alpha2);
    const auto ref_scores = score_reference(em.reference_values, out.params);
    const auto pat_scores = score_patient(em.reference_values, em.patient_values, out.params);
    for (std::size_t i = 0; i < ds.reference.size(); ++i) {
        const Repetition& r = ds.reference[i];
        out.reference.push_back({r.values, ref_scores[i], r.source_file, r.subject_id, r.correctness});
    }
    for (std::size_t i = 0; i < ds.patient.size(); ++i) {
        const Repetition& r = ds.patient[i];
        out.patient.push_back({r.values, pat_scores[i], r.source_file, r.subject_id, r.correctness});
    }
    return out;
}

// Stratified split of scored repetitions; consumes the seed exactly like
// rehab::split, so the partition matches the dataset-level split.
struct ScoredSplit {
    std::vector<ScoredRep> train;
    std::vector<ScoredRep> validation;
};

inline ScoredSplit split_scored(const ScoredDataset& sd, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split: ratio must be in (0, 1)");
    if (sd.reference.size() < 2 || sd.patient.size() < 2)
        throw DataError("split: need at least 2 repetitions per class");
    ScoredSplit out;
    Rng rng(seed);
    detail::split_class(sd.reference, ratio, rng, out.train, out.validation);
    detail::split_class(sd.patient, ratio, rng, out.train, out.validation);
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline runner
// ---------------------------------------------------------------------------

class Pipeline {
public:
    Pipeline(RunConfig cfg, std::filesystem::path out_dir)
        : cfg_(std::move(cfg)), out_(std::move(out_dir)) {
        std::filesystem::create_directories(out_);
        write_text_file(out_ / "resolved_config.txt", cfg_.resolved_text());
    }

    const RunConfig& config() const { return cfg_; }
    const std::filesystem::path& out_dir() const { return out_; }

    // stage hashes
    std::string dataset_hash() const { return cfg_.stage_hash({"dataset", "synth", "seed"}); }
    std::string reduce_hash() const { return cfg_.stage_hash({"dataset", "synth", "seed", "dimred"}); }
    std::string metric_hash() const {
        return cfg_.stage_hash({"dataset", "synth", "seed", "dimred", "metrics"});
    }
    std::string score_hash() const {
        return cfg_.stage_hash({"dataset", "synth", "seed", "dimred", "metrics", "scoring"});
    }
    std::string train_hash() const {
        return cfg_.stage_hash(
            {"dataset", "synth", "seed", "dimred", "metrics", "scoring", "model", "trainer"});
    }

    // artifact paths
    std::filesystem::path manifest_path() const { return out_ / ("manifest_" + dataset_hash() + ".csv"); }
    std::filesystem::path reducer_path() const {
        return out_ / "reducer" / ("reducer_" + reduce_hash() + ".red");
    }
    std::filesystem::path gmm_path() const { return out_ / "gmm" / ("gmm_" + metric_hash() + ".gmm"); }
    std::filesystem::path values_path() const {
        return out_ / "scores" / ("values_" + metric_hash() + ".csv");
    }
    std::filesystem::path sepdeg_path() const {
        return out_ / "scores" / ("sepdeg_" + metric_hash() + ".csv");
    }
    std::filesystem::path scores_path() const {
        return out_ / "scores" / ("scores_" + score_hash() + ".csv");
    }
    std::filesystem::path split_path() const {
        return out_ / "reports" / ("split_" + train_hash() + ".csv");
    }
    std::filesystem::path checkpoint_path(int run) const {
        return out_ / "checkpoints" / ("model_" + train_hash() + "_run" + std::to_string(run) + ".ckpt");
    }
    std::filesystem::path best_checkpoint_path() const {
        return out_ / "checkpoints" / ("model_" + train_hash() + "_best.ckpt");
    }
    std::filesystem::path train_report_path() const {
        return out_ / "reports" / ("train_" + train_hash() + ".csv");
    }
    std::filesystem::path loss_curve_path(int run) const {
        return out_ / "reports" / ("loss_" + train_hash() + "_run" + std::to_string(run) + ".csv");
    }
    std::filesystem::path preds_path(int run) const {
        return out_ / "reports" / ("preds_" + train_hash() + "_run" + std::to_string(run) + ".csv");
    }
    std::filesystem::path residuals_path() const {
        return out_ / "reports" / ("residuals_" + train_hash() + ".csv");
    }
    std::filesystem::path ablation_path() const {
        return out_ / "reports" / ("ablation_" + train_hash() + ".csv");
    }
    std::filesystem::path table_path() const {
        return out_ / "reports" / ("separation_grid_" + metric_hash() + ".csv");
    }

    // ---- stage: ingest -----------------------------------------------------
    ExerciseDataset load_dataset() {
        return stage("ingest", [&] {
            ExerciseDataset ds;
            if (cfg_.get("dataset.source") == "synth") {
                ds = synthesize(synth_config_from(cfg_), cfg_.seed());
            } else {
                const std::filesystem::path root = cfg_.get("dataset.root");
                const auto schema = parse_schema(root / cfg_.get("dataset.schema"));
                ds = ingest(root, schema, cfg_.get("dataset.exercise"));
            }
            write_text_file(manifest_path(), manifest_csv(ds));
            return ds;
        });
    }

    ExerciseDataset load_exercise(const std::string& exercise_token) {
        return stage("ingest", [&] {
            if (cfg_.get("dataset.source") == "synth") {
                SynthConfig sc = synth_config_from(cfg_);
                sc.exercise_id = exercise_token;
                // one deterministic generator stream per exercise
                return synthesize(sc, cfg_.seed() ^ fnv1a64(exercise_token));
            }
            const std::filesystem::path root = cfg_.get("dataset.root");
            const auto schema = parse_schema(root / cfg_.get("dataset.schema"));
            return ingest(root, schema, exercise_token);
        });
    }

    // ---- stage: reduce -----------------------------------------------------
    Reducer fit_reducer_stage(const ExerciseDataset& ds) {
        return stage("reduce", [&] {
            Reducer red = fit_reducer(ds, reducer_spec_from(cfg_), cfg_.seed());
            red.save(reducer_path());
            return red;
        });
    }

    Reducer load_reducer() {
        return stage("reduce", [&] {
            require_artifact(reducer_path(), "reduce");
            return Reducer::load(reducer_path());
        });
    }

    // ---- stage: metric -----------------------------------------------------
    ExerciseMetrics compute_metrics_stage(const ExerciseDataset& ds, const Reducer& red) {
        return stage("metric", [&] {
            const auto kind = metric_kind_from_string(cfg_.get("metrics.kind"));
            const auto mode = subject_mode_from_string(cfg_.get("metrics.mode"));
            const auto em = compute_exercise_metrics(ds, red, kind, mode, metric_options_from(cfg_));
            write_text_file(values_path(), exercise_metrics_csv(em));
            std::ostringstream sep;
            sep << "exercise,reducer,metric,mode,separation\n"
                << ds.exercise_id << ',' << cfg_.get("dimred.kind") << ',' << to_string(em.kind) << ','
                << to_string(em.mode) << ',' << format_double(em.separation) << '\n';
            write_text_file(sepdeg_path(), sep.str());
            if (!em.gmm_models.empty()) {
                std::ostringstream g;
                for (const auto& [subject, model] : em.gmm_models)
                    g << "subject = " << subject << '\n' << gmm_to_text(model);
                write_text_file(gmm_path(), g.str());
            }
            return em;
        });
    }

    // ---- stage: score ------------------------------------------------------
    ScoredDataset compute_scores_stage(const ExerciseDataset& ds, const ExerciseMetrics& em) {
        return stage("score", [&] {
            const auto sd = make_scored_dataset(ds, em, cfg_.get_double("scoring.alpha1"),
                                                cfg_.get_double("scoring.alpha2"));
            std::ostringstream out;
            out << "repetition,label,metric_value,score\n";
            for (std::size_t i = 0; i < sd.reference.size(); ++i)
                out << sd.reference[i].id << ",correct," << format_double(em.reference_values[i]) << ','
                    << format_double(sd.reference[i].target) << '\n';
            for (std::size_t i = 0; i < sd.patient.size(); ++i)
                out << sd.patient[i].id << ",incorrect," << format_double(em.patient_values[i]) << ','
                    << format_double(sd.patient[i].target) << '\n';
            write_text_file(scores_path(), out.str());
            return sd;
        });
    }

    // ---- stage: train ------------------------------------------------------
    TrainReport train_stage(const ExerciseDataset& ds, const ScoredDataset& sd) {
        return stage("train", [&] {
            const TrainConfig tc = train_config_from(cfg_);
            const ModelConfig mc = model_config_from(cfg_, ds);
            const ScoredSplit sp = split_scored(sd, tc.split_ratio, tc.seed);
            write_split_manifest(sp);

            double best_mad = std::numeric_limits<double>::infinity();
            TrainReport report = train(mc, sp.train, sp.validation, tc,
                                       [&](int run, AssessModel& model, const RunResult& res) {
                                           model.save(checkpoint_path(run));
                                           write_run_outputs(run, sp.validation, res);
                                           if (res.mad < best_mad) {
                                               best_mad = res.mad;
                                               model.save(best_checkpoint_path());
                                           }
                                       });
            write_text_file(train_report_path(), train_report_csv(report));
            return report;
        });
    }

    // ---- stage: eval -------------------------------------------------------
    Evaluation eval_stage(const ScoredDataset& sd) {
        return stage("eval", [&] {
            require_artifact(best_checkpoint_path(), "train");
            AssessModel model = AssessModel::load(best_checkpoint_path());
            const TrainConfig tc = train_config_from(cfg_);
            const ScoredSplit sp = split_scored(sd, tc.split_ratio, tc.seed);
            const Evaluation ev = evaluate(model, sp.validation);
            std::ostringstream out;
            out << "repetition,label,target,prediction,residual\n";
            for (std::size_t i = 0; i < sp.validation.size(); ++i)
                out << sp.validation[i].id << ',' << to_string(sp.validation[i].label) << ','
                    << format_double(sp.validation[i].target) << ','
                    << format_double(ev.predictions[i]) << ',' << format_double(ev.residuals[i]) << '\n';
            write_text_file(residuals_path(), out.str());
            return ev;
        });
    }

    // ---- stage: ablation ---------------------------------------------------
    std::vector<AblationEntry> ablation_stage(const ExerciseDataset& ds, const ScoredDataset& sd) {
        return stage("train", [&] {
            const TrainConfig tc = train_config_from(cfg_);
            const ModelConfig mc = model_config_from(cfg_, ds);
            const ScoredSplit sp = split_scored(sd, tc.split_ratio, tc.seed);
            auto entries = ablation_sweep(mc, sp.train, sp.validation, tc);
            write_text_file(ablation_path(), ablation_csv(ds.exercise_id, entries));
            return entries;
        });
    }

    // Rebuilds the metric series of this configuration from the values CSV,
    // so `score` can run without refitting reducers or mixtures.
    ExerciseMetrics load_metrics_stage(const ExerciseDataset& ds) {
        return stage("metric", [&] {
            require_artifact(values_path(), "metric");
            ExerciseMetrics em;
            em.kind = metric_kind_from_string(cfg_.get("metrics.kind"));
            em.mode = subject_mode_from_string(cfg_.get("metrics.mode"));
            std::istringstream in(read_text_file(values_path()));
            std::string line;
            std::getline(in, line);  // header
            std::size_t ref_i = 0, pat_i = 0;
            while (std::getline(in, line)) {
                if (trim(line).empty()) continue;
                const auto f = split(line, ',');
                if (f.size() < 5) throw ParseError(values_path().string() + ": malformed row");
                const std::string label = f[f.size() - 3];
                double value = 0.0, scaled = 0.0;
                if (!parse_double(f[f.size() - 2], value) || !parse_double(f[f.size() - 1], scaled))
                    throw ParseError(values_path().string() + ": malformed numeric cell");
                if (label == "correct") {
                    em.reference_values.push_back(value);
                    em.reference_scaled.push_back(scaled);
                    ++ref_i;
                } else {
                    em.patient_values.push_back(value);
                    em.patient_scaled.push_back(scaled);
                    ++pat_i;
                }
            }
            if (ref_i != ds.reference.size() || pat_i != ds.patient.size())
                throw DataError(values_path().string() + ": row counts do not match the dataset (" +
                                std::to_string(ref_i) + "+" + std::to_string(pat_i) + " vs " +
                                std::to_string(ds.reference.size()) + "+" +
                                std::to_string(ds.patient.size()) + ")");
            for (const auto& r : ds.reference) {
                em.reference_subjects.push_back(r.subject_id);
                em.reference_ids.push_back(r.source_file);
            }
            for (const auto& r : ds.patient) {
                em.patient_subjects.push_back(r.subject_id);
                em.patient_ids.push_back(r.source_file);
            }
            return em;
        });
    }

    // Rebuilds training targets from the scores CSV.
    ScoredDataset load_scores_stage(const ExerciseDataset& ds) {
        return stage("score", [&] {
            require_artifact(scores_path(), "score");
            ScoredDataset sd;
            std::istringstream in(read_text_file(scores_path()));
            std::string line;
            std::getline(in, line);
            std::vector<double> ref_targets, pat_targets, ref_metric;
            while (std::getline(in, line)) {
                if (trim(line).empty()) continue;
                const auto f = split(line, ',');
                if (f.size() < 4) throw ParseError(scores_path().string() + ": malformed row");
                double metric_value = 0.0, score = 0.0;
                if (!parse_double(f[f.size() - 2], metric_value) || !parse_double(f[f.size() - 1], score))
                    throw ParseError(scores_path().string() + ": malformed numeric cell");
                if (f[f.size() - 3] == "correct") {
                    ref_targets.push_back(score);
                    ref_metric.push_back(metric_value);
                } else {
                    pat_targets.push_back(score);
                }
            }
            if (ref_targets.size() != ds.reference.size() || pat_targets.size() != ds.patient.size())
                throw DataError(scores_path().string() + ": row counts do not match the dataset");
            sd.params = ScoringParams::from_reference(ref_metric, cfg_.get_double("scoring.alpha1"),
                                                      cfg_.get_double("scoring.alpha2"));
            for (std::size_t i = 0; i < ds.reference.size(); ++i) {
                const Repetition& r = ds.reference[i];
                sd.reference.push_back({r.values, ref_targets[i], r.source_file, r.subject_id,
                                        r.correctness});
            }
            for (std::size_t i = 0; i < ds.patient.size(); ++i) {
                const Repetition& r = ds.patient[i];
                sd.patient.push_back({r.values, pat_targets[i], r.source_file, r.subject_id,
                                      r.correctness});
            }
            return sd;
        });
    }

    void require_artifact(const std::filesystem::path& p, const std::string& producing_command) const {
        if (!std::filesystem::exists(p))
            throw DataError("missing artifact " + p.string() + "; run `rehab " + producing_command +
                            "` first");
    }

private:
    template <typename F>
    auto stage(const char* name, F&& fn) -> decltype(fn()) {
        try {
            return fn();
        } catch (const ConfigError&) {
            throw;
        } catch (const NumericalError& e) {
            throw NumericalError(std::string("stage ") + name + ": " + e.what());
        } catch (const std::exception& e) {
            throw DataError(std::string("stage ") + name + ": " + e.what());
        }
    }

    void write_split_manifest(const ScoredSplit& sp) {
        std::ostringstream out;
        out << "repetition,label,side\n";
        for (const auto& r : sp.train) out << r.id << ',' << to_string(r.label) << ",train\n";
        for (const auto& r : sp.validation) out << r.id << ',' << to_string(r.label) << ",validation\n";
        write_text_file(split_path(), out.str());
    }

    void write_run_outputs(int run, const std::vector<ScoredRep>& val, const RunResult& res) {
        std::ostringstream loss;
        loss << "epoch,train_loss,val_loss\n";
        for (std::size_t e = 0; e < res.train_curve.size(); ++e)
            loss << e << ',' << format_double(res.train_curve[e]) << ','
                 << format_double(res.val_curve[e]) << '\n';
        write_text_file(loss_curve_path(run), loss.str());

        std::ostringstream preds;
        preds << "repetition,label,target,prediction,residual\n";
        for (std::size_t i = 0; i < val.size(); ++i)
            preds << val[i].id << ',' << to_string(val[i].label) << ',' << format_double(val[i].target)
                  << ',' << format_double(res.predictions[i]) << ','
                  << format_double(res.residuals[i]) << '\n';
        write_text_file(preds_path(run), preds.str());
    }

    RunConfig cfg_;
    std::filesystem::path out_;
};

// Full pipeline: every stage in order, artifacts persisted, report returned.
struct PipelineResult {
    ExerciseDataset dataset;
    ExerciseMetrics metrics;
    ScoredDataset scores;
    TrainReport report;
};

inline PipelineResult run_pipeline(const RunConfig& cfg, const std::filesystem::path& out_dir) {
    Pipeline p(cfg, out_dir);
    PipelineResult res;
    res.dataset = p.load_dataset();
    const Reducer red = p.fit_reducer_stage(res.dataset);
    res.metrics = p.compute_metrics_stage(res.dataset, red);
    res.scores = p.compute_scores_stage(res.dataset, res.metrics);
    res.report = p.train_stage(res.dataset, res.scores);
    p.eval_stage(res.scores);
    return res;
}

}  // namespace rehab
