// Command-line front end. Each subcommand performs exactly one pipeline
// stage and persists its artifacts under the output directory; `report`
// renders tables and figures from artifacts produced by earlier commands.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rehab/pipeline.hpp"
#include "rehab/svgplot.hpp"

namespace fs = std::filesystem;
using namespace rehab;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string exercise;
    std::string reducer;
    std::string metric;
    std::string mode;
    std::string out_dir;
    long seed = -1;
    long runs = -1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "configuration file (key = value)");
        cmd->add_option("--exercise", exercise, "exercise token substituted into the file pattern");
        cmd->add_option("--reducer", reducer, "dimensionality reduction: raw|mv|pca|ae|all");
        cmd->add_option("--metric", metric, "performance metric: euclid|mahal|dtw|gmm|all");
        cmd->add_option("--mode", mode, "reference statistics: between|within|all");
        cmd->add_option("--seed", seed, "random seed");
        cmd->add_option("--runs", runs, "training runs");
        cmd->add_option("--out", out_dir, "artifact directory (default: $REHAB_OUT or ./artifacts)");
    }

    RunConfig resolve() const {
        RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::from_file(config_path);
        if (!exercise.empty()) cfg.set("dataset.exercise", exercise);
        if (!reducer.empty() && reducer != "all") cfg.set("dimred.kind", reducer);
        if (!metric.empty() && metric != "all") cfg.set("metrics.kind", metric);
        if (!mode.empty() && mode != "all") cfg.set("metrics.mode", mode);
        if (seed >= 0) cfg.set("seed", std::to_string(seed));
        if (runs >= 0) cfg.set("trainer.runs", std::to_string(runs));
        return cfg;
    }

    fs::path resolve_out() const {
        if (!out_dir.empty()) return out_dir;
        if (const char* env = std::getenv("REHAB_OUT")) return env;
        return "artifacts";
    }
};

std::vector<std::string> exercises_of(const RunConfig& cfg) {
    auto list = cfg.get_list("dataset.exercises");
    if (list.empty()) list.push_back(cfg.get("dataset.exercise"));
    return list;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_ingest(const CommonArgs& args) {
    Pipeline p(args.resolve(), args.resolve_out());
    const auto ds = p.load_dataset();
    std::cout << "exercise " << ds.exercise_id << ": " << ds.reference.size() << " reference + "
              << ds.patient.size() << " patient repetitions, D=" << ds.dims
              << ", T=" << ds.canonical_T << "\n";
    std::cout << "manifest: " << p.manifest_path().string() << "\n";
    return 0;
}

int cmd_synth(const CommonArgs& args) {
    const RunConfig cfg = args.resolve();
    const fs::path out = args.resolve_out();
    const auto ds = synthesize(synth_config_from(cfg), cfg.seed());
    const fs::path root = out / "synth_data";
    export_dataset(ds, root);
    write_text_file(out / "resolved_config.txt", cfg.resolved_text());
    std::cout << "synthetic dataset: " << root.string() << " (" << ds.reference.size() << "+"
              << ds.patient.size() << " repetitions, D=" << ds.dims << ", T=" << ds.canonical_T
              << ")\n";
    std::cout << "schema: " << (root / "schema.txt").string() << "\n";
    return 0;
}

int cmd_reduce(const CommonArgs& args) {
    Pipeline p(args.resolve(), args.resolve_out());
    p.require_artifact(p.manifest_path(), "ingest");
    const auto ds = p.load_dataset();
    const Reducer red = p.fit_reducer_stage(ds);
    std::cout << "reducer " << to_string(red.kind) << ": " << red.input_dim << " -> " << red.code_dim
              << "\n";
    if (red.kind == ReducerKind::pca) {
        std::cout << "explained variance ratio:";
        for (double v : red.explained_variance_ratio) std::cout << ' ' << format_double(v);
        std::cout << "\n";
    }
    if (red.kind == ReducerKind::autoencoder)
        std::cout << "reconstruction loss " << format_double(red.trace.final_loss) << " after "
                  << red.trace.epochs << " epochs (init " << format_double(red.trace.init_loss)
                  << ")\n";
    std::cout << "artifact: " << p.reducer_path().string() << "\n";
    return 0;
}

int cmd_metric(const CommonArgs& args) {
    const RunConfig cfg = args.resolve();
    const bool grid = args.reducer == "all" || args.metric == "all" || args.mode == "all";
    Pipeline p(cfg, args.resolve_out());
    if (!grid) {
        p.require_artifact(p.reducer_path(), "reduce");
        const auto ds = p.load_dataset();
        const Reducer red = p.load_reducer();
        const auto em = p.compute_metrics_stage(ds, red);
        std::cout << to_string(em.kind) << " (" << to_string(em.mode)
                  << "): separation degree = " << format_double(em.separation) << "\n";
        std::cout << "values: " << p.values_path().string() << "\n";
        return 0;
    }

    // grid mode: full separation-degree table over the configured exercises
    std::vector<ExerciseDataset> exercises;
    for (const auto& token : exercises_of(cfg)) exercises.push_back(p.load_exercise(token));
    std::vector<ReducerSpec> specs;
    if (args.reducer == "all") {
        specs.push_back({ReducerKind::raw, 0, reducer_spec_from(cfg).ae});
        specs.push_back({ReducerKind::max_variance, 0, reducer_spec_from(cfg).ae});
        specs.push_back({ReducerKind::pca, 0, reducer_spec_from(cfg).ae});
        specs.push_back({ReducerKind::autoencoder, 0, reducer_spec_from(cfg).ae});
    } else {
        specs.push_back(reducer_spec_from(cfg));
    }
    std::vector<MetricKind> metrics;
    if (args.metric == "all")
        metrics = {MetricKind::euclidean, MetricKind::mahalanobis, MetricKind::dtw, MetricKind::gmm_nll};
    else
        metrics = {metric_kind_from_string(cfg.get("metrics.kind"))};
    std::vector<SubjectMode> modes;
    if (args.mode == "all")
        modes = {SubjectMode::between_subject, SubjectMode::within_subject};
    else
        modes = {subject_mode_from_string(cfg.get("metrics.mode"))};

    std::string all;
    for (SubjectMode mode : modes) {
        const auto table = metric_table(exercises, specs, metrics, mode, metric_options_from(cfg));
        std::string csv = separation_table_csv(table);
        if (!all.empty()) csv = csv.substr(csv.find('\n') + 1);  // drop repeated header
        all += csv;
    }
    write_text_file(p.table_path(), all);
    std::cout << all;
    std::cout << "table: " << p.table_path().string() << "\n";
    return 0;
}

int cmd_score(const CommonArgs& args) {
    Pipeline p(args.resolve(), args.resolve_out());
    const auto ds = p.load_dataset();
    const auto em = p.load_metrics_stage(ds);
    const auto sd = p.compute_scores_stage(ds, em);
    double lo = 1.0, hi = 0.0;
    for (const auto& r : sd.patient) {
        lo = std::min(lo, r.target);
        hi = std::max(hi, r.target);
    }
    std::cout << sd.reference.size() + sd.patient.size() << " quality scores (patient range ["
              << format_double(lo) << ", " << format_double(hi) << "])\n";
    std::cout << "scores: " << p.scores_path().string() << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args, bool sweep) {
    Pipeline p(args.resolve(), args.resolve_out());
    const auto ds = p.load_dataset();
    const auto sd = p.load_scores_stage(ds);
    if (sweep) {
        const auto entries = p.ablation_stage(ds, sd);
        for (const auto& e : entries)
            std::cout << e.variant << ": "
                      << (e.failed ? ("failed (" + e.message + ")") : format_double(e.report.mean_mad))
                      << "\n";
        std::cout << "ablation: " << p.ablation_path().string() << "\n";
        return 0;
    }
    const auto report = p.train_stage(ds, sd);
    for (std::size_t i = 0; i < report.runs.size(); ++i)
        std::cout << "run " << i << ": mad=" << format_double(report.runs[i].mad) << " epochs="
                  << report.runs[i].epochs << (report.runs[i].diverged ? " DIVERGED" : "") << "\n";
    std::cout << "mean mad " << format_double(report.mean_mad) << " (stderr "
              << format_double(report.stderr_mad) << "), wall " << format_double(report.wall_seconds)
              << " s\n";
    std::cout << "report: " << p.train_report_path().string() << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    Pipeline p(args.resolve(), args.resolve_out());
    const auto ds = p.load_dataset();
    const auto sd = p.load_scores_stage(ds);
    const auto ev = p.eval_stage(sd);
    std::cout << "validation mad " << format_double(ev.mad) << " over " << ev.predictions.size()
              << " repetitions\n";
    std::cout << "residuals: " << p.residuals_path().string() << "\n";
    return 0;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const fs::path& path) {
    CsvTable t;
    std::istringstream in(read_text_file(path));
    std::string line;
    if (std::getline(in, line)) t.header = split(trim(line), ',');
    while (std::getline(in, line))
        if (!trim(line).empty()) t.rows.push_back(split(trim(line), ','));
    return t;
}

int cmd_report(const CommonArgs& args) {
    Pipeline p(args.resolve(), args.resolve_out());
    const fs::path plots = p.out_dir() / "plots";
    fs::create_directories(plots);
    std::vector<std::string> missing;
    int rendered = 0;

    // Table II style separation-degree grid
    if (fs::exists(p.table_path())) {
        std::cout << "separation-degree table (" << p.table_path().string() << "):\n"
                  << read_text_file(p.table_path());
        ++rendered;
    } else {
        missing.push_back("separation table " + p.table_path().string() +
                          " (run `rehab metric --reducer all --metric all --mode all`)");
    }

    // Fig 4 style scatter of scaled metric values
    if (fs::exists(p.values_path())) {
        const CsvTable t = read_csv(p.values_path());
        std::vector<double> xc, yc, xi, yi;
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            const auto& r = t.rows[i];
            const double v = std::strtod(r[r.size() - 1].c_str(), nullptr);
            if (r[r.size() - 3] == "correct") {
                xc.push_back(double(xc.size() + 1));
                yc.push_back(v);
            } else {
                xi.push_back(double(xi.size() + 1));
                yi.push_back(v);
            }
        }
        SvgPlot plot("Scaled metric values per repetition", "repetition", "scaled value");
        plot.add_scatter(xc, yc, "green", "correct");
        plot.add_scatter(xi, yi, "red", "incorrect", true);
        write_text_file(plots / "metric_scatter.svg", plot.render());
        std::cout << "wrote " << (plots / "metric_scatter.svg").string() << "\n";
        ++rendered;
    } else {
        missing.push_back("metric values " + p.values_path().string() + " (run `rehab metric`)");
    }

    // Fig 5 style metric-vs-score pairs
    if (fs::exists(p.scores_path())) {
        const CsvTable t = read_csv(p.scores_path());
        std::vector<double> idx_c, val_c, score_c, idx_i, val_i, score_i;
        for (const auto& r : t.rows) {
            const double metric_value = std::strtod(r[r.size() - 2].c_str(), nullptr);
            const double score = std::strtod(r[r.size() - 1].c_str(), nullptr);
            if (r[r.size() - 3] == "correct") {
                idx_c.push_back(double(idx_c.size() + 1));
                val_c.push_back(metric_value);
                score_c.push_back(score);
            } else {
                idx_i.push_back(double(idx_i.size() + 1));
                val_i.push_back(metric_value);
                score_i.push_back(score);
            }
        }
        SvgPlot pv("Performance metric values", "repetition", "metric value");
        pv.add_scatter(idx_c, val_c, "green", "correct");
        pv.add_scatter(idx_i, val_i, "red", "incorrect", true);
        write_text_file(plots / "metric_values.svg", pv.render());
        SvgPlot ps("Movement quality scores", "repetition", "score");
        ps.add_scatter(idx_c, score_c, "green", "correct");
        ps.add_scatter(idx_i, score_i, "red", "incorrect", true);
        write_text_file(plots / "quality_scores.svg", ps.render());
        std::cout << "wrote " << (plots / "metric_values.svg").string() << " and "
                  << (plots / "quality_scores.svg").string() << "\n";
        ++rendered;
    } else {
        missing.push_back("scores " + p.scores_path().string() + " (run `rehab score`)");
    }

    // Fig 6 style target-vs-prediction curves (first run)
    if (fs::exists(p.preds_path(0))) {
        const CsvTable t = read_csv(p.preds_path(0));
        std::vector<double> idx, target, pred;
        for (const auto& r : t.rows) {
            idx.push_back(double(idx.size() + 1));
            target.push_back(std::strtod(r[r.size() - 3].c_str(), nullptr));
            pred.push_back(std::strtod(r[r.size() - 2].c_str(), nullptr));
        }
        SvgPlot plot("Validation predictions", "repetition", "quality score");
        plot.add_line(idx, target, "black", "ground truth");
        plot.add_line(idx, pred, "blue", "prediction");
        write_text_file(plots / "predictions.svg", plot.render());
        std::cout << "wrote " << (plots / "predictions.svg").string() << "\n";
        ++rendered;
    } else {
        missing.push_back("predictions " + p.preds_path(0).string() + " (run `rehab train`)");
    }

    // Table III style ablation grid
    if (fs::exists(p.ablation_path())) {
        std::cout << "ablation table (" << p.ablation_path().string() << "):\n"
                  << read_text_file(p.ablation_path());
        ++rendered;
    } else {
        missing.push_back("ablation " + p.ablation_path().string() + " (run `rehab train --sweep`)");
    }

    if (rendered == 0) {
        std::string msg = "no artifacts for this configuration; missing:";
        for (const auto& m : missing) msg += "\n  " + m;
        throw DataError(msg);
    }
    for (const auto& m : missing) std::cout << "note: missing " << m << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"movement quality assessment toolkit"};
    app.require_subcommand(1);

    CommonArgs args;
    bool sweep = false;

    auto* ingest = app.add_subcommand("ingest", "load and validate a dataset, write its manifest");
    auto* synth = app.add_subcommand("synth", "generate a synthetic exercise dataset on disk");
    auto* reduce = app.add_subcommand("reduce", "fit the configured dimensionality reduction");
    auto* metric = app.add_subcommand("metric", "compute performance metrics / separation degrees");
    auto* score = app.add_subcommand("score", "map metric values to quality scores");
    auto* train = app.add_subcommand("train", "train the assessment network on scored repetitions");
    train->add_flag("--sweep", sweep, "run the ablation sweep instead of a single training");
    auto* eval = app.add_subcommand("eval", "evaluate the best checkpoint on the validation split");
    auto* report = app.add_subcommand("report", "render tables and figures from artifacts");
    for (CLI::App* cmd : {ingest, synth, reduce, metric, score, train, eval, report})
        args.attach(cmd);

    try {
        app.parse(argc, argv);
        if (ingest->parsed()) return cmd_ingest(args);
        if (synth->parsed()) return cmd_synth(args);
        if (reduce->parsed()) return cmd_reduce(args);
        if (metric->parsed()) return cmd_metric(args);
        if (score->parsed()) return cmd_score(args);
        if (train->parsed()) return cmd_train(args, sweep);
        if (eval->parsed()) return cmd_eval(args);
        if (report->parsed()) return cmd_report(args);
        return 1;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
