#pragma once

// Separation-degree evaluation across (reducer, metric) combinations.
// Between-subject mode pools all subjects' reference data into one set of
// statistics; within-subject mode fits the statistics per subject, evaluates
// that subject's own repetitions, and averages the per-subject separation
// degrees. The GMM metric is refused on high-dimensional (raw) data.

#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rehab/dataset.hpp"
#include "rehab/dimred.hpp"
#include "rehab/gmm.hpp"
#include "rehab/metrics.hpp"

namespace rehab {

enum class SubjectMode { between_subject, within_subject };

inline const char* to_string(SubjectMode m) {
    return m == SubjectMode::between_subject ? "between" : "within";
}

inline SubjectMode subject_mode_from_string(const std::string& s) {
    if (s == "between" || s == "between_subject") return SubjectMode::between_subject;
    if (s == "within" || s == "within_subject") return SubjectMode::within_subject;
    throw ConfigError("unknown subject mode: " + s);
}

struct MetricOptions {
    int gmm_components = 6;
    GmmFitOptions gmm;
    int gmm_max_dim = 10;  // GMM refused above this encode dimension
    double eps_cov = 1e-6;
    std::uint64_t seed = 0;
};

// Per-repetition metric values of one exercise, with raw and scaled values
// kept parallel to the repetition lists of the dataset.
struct ExerciseMetrics {
    MetricKind kind = MetricKind::euclidean;
    SubjectMode mode = SubjectMode::between_subject;
    std::vector<double> reference_values, patient_values;          // raw
    std::vector<double> reference_scaled, patient_scaled;          // after range scaling
    std::vector<int> reference_subjects, patient_subjects;
    std::vector<std::string> reference_ids, patient_ids;
    double separation = 0.0;
    std::vector<std::pair<int, GmmModel>> gmm_models;  // subject -> model; -1 = pooled
};

namespace detail {

struct FittedMetric {
    MetricKind kind;
    Mat template_seq;        // euclidean / dtw
    ReferenceStats stats;    // mahalanobis
    GmmModel gmm;            // gmm_nll

    double evaluate(const Mat& code) const {
        switch (kind) {
            case MetricKind::euclidean: return euclidean_metric(code, template_seq);
            case MetricKind::mahalanobis: return mahalanobis_metric(code, stats);
            case MetricKind::dtw: return dtw_metric(code, template_seq);
            default: return gmm_nll(gmm, code);
        }
    }
};

inline FittedMetric fit_metric(MetricKind kind, const std::vector<Mat>& ref_codes,
                               const MetricOptions& opts) {
    FittedMetric f;
    f.kind = kind;
    switch (kind) {
        case MetricKind::euclidean:
        case MetricKind::dtw:
            f.template_seq = reference_mean(ref_codes);
            break;
        case MetricKind::mahalanobis:
            f.stats = ReferenceStats::fit(ref_codes, opts.eps_cov);
            break;
        case MetricKind::gmm_nll: {
            long total = 0;
            for (const auto& c : ref_codes) total += c.rows;
            Mat frames(int(total), ref_codes[0].cols);
            int row = 0;
            for (const auto& c : ref_codes)
                for (int t = 0; t < c.rows; ++t, ++row)
                    for (int k = 0; k < c.cols; ++k) frames(row, k) = c(t, k);
            GmmFitOptions g = opts.gmm;
            g.eps_cov = opts.eps_cov;
            f.gmm = fit_gmm(frames, opts.gmm_components, opts.seed, g).model;
            break;
        }
    }
    return f;
}

}  // namespace detail

inline bool metric_supported(MetricKind kind, const Reducer& reducer, const MetricOptions& opts) {
    return kind != MetricKind::gmm_nll || reducer.code_dim <= opts.gmm_max_dim;
}

// Computes raw and scaled metric values for every repetition of the
// exercise, plus the exercise separation degree for the requested mode.
inline ExerciseMetrics compute_exercise_metrics(const ExerciseDataset& ds, const Reducer& reducer,
                                                MetricKind kind, SubjectMode mode,
                                                const MetricOptions& opts) {
    ds.require_reference();
    if (!metric_supported(kind, reducer, opts))
        throw ConfigError("gmm metric unsupported on " + std::to_string(reducer.code_dim) +
                          "-dimensional data (limit " + std::to_string(opts.gmm_max_dim) + ")");

    ExerciseMetrics out;
    out.kind = kind;
    out.mode = mode;
    out.reference_values.resize(ds.reference.size());
    out.patient_values.resize(ds.patient.size());
    out.reference_scaled.resize(ds.reference.size());
    out.patient_scaled.resize(ds.patient.size());
    for (const auto& r : ds.reference) {
        out.reference_subjects.push_back(r.subject_id);
        out.reference_ids.push_back(r.source_file);
    }
    for (const auto& r : ds.patient) {
        out.patient_subjects.push_back(r.subject_id);
        out.patient_ids.push_back(r.source_file);
    }

    std::vector<Mat> ref_codes(ds.reference.size()), pat_codes(ds.patient.size());
    for (std::size_t i = 0; i < ds.reference.size(); ++i)
        ref_codes[i] = reducer.encode(ds.reference[i].values);
    for (std::size_t i = 0; i < ds.patient.size(); ++i)
        pat_codes[i] = reducer.encode(ds.patient[i].values);

    if (mode == SubjectMode::between_subject) {
        const auto fitted = detail::fit_metric(kind, ref_codes, opts);
        if (kind == MetricKind::gmm_nll) out.gmm_models.emplace_back(-1, fitted.gmm);
        for (std::size_t i = 0; i < ref_codes.size(); ++i)
            out.reference_values[i] = fitted.evaluate(ref_codes[i]);
        for (std::size_t i = 0; i < pat_codes.size(); ++i)
            out.patient_values[i] = fitted.evaluate(pat_codes[i]);
        const auto scaled = scale_to_range(out.reference_values, out.patient_values);
        out.reference_scaled = scaled.reference_values;
        out.patient_scaled = scaled.patient_values;
        // patient values lead, so a metric that grows with deviation from the
        // reference statistics reports a positive separation
        out.separation = separation_degree(out.patient_scaled, out.reference_scaled);
        return out;
    }

    // within-subject: statistics, scaling, and separation per subject
    double sep_sum = 0.0;
    int sep_count = 0;
    for (int subject : ds.subjects()) {
        std::vector<std::size_t> ref_idx, pat_idx;
        for (std::size_t i = 0; i < ds.reference.size(); ++i)
            if (ds.reference[i].subject_id == subject) ref_idx.push_back(i);
        for (std::size_t i = 0; i < ds.patient.size(); ++i)
            if (ds.patient[i].subject_id == subject) pat_idx.push_back(i);
        if (ref_idx.empty() || pat_idx.empty()) continue;

        std::vector<Mat> subj_refs;
        for (auto i : ref_idx) subj_refs.push_back(ref_codes[i]);
        const auto fitted = detail::fit_metric(kind, subj_refs, opts);
        if (kind == MetricKind::gmm_nll) out.gmm_models.emplace_back(subject, fitted.gmm);

        std::vector<double> x, y;
        for (auto i : ref_idx) {
            out.reference_values[i] = fitted.evaluate(ref_codes[i]);
            x.push_back(out.reference_values[i]);
        }
        for (auto i : pat_idx) {
            out.patient_values[i] = fitted.evaluate(pat_codes[i]);
            y.push_back(out.patient_values[i]);
        }
        const auto scaled = scale_to_range(x, y);
        for (std::size_t k = 0; k < ref_idx.size(); ++k)
            out.reference_scaled[ref_idx[k]] = scaled.reference_values[k];
        for (std::size_t k = 0; k < pat_idx.size(); ++k)
            out.patient_scaled[pat_idx[k]] = scaled.patient_values[k];
        sep_sum += separation_degree(scaled.patient_values, scaled.reference_values);
        ++sep_count;
    }
    if (sep_count == 0)
        throw DataError("within-subject metrics: no subject has both correct and incorrect repetitions");
    out.separation = sep_sum / double(sep_count);
    return out;
}

// ---------------------------------------------------------------------------
// Separation-degree table over exercises x (reducer, metric) combinations.
// ---------------------------------------------------------------------------

struct TableCell {
    bool supported = true;
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> per_exercise;
};

struct SeparationTable {
    SubjectMode mode = SubjectMode::between_subject;
    std::vector<std::string> reducer_labels;
    std::vector<MetricKind> metrics;
    std::vector<std::vector<TableCell>> cells;  // [reducer][metric]
};

inline SeparationTable metric_table(const std::vector<ExerciseDataset>& exercises,
                                    const std::vector<ReducerSpec>& reducers,
                                    const std::vector<MetricKind>& metrics, SubjectMode mode,
                                    const MetricOptions& opts) {
    if (exercises.empty()) throw DataError("metric_table: no exercises");
    SeparationTable table;
    table.mode = mode;
    table.metrics = metrics;
    table.cells.assign(reducers.size(), std::vector<TableCell>(metrics.size()));
    for (std::size_t ri = 0; ri < reducers.size(); ++ri) {
        table.reducer_labels.push_back(reducers[ri].label(exercises[0].dims));
        std::vector<Reducer> fitted;
        for (const auto& ds : exercises) fitted.push_back(fit_reducer(ds, reducers[ri], opts.seed));
        for (std::size_t mi = 0; mi < metrics.size(); ++mi) {
            TableCell& cell = table.cells[ri][mi];
            if (!metric_supported(metrics[mi], fitted[0], opts)) {
                cell.supported = false;
                continue;
            }
            for (std::size_t e = 0; e < exercises.size(); ++e) {
                const auto em = compute_exercise_metrics(exercises[e], fitted[e], metrics[mi], mode, opts);
                cell.per_exercise.push_back(em.separation);
            }
            double sum = 0.0;
            for (double v : cell.per_exercise) sum += v;
            cell.mean = sum / double(cell.per_exercise.size());
            double var = 0.0;
            for (double v : cell.per_exercise) var += (v - cell.mean) * (v - cell.mean);
            cell.stddev = std::sqrt(var / double(cell.per_exercise.size()));
        }
    }
    return table;
}

// "mean (std)" grid, three decimals, one row per (reducer, mode) combination.
inline std::string separation_table_csv(const SeparationTable& table) {
    std::ostringstream out;
    out << "reducer,mode";
    for (MetricKind m : table.metrics) out << ',' << to_string(m);
    out << '\n';
    out << std::fixed << std::setprecision(3);
    for (std::size_t ri = 0; ri < table.reducer_labels.size(); ++ri) {
        out << table.reducer_labels[ri] << ',' << to_string(table.mode);
        for (std::size_t mi = 0; mi < table.metrics.size(); ++mi) {
            const TableCell& c = table.cells[ri][mi];
            if (!c.supported)
                out << ",--";
            else
                out << ',' << c.mean << " (" << c.stddev << ")";
        }
        out << '\n';
    }
    return out.str();
}

// Per-repetition scatter export (scaled metric value per repetition).
inline std::string exercise_metrics_csv(const ExerciseMetrics& em) {
    std::ostringstream out;
    out << "repetition,subject,label,value,scaled\n";
    for (std::size_t i = 0; i < em.reference_values.size(); ++i)
        out << em.reference_ids[i] << ',' << em.reference_subjects[i] << ",correct,"
            << format_double(em.reference_values[i]) << ',' << format_double(em.reference_scaled[i])
            << '\n';
    for (std::size_t i = 0; i < em.patient_values.size(); ++i)
        out << em.patient_ids[i] << ',' << em.patient_subjects[i] << ",incorrect,"
            << format_double(em.patient_values[i]) << ',' << format_double(em.patient_scaled[i]) << '\n';
    return out.str();
}

}  // namespace rehab
