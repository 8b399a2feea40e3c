#pragma once

// Skeleton time-series dataset types: repetitions of an exercise with
// correct/incorrect labels, body-part dimension groupings, resampling to a
// canonical length, train/validation splitting, and a synthetic exercise
// generator for desk-scale runs.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "rehab/common.hpp"
#include "rehab/linalg.hpp"

namespace rehab {

enum class Correctness { correct, incorrect, unlabeled };

inline const char* to_string(Correctness c) {
    switch (c) {
        case Correctness::correct: return "correct";
        case Correctness::incorrect: return "incorrect";
        default: return "unlabeled";
    }
}

// One exercise repetition: frames (rows) by joint-displacement dimensions
// (columns), in source units (degrees).
struct Repetition {
    Mat values;               // T x D after resampling
    int subject_id = 0;
    std::string exercise_id;
    Correctness correctness = Correctness::unlabeled;
    int source_length = 0;    // frames before resampling
    std::string source_file;  // provenance for manifests and error messages

    int frames() const { return values.rows; }
    int dims() const { return values.cols; }
};

// Five named index sets over the D dimensions. Groups may be empty (reduced
// test skeletons) but together must cover every dimension exactly once.
struct BodyPartMap {
    static constexpr int kParts = 5;
    static constexpr std::array<const char*, kParts> names = {
        "left_arm", "right_arm", "left_leg", "right_leg", "trunk"};

    std::array<std::vector<int>, kParts> groups;

    const std::vector<int>& group(const std::string& name) const {
        for (int i = 0; i < kParts; ++i)
            if (name == names[std::size_t(i)]) return groups[std::size_t(i)];
        throw ConfigError("unknown body part: " + name);
    }

    void validate(int dims) const {
        std::vector<int> seen(std::size_t(dims), -1);
        for (int g = 0; g < kParts; ++g) {
            for (int idx : groups[std::size_t(g)]) {
                if (idx < 0 || idx >= dims)
                    throw ConfigError("body part index out of range: " + std::to_string(idx));
                if (seen[std::size_t(idx)] >= 0)
                    throw ConfigError("body part groups overlap at dimension " + std::to_string(idx));
                seen[std::size_t(idx)] = g;
            }
        }
        for (int d = 0; d < dims; ++d)
            if (seen[std::size_t(d)] < 0)
                throw ConfigError("dimension " + std::to_string(d) + " not covered by any body part");
    }

    // Contiguous equal-width default split; used when a schema supplies no
    // explicit mapping. Remainder dimensions go to the trunk.
    static BodyPartMap contiguous(int dims) {
        BodyPartMap m;
        const int per = dims / kParts;
        int next = 0;
        for (int g = 0; g < kParts; ++g) {
            const int take = (g == kParts - 1) ? dims - next : per;
            for (int i = 0; i < take; ++i) m.groups[std::size_t(g)].push_back(next++);
        }
        return m;
    }
};

// All repetitions of one exercise, split into reference (correct) and
// patient (incorrect) sets. Immutable after construction by convention.
struct ExerciseDataset {
    std::string exercise_id;
    std::vector<Repetition> reference;
    std::vector<Repetition> patient;
    int canonical_T = 0;
    int dims = 0;
    BodyPartMap body_parts;

    std::vector<int> subjects() const {
        std::vector<int> ids;
        auto add = [&](const std::vector<Repetition>& reps) {
            for (const auto& r : reps)
                if (std::find(ids.begin(), ids.end(), r.subject_id) == ids.end())
                    ids.push_back(r.subject_id);
        };
        add(reference);
        add(patient);
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    void require_reference() const {
        if (reference.empty())
            throw DataError("exercise " + exercise_id + ": reference set is empty");
    }
};

// ---------------------------------------------------------------------------
// resample: per-dimension linear interpolation onto a uniform grid of
// t_target frames. Endpoints map exactly.
// ---------------------------------------------------------------------------
inline Mat resample_matrix(const Mat& src, int t_target) {
    if (t_target < 2) throw ConfigError("resample: target length must be >= 2");
    if (src.rows < 2)
        throw DataError("resample: degenerate repetition with " + std::to_string(src.rows) + " frame(s)");
    Mat out(t_target, src.cols);
    const double scale = double(src.rows - 1) / double(t_target - 1);
    for (int t = 0; t < t_target; ++t) {
        const double pos = double(t) * scale;
        int i0 = int(pos);
        if (i0 >= src.rows - 1) i0 = src.rows - 2;
        const double w = pos - double(i0);
        const double* r0 = src.row(i0);
        const double* r1 = src.row(i0 + 1);
        double* dst = out.row(t);
        for (int c = 0; c < src.cols; ++c) dst[c] = r0[c] + w * (r1[c] - r0[c]);
    }
    // guard against rounding at the last grid point
    for (int c = 0; c < src.cols; ++c) out(t_target - 1, c) = src(src.rows - 1, c);
    return out;
}

inline Repetition resample(const Repetition& rep, int t_target) {
    Repetition out = rep;
    out.values = resample_matrix(rep.values, t_target);
    return out;
}

// ---------------------------------------------------------------------------
// split: deterministic stratified train/validation split. Each correctness
// class is shuffled with the seed and cut at floor(ratio * class size), so
// class proportions are preserved within one repetition.
// ---------------------------------------------------------------------------
struct SplitResult {
    ExerciseDataset train;
    ExerciseDataset validation;
};

namespace detail {

inline ExerciseDataset empty_like(const ExerciseDataset& ds) {
    ExerciseDataset out;
    out.exercise_id = ds.exercise_id;
    out.canonical_T = ds.canonical_T;
    out.dims = ds.dims;
    out.body_parts = ds.body_parts;
    return out;
}

template <typename RepT>
inline void split_class(const std::vector<RepT>& reps, double ratio, Rng& rng,
                        std::vector<RepT>& train, std::vector<RepT>& val) {
    std::vector<std::size_t> order(reps.size());
    for (std::size_t i = 0; i < reps.size(); ++i) order[i] = i;
    rng.shuffle(order);
    // epsilon guards against 0.7 * 90 = 62.999... style rounding
    const std::size_t n_train = std::size_t(std::floor(ratio * double(reps.size()) + 1e-9));
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_train ? train : val).push_back(reps[order[i]]);
    }
}

}  // namespace detail

inline SplitResult split(const ExerciseDataset& ds, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split: ratio must be in (0, 1)");
    if (ds.reference.size() < 2 || ds.patient.size() < 2)
        throw DataError("split: need at least 2 repetitions per class");
    SplitResult out{detail::empty_like(ds), detail::empty_like(ds)};
    Rng rng(seed);
    detail::split_class(ds.reference, ratio, rng, out.train.reference, out.validation.reference);
    detail::split_class(ds.patient, ratio, rng, out.train.patient, out.validation.patient);
    return out;
}

// ---------------------------------------------------------------------------
// leave_one_subject_out: test set is exactly the held-out subject.
// ---------------------------------------------------------------------------
struct LosoResult {
    ExerciseDataset train;
    ExerciseDataset test;
};

inline LosoResult leave_one_subject_out(const ExerciseDataset& ds, int subject_id) {
    const auto ids = ds.subjects();
    if (std::find(ids.begin(), ids.end(), subject_id) == ids.end())
        throw DataError("leave_one_subject_out: unknown subject " + std::to_string(subject_id));
    if (ids.size() < 2)
        throw DataError("leave_one_subject_out: single-subject dataset leaves an empty train set");
    LosoResult out{detail::empty_like(ds), detail::empty_like(ds)};
    auto route = [&](const std::vector<Repetition>& src, std::vector<Repetition>& train,
                     std::vector<Repetition>& test) {
        for (const auto& r : src) (r.subject_id == subject_id ? test : train).push_back(r);
    };
    route(ds.reference, out.train.reference, out.test.reference);
    route(ds.patient, out.train.patient, out.test.patient);
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic exercise generator. Correct repetitions are a per-subject variant
// of a smooth base trajectory plus measurement noise; incorrect repetitions
// add a systematic offset and a temporal warp scaled by the perturbation
// amplitude. Source lengths vary so the resampling path is exercised.
// ---------------------------------------------------------------------------
struct SynthConfig {
    int dims = 10;
    int canonical_T = 64;
    int subjects = 5;
    int reps_per_subject = 4;  // per class
    int harmonics = 3;
    double noise = 0.05;          // correct-class noise level
    double perturbation = 0.6;    // incorrect-class offset/warp amplitude
    double subject_sigma = 0.15;  // between-subject variability
    double length_jitter = 0.2;   // relative spread of source lengths
    std::string exercise_id = "synth";
};

inline ExerciseDataset synthesize(const SynthConfig& cfg, std::uint64_t seed) {
    if (cfg.dims <= 0 || cfg.canonical_T <= 1 || cfg.subjects <= 0 || cfg.reps_per_subject <= 0)
        throw ConfigError("synthesize: counts and T must be positive");
    if (cfg.canonical_T % 8 != 0)
        throw ConfigError("synthesize: canonical_T must be divisible by 8");

    Rng rng(seed);
    const int D = cfg.dims;
    const int H = cfg.harmonics;

    // base trajectory family: per-dimension sums of sinusoids
    Mat amp(D, H), phase(D, H);
    std::vector<double> freq(static_cast<std::size_t>(H));
    for (int h = 0; h < H; ++h) freq[std::size_t(h)] = double(h + 1) + rng.uniform(-0.2, 0.2);
    for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h) {
            amp(d, h) = rng.uniform(0.3, 1.0) / double(h + 1);
            phase(d, h) = rng.uniform(0.0, 6.283185307179586);
        }
    // fixed direction of the systematic incorrect-class offset
    std::vector<double> offset_dir(static_cast<std::size_t>(D));
    for (int d = 0; d < D; ++d) offset_dir[std::size_t(d)] = rng.gaussian();

    ExerciseDataset ds;
    ds.exercise_id = cfg.exercise_id;
    ds.canonical_T = cfg.canonical_T;
    ds.dims = D;
    ds.body_parts = BodyPartMap::contiguous(D);

    auto eval_base = [&](int d, double tau) {
        double v = 0.0;
        for (int h = 0; h < H; ++h)
            v += amp(d, h) * std::sin(6.283185307179586 * freq[std::size_t(h)] * tau + phase(d, h));
        return v;
    };

    for (int s = 0; s < cfg.subjects; ++s) {
        std::vector<double> subj_offset(static_cast<std::size_t>(D));
        for (int d = 0; d < D; ++d) subj_offset[std::size_t(d)] = rng.gaussian(0.0, cfg.subject_sigma);
        const double subj_speed = 1.0 + rng.gaussian(0.0, cfg.subject_sigma / 3.0);

        for (int klass = 0; klass < 2; ++klass) {
            const bool incorrect = klass == 1;
            for (int r = 0; r < cfg.reps_per_subject; ++r) {
                const int t_src = std::max(
                    2, int(std::lround(double(cfg.canonical_T) *
                                       (1.0 + rng.uniform(-cfg.length_jitter, cfg.length_jitter)))));
                // per-repetition warp exponent; incorrect reps warp systematically
                const double warp = incorrect ? 1.0 + 0.45 * cfg.perturbation + 0.1 * cfg.perturbation * rng.uniform()
                                              : 1.0 + rng.gaussian(0.0, 0.02);
                Mat m(t_src, D);
                for (int t = 0; t < t_src; ++t) {
                    const double tau0 = t_src > 1 ? double(t) / double(t_src - 1) : 0.0;
                    const double tau = std::pow(tau0, warp) * subj_speed;
                    for (int d = 0; d < D; ++d) {
                        double v = eval_base(d, tau) + subj_offset[std::size_t(d)];
                        if (incorrect)
                            v += cfg.perturbation * 0.5 * offset_dir[std::size_t(d)];
                        v += rng.gaussian(0.0, cfg.noise);
                        m(t, d) = v;
                    }
                }
                Repetition rep;
                rep.values = resample_matrix(m, cfg.canonical_T);
                rep.subject_id = s + 1;
                rep.exercise_id = cfg.exercise_id;
                rep.correctness = incorrect ? Correctness::incorrect : Correctness::correct;
                rep.source_length = t_src;
                rep.source_file = cfg.exercise_id + "_s" + std::to_string(s + 1) + "_r" +
                                  std::to_string(r + 1) + (incorrect ? "_inc" : "_cor");
                (incorrect ? ds.patient : ds.reference).push_back(std::move(rep));
            }
        }
    }
    return ds;
}

}  // namespace rehab
