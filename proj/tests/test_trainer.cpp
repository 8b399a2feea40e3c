#include <catch2/catch.hpp>

#include <cmath>

#include "rehab/pipeline.hpp"
#include "rehab/trainer.hpp"
#include "test_support.hpp"

using namespace rehab;
using testsup::TempDir;

namespace {

ModelConfig tiny_model(int dims, int t, std::uint64_t seed = 0) {
    ModelConfig cfg;
    cfg.input_dim = dims;
    cfg.canonical_T = t;
    cfg.body_parts = BodyPartMap::contiguous(dims);
    cfg.part_channels = 3;
    cfg.merge_channels = 4;
    cfg.recurrent_units = {6, 4};
    cfg.fc_units = 6;
    cfg.dropout_rate = 0.1;
    cfg.seed = seed;
    return cfg;
}

std::vector<ScoredRep> scored_from(const std::vector<Repetition>& reps, double lo, double hi,
                                   std::uint64_t seed) {
    Rng rng(seed);
    std::vector<ScoredRep> out;
    for (const auto& r : reps)
        out.push_back({r.values, rng.uniform(lo, hi), r.source_file, r.subject_id, r.correctness});
    return out;
}

}  // namespace

TEST_CASE("early stopper fires after exactly `patience` non-improving epochs") {
    EarlyStopper stop(3);
    CHECK_FALSE(stop.should_stop(1.0));   // improvement (from inf)
    CHECK_FALSE(stop.should_stop(0.9));   // improvement
    CHECK_FALSE(stop.should_stop(0.95));  // stall 1
    CHECK_FALSE(stop.should_stop(0.9));   // stall 2 (not strictly better)
    CHECK(stop.should_stop(0.91));        // stall 3 -> stop
    CHECK(stop.best() == 0.9);
}

TEST_CASE("early stopper resets its counter on improvement") {
    EarlyStopper stop(2);
    CHECK_FALSE(stop.should_stop(1.0));
    CHECK_FALSE(stop.should_stop(1.1));  // stall 1
    CHECK_FALSE(stop.should_stop(0.5));  // improvement resets
    CHECK_FALSE(stop.should_stop(0.6));  // stall 1
    CHECK(stop.should_stop(0.7));        // stall 2
}

TEST_CASE("evaluate computes MAD and residuals") {
    auto model = AssessModel::build(tiny_model(5, 8));
    const auto ds = testsup::tiny_dataset(5, 8, 2, 2, 0.5, 1);
    auto reps = scored_from(ds.reference, 0.0, 1.0, 2);
    auto ev = evaluate(model, reps);
    CHECK(ev.predictions.size() == reps.size());
    double mad = 0.0;
    for (std::size_t i = 0; i < reps.size(); ++i) {
        CHECK(ev.residuals[i] == Approx(reps[i].target - ev.predictions[i]).margin(1e-12));
        mad += std::abs(ev.residuals[i]);
    }
    CHECK(ev.mad == Approx(mad / double(reps.size())).margin(1e-12));
}

TEST_CASE("evaluate: predictions equal to targets give zero MAD") {
    auto model = AssessModel::build(tiny_model(5, 8));
    const auto ds = testsup::tiny_dataset(5, 8, 2, 1, 0.5, 3);
    std::vector<ScoredRep> reps;
    for (const auto& r : ds.reference) {
        ScoredRep s{r.values, 0.0, r.source_file, r.subject_id, r.correctness};
        s.target = model.score_one(r.values);
        reps.push_back(s);
    }
    CHECK(evaluate(model, reps).mad == Approx(0.0).margin(1e-12));
}

TEST_CASE("evaluate: constant prediction against {0,1} targets gives 0.5") {
    // mean |target - 0.5| with targets 0 and 1 is 0.5 regardless of order
    std::vector<double> preds{0.5, 0.5};
    std::vector<double> targets{0.0, 1.0};
    double mad = 0.0;
    for (std::size_t i = 0; i < 2; ++i) mad += std::abs(targets[i] - preds[i]);
    CHECK(mad / 2.0 == Approx(0.5).margin(1e-12));
}

TEST_CASE("evaluate rejects empty input and is order invariant") {
    auto model = AssessModel::build(tiny_model(5, 8));
    CHECK_THROWS_AS(evaluate(model, {}), DataError);
    const auto ds = testsup::tiny_dataset(5, 8, 2, 2, 0.5, 4);
    auto reps = scored_from(ds.reference, 0.0, 1.0, 5);
    const double forward_mad = evaluate(model, reps).mad;
    std::reverse(reps.begin(), reps.end());
    CHECK(evaluate(model, reps).mad == Approx(forward_mad).margin(1e-12));
}

TEST_CASE("train overfits a tiny set without early stopping") {
    const auto ds = testsup::tiny_dataset(5, 16, 2, 2, 0.8, 6);  // 8 reps
    REQUIRE(ds.reference.size() + ds.patient.size() == 8);
    std::vector<ScoredRep> reps;
    for (const auto& r : ds.reference)
        reps.push_back({r.values, 0.95, r.source_file, r.subject_id, r.correctness});
    for (const auto& r : ds.patient)
        reps.push_back({r.values, 0.75, r.source_file, r.subject_id, r.correctness});

    auto cfg = tiny_model(5, 16, 11);
    cfg.dropout_rate = 0.0;
    TrainConfig tc;
    tc.max_epochs = 500;
    tc.patience = 500;  // no early stop
    tc.runs = 1;
    tc.seed = 11;
    auto model = AssessModel::build(cfg);
    const auto res = train_single(model, reps, reps, tc, 11);
    REQUIRE_FALSE(res.diverged);
    const auto ev = evaluate(model, reps);
    CHECK(ev.mad < 0.01);
}

TEST_CASE("training loss at the restored best weights does not exceed the initial loss") {
    const auto ds = testsup::tiny_dataset(5, 16, 3, 2, 0.6, 7);
    auto train_reps = scored_from(ds.reference, 0.2, 0.9, 8);
    auto val_reps = scored_from(ds.patient, 0.2, 0.9, 9);
    auto model = AssessModel::build(tiny_model(5, 16, 12));
    TrainConfig tc;
    tc.max_epochs = 30;
    tc.patience = 30;
    const auto res = train_single(model, train_reps, val_reps, tc, 12);
    REQUIRE_FALSE(res.diverged);
    CHECK(res.best_train_loss <= res.init_train_loss + 1e-12);
    CHECK(res.epochs <= 30);
    // bounded predictions
    for (double p : evaluate(model, val_reps).predictions) CHECK(std::abs(p) <= 10.0);
}

TEST_CASE("training respects the early-stopping patience") {
    const auto ds = testsup::tiny_dataset(5, 16, 3, 2, 0.6, 17);
    auto train_reps = scored_from(ds.reference, 0.2, 0.9, 18);
    auto val_reps = scored_from(ds.patient, 0.2, 0.9, 19);
    auto model = AssessModel::build(tiny_model(5, 16, 13));
    TrainConfig tc;
    tc.max_epochs = 400;
    tc.patience = 5;
    const auto res = train_single(model, train_reps, val_reps, tc, 13);
    REQUIRE_FALSE(res.diverged);
    // stopping implies the last `patience` epochs brought no improvement
    if (res.epochs < tc.max_epochs) {
        const std::size_t n = res.val_curve.size();
        REQUIRE(res.best_epoch >= 0);
        CHECK(std::size_t(res.best_epoch) + std::size_t(tc.patience) + 1 >= n);
        double best_tail = res.val_curve[std::size_t(res.best_epoch)];
        for (std::size_t e = std::size_t(res.best_epoch) + 1; e < n; ++e)
            CHECK(res.val_curve[e] >= best_tail - 1e-15);
    }
}

TEST_CASE("targets outside [0,1] are rejected") {
    const auto ds = testsup::tiny_dataset(5, 8, 2, 2, 0.5, 20);
    auto reps = scored_from(ds.reference, 0.2, 0.8, 21);
    reps[0].target = 1.5;
    auto model = AssessModel::build(tiny_model(5, 8));
    TrainConfig tc;
    CHECK_THROWS_AS(train_single(model, reps, reps, tc, 1), DataError);
}

TEST_CASE("multi-run report aggregates run MADs and is deterministic per seed") {
    const auto ds = testsup::tiny_dataset(5, 8, 3, 2, 0.7, 22);
    auto train_reps = scored_from(ds.reference, 0.3, 0.95, 23);
    auto val_reps = scored_from(ds.patient, 0.3, 0.95, 24);
    TrainConfig tc;
    tc.max_epochs = 8;
    tc.patience = 8;
    tc.runs = 3;
    tc.seed = 5;
    const auto report = train(tiny_model(5, 8, 5), train_reps, val_reps, tc);
    REQUIRE(report.runs.size() == 3);
    double mean = 0.0;
    for (const auto& r : report.runs) {
        REQUIRE_FALSE(r.diverged);
        mean += r.mad;
    }
    mean /= 3.0;
    CHECK(report.mean_mad == Approx(mean).margin(1e-12));
    CHECK(report.runs[0].seed == 5);
    CHECK(report.runs[1].seed == 6);
    CHECK(report.stderr_mad >= 0.0);

    const auto again = train(tiny_model(5, 8, 5), train_reps, val_reps, tc);
    for (std::size_t i = 0; i < 3; ++i) CHECK(again.runs[i].mad == report.runs[i].mad);
}

TEST_CASE("a diverging run is recorded and later runs still execute") {
    const auto ds = testsup::tiny_dataset(5, 8, 2, 2, 0.5, 40);
    auto reps = scored_from(ds.reference, 0.2, 0.8, 41);
    TrainConfig tc;
    tc.max_epochs = 3;
    tc.patience = 3;
    tc.runs = 2;
    tc.seed = 1;
    // one Adam step at this rate puts weights near 1e154, so the second
    // convolution overflows and the forward pass reports a non-finite layer
    tc.learning_rate = 1e154;
    const auto report = train(tiny_model(5, 8, 1), reps, reps, tc);
    REQUIRE(report.runs.size() == 2);
    int diverged = 0;
    for (const auto& r : report.runs)
        if (r.diverged) {
            ++diverged;
            CHECK_FALSE(r.message.empty());
            CHECK(r.message.find("layer") != std::string::npos);
        }
    CHECK(diverged == 2);
    CHECK(std::isnan(report.mean_mad));
}

TEST_CASE("leave-one-subject-out split feeds the trainer directly") {
    const auto ds = testsup::tiny_dataset(5, 16, 4, 2, 0.7, 42);
    const auto loso = leave_one_subject_out(ds, 2);
    auto train_reps = scored_from(loso.train.reference, 0.8, 0.99, 43);
    auto train_pat = scored_from(loso.train.patient, 0.5, 0.8, 44);
    train_reps.insert(train_reps.end(), train_pat.begin(), train_pat.end());
    auto test_reps = scored_from(loso.test.reference, 0.8, 0.99, 45);
    TrainConfig tc;
    tc.max_epochs = 4;
    tc.patience = 4;
    auto model = AssessModel::build(tiny_model(5, 16, 3));
    const auto res = train_single(model, train_reps, test_reps, tc, 3);
    REQUIRE_FALSE(res.diverged);
    for (const auto& r : test_reps) CHECK(r.subject == 2);
    CHECK(std::isfinite(res.mad));
}

TEST_CASE("ablation sweep trains every variant with identical seeds") {
    const auto ds = testsup::tiny_dataset(10, 16, 3, 2, 0.7, 25);
    auto train_reps = scored_from(ds.reference, 0.3, 0.95, 26);
    auto val_reps = scored_from(ds.patient, 0.3, 0.95, 27);
    TrainConfig tc;
    tc.max_epochs = 4;
    tc.patience = 4;
    tc.runs = 1;
    tc.seed = 9;
    const auto entries = ablation_sweep(tiny_model(10, 16, 9), train_reps, val_reps, tc);
    REQUIRE(entries.size() == 5);
    CHECK(entries[0].variant == "full");
    CHECK(entries[1].variant == "no_branches");
    CHECK(entries[2].variant == "no_pyramids");
    CHECK(entries[3].variant == "no_hierarchy");
    CHECK(entries[4].variant == "no_recurrent");
    for (const auto& e : entries) {
        REQUIRE_FALSE(e.failed);
        CHECK(e.report.runs[0].seed == 9);
        CHECK(std::isfinite(e.report.mean_mad));
    }
    const std::string csv = ablation_csv("synth", entries);
    CHECK(csv.find("exercise,full,no_branches,no_pyramids,no_hierarchy,no_recurrent") == 0);
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

namespace {

RunConfig fast_synth_config(std::uint64_t seed = 1) {
    RunConfig cfg;
    cfg.set("dataset.source", "synth");
    cfg.set("dataset.exercise", "s1");
    cfg.set("synth.d", "5");
    cfg.set("synth.t", "16");
    cfg.set("synth.subjects", "3");
    cfg.set("synth.reps", "3");
    cfg.set("dimred.kind", "pca");
    cfg.set("dimred.m", "2");
    cfg.set("metrics.kind", "euclid");
    cfg.set("model.part_channels", "2");
    cfg.set("model.merge_channels", "3");
    cfg.set("model.recurrent_units", "5,4");
    cfg.set("trainer.max_epochs", "6");
    cfg.set("trainer.patience", "6");
    cfg.set("trainer.runs", "1");
    cfg.set("seed", std::to_string(seed));
    return cfg;
}

}  // namespace

TEST_CASE("pipeline runs end to end and persists artifacts") {
    TempDir dir("pipeline");
    const auto cfg = fast_synth_config();
    const auto res = run_pipeline(cfg, dir.path);
    REQUIRE(res.report.runs.size() == 1);
    CHECK(std::isfinite(res.report.mean_mad));

    Pipeline p(cfg, dir.path);
    CHECK(std::filesystem::exists(p.manifest_path()));
    CHECK(std::filesystem::exists(p.reducer_path()));
    CHECK(std::filesystem::exists(p.values_path()));
    CHECK(std::filesystem::exists(p.scores_path()));
    CHECK(std::filesystem::exists(p.split_path()));
    CHECK(std::filesystem::exists(p.checkpoint_path(0)));
    CHECK(std::filesystem::exists(p.best_checkpoint_path()));
    CHECK(std::filesystem::exists(p.train_report_path()));
    CHECK(std::filesystem::exists(p.residuals_path()));
    CHECK(std::filesystem::exists(dir.path / "resolved_config.txt"));
}

TEST_CASE("pipeline reruns reproduce identical artifact hashes") {
    TempDir a("pipe_a"), b("pipe_b");
    const auto cfg = fast_synth_config(3);
    run_pipeline(cfg, a.path);
    run_pipeline(cfg, b.path);
    Pipeline pa(cfg, a.path), pb(cfg, b.path);
    for (auto getter : {&Pipeline::manifest_path, &Pipeline::reducer_path, &Pipeline::values_path,
                        &Pipeline::scores_path, &Pipeline::split_path, &Pipeline::train_report_path,
                        &Pipeline::best_checkpoint_path, &Pipeline::residuals_path}) {
        const auto pa_path = (pa.*getter)();
        const auto pb_path = (pb.*getter)();
        REQUIRE(std::filesystem::exists(pa_path));
        REQUIRE(hash_file(pa_path) == hash_file(pb_path));
    }
}

TEST_CASE("swapping the metric changes targets but not the split membership") {
    TempDir a("pipe_m1"), b("pipe_m2");
    auto cfg1 = fast_synth_config(4);
    auto cfg2 = fast_synth_config(4);
    cfg2.set("metrics.kind", "dtw");
    run_pipeline(cfg1, a.path);
    run_pipeline(cfg2, b.path);
    Pipeline p1(cfg1, a.path), p2(cfg2, b.path);
    // different stage hash, identical membership
    CHECK(p1.split_path().filename() != p2.split_path().filename());
    CHECK(read_text_file(p1.split_path()) == read_text_file(p2.split_path()));
    CHECK(read_text_file(p1.scores_path()) != read_text_file(p2.scores_path()));
}

TEST_CASE("stage failures carry the stage name") {
    TempDir dir("pipe_fail");
    auto cfg = fast_synth_config(5);
    Pipeline p(cfg, dir.path);
    const auto ds = p.load_dataset();
    CHECK(std::filesystem::exists(p.manifest_path()));

    // a dataset whose reference side cannot support PCA fails in-stage
    auto broken = ds;
    for (auto& rep : broken.reference) rep.values.fill(1.0);
    try {
        p.fit_reducer_stage(broken);
        FAIL("expected stage error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("stage reduce") != std::string::npos);
    }

    // config-level failures keep their type for the CLI exit-code mapping
    auto bad_cfg = fast_synth_config(5);
    bad_cfg.set("dimred.m", "64");
    TempDir dir2("pipe_fail2");
    Pipeline p2(bad_cfg, dir2.path);
    CHECK_THROWS_AS(p2.fit_reducer_stage(ds), ConfigError);
}

TEST_CASE("metric and score artifacts reload to the values that were computed") {
    TempDir dir("pipe_reload");
    const auto cfg = fast_synth_config(6);
    Pipeline p(cfg, dir.path);
    const auto ds = p.load_dataset();
    const Reducer red = p.fit_reducer_stage(ds);
    const auto em = p.compute_metrics_stage(ds, red);
    const auto sd = p.compute_scores_stage(ds, em);

    const auto em2 = p.load_metrics_stage(ds);
    REQUIRE(em2.reference_values.size() == em.reference_values.size());
    for (std::size_t i = 0; i < em.reference_values.size(); ++i)
        CHECK(em2.reference_values[i] == em.reference_values[i]);
    for (std::size_t i = 0; i < em.patient_values.size(); ++i)
        CHECK(em2.patient_scaled[i] == em.patient_scaled[i]);

    const auto sd2 = p.load_scores_stage(ds);
    REQUIRE(sd2.reference.size() == sd.reference.size());
    for (std::size_t i = 0; i < sd.reference.size(); ++i)
        CHECK(sd2.reference[i].target == sd.reference[i].target);
    for (std::size_t i = 0; i < sd.patient.size(); ++i)
        CHECK(sd2.patient[i].target == sd.patient[i].target);
}

TEST_CASE("scored split matches the dataset split membership for the same seed") {
    const auto ds = testsup::tiny_dataset(5, 16, 4, 3, 0.5, 30);
    const auto em_opts = MetricOptions{};
    const Reducer raw = fit_raw(ds);
    const auto em =
        compute_exercise_metrics(ds, raw, MetricKind::euclidean, SubjectMode::between_subject, em_opts);
    const auto sd = make_scored_dataset(ds, em, 3.2, 10.0);
    const auto scored = split_scored(sd, 0.7, 99);
    const auto plain = split(ds, 0.7, 99);
    REQUIRE(scored.train.size() == plain.train.reference.size() + plain.train.patient.size());
    std::set<std::string> scored_train;
    for (const auto& r : scored.train) scored_train.insert(r.id);
    for (const auto& r : plain.train.reference) CHECK(scored_train.count(r.source_file) == 1);
    for (const auto& r : plain.train.patient) CHECK(scored_train.count(r.source_file) == 1);
}

TEST_CASE("scored targets follow the correct/incorrect scoring rules") {
    const auto ds = testsup::tiny_dataset(5, 16, 3, 3, 0.8, 31);
    const Reducer raw = fit_raw(ds);
    const auto em =
        compute_exercise_metrics(ds, raw, MetricKind::euclidean, SubjectMode::between_subject,
                                 MetricOptions{});
    const auto sd = make_scored_dataset(ds, em, 3.2, 10.0);
    const auto params = ScoringParams::from_reference(em.reference_values, 3.2, 10.0);
    for (std::size_t i = 0; i < sd.reference.size(); ++i)
        CHECK(sd.reference[i].target ==
              Approx(score_reference_value(em.reference_values[i], params)).margin(1e-12));
    const auto expected = score_patient(em.reference_values, em.patient_values, params);
    for (std::size_t i = 0; i < sd.patient.size(); ++i)
        CHECK(sd.patient[i].target == Approx(expected[i]).margin(1e-12));
    for (const auto& r : sd.all()) {
        CHECK(r.target > 0.0);
        CHECK(r.target < 1.0);
    }
}
