#include <catch2/catch.hpp>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "rehab/config.hpp"
#include "rehab/pipeline.hpp"
#include "test_support.hpp"

using namespace rehab;
using testsup::TempDir;

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

TEST_CASE("config rejects unknown keys") {
    RunConfig cfg;
    CHECK_THROWS_AS(cfg.set("dataset.rootz", "x"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text("nonsense.key = 1\n"), ConfigError);
}

TEST_CASE("config defaults match the documented values") {
    RunConfig cfg;
    CHECK(cfg.get_int("trainer.batch_size") == 5);
    CHECK(cfg.get_double("trainer.lr") == Approx(1e-3));
    CHECK(cfg.get_int("trainer.max_epochs") == 500);
    CHECK(cfg.get_int("trainer.patience") == 30);
    CHECK(cfg.get_int("trainer.runs") == 5);
    CHECK(cfg.get_double("trainer.ratio") == Approx(0.7));
    CHECK(cfg.get_double("scoring.alpha1") == Approx(3.2));
    CHECK(cfg.get_double("scoring.alpha2") == Approx(10.0));
    CHECK(cfg.get_int("metrics.gmm.components") == 6);
    CHECK(cfg.get("dimred.kind") == "ae");
    CHECK(cfg.get_ints("model.recurrent_units") == std::vector<int>{80, 40, 40, 80});
    CHECK(cfg.get_double("model.dropout") == Approx(0.25));
}

TEST_CASE("config parses files, ignores comments, validates types") {
    const auto cfg = RunConfig::from_text("# comment\n\ntrainer.runs = 7\nmetrics.kind = dtw\n");
    CHECK(cfg.get_int("trainer.runs") == 7);
    CHECK(cfg.get("metrics.kind") == "dtw");
    CHECK_THROWS_AS(cfg.get_int("metrics.kind"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text("trainer.runs 7\n"), ConfigError);
}

TEST_CASE("resolved text is sorted, complete, and reparsable") {
    RunConfig cfg;
    cfg.set("trainer.runs", "9");
    const std::string text = cfg.resolved_text();
    const auto back = RunConfig::from_text(text);
    CHECK(back.get_int("trainer.runs") == 9);
    CHECK(back.resolved_text() == text);
    CHECK(text.find("seed = 0") != std::string::npos);
}

TEST_CASE("stage hashes depend only on their sections") {
    RunConfig a, b;
    b.set("trainer.runs", "9");
    CHECK(a.stage_hash({"dataset", "synth", "seed"}) == b.stage_hash({"dataset", "synth", "seed"}));
    CHECK(a.stage_hash({"trainer"}) != b.stage_hash({"trainer"}));
    RunConfig c;
    c.set("seed", "1");
    CHECK(a.stage_hash({"dataset", "synth", "seed"}) != c.stage_hash({"dataset", "synth", "seed"}));
}

// ---------------------------------------------------------------------------
// Binary-level checks through the real executable
// ---------------------------------------------------------------------------

namespace {

struct CliResult {
    int exit_code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args) {
    const char* bin = std::getenv("REHAB_CLI_BIN");
    REQUIRE(bin != nullptr);
    const std::string cmd = std::string(bin) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult res;
    std::array<char, 512> buf{};
    while (fgets(buf.data(), int(buf.size()), pipe)) res.output += buf.data();
    const int status = pclose(pipe);
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

std::string write_cli_config(const TempDir& dir, std::uint64_t seed) {
    std::ostringstream cfg;
    cfg << "dataset.source = synth\n"
        << "dataset.exercise = s1\n"
        << "synth.d = 5\nsynth.t = 16\nsynth.subjects = 3\nsynth.reps = 3\n"
        << "dimred.kind = pca\ndimred.m = 2\n"
        << "metrics.kind = euclid\n"
        << "model.part_channels = 2\nmodel.merge_channels = 3\nmodel.recurrent_units = 5,4\n"
        << "trainer.max_epochs = 5\ntrainer.patience = 5\ntrainer.runs = 1\n"
        << "seed = " << seed << "\n";
    const auto path = dir.path / "run.cfg";
    write_text_file(path, cfg.str());
    return path.string();
}

}  // namespace

TEST_CASE("cli: usage errors exit with code 1") {
    CHECK(run_cli("").exit_code == 1);
    CHECK(run_cli("frobnicate").exit_code == 1);
    CHECK(run_cli("ingest --no-such-flag").exit_code == 1);
    const auto bad_cfg = run_cli("ingest --config /nonexistent/x.cfg");
    CHECK(bad_cfg.exit_code == 2);  // unreadable config file is a data problem
}

TEST_CASE("cli: report with no artifacts exits 2 and lists the missing stages") {
    TempDir dir("cli_report");
    const auto cfg = write_cli_config(dir, 1);
    const auto res = run_cli("report --config " + cfg + " --out " + (dir.path / "art").string());
    CHECK(res.exit_code == 2);
    CHECK(res.output.find("missing") != std::string::npos);
    CHECK(res.output.find("metric") != std::string::npos);
    CHECK(res.output.find("train") != std::string::npos);
}

TEST_CASE("cli: dependent commands demand their input artifacts") {
    TempDir dir("cli_dep");
    const auto cfg = write_cli_config(dir, 2);
    const std::string out = (dir.path / "art").string();
    const auto res = run_cli("reduce --config " + cfg + " --out " + out);
    CHECK(res.exit_code == 2);
    CHECK(res.output.find("rehab ingest") != std::string::npos);
    const auto res2 = run_cli("score --config " + cfg + " --out " + out);
    CHECK(res2.exit_code == 2);
}

TEST_CASE("cli: full stage chain runs clean and report renders") {
    TempDir dir("cli_chain");
    const auto cfg = write_cli_config(dir, 3);
    const std::string out = (dir.path / "art").string();
    const std::string base = " --config " + cfg + " --out " + out;

    for (const std::string cmd : {"ingest", "reduce", "metric", "score", "train", "eval"}) {
        const auto res = run_cli(cmd + base);
        INFO(cmd << " output:\n" << res.output);
        REQUIRE(res.exit_code == 0);
    }
    const auto rep = run_cli("report" + base);
    INFO(rep.output);
    CHECK(rep.exit_code == 0);
    CHECK(std::filesystem::exists(dir.path / "art" / "plots" / "metric_scatter.svg"));
    CHECK(std::filesystem::exists(dir.path / "art" / "plots" / "quality_scores.svg"));
    CHECK(std::filesystem::exists(dir.path / "art" / "plots" / "predictions.svg"));
}

TEST_CASE("cli: synth exports a dataset that ingest can consume") {
    TempDir dir("cli_synth");
    const auto cfg = write_cli_config(dir, 4);
    const std::string out = (dir.path / "art").string();
    const auto synth = run_cli("synth --config " + cfg + " --out " + out);
    REQUIRE(synth.exit_code == 0);
    REQUIRE(std::filesystem::exists(dir.path / "art" / "synth_data" / "schema.txt"));

    std::ostringstream file_cfg;
    file_cfg << "dataset.source = files\n"
             << "dataset.root = " << (dir.path / "art" / "synth_data").string() << "\n"
             << "dataset.schema = schema.txt\n"
             << "dataset.exercise = s1\n";
    write_text_file(dir.path / "files.cfg", file_cfg.str());
    const auto ing = run_cli("ingest --config " + (dir.path / "files.cfg").string() + " --out " + out);
    INFO(ing.output);
    CHECK(ing.exit_code == 0);
    CHECK(ing.output.find("9 reference") != std::string::npos);
}

TEST_CASE("cli: identical config and seed reproduce identical artifacts") {
    TempDir dir("cli_det");
    const auto cfg = write_cli_config(dir, 5);
    const std::string out1 = (dir.path / "a1").string();
    const std::string out2 = (dir.path / "a2").string();
    for (const std::string out : {out1, out2}) {
        REQUIRE(run_cli("ingest --config " + cfg + " --out " + out).exit_code == 0);
        REQUIRE(run_cli("reduce --config " + cfg + " --out " + out).exit_code == 0);
        REQUIRE(run_cli("metric --config " + cfg + " --out " + out).exit_code == 0);
    }
    RunConfig rc = RunConfig::from_file(cfg);
    Pipeline p1(rc, out1), p2(rc, out2);
    CHECK(hash_file(p1.manifest_path()) == hash_file(p2.manifest_path()));
    CHECK(hash_file(p1.reducer_path()) == hash_file(p2.reducer_path()));
    CHECK(hash_file(p1.values_path()) == hash_file(p2.values_path()));
}

TEST_CASE("cli: REHAB_OUT is honored when --out is absent") {
    TempDir dir("cli_env");
    const auto cfg = write_cli_config(dir, 7);
    const char* bin = std::getenv("REHAB_CLI_BIN");
    REQUIRE(bin != nullptr);
    const std::string cmd = "REHAB_OUT=" + (dir.path / "envout").string() + " " + bin +
                            " ingest --config " + cfg + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 512> buf{};
    std::string output;
    while (fgets(buf.data(), int(buf.size()), pipe)) output += buf.data();
    const int status = pclose(pipe);
    REQUIRE(WIFEXITED(status));
    REQUIRE(WEXITSTATUS(status) == 0);
    CHECK(std::filesystem::exists(dir.path / "envout" / "resolved_config.txt"));
}

TEST_CASE("cli: flag overrides land in the resolved config") {
    TempDir dir("cli_override");
    const auto cfg = write_cli_config(dir, 8);
    const std::string out = (dir.path / "art").string();
    REQUIRE(run_cli("ingest --config " + cfg + " --seed 777 --out " + out).exit_code == 0);
    const std::string resolved = read_text_file(dir.path / "art" / "resolved_config.txt");
    CHECK(resolved.find("seed = 777") != std::string::npos);
}

TEST_CASE("cli: metric grid mode writes the separation table") {
    TempDir dir("cli_grid");
    std::ostringstream cfg;
    cfg << "dataset.source = synth\ndataset.exercise = s1\n"
        << "synth.d = 12\nsynth.t = 16\nsynth.subjects = 3\nsynth.reps = 3\n"
        << "dimred.m = 2\n"
        << "dimred.ae.units = 6,4\ndimred.ae.epochs = 4\n"
        << "metrics.gmm.components = 2\n"
        << "seed = 6\n";
    write_text_file(dir.path / "grid.cfg", cfg.str());
    const std::string out = (dir.path / "art").string();
    const auto res = run_cli("metric --config " + (dir.path / "grid.cfg").string() +
                             " --reducer all --metric all --mode all --out " + out);
    INFO(res.output);
    REQUIRE(res.exit_code == 0);
    CHECK(res.output.find("--") != std::string::npos);  // gmm x raw refused
    CHECK(res.output.find("euclidean") != std::string::npos);
    RunConfig rc = RunConfig::from_file((dir.path / "grid.cfg").string());
    Pipeline p(rc, out);
    CHECK(std::filesystem::exists(p.table_path()));
}
