#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include <icgpr/dataset.hpp>

#include "support/oracles.hpp"
#include "support/synthetic_battery.hpp"

namespace fs = std::filesystem;
using oracles::run_cli;
using oracles::TempDir;

namespace {

// One battery CSV shared by the whole file; the generator is deterministic.
fs::path shared_battery_csv() {
    static TempDir tmp("cli_data");
    static fs::path csv = [] {
        synth::GeneratorConfig cfg;
        cfg.n_cycles = 40;
        cfg.bump_cycles = {14, 27};
        const auto ds = synth::make_battery(cfg);
        const fs::path p = tmp.path / "battery.csv";
        icgpr::write_dataset_csv(ds, p);
        return p;
    }();
    return csv;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("validate reports cycle counts on a healthy file") {
    TempDir tmp("cli_validate");
    const auto r = run_cli("validate --input " + q(shared_battery_csv()), tmp.path);
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("cycles: 40, usable: 40") != std::string::npos);
    // Per-cycle diagnostics ride on stderr as JSON.
    CHECK(r.err.find("\"cycles\"") != std::string::npos);
}

TEST_CASE("validate rejects a file with a missing column") {
    TempDir tmp("cli_missing");
    const fs::path bad = tmp.path / "bad.csv";
    std::ofstream(bad) << "battery_id,cycle_index,phase,time_s,current_A,discharge_capacity_Ah\n"
                       << "B1,1,charge,0,1.5,2.0\n";
    const auto r = run_cli("validate --input " + q(bad), tmp.path);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("voltage_V") != std::string::npos);
    CHECK(r.err.find("missing_column") != std::string::npos);
}

TEST_CASE("validate rejects an empty dataset") {
    TempDir tmp("cli_empty");
    const fs::path empty = tmp.path / "empty.csv";
    std::ofstream(empty)
        << "battery_id,cycle_index,phase,time_s,voltage_V,current_A,discharge_capacity_Ah\n";
    const auto r = run_cli("validate --input " + q(empty), tmp.path);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("empty_dataset") != std::string::npos);
}

TEST_CASE("validate rejects a nonexistent input path") {
    TempDir tmp("cli_noent");
    const auto r = run_cli("validate --input " + q(tmp.path / "nope.csv"), tmp.path);
    CHECK(r.exit_code == 2);
}

TEST_CASE("ic writes one curve file per requested cycle") {
    TempDir tmp("cli_ic");
    const auto r = run_cli("ic --input " + q(shared_battery_csv()) + " --cycles 1,14,27 --out-dir " +
                               q(tmp.path),
                           tmp.path);
    REQUIRE(r.exit_code == 0);
    for (int c : {1, 14, 27}) {
        const fs::path f = tmp.path / ("ic_cycle_" + std::to_string(c) + ".csv");
        INFO(f.string());
        REQUIRE(fs::exists(f));
        const auto text = oracles::slurp_file(f);
        CHECK(text.rfind("voltage_V,dq_dv_raw,dq_dv_gaussian\n", 0) == 0);
    }
    CHECK(r.out.find("ic_cycle_14.csv") != std::string::npos);
}

TEST_CASE("ic appends a moving-average column when asked") {
    TempDir tmp("cli_ic_ma");
    const auto r = run_cli("ic --input " + q(shared_battery_csv()) +
                               " --cycles 1 --ma-window 10 --out-dir " + q(tmp.path),
                           tmp.path);
    REQUIRE(r.exit_code == 0);
    const auto text = oracles::slurp_file(tmp.path / "ic_cycle_1.csv");
    REQUIRE(text.rfind("voltage_V,dq_dv_raw,dq_dv_gaussian,dq_dv_ma\n", 0) == 0);
    // The trailing window leaves the last rows without an MA value.
    CHECK(text.find(",\n") != std::string::npos);
}

TEST_CASE("ic refuses a cycle index that is not in the dataset") {
    TempDir tmp("cli_ic_bad");
    const auto r = run_cli("ic --input " + q(shared_battery_csv()) + " --cycles 9999 --out-dir " +
                               q(tmp.path),
                           tmp.path);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("9999") != std::string::npos);
}

TEST_CASE("evaluate runs a fraction split end to end") {
    TempDir tmp("cli_eval");
    const auto r = run_cli("evaluate --input " + q(shared_battery_csv()) +
                               " --split-fraction 0.6 --restarts 3 --out-dir " + q(tmp.path),
                           tmp.path);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("n_train: 24") != std::string::npos);
    CHECK(r.out.find("n_test: 16") != std::string::npos);
    CHECK(r.out.find("mae:") != std::string::npos);
    CHECK(r.out.find("rmse:") != std::string::npos);
    REQUIRE(fs::exists(tmp.path / "report.json"));
    REQUIRE(fs::exists(tmp.path / "report.csv"));

    const auto report = nlohmann::json::parse(oracles::slurp_file(tmp.path / "report.json"));
    CHECK(report.at("battery_id") == "SYN1");
    CHECK(report.at("summary").at("n_train") == 24);
    CHECK(report.at("rows").size() == 40);
}

TEST_CASE("evaluate runs an offset split end to end") {
    TempDir tmp("cli_eval_off");
    const auto r = run_cli("evaluate --input " + q(shared_battery_csv()) +
                               " --skip-cycles 5 --train-count 20 --restarts 3 --out-dir " +
                               q(tmp.path),
                           tmp.path);
    REQUIRE(r.exit_code == 0);
    const auto report = nlohmann::json::parse(oracles::slurp_file(tmp.path / "report.json"));
    CHECK(report.at("split").at("train_cycles").front() == 6);
    CHECK(report.at("split").at("train_cycles").back() == 25);
    CHECK(report.at("split").at("test_cycles").back() == 40);
    CHECK(report.at("summary").at("n_train") == 20);
    CHECK(report.at("summary").at("n_test") == 15);
}

TEST_CASE("evaluate rejects mixing the two split modes") {
    TempDir tmp("cli_eval_mix");
    const auto r = run_cli("evaluate --input " + q(shared_battery_csv()) +
                               " --split-fraction 0.5 --skip-cycles 5 --train-count 10 --out-dir " +
                               q(tmp.path),
                           tmp.path);
    CHECK(r.exit_code == 2);
}

TEST_CASE("evaluate rejects --skip-cycles without --train-count") {
    TempDir tmp("cli_eval_skip_only");
    const auto r = run_cli("evaluate --input " + q(shared_battery_csv()) +
                               " --skip-cycles 5 --out-dir " + q(tmp.path),
                           tmp.path);
    CHECK(r.exit_code == 2);
}

TEST_CASE("evaluate rejects an unknown q-ref policy") {
    TempDir tmp("cli_eval_qref");
    const auto r = run_cli("evaluate --input " + q(shared_battery_csv()) +
                               " --q-ref nominal --out-dir " + q(tmp.path),
                           tmp.path);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("q-ref") != std::string::npos);
}

TEST_CASE("evaluate emits byte-identical reports for identical invocations") {
    TempDir a("cli_det_a");
    TempDir b("cli_det_b");
    const std::string common = "evaluate --input " + q(shared_battery_csv()) +
                               " --split-fraction 0.6 --restarts 3 --seed 42 --out-dir ";
    const auto ra = run_cli(common + q(a.path), a.path);
    const auto rb = run_cli(common + q(b.path), b.path);
    REQUIRE(ra.exit_code == 0);
    REQUIRE(rb.exit_code == 0);
    CHECK(oracles::slurp_file(a.path / "report.json") ==
          oracles::slurp_file(b.path / "report.json"));
    CHECK(oracles::slurp_file(a.path / "report.csv") == oracles::slurp_file(b.path / "report.csv"));
    CHECK(ra.out == rb.out);
}

TEST_CASE("invoking without a subcommand fails") {
    TempDir tmp("cli_nosub");
    const auto r = run_cli("", tmp.path);
    CHECK(r.exit_code != 0);
}
