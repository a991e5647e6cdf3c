// icgpr command-line tool.
//
//   icgpr validate --input data.csv [--schema schema.json]
//   icgpr ic       --input data.csv --cycles 1,31,61 [--ma-window 10] ...
//   icgpr evaluate --input data.csv [--split-fraction 0.55 | --skip-cycles K --train-count T] ...
//
// Exit codes: 0 success, 2 input/validation error, 3 computation error.
// Machine-readable diagnostics go to stderr as JSON; human summaries to stdout.
// Output files are written to a temp path and renamed into place so a failed
// run never leaves partial files behind.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <icgpr/icgpr.hpp>

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitComputation = 3;

void emit_diagnostic(const std::string& code, const std::string& message) {
    nlohmann::ordered_json j;
    j["error"] = code;
    j["message"] = message;
    std::cerr << j.dump() << '\n';
}

// Runs `write` against `<path>.tmp` and renames on success.
void write_atomic(const fs::path& path,
                  const std::function<void(const fs::path&)>& write) {
    fs::path tmp = path;
    tmp += ".tmp";
    write(tmp);
    fs::rename(tmp, path);
}

icgpr::BatteryDataset load_input(const std::string& input, const std::string& schema_path) {
    icgpr::CsvSchema schema;
    if (!schema_path.empty()) schema = icgpr::CsvSchema::from_json_file(schema_path);
    return icgpr::load_dataset(input, schema);
}

struct IcFlags {
    std::string input;
    std::string schema;
    std::string out_dir = ".";
    std::vector<int> cycles;
    int ma_window = 0;  // 0: omit the moving-average column
    int kernel_len = 17;
    double sigma = 5.0;
    double dv_mv = 1.0;
};

struct EvaluateFlags {
    std::string input;
    std::string schema;
    std::string out_dir = ".";
    double split_fraction = 0.55;
    int skip_cycles = -1;
    int train_count = -1;
    int kernel_len = 17;
    double sigma = 5.0;
    double dv_mv = 1.0;
    double cc_tol = icgpr::kDefaultCcToleranceA;
    int restarts = 10;
    std::uint64_t seed = 42;
    std::string q_ref = "first";
};

int cmd_validate(const std::string& input, const std::string& schema_path) {
    const auto dataset = load_input(input, schema_path);

    nlohmann::ordered_json cycles_diag = nlohmann::ordered_json::array();
    int usable = 0;
    for (const auto& cycle : dataset.cycles) {
        nlohmann::ordered_json row;
        row["cycle_index"] = cycle.cycle_index;
        try {
            icgpr::extract_cc_segment(cycle, dataset.cc_current_A, icgpr::kDefaultCcToleranceA,
                                      dataset.charge_cutoff_V);
            row["usable"] = true;
            ++usable;
        } catch (const icgpr::Error& e) {
            row["usable"] = false;
            row["reason"] = e.code();
        }
        cycles_diag.push_back(row);
    }

    const auto total = static_cast<int>(dataset.cycles.size());
    nlohmann::ordered_json diag;
    diag["battery_id"] = dataset.battery_id;
    diag["cycles"] = cycles_diag;
    std::cerr << diag.dump() << '\n';
    std::cout << "cycles: " << total << ", usable: " << usable << '\n';

    // Zero exit requires at least 80% of cycles to yield a CC segment.
    if (5 * usable < 4 * total) {
        emit_diagnostic("too_few_usable_cycles",
                        "fewer than 80% of cycles yield a usable CC segment");
        return kExitInput;
    }
    return kExitOk;
}

int cmd_ic(const IcFlags& flags) {
    const auto dataset = load_input(flags.input, flags.schema);
    const double dv = flags.dv_mv * 1e-3;

    icgpr::FilterConfig gauss;
    gauss.method = icgpr::FilterMethod::gaussian;
    gauss.kernel_len = flags.kernel_len;
    gauss.sigma_samples = flags.sigma;

    fs::create_directories(flags.out_dir);
    for (int index : flags.cycles) {
        const auto* cycle = dataset.find_cycle(index);
        if (!cycle)
            throw icgpr::InputError("unknown_cycle",
                                    "cycle " + std::to_string(index) + " not in dataset");
        const auto segment = icgpr::extract_cc_segment(
            *cycle, dataset.cc_current_A, icgpr::kDefaultCcToleranceA, dataset.charge_cutoff_V);
        const auto raw = icgpr::compute_ic(segment, dv);
        const auto smooth = icgpr::smooth_curve(raw, gauss);

        std::vector<double> ma;
        if (flags.ma_window > 0)
            ma = icgpr::moving_average(raw.dq_dv_AhPerV, flags.ma_window);

        const fs::path out = fs::path(flags.out_dir) /
                             ("ic_cycle_" + std::to_string(index) + ".csv");
        write_atomic(out, [&](const fs::path& tmp) {
            std::ofstream f(tmp);
            if (!f) throw icgpr::InputError("file_not_writable", "cannot write " + tmp.string());
            f << "voltage_V,dq_dv_raw,dq_dv_gaussian";
            if (flags.ma_window > 0) f << ",dq_dv_ma";
            f << '\n';
            for (std::size_t i = 0; i < raw.voltage_grid_V.size(); ++i) {
                f << icgpr::detail::format_double(raw.voltage_grid_V[i]) << ','
                  << icgpr::detail::format_double(raw.dq_dv_AhPerV[i]) << ','
                  << icgpr::detail::format_double(smooth.dq_dv_AhPerV[i]);
                if (flags.ma_window > 0) {
                    f << ',';
                    // Trailing window: row i holds mean(raw[i .. i+N-1]); the
                    // final N-1 rows have no complete window.
                    if (i < ma.size()) f << icgpr::detail::format_double(ma[i]);
                }
                f << '\n';
            }
        });
        std::cout << "wrote " << out.string() << '\n';
    }
    return kExitOk;
}

int cmd_evaluate(const EvaluateFlags& flags, bool offset_mode) {
    const auto dataset = load_input(flags.input, flags.schema);

    icgpr::ExperimentConfig config;
    config.cc_tolerance_A = flags.cc_tol;
    config.dv_V = flags.dv_mv * 1e-3;
    config.filter.method = icgpr::FilterMethod::gaussian;
    config.filter.kernel_len = flags.kernel_len;
    config.filter.sigma_samples = flags.sigma;
    if (offset_mode) {
        config.split.mode = icgpr::SplitMode::offset;
        config.split.skip_cycles = flags.skip_cycles;
        config.split.train_count = flags.train_count;
    } else {
        config.split.mode = icgpr::SplitMode::fraction;
        config.split.train_fraction = flags.split_fraction;
    }
    config.fit.restarts = flags.restarts;
    config.fit.seed = flags.seed;
    if (flags.q_ref == "rated") {
        config.q_ref = icgpr::QRefPolicy::rated;
    } else if (flags.q_ref == "first") {
        config.q_ref = icgpr::QRefPolicy::first_train_cycle;
    } else {
        throw icgpr::InvalidConfigError("--q-ref must be 'first' or 'rated'");
    }

    const auto result = icgpr::run_experiment(dataset, config);

    fs::create_directories(flags.out_dir);
    const fs::path dir(flags.out_dir);
    write_atomic(dir / "report.json",
                 [&](const fs::path& p) { icgpr::write_report_json(result, p); });
    write_atomic(dir / "report.csv",
                 [&](const fs::path& p) { icgpr::write_report_csv(result, p); });

    std::cout << "battery: " << result.battery_id << ", n_train: " << result.n_train
              << ", n_test: " << result.n_test << '\n';
    std::cout << "mae: " << icgpr::detail::format_double(result.test_metrics.mae)
              << ", rmse: " << icgpr::detail::format_double(result.test_metrics.rmse)
              << ", ci_coverage_95: " << icgpr::detail::format_double(result.ci_coverage) << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Battery SOH estimation from incremental-capacity features"};
    app.require_subcommand(1);

    std::string v_input, v_schema;
    auto* validate = app.add_subcommand("validate", "Check a dataset and report usable cycles");
    validate->add_option("--input", v_input, "input CSV")->required();
    validate->add_option("--schema", v_schema, "schema JSON");

    IcFlags ic;
    auto* ic_cmd = app.add_subcommand("ic", "Export IC curves for selected cycles");
    ic_cmd->add_option("--input", ic.input, "input CSV")->required();
    ic_cmd->add_option("--schema", ic.schema, "schema JSON");
    ic_cmd->add_option("--out-dir", ic.out_dir, "output directory");
    ic_cmd->add_option("--cycles", ic.cycles, "cycle indices")->required()->delimiter(',');
    ic_cmd->add_option("--ma-window", ic.ma_window, "add a moving-average column with N taps");
    ic_cmd->add_option("--filter-kernel-len", ic.kernel_len, "Gaussian kernel taps (odd)");
    ic_cmd->add_option("--filter-sigma", ic.sigma, "Gaussian kernel std in samples");
    ic_cmd->add_option("--dv-mv", ic.dv_mv, "voltage grid step in mV");

    EvaluateFlags ev;
    auto* ev_cmd = app.add_subcommand("evaluate", "Train on a split and report SOH estimates");
    ev_cmd->add_option("--input", ev.input, "input CSV")->required();
    ev_cmd->add_option("--schema", ev.schema, "schema JSON");
    ev_cmd->add_option("--out-dir", ev.out_dir, "output directory");
    auto* frac = ev_cmd->add_option("--split-fraction", ev.split_fraction,
                                    "leading fraction of cycles used for training");
    auto* skip = ev_cmd->add_option("--skip-cycles", ev.skip_cycles,
                                    "cycles dropped from the front (offset split)");
    auto* count = ev_cmd->add_option("--train-count", ev.train_count,
                                     "training cycles after the skip (offset split)");
    frac->excludes(skip)->excludes(count);
    skip->needs(count);
    count->needs(skip);
    ev_cmd->add_option("--filter-kernel-len", ev.kernel_len, "Gaussian kernel taps (odd)");
    ev_cmd->add_option("--filter-sigma", ev.sigma, "Gaussian kernel std in samples");
    ev_cmd->add_option("--dv-mv", ev.dv_mv, "voltage grid step in mV");
    ev_cmd->add_option("--cc-tol", ev.cc_tol, "CC current tolerance in A");
    ev_cmd->add_option("--restarts", ev.restarts, "optimizer restarts");
    ev_cmd->add_option("--seed", ev.seed, "RNG seed for restarts");
    ev_cmd->add_option("--q-ref", ev.q_ref, "SOH reference capacity: first|rated");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (validate->parsed()) return cmd_validate(v_input, v_schema);
        if (ic_cmd->parsed()) return cmd_ic(ic);
        return cmd_evaluate(ev, skip->count() > 0);
    } catch (const icgpr::InputError& e) {
        emit_diagnostic(e.code(), e.what());
        return kExitInput;
    } catch (const icgpr::ComputationError& e) {
        emit_diagnostic(e.code(), e.what());
        return kExitComputation;
    } catch (const std::exception& e) {
        emit_diagnostic("internal_error", e.what());
        return kExitComputation;
    }
}
