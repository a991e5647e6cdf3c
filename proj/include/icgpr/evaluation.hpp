#pragma once

// End-to-end experiment harness: split a dataset into train/test cycles,
// extract IC health features per cycle, fit the GP on the training rows and
// predict every retained cycle. Metrics are reported for the test set, with
// train-set MAE/RMSE emitted separately.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "icgpr/dataset.hpp"
#include "icgpr/errors.hpp"
#include "icgpr/gpr.hpp"
#include "icgpr/ic_analysis.hpp"

namespace icgpr {

enum class SplitMode { fraction, offset };

inline std::string to_string(SplitMode m) {
    return m == SplitMode::fraction ? "fraction" : "offset";
}

// Reference capacity for SOH: the battery's rated capacity, or the discharge
// capacity of the first training cycle (so that cycle scores exactly 1).
enum class QRefPolicy { rated, first_train_cycle };

inline std::string to_string(QRefPolicy p) {
    return p == QRefPolicy::rated ? "rated" : "first_train_cycle";
}

struct SplitConfig {
    SplitMode mode = SplitMode::fraction;
    double train_fraction = 0.55;  // fraction mode: first ceil(f*N) cycles train
    int skip_cycles = 0;           // offset mode: dropped from the front entirely
    int train_count = 0;           // offset mode: training cycles after the skip
};

struct ExperimentConfig {
    double cc_tolerance_A = kDefaultCcToleranceA;
    double dv_V = kDefaultDvV;
    FilterConfig filter;
    FeatureWindow window;
    SplitConfig split;
    FitConfig fit;
    QRefPolicy q_ref = QRefPolicy::first_train_cycle;
};

struct CycleSplit {
    std::vector<int> train_cycles;  // cycle_index values, dataset order
    std::vector<int> test_cycles;
};

struct DroppedCycle {
    int cycle_index = 0;
    std::string reason;  // machine-readable error code
};

struct PredictionRow {
    int cycle_index = 0;
    double true_soh = 0.0;
    double predicted_soh = 0.0;
    double variance = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    bool in_training = false;
    double relative_error_pct = 0.0;
};

struct Metrics {
    double mae = 0.0;
    double rmse = 0.0;
};

struct ExperimentResult {
    std::string battery_id;
    ExperimentConfig config;
    CycleSplit split;
    std::vector<DroppedCycle> dropped_cycles;
    TrainedModel model;
    std::vector<PredictionRow> rows;  // every retained, usable cycle in order
    Metrics test_metrics;
    Metrics train_metrics;
    double ci_coverage = 0.0;  // test rows inside the 95% interval
    int n_train = 0;
    int n_test = 0;
};

// ---------------------------------------------------------------------------
// splitting
// ---------------------------------------------------------------------------

inline CycleSplit split_dataset(const BatteryDataset& dataset, const SplitConfig& config) {
    const auto n = static_cast<int>(dataset.cycles.size());
    if (n == 0) throw EmptyDatasetError();

    int train_begin = 0;
    int train_end = 0;  // exclusive
    if (config.mode == SplitMode::fraction) {
        if (!(config.train_fraction > 0.0) || !(config.train_fraction < 1.0))
            throw InvalidConfigError("train_fraction must lie strictly in (0, 1)");
        // The 1e-9 slack keeps e.g. 0.55 * 100 from rounding up to 56.
        train_end = static_cast<int>(
            std::ceil(config.train_fraction * static_cast<double>(n) - 1e-9));
    } else {
        if (config.skip_cycles < 0) throw InvalidConfigError("skip_cycles must be >= 0");
        if (config.train_count < 2) throw InvalidConfigError("train_count must be >= 2");
        train_begin = config.skip_cycles;
        train_end = config.skip_cycles + config.train_count;
    }
    if (train_end - train_begin < 1 || train_begin >= n)
        throw NotEnoughCyclesError("split leaves no training cycles");
    if (train_end >= n)
        throw NotEnoughCyclesError("split leaves no test cycles");

    CycleSplit s;
    for (int i = train_begin; i < train_end; ++i)
        s.train_cycles.push_back(dataset.cycles[static_cast<std::size_t>(i)].cycle_index);
    for (int i = train_end; i < n; ++i)
        s.test_cycles.push_back(dataset.cycles[static_cast<std::size_t>(i)].cycle_index);
    return s;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

inline double mean_absolute_error(const std::vector<double>& truth,
                                  const std::vector<double>& pred) {
    if (truth.size() != pred.size()) throw LengthMismatchError(truth.size(), pred.size());
    if (truth.empty()) throw EmptyInputError("mean_absolute_error input");
    double acc = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) acc += std::abs(pred[i] - truth[i]);
    return acc / static_cast<double>(truth.size());
}

inline double root_mean_squared_error(const std::vector<double>& truth,
                                      const std::vector<double>& pred) {
    if (truth.size() != pred.size()) throw LengthMismatchError(truth.size(), pred.size());
    if (truth.empty()) throw EmptyInputError("root_mean_squared_error input");
    double acc = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = pred[i] - truth[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(truth.size()));
}

// Fraction of test rows whose true value falls inside [ci_low, ci_high].
inline double ci_coverage_95(const std::vector<PredictionRow>& rows) {
    std::size_t tested = 0;
    std::size_t hit = 0;
    for (const auto& r : rows) {
        if (r.in_training) continue;
        ++tested;
        if (r.true_soh >= r.ci_low && r.true_soh <= r.ci_high) ++hit;
    }
    if (tested == 0) throw EmptyInputError("ci_coverage_95 test rows");
    return static_cast<double>(hit) / static_cast<double>(tested);
}

namespace detail {

inline Metrics metrics_over(const std::vector<PredictionRow>& rows, bool in_training) {
    std::vector<double> truth, pred;
    for (const auto& r : rows) {
        if (r.in_training != in_training) continue;
        truth.push_back(r.true_soh);
        pred.push_back(r.predicted_soh);
    }
    Metrics m;
    m.mae = mean_absolute_error(truth, pred);
    m.rmse = root_mean_squared_error(truth, pred);
    return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// per-cycle feature extraction
// ---------------------------------------------------------------------------

struct CycleFeatures {
    int cycle_index = 0;
    std::vector<double> hpi;
    double soh = 0.0;
};

// Runs segmentation, IC, smoothing and feature sampling for one cycle.
// Throws the owning module's error when the cycle is unusable.
inline CycleFeatures extract_cycle_features(const CycleRecord& cycle,
                                            const BatteryDataset& dataset,
                                            const ExperimentConfig& config, double q_ref_Ah) {
    const auto segment = extract_cc_segment(cycle, dataset.cc_current_A, config.cc_tolerance_A,
                                            dataset.charge_cutoff_V);
    auto curve = compute_ic(segment, config.dv_V);
    curve = smooth_curve(curve, config.filter);
    CycleFeatures cf;
    cf.cycle_index = cycle.cycle_index;
    cf.hpi = extract_features(curve, config.window).hpi;
    cf.soh = compute_soh(cycle, q_ref_Ah);
    return cf;
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

inline ExperimentResult run_experiment(const BatteryDataset& dataset,
                                       const ExperimentConfig& config = {}) {
    ExperimentResult result;
    result.battery_id = dataset.battery_id;
    result.config = config;
    result.split = split_dataset(dataset, config.split);

    double q_ref = dataset.rated_capacity_Ah;
    if (config.q_ref == QRefPolicy::first_train_cycle) {
        const auto* first = dataset.find_cycle(result.split.train_cycles.front());
        q_ref = first->discharge_capacity_Ah;
    }
    if (!(q_ref > 0.0)) throw NonPositiveReferenceError(q_ref);

    // Cycle-level failures drop the cycle with its error code; anything else
    // propagates.
    std::vector<CycleFeatures> train_rows, test_rows;
    auto gather = [&](const std::vector<int>& wanted, std::vector<CycleFeatures>& out) {
        for (int idx : wanted) {
            const auto* cycle = dataset.find_cycle(idx);
            try {
                out.push_back(extract_cycle_features(*cycle, dataset, config, q_ref));
            } catch (const SegmentTooShortError& e) {
                result.dropped_cycles.push_back({idx, e.code()});
            } catch (const DegenerateVoltageRangeError& e) {
                result.dropped_cycles.push_back({idx, e.code()});
            } catch (const GridCoverageError& e) {
                result.dropped_cycles.push_back({idx, e.code()});
            }
        }
    };
    gather(result.split.train_cycles, train_rows);
    gather(result.split.test_cycles, test_rows);

    if (train_rows.size() < 2)
        throw NotEnoughCyclesError("fewer than 2 usable training cycles after segmentation");
    if (test_rows.empty())
        throw NotEnoughCyclesError("no usable test cycles after segmentation");
    result.n_train = static_cast<int>(train_rows.size());
    result.n_test = static_cast<int>(test_rows.size());

    const int D = config.window.count();
    Eigen::MatrixXd X(static_cast<Eigen::Index>(train_rows.size()), D);
    Eigen::VectorXd y(static_cast<Eigen::Index>(train_rows.size()));
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
        if (static_cast<int>(train_rows[i].hpi.size()) != D)
            throw DimensionMismatchError("run_experiment features", static_cast<std::size_t>(D),
                                         train_rows[i].hpi.size());
        for (int d = 0; d < D; ++d)
            X(static_cast<Eigen::Index>(i), d) = train_rows[i].hpi[static_cast<std::size_t>(d)];
        y[static_cast<Eigen::Index>(i)] = train_rows[i].soh;
    }
    result.model = fit(X, y, config.fit);

    auto emit = [&](const std::vector<CycleFeatures>& rows, bool in_training) {
        for (const auto& cf : rows) {
            Eigen::VectorXd x(D);
            for (int d = 0; d < D; ++d) x[d] = cf.hpi[static_cast<std::size_t>(d)];
            const auto p = predict(result.model, x);
            PredictionRow row;
            row.cycle_index = cf.cycle_index;
            row.true_soh = cf.soh;
            row.predicted_soh = p.mean;
            row.variance = p.variance;
            row.ci_low = p.ci_low;
            row.ci_high = p.ci_high;
            row.in_training = in_training;
            row.relative_error_pct = (p.mean - cf.soh) / cf.soh * 100.0;
            result.rows.push_back(row);
        }
    };
    emit(train_rows, true);
    emit(test_rows, false);

    result.test_metrics = detail::metrics_over(result.rows, false);
    result.train_metrics = detail::metrics_over(result.rows, true);
    result.ci_coverage = ci_coverage_95(result.rows);
    return result;
}

// ---------------------------------------------------------------------------
// report serialization
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
    nlohmann::ordered_json j;
    j["cc_tolerance_A"] = c.cc_tolerance_A;
    j["dv_V"] = c.dv_V;
    j["filter"] = {{"method", to_string(c.filter.method)},
                   {"window_N", c.filter.window_N},
                   {"kernel_len", c.filter.kernel_len},
                   {"sigma_samples", c.filter.sigma_samples}};
    j["feature_window"] = {{"low_V", c.window.low_V},
                           {"high_V", c.window.high_V},
                           {"step_V", c.window.step_V}};
    nlohmann::ordered_json split;
    split["mode"] = to_string(c.split.mode);
    if (c.split.mode == SplitMode::fraction) {
        split["train_fraction"] = c.split.train_fraction;
    } else {
        split["skip_cycles"] = c.split.skip_cycles;
        split["train_count"] = c.split.train_count;
    }
    j["split"] = split;
    j["fit"] = {{"restarts", c.fit.restarts},
                {"seed", c.fit.seed},
                {"max_iterations", c.fit.max_iterations},
                {"standardize", c.fit.standardize}};
    j["q_ref"] = to_string(c.q_ref);
    return j;
}

inline nlohmann::ordered_json report_to_json(const ExperimentResult& r) {
    nlohmann::ordered_json j;
    j["battery_id"] = r.battery_id;
    j["config"] = config_to_json(r.config);
    j["split"] = {{"train_cycles", r.split.train_cycles}, {"test_cycles", r.split.test_cycles}};
    nlohmann::ordered_json dropped = nlohmann::ordered_json::array();
    for (const auto& d : r.dropped_cycles)
        dropped.push_back({{"cycle_index", d.cycle_index}, {"reason", d.reason}});
    j["dropped_cycles"] = dropped;
    j["model"] = {{"log_sigma_f", r.model.hyper.log_sigma_f},
                  {"log_lengthscale", r.model.hyper.log_lengthscale},
                  {"log_sigma_n", r.model.hyper.log_sigma_n},
                  {"lml", r.model.lml},
                  {"jitter", r.model.jitter}};
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& p : r.rows) {
        rows.push_back({{"cycle_index", p.cycle_index},
                        {"true_soh", p.true_soh},
                        {"predicted_soh", p.predicted_soh},
                        {"variance", p.variance},
                        {"ci_low", p.ci_low},
                        {"ci_high", p.ci_high},
                        {"in_training", p.in_training},
                        {"relative_error_pct", p.relative_error_pct}});
    }
    j["rows"] = rows;
    j["summary"] = {{"mae", r.test_metrics.mae},
                    {"rmse", r.test_metrics.rmse},
                    {"ci_coverage_95", r.ci_coverage},
                    {"train_mae", r.train_metrics.mae},
                    {"train_rmse", r.train_metrics.rmse},
                    {"n_train", r.n_train},
                    {"n_test", r.n_test},
                    {"dropped", r.dropped_cycles.size()}};
    return j;
}

inline void write_report_json(const ExperimentResult& r, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("file_not_writable", "cannot write report " + path.string());
    out << report_to_json(r).dump(2) << '\n';
}

inline void write_report_csv(const ExperimentResult& r, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("file_not_writable", "cannot write report " + path.string());
    out << "cycle_index,true_soh,predicted_soh,variance,ci_low,ci_high,in_training,"
           "relative_error_pct\n";
    for (const auto& p : r.rows) {
        out << p.cycle_index << ',' << detail::format_double(p.true_soh) << ','
            << detail::format_double(p.predicted_soh) << ',' << detail::format_double(p.variance)
            << ',' << detail::format_double(p.ci_low) << ',' << detail::format_double(p.ci_high)
            << ',' << (p.in_training ? 1 : 0) << ','
            << detail::format_double(p.relative_error_pct) << '\n';
    }
}

inline void write_features_csv(const std::vector<CycleFeatures>& rows, const FeatureWindow& window,
                               const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("file_not_writable", "cannot write features " + path.string());
    out << "cycle_index";
    for (int k = 0; k < window.count(); ++k) out << ",hpi_" << detail::format_double(window.node(k));
    out << ",soh\n";
    for (const auto& r : rows) {
        out << r.cycle_index;
        for (double v : r.hpi) out << ',' << detail::format_double(v);
        out << ',' << detail::format_double(r.soh) << '\n';
    }
}

}  // namespace icgpr
