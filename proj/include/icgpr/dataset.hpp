#pragma once

// Per-cycle battery test logs: CSV ingestion, validation, constant-current
// segmentation, and ground-truth state of health.
//
// The input format is one CSV row per sample with a header line:
//
//   battery_id,cycle_index,phase,time_s,voltage_V,current_A,discharge_capacity_Ah
//
// phase is one of charge|discharge|impedance; time_s restarts at each cycle;
// current is signed with charge positive; discharge_capacity_Ah is repeated
// on every row of a cycle. Column names can be remapped through CsvSchema,
// which also carries the battery metadata the CSV itself does not encode.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "icgpr/errors.hpp"

namespace icgpr {

enum class Phase { charge, discharge, impedance };

inline std::string_view to_string(Phase p) {
    switch (p) {
        case Phase::charge: return "charge";
        case Phase::discharge: return "discharge";
        case Phase::impedance: return "impedance";
    }
    return "charge";
}

struct SamplePoint {
    double time_s = 0.0;
    double voltage_V = 0.0;
    double current_A = 0.0;  // signed, charge positive
    Phase phase = Phase::charge;

    bool operator==(const SamplePoint&) const = default;
};

struct CycleRecord {
    int cycle_index = 0;
    std::vector<SamplePoint> samples;
    double discharge_capacity_Ah = 0.0;

    bool operator==(const CycleRecord&) const = default;
};

struct BatteryDataset {
    std::string battery_id;
    double rated_capacity_Ah = 2.0;
    double cc_current_A = 1.5;
    double charge_cutoff_V = 4.2;
    std::vector<CycleRecord> cycles;  // ordered by cycle_index

    bool operator==(const BatteryDataset&) const = default;

    const CycleRecord* find_cycle(int index) const {
        for (const auto& c : cycles)
            if (c.cycle_index == index) return &c;
        return nullptr;
    }
};

// Samples of one cycle restricted to the constant-current charge run.
struct ChargeSegment {
    int cycle_index = 0;
    std::vector<SamplePoint> samples;
    double cc_current_A = 0.0;
};

inline constexpr double kDefaultCcToleranceA = 0.05;
inline constexpr int kMinSegmentSamples = 20;
inline constexpr double kCutoffSlackV = 1e-3;

// Column mapping plus the battery metadata that rides along with a file.
// Loadable from a JSON document of the same field names.
struct CsvSchema {
    std::string battery_id = "battery_id";
    std::string cycle_index = "cycle_index";
    std::string phase = "phase";
    std::string time_s = "time_s";
    std::string voltage_V = "voltage_V";
    std::string current_A = "current_A";
    std::string discharge_capacity_Ah = "discharge_capacity_Ah";

    double rated_capacity_Ah = 2.0;
    double cc_current_A = 1.5;
    double charge_cutoff_V = 4.2;
    // Set when the source logs charge current as negative; the loader negates
    // so that stored current is always charge-positive.
    bool negate_current = false;

    static CsvSchema from_json(const nlohmann::json& j) {
        CsvSchema s;
        auto str = [&](const char* key, std::string& field) {
            if (j.contains(key)) field = j.at(key).get<std::string>();
        };
        str("battery_id", s.battery_id);
        str("cycle_index", s.cycle_index);
        str("phase", s.phase);
        str("time_s", s.time_s);
        str("voltage_V", s.voltage_V);
        str("current_A", s.current_A);
        str("discharge_capacity_Ah", s.discharge_capacity_Ah);
        if (j.contains("rated_capacity_Ah")) s.rated_capacity_Ah = j.at("rated_capacity_Ah").get<double>();
        if (j.contains("cc_current_A")) s.cc_current_A = j.at("cc_current_A").get<double>();
        if (j.contains("charge_cutoff_V")) s.charge_cutoff_V = j.at("charge_cutoff_V").get<double>();
        if (j.contains("negate_current")) s.negate_current = j.at("negate_current").get<bool>();
        return s;
    }

    static CsvSchema from_json_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw InputError("file_not_found", "cannot open schema file " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw InvalidConfigError("schema file " + path.string() + ": " + e.what());
        }
        return from_json(j);
    }
};

namespace detail {

inline void trim(std::string& s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    for (auto& f : fields) trim(f);
    return fields;
}

inline double parse_double_field(const std::string& s, const char* what, std::size_t line_no) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw DatasetFormatError("line " + std::to_string(line_no) + ": cannot parse " + what +
                                 " value '" + s + "'");
    return v;
}

inline long parse_int_field(const std::string& s, const char* what, std::size_t line_no) {
    long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw DatasetFormatError("line " + std::to_string(line_no) + ": cannot parse " + what +
                                 " value '" + s + "'");
    return v;
}

inline Phase parse_phase_field(const std::string& s, std::size_t line_no) {
    if (s == "charge") return Phase::charge;
    if (s == "discharge") return Phase::discharge;
    if (s == "impedance") return Phase::impedance;
    throw DatasetFormatError("line " + std::to_string(line_no) + ": unknown phase '" + s + "'");
}

// Shortest round-trippable decimal representation.
inline std::string format_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

}  // namespace detail

inline BatteryDataset load_dataset(const std::filesystem::path& path, const CsvSchema& schema = {}) {
    std::ifstream in(path);
    if (!in) throw InputError("file_not_found", "cannot open dataset file " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw EmptyDatasetError();
    auto header = detail::split_csv_line(line);

    std::unordered_map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col.emplace(header[i], i);

    auto require = [&](const std::string& name) -> std::size_t {
        auto it = col.find(name);
        if (it == col.end()) throw MissingColumnError(name);
        return it->second;
    };
    const std::size_t c_id = require(schema.battery_id);
    const std::size_t c_cycle = require(schema.cycle_index);
    const std::size_t c_phase = require(schema.phase);
    const std::size_t c_time = require(schema.time_s);
    const std::size_t c_volt = require(schema.voltage_V);
    const std::size_t c_curr = require(schema.current_A);
    const std::size_t c_cap = require(schema.discharge_capacity_Ah);
    const std::size_t n_cols =
        1 + std::max({c_id, c_cycle, c_phase, c_time, c_volt, c_curr, c_cap});

    BatteryDataset ds;
    ds.rated_capacity_Ah = schema.rated_capacity_Ah;
    ds.cc_current_A = schema.cc_current_A;
    ds.charge_cutoff_V = schema.charge_cutoff_V;

    CycleRecord current;
    bool have_cycle = false;

    auto finalize_cycle = [&]() {
        if (!have_cycle) return;
        if (current.discharge_capacity_Ah <= 0.0)
            throw NegativeCapacityError(current.cycle_index, current.discharge_capacity_Ah);
        ds.cycles.push_back(std::move(current));
        current = CycleRecord{};
    };

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() < n_cols)
            throw DatasetFormatError("line " + std::to_string(line_no) + ": expected at least " +
                                     std::to_string(n_cols) + " fields, got " +
                                     std::to_string(fields.size()));

        const std::string& id = fields[c_id];
        if (ds.battery_id.empty()) {
            ds.battery_id = id;
        } else if (id != ds.battery_id) {
            throw DatasetFormatError("line " + std::to_string(line_no) + ": battery_id '" + id +
                                     "' differs from '" + ds.battery_id + "'");
        }

        const long cycle = detail::parse_int_field(fields[c_cycle], "cycle_index", line_no);
        if (cycle <= 0)
            throw DatasetFormatError("line " + std::to_string(line_no) +
                                     ": cycle_index must be positive, got " + std::to_string(cycle));

        if (!have_cycle || cycle != current.cycle_index) {
            const int last = have_cycle ? current.cycle_index
                                        : (ds.cycles.empty() ? 0 : ds.cycles.back().cycle_index);
            finalize_cycle();
            if (cycle <= last)
                throw DatasetFormatError("line " + std::to_string(line_no) + ": cycle " +
                                         std::to_string(cycle) +
                                         " appears after cycle " + std::to_string(last) +
                                         "; rows must be grouped by strictly increasing cycle");
            current.cycle_index = static_cast<int>(cycle);
            current.discharge_capacity_Ah =
                detail::parse_double_field(fields[c_cap], "discharge_capacity_Ah", line_no);
            have_cycle = true;
        }

        SamplePoint p;
        p.time_s = detail::parse_double_field(fields[c_time], "time_s", line_no);
        p.voltage_V = detail::parse_double_field(fields[c_volt], "voltage_V", line_no);
        p.current_A = detail::parse_double_field(fields[c_curr], "current_A", line_no);
        if (schema.negate_current) p.current_A = -p.current_A;
        p.phase = detail::parse_phase_field(fields[c_phase], line_no);

        if (p.time_s < 0.0)
            throw DatasetFormatError("line " + std::to_string(line_no) + ": negative time " +
                                     fields[c_time]);
        if (!current.samples.empty() && p.time_s <= current.samples.back().time_s)
            throw NonMonotonicTimeError(current.cycle_index);
        if (!(p.voltage_V > 0.0 && p.voltage_V < 10.0))
            throw VoltageOutOfRangeError(current.cycle_index, p.voltage_V);

        current.samples.push_back(p);
    }
    finalize_cycle();

    if (ds.cycles.empty()) throw EmptyDatasetError();
    return ds;
}

// Inverse of load_dataset for the same schema: writing and reloading gives a
// field-for-field identical dataset.
inline void write_dataset_csv(const BatteryDataset& ds, const std::filesystem::path& path,
                              const CsvSchema& schema = {}) {
    std::ofstream out(path);
    if (!out) throw InputError("file_not_writable", "cannot write dataset file " + path.string());

    out << schema.battery_id << ',' << schema.cycle_index << ',' << schema.phase << ','
        << schema.time_s << ',' << schema.voltage_V << ',' << schema.current_A << ','
        << schema.discharge_capacity_Ah << '\n';

    const double sign = schema.negate_current ? -1.0 : 1.0;
    for (const auto& cycle : ds.cycles) {
        for (const auto& p : cycle.samples) {
            out << ds.battery_id << ',' << cycle.cycle_index << ',' << to_string(p.phase) << ','
                << detail::format_double(p.time_s) << ',' << detail::format_double(p.voltage_V)
                << ',' << detail::format_double(sign * p.current_A) << ','
                << detail::format_double(cycle.discharge_capacity_Ah) << '\n';
        }
    }
}

// Longest contiguous run of samples within the current band, trimmed at the
// first sample that reaches the charge cutoff.
inline ChargeSegment extract_cc_segment(const CycleRecord& cycle, double cc_current_A,
                                        double tolerance_A = kDefaultCcToleranceA,
                                        double charge_cutoff_V = 4.2) {
    const auto& s = cycle.samples;
    auto in_band = [&](const SamplePoint& p) {
        return std::abs(p.current_A - cc_current_A) <= tolerance_A;
    };

    std::size_t best_begin = 0, best_len = 0;
    for (std::size_t i = 0; i < s.size();) {
        if (!in_band(s[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < s.size() && in_band(s[j])) ++j;
        if (j - i > best_len) {
            best_begin = i;
            best_len = j - i;
        }
        i = j;
    }

    ChargeSegment seg;
    seg.cycle_index = cycle.cycle_index;
    seg.cc_current_A = cc_current_A;
    for (std::size_t k = best_begin; k < best_begin + best_len; ++k) {
        const auto& p = s[k];
        if (p.voltage_V >= charge_cutoff_V) {
            if (p.voltage_V <= charge_cutoff_V + kCutoffSlackV) seg.samples.push_back(p);
            break;
        }
        seg.samples.push_back(p);
    }

    if (seg.samples.size() < kMinSegmentSamples)
        throw SegmentTooShortError(cycle.cycle_index, seg.samples.size());
    return seg;
}

// SOH as the ratio of measured discharge capacity to a reference capacity.
// Not clamped: capacity regeneration can push it slightly above 1.
inline double compute_soh(const CycleRecord& cycle, double q_ref_Ah) {
    if (!(q_ref_Ah > 0.0)) throw NonPositiveReferenceError(q_ref_Ah);
    return cycle.discharge_capacity_Ah / q_ref_Ah;
}

}  // namespace icgpr
