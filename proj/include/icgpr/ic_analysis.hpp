#pragma once

// Incremental-capacity analysis: resample cumulative charge onto a uniform
// voltage grid, differentiate to get dQ/dV, smooth, and sample the curve at
// fixed voltages to produce the health feature vector.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "icgpr/dataset.hpp"
#include "icgpr/errors.hpp"

namespace icgpr {

inline constexpr double kDefaultDvV = 1e-3;

enum class FilterMethod { moving_average, gaussian };

inline std::string_view to_string(FilterMethod m) {
    return m == FilterMethod::gaussian ? "gaussian" : "moving_average";
}

struct FilterConfig {
    FilterMethod method = FilterMethod::gaussian;
    int window_N = 10;         // moving-average taps
    int kernel_len = 17;       // Gaussian taps, odd
    double sigma_samples = 5.0;  // Gaussian std in sample units
};

// dQ/dV on a uniform, strictly increasing voltage grid. smoothing records the
// filter applied; raw curves leave it empty.
struct ICCurve {
    int cycle_index = 0;
    std::vector<double> voltage_grid_V;
    std::vector<double> dq_dv_AhPerV;
    std::optional<FilterConfig> smoothing;
};

struct FeatureWindow {
    double low_V = 3.80;
    double high_V = 4.10;
    double step_V = 0.03;

    int count() const {
        return static_cast<int>(std::lround((high_V - low_V) / step_V)) + 1;
    }
    double node(int k) const { return low_V + step_V * k; }
};

// dQ/dV sampled at the feature-window voltages (11 values with defaults).
struct HealthFeatureVector {
    int cycle_index = 0;
    std::vector<double> hpi;
};

struct ResampledCharge {
    std::vector<double> voltage_V;  // uniform grid, multiples of dv
    std::vector<double> charge_Ah;  // cumulative charge at each grid node
};

namespace detail {

// Linear interpolation on a strictly increasing abscissa; x is clamped to the
// covered range (callers only ever leave it by a rounding ulp).
inline double interp_linear(std::span<const double> xs, std::span<const double> ys, double x) {
    if (x <= xs.front()) return ys.front();
    if (x >= xs.back()) return ys.back();
    auto it = std::upper_bound(xs.begin(), xs.end(), x);
    const std::size_t hi = static_cast<std::size_t>(it - xs.begin());
    const std::size_t lo = hi - 1;
    const double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    return ys[lo] + t * (ys[hi] - ys[lo]);
}

}  // namespace detail

// Cumulative charge Q = I*t/3600 re-gridded onto voltage nodes at multiples
// of dv_V. Non-monotonic voltage is rectified by running maximum first;
// samples that do not raise the running maximum are dropped, so a transient
// dip leaves the interpolant of the clean signal untouched.
inline ResampledCharge resample_capacity_on_voltage(const ChargeSegment& seg, double dv_V) {
    if (!(dv_V > 0.0)) throw InvalidConfigError("resampling step dv_V must be positive");
    const auto& s = seg.samples;
    if (s.size() < 2) throw DegenerateVoltageRangeError(0.0, dv_V);

    std::vector<double> v_knot, q_knot;
    v_knot.reserve(s.size());
    q_knot.reserve(s.size());
    double v_max = -std::numeric_limits<double>::infinity();
    for (const auto& p : s) {
        const double q = seg.cc_current_A * p.time_s / 3600.0;
        v_max = std::max(v_max, p.voltage_V);
        if (v_knot.empty() || v_max > v_knot.back()) {
            v_knot.push_back(v_max);
            q_knot.push_back(q);
        }
    }

    const double span = v_knot.back() - v_knot.front();
    if (span < 10.0 * dv_V) throw DegenerateVoltageRangeError(span, dv_V);

    const auto k0 = static_cast<long long>(std::ceil(v_knot.front() / dv_V - 1e-9));
    const auto k1 = static_cast<long long>(std::floor(v_knot.back() / dv_V + 1e-9));
    if (k1 - k0 + 1 < 2) throw DegenerateVoltageRangeError(span, dv_V);

    ResampledCharge out;
    out.voltage_V.reserve(static_cast<std::size_t>(k1 - k0 + 1));
    out.charge_Ah.reserve(static_cast<std::size_t>(k1 - k0 + 1));
    for (long long k = k0; k <= k1; ++k) {
        const double v = static_cast<double>(k) * dv_V;
        out.voltage_V.push_back(v);
        out.charge_Ah.push_back(detail::interp_linear(v_knot, q_knot, v));
    }
    return out;
}

// Raw IC curve: central difference of the resampled charge, one-sided at the
// two ends.
inline ICCurve compute_ic(const ChargeSegment& seg, double dv_V) {
    auto rs = resample_capacity_on_voltage(seg, dv_V);
    const std::size_t n = rs.charge_Ah.size();
    const auto& q = rs.charge_Ah;

    std::vector<double> dq(n);
    dq[0] = (q[1] - q[0]) / dv_V;
    dq[n - 1] = (q[n - 1] - q[n - 2]) / dv_V;
    for (std::size_t k = 1; k + 1 < n; ++k) dq[k] = (q[k + 1] - q[k - 1]) / (2.0 * dv_V);

    ICCurve curve;
    curve.cycle_index = seg.cycle_index;
    curve.voltage_grid_V = std::move(rs.voltage_V);
    curve.dq_dv_AhPerV = std::move(dq);
    return curve;
}

// y[i] = mean(x[i .. i+N-1]); output is N-1 shorter than the input.
inline std::vector<double> moving_average(std::span<const double> values, int window_N) {
    if (window_N < 1) throw InvalidConfigError("moving-average window must be >= 1");
    if (static_cast<std::size_t>(window_N) > values.size())
        throw WindowTooLargeError(window_N, values.size());

    std::vector<double> out(values.size() - static_cast<std::size_t>(window_N) + 1);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double acc = 0.0;
        for (int j = 0; j < window_N; ++j) acc += values[i + static_cast<std::size_t>(j)];
        out[i] = acc / window_N;
    }
    return out;
}

// Discrete Gaussian taps w[j] ~ exp(-j^2 / (2 sigma^2)), normalized to sum 1.
inline std::vector<double> gaussian_kernel(int kernel_len, double sigma_samples) {
    if (kernel_len < 1 || kernel_len % 2 == 0)
        throw InvalidConfigError("Gaussian kernel length must be a positive odd number");
    if (!(sigma_samples > 0.0)) throw InvalidConfigError("Gaussian sigma must be positive");

    const int h = (kernel_len - 1) / 2;
    std::vector<double> w(static_cast<std::size_t>(kernel_len));
    double sum = 0.0;
    for (int j = -h; j <= h; ++j) {
        const double x = static_cast<double>(j) / sigma_samples;
        w[static_cast<std::size_t>(j + h)] = std::exp(-0.5 * x * x);
        sum += w[static_cast<std::size_t>(j + h)];
    }
    for (auto& x : w) x /= sum;
    return w;
}

// Same-length Gaussian smoothing. Near the ends the kernel is truncated to
// the valid indices and renormalized, which preserves constant signals.
inline std::vector<double> gaussian_smooth(std::span<const double> values, const FilterConfig& cfg) {
    if (static_cast<std::size_t>(cfg.kernel_len) > values.size())
        throw KernelTooLongError(cfg.kernel_len, values.size());
    const auto w = gaussian_kernel(cfg.kernel_len, cfg.sigma_samples);
    const int h = (cfg.kernel_len - 1) / 2;
    const auto n = static_cast<long>(values.size());

    std::vector<double> out(values.size());
    for (long i = 0; i < n; ++i) {
        const long lo = std::max(-static_cast<long>(h), -i);
        const long hi = std::min(static_cast<long>(h), n - 1 - i);
        double acc = 0.0, wsum = 0.0;
        for (long j = lo; j <= hi; ++j) {
            const double wj = w[static_cast<std::size_t>(j + h)];
            acc += wj * values[static_cast<std::size_t>(i + j)];
            wsum += wj;
        }
        out[static_cast<std::size_t>(i)] = acc / wsum;
    }
    return out;
}

// Apply the configured filter to an IC curve. The moving average shortens the
// curve by window_N - 1 nodes at the tail; the Gaussian keeps the full grid.
inline ICCurve smooth_curve(const ICCurve& curve, const FilterConfig& cfg) {
    ICCurve out;
    out.cycle_index = curve.cycle_index;
    out.smoothing = cfg;
    if (cfg.method == FilterMethod::gaussian) {
        out.voltage_grid_V = curve.voltage_grid_V;
        out.dq_dv_AhPerV = gaussian_smooth(curve.dq_dv_AhPerV, cfg);
    } else {
        out.dq_dv_AhPerV = moving_average(curve.dq_dv_AhPerV, cfg.window_N);
        out.voltage_grid_V.assign(curve.voltage_grid_V.begin(),
                                  curve.voltage_grid_V.begin() +
                                      static_cast<std::ptrdiff_t>(out.dq_dv_AhPerV.size()));
    }
    return out;
}

// dQ/dV linearly interpolated at the feature-window voltages.
inline HealthFeatureVector extract_features(const ICCurve& curve, const FeatureWindow& win = {}) {
    const auto& grid = curve.voltage_grid_V;
    if (grid.size() < 2 || grid.front() > win.low_V + 1e-9 || grid.back() < win.high_V - 1e-9) {
        const double have_low = grid.empty() ? 0.0 : std::max(win.low_V, grid.front());
        const double have_high = grid.empty() ? 0.0 : std::min(win.high_V, grid.back());
        throw GridCoverageError(win.low_V, win.high_V, have_low, have_high);
    }

    HealthFeatureVector f;
    f.cycle_index = curve.cycle_index;
    f.hpi.reserve(static_cast<std::size_t>(win.count()));
    for (int k = 0; k < win.count(); ++k)
        f.hpi.push_back(detail::interp_linear(grid, curve.dq_dv_AhPerV, win.node(k)));
    return f;
}

}  // namespace icgpr
