#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include <icgpr/dataset.hpp>
#include <icgpr/ic_analysis.hpp>

#include "support/synthetic_battery.hpp"

using namespace icgpr;

namespace {

// CC segment with voltage a given function of time, I = cc amperes.
template <typename VoltageFn>
ChargeSegment make_segment(VoltageFn&& v_of_t, double t_end, double dt, double cc = 1.5) {
    ChargeSegment seg;
    seg.cycle_index = 1;
    seg.cc_current_A = cc;
    for (double t = 0.0; t <= t_end; t += dt) {
        SamplePoint p;
        p.time_s = t;
        p.voltage_V = v_of_t(t);
        p.current_A = cc;
        seg.samples.push_back(p);
    }
    return seg;
}

ChargeSegment linear_ramp(double slope = 1e-4, double t_end = 7000.0, double dt = 10.0,
                          double cc = 1.5) {
    return make_segment([&](double t) { return 3.5 + slope * t; }, t_end, dt, cc);
}

}  // namespace

TEST_CASE("resampling a linear ramp reproduces the closed-form charge") {
    const double slope = 1e-4;
    const auto seg = linear_ramp(slope);
    const auto rs = resample_capacity_on_voltage(seg, 1e-3);

    REQUIRE(rs.voltage_V.size() == rs.charge_Ah.size());
    REQUIRE(rs.voltage_V.size() > 100);
    for (std::size_t k = 0; k < rs.voltage_V.size(); ++k) {
        const double v = rs.voltage_V[k];
        const double t_of_v = (v - 3.5) / slope;
        const double q_oracle = 1.5 * t_of_v / 3600.0;
        CHECK(rs.charge_Ah[k] == Catch::Approx(q_oracle).margin(1e-12));
    }
}

TEST_CASE("resampled grid nodes are integer multiples of dv with uniform step") {
    const auto seg = linear_ramp();
    const double dv = 1e-3;
    const auto rs = resample_capacity_on_voltage(seg, dv);
    for (std::size_t k = 0; k < rs.voltage_V.size(); ++k) {
        const double ratio = rs.voltage_V[k] / dv;
        CHECK(std::abs(ratio - std::round(ratio)) < 1e-9);
        if (k > 0)
            CHECK(rs.voltage_V[k] - rs.voltage_V[k - 1] == Catch::Approx(dv).margin(1e-12));
    }
}

TEST_CASE("constant-voltage segments are degenerate") {
    const auto seg = make_segment([](double) { return 3.7; }, 400.0, 10.0);
    CHECK_THROWS_AS(resample_capacity_on_voltage(seg, 1e-3), DegenerateVoltageRangeError);
}

TEST_CASE("rectification removes a transient voltage dip") {
    auto clean = linear_ramp();
    auto dipped = clean;
    dipped.samples[50].voltage_V -= 0.004;  // one sample sags below its predecessor

    const auto rs_clean = resample_capacity_on_voltage(clean, 1e-3);
    const auto rs_dipped = resample_capacity_on_voltage(dipped, 1e-3);

    REQUIRE(rs_clean.voltage_V == rs_dipped.voltage_V);
    for (std::size_t k = 0; k < rs_clean.charge_Ah.size(); ++k)
        CHECK(rs_dipped.charge_Ah[k] == Catch::Approx(rs_clean.charge_Ah[k]).margin(1e-12));
}

TEST_CASE("IC of a linear ramp is constant at interior nodes") {
    const double slope = 1e-4;
    const auto seg = linear_ramp(slope);
    const auto curve = compute_ic(seg, 1e-3);

    const double oracle = 1.5 / (slope * 3600.0);
    REQUIRE(curve.voltage_grid_V.size() == curve.dq_dv_AhPerV.size());
    for (std::size_t k = 1; k + 1 < curve.dq_dv_AhPerV.size(); ++k)
        CHECK(std::abs(curve.dq_dv_AhPerV[k] - oracle) < 1e-9);
    CHECK_FALSE(curve.smoothing.has_value());
}

TEST_CASE("IC is linear in current: doubling I doubles dq/dv pointwise") {
    const auto seg1 = linear_ramp(1e-4, 7000.0, 10.0, 1.5);
    const auto seg2 = linear_ramp(1e-4, 7000.0, 10.0, 3.0);
    const auto c1 = compute_ic(seg1, 1e-3);
    const auto c2 = compute_ic(seg2, 1e-3);

    REQUIRE(c1.dq_dv_AhPerV.size() == c2.dq_dv_AhPerV.size());
    for (std::size_t k = 0; k < c1.dq_dv_AhPerV.size(); ++k)
        CHECK(c2.dq_dv_AhPerV[k] == 2.0 * c1.dq_dv_AhPerV[k]);
}

TEST_CASE("piecewise ramp yields two dq/dv plateaus") {
    const double s1 = 1e-4, s2 = 2e-4;
    const double t_break = 4000.0;  // V = 3.9
    auto v_of_t = [&](double t) {
        return t <= t_break ? 3.5 + s1 * t : 3.9 + s2 * (t - t_break);
    };
    const auto seg = make_segment(v_of_t, 5400.0, 5.0);
    const auto curve = compute_ic(seg, 1e-3);

    const double p1 = 1.5 / (s1 * 3600.0);
    const double p2 = 1.5 / (s2 * 3600.0);
    for (std::size_t k = 1; k + 1 < curve.voltage_grid_V.size(); ++k) {
        const double v = curve.voltage_grid_V[k];
        // Central differences straddle the knee; stay clear of it by 2 cells.
        if (v < 3.9 - 2e-3) {
            CHECK(curve.dq_dv_AhPerV[k] == Catch::Approx(p1).margin(1e-9));
        } else if (v > 3.9 + 2e-3) {
            CHECK(curve.dq_dv_AhPerV[k] == Catch::Approx(p2).margin(1e-9));
        }
    }
}

TEST_CASE("charge conservation: trapezoid of raw dq/dv telescopes to the charge span") {
    synth::GeneratorConfig cfg;
    cfg.n_cycles = 3;
    const auto ds = synth::make_battery(cfg);
    for (const auto& cycle : ds.cycles) {
        const auto seg = extract_cc_segment(cycle, ds.cc_current_A);
        const double dv = 1e-3;
        const auto rs = resample_capacity_on_voltage(seg, dv);
        const auto curve = compute_ic(seg, dv);

        double integral = 0.0;
        for (std::size_t k = 0; k + 1 < curve.dq_dv_AhPerV.size(); ++k)
            integral += 0.5 * (curve.dq_dv_AhPerV[k] + curve.dq_dv_AhPerV[k + 1]) * dv;
        CHECK(integral == Catch::Approx(rs.charge_Ah.back() - rs.charge_Ah.front()).margin(1e-6));
    }
}

TEST_CASE("moving_average matches the trailing-window definition") {
    SECTION("N = 1 is the identity") {
        const std::vector<double> x = {4.0, -1.0, 2.5, 0.0};
        CHECK(moving_average(x, 1) == x);
    }
    SECTION("direct arithmetic") {
        const std::vector<double> x = {1.0, 3.0, 5.0, 7.0};
        const std::vector<double> want = {2.0, 4.0, 6.0};
        CHECK(moving_average(x, 2) == want);
    }
    SECTION("constants stay constant, N-1 shorter") {
        const std::vector<double> x(10, 3.25);
        const auto y = moving_average(x, 4);
        REQUIRE(y.size() == 7);
        for (double v : y) CHECK(v == 3.25);
    }
    SECTION("window too large") {
        const std::vector<double> x(5, 1.0);
        CHECK_THROWS_AS(moving_average(x, 6), WindowTooLargeError);
        CHECK_THROWS_AS(moving_average(x, 0), InvalidConfigError);
    }
}

TEST_CASE("gaussian kernel weights sum to one") {
    for (int len : {3, 9, 17, 33}) {
        const auto w = gaussian_kernel(len, 5.0);
        REQUIRE(static_cast<int>(w.size()) == len);
        double sum = 0.0;
        for (double v : w) {
            CHECK(v > 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    CHECK_THROWS_AS(gaussian_kernel(4, 5.0), InvalidConfigError);   // even
    CHECK_THROWS_AS(gaussian_kernel(17, 0.0), InvalidConfigError);  // sigma
}

TEST_CASE("gaussian_smooth preserves constants at full length") {
    const std::vector<double> x(40, 2.5);
    FilterConfig cfg;  // gaussian, 17 taps, sigma 5
    const auto y = gaussian_smooth(x, cfg);
    REQUIRE(y.size() == x.size());
    for (double v : y) CHECK(v == Catch::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("gaussian_smooth of a unit impulse reproduces the kernel") {
    FilterConfig cfg;
    std::vector<double> x(101, 0.0);
    x[50] = 1.0;
    const auto y = gaussian_smooth(x, cfg);
    const auto w = gaussian_kernel(cfg.kernel_len, cfg.sigma_samples);
    const int half = cfg.kernel_len / 2;
    for (int j = -half; j <= half; ++j)
        CHECK(y[static_cast<std::size_t>(50 + j)] ==
              Catch::Approx(w[static_cast<std::size_t>(j + half)]).epsilon(1e-12));
    // Outside the kernel support the signal stays zero.
    CHECK(y[50 - half - 1] == 0.0);
    CHECK(y[50 + half + 1] == 0.0);
}

TEST_CASE("gaussian_smooth with sigma -> 0 degenerates to the identity") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::vector<double> x(60);
    for (auto& v : x) v = u(rng);

    FilterConfig cfg;
    cfg.sigma_samples = 1e-6;
    const auto y = gaussian_smooth(x, cfg);
    REQUIRE(y.size() == x.size());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i] - x[i]) < 1e-9);
}

TEST_CASE("gaussian_smooth rejects kernels longer than the signal") {
    const std::vector<double> x(10, 1.0);
    FilterConfig cfg;  // 17 taps > 10 samples
    CHECK_THROWS_AS(gaussian_smooth(x, cfg), KernelTooLongError);
}

TEST_CASE("gaussian_smooth is shift-equivariant away from boundaries") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const int n = 100, shift = 7;
    std::vector<double> x(static_cast<std::size_t>(n));
    for (auto& v : x) v = u(rng);
    std::vector<double> shifted(static_cast<std::size_t>(n), 0.0);
    for (int i = shift; i < n; ++i)
        shifted[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i - shift)];

    FilterConfig cfg;
    const auto sx = gaussian_smooth(x, cfg);
    const auto ss = gaussian_smooth(shifted, cfg);
    const int half = cfg.kernel_len / 2;
    for (int i = half + shift; i < n - half; ++i)
        CHECK(ss[static_cast<std::size_t>(i)] == sx[static_cast<std::size_t>(i - shift)]);
}

TEST_CASE("gaussian_smooth never widens the range") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    FilterConfig cfg;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> x(50);
        for (auto& v : x) v = u(rng);
        const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
        const auto y = gaussian_smooth(x, cfg);
        for (double v : y) {
            CHECK(v >= *lo_it - 1e-12);
            CHECK(v <= *hi_it + 1e-12);
        }
    }
}

TEST_CASE("flat gaussian kernel matches moving-average weights") {
    // sigma >> len: every tap tends to 1/len, the MA weighting.
    const int len = 17;
    const auto w = gaussian_kernel(len, 1e9);
    for (double v : w) CHECK(std::abs(v - 1.0 / len) < 1e-12);
}

TEST_CASE("smooth_curve keeps the grid for gaussian and truncates it for MA") {
    const auto seg = linear_ramp();
    const auto raw = compute_ic(seg, 1e-3);

    FilterConfig g;  // gaussian
    const auto sg = smooth_curve(raw, g);
    CHECK(sg.voltage_grid_V == raw.voltage_grid_V);
    CHECK(sg.smoothing.has_value());
    CHECK(sg.smoothing->method == FilterMethod::gaussian);

    FilterConfig ma;
    ma.method = FilterMethod::moving_average;
    ma.window_N = 10;
    const auto sm = smooth_curve(raw, ma);
    REQUIRE(sm.dq_dv_AhPerV.size() == raw.dq_dv_AhPerV.size() - 9);
    CHECK(sm.voltage_grid_V.size() == sm.dq_dv_AhPerV.size());
    CHECK(sm.voltage_grid_V.front() == raw.voltage_grid_V.front());
}

TEST_CASE("extract_features samples the 11 window nodes") {
    const FeatureWindow win;
    REQUIRE(win.count() == 11);

    // Curve covering 3.5..4.2 V on a 1 mV grid.
    std::vector<double> grid, vals;
    for (int k = 3500; k <= 4200; ++k) grid.push_back(k * 1e-3);

    SECTION("flat curve gives 11 copies of the constant") {
        vals.assign(grid.size(), 4.25);
        ICCurve c{12, grid, vals, FilterConfig{}};
        const auto f = extract_features(c, win);
        REQUIRE(f.hpi.size() == 11);
        CHECK(f.cycle_index == 12);
        for (double v : f.hpi) CHECK(v == 4.25);
    }
    SECTION("linear curve is interpolated exactly") {
        const double a = 2.0, b = -3.0;
        vals.clear();
        for (double v : grid) vals.push_back(a * v + b);
        ICCurve c{1, grid, vals, FilterConfig{}};
        const auto f = extract_features(c, win);
        for (int k = 0; k < 11; ++k) {
            const double v = win.node(k);
            CHECK(f.hpi[static_cast<std::size_t>(k)] ==
                  Catch::Approx(a * v + b).epsilon(1e-12));
        }
    }
}

TEST_CASE("extract_features rejects grids that stop short of the window") {
    std::vector<double> grid, vals;
    for (int k = 3500; k <= 4050; ++k) {
        grid.push_back(k * 1e-3);
        vals.push_back(1.0);
    }
    ICCurve c{1, grid, vals, FilterConfig{}};
    try {
        extract_features(c);
        FAIL("expected GridCoverageError");
    } catch (const GridCoverageError& e) {
        CHECK(std::string(e.code()) == "grid_does_not_cover_window");
        CHECK(std::string(e.what()).find("4.05") != std::string::npos);
    }
}

TEST_CASE("extract_features commutes with affine scaling of the curve") {
    const auto seg = linear_ramp();
    auto curve = compute_ic(seg, 1e-3);
    curve = smooth_curve(curve, FilterConfig{});

    const double a = -1.7, b = 0.4;
    ICCurve scaled = curve;
    for (auto& v : scaled.dq_dv_AhPerV) v = a * v + b;

    const auto f = extract_features(curve);
    const auto fs = extract_features(scaled);
    for (std::size_t k = 0; k < f.hpi.size(); ++k)
        CHECK(fs.hpi[k] == Catch::Approx(a * f.hpi[k] + b).epsilon(1e-12));
}
