#pragma once

// Exact Gaussian process regression with an ARD squared-exponential kernel.
//
//   k_f(x_i, x_j) = sigma_f^2 * exp(-1/2 * sum_d (x_i^d - x_j^d)^2 / l_d^2)
//   phi           = K_f + sigma_n^2 I  (+ diagonal jitter)
//
// Training maximizes the log marginal likelihood
//
//   log p(y|X) = -1/2 y' phi^-1 y - 1/2 log det phi - n/2 log 2pi
//
// over log(sigma_f), log(l_1..l_D), log(sigma_n) with analytic gradients and
// multi-start L-BFGS. Prediction uses the cached Cholesky factor of phi:
//
//   mean = k*' phi^-1 y,   var = sigma_n^2 + k** - k*' phi^-1 k*

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <json.hpp>

#include "icgpr/errors.hpp"
#include "icgpr/optimizer.hpp"

namespace icgpr {

inline constexpr double kDefaultJitter = 1e-10;
inline constexpr double kMaxJitter = 1e-4;
inline constexpr double kCiZ95 = 1.96;

// Log-space hyperparameters; exponentiation keeps every scale positive.
struct Hyperparameters {
    double log_sigma_f = 0.0;
    std::vector<double> log_lengthscale;
    double log_sigma_n = 0.0;

    int dim() const { return static_cast<int>(log_lengthscale.size()); }
    double sigma_f() const { return std::exp(log_sigma_f); }
    double sigma_n() const { return std::exp(log_sigma_n); }
    double lengthscale(int d) const { return std::exp(log_lengthscale[static_cast<std::size_t>(d)]); }

    // Flat layout [log_sigma_f, log_l_1..log_l_D, log_sigma_n].
    Eigen::VectorXd pack() const {
        Eigen::VectorXd v(dim() + 2);
        v[0] = log_sigma_f;
        for (int d = 0; d < dim(); ++d) v[d + 1] = log_lengthscale[static_cast<std::size_t>(d)];
        v[dim() + 1] = log_sigma_n;
        return v;
    }

    static Hyperparameters unpack(const Eigen::VectorXd& v) {
        Hyperparameters h;
        const auto d = static_cast<int>(v.size()) - 2;
        h.log_sigma_f = v[0];
        h.log_lengthscale.assign(v.data() + 1, v.data() + 1 + d);
        h.log_sigma_n = v[d + 1];
        return h;
    }

    bool operator==(const Hyperparameters&) const = default;
};

// Per-feature z-scoring plus target centering, frozen at fit time.
struct Standardizer {
    Eigen::VectorXd feature_mean;
    Eigen::VectorXd feature_std;
    double target_mean = 0.0;

    static Standardizer identity(int dim) {
        Standardizer s;
        s.feature_mean = Eigen::VectorXd::Zero(dim);
        s.feature_std = Eigen::VectorXd::Ones(dim);
        return s;
    }

    // Two-pass moments; a constant column yields an exact zero std.
    static Standardizer fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
        Standardizer s;
        s.feature_mean = X.colwise().mean();
        s.feature_std.resize(X.cols());
        for (Eigen::Index d = 0; d < X.cols(); ++d) {
            const double std_d =
                std::sqrt((X.col(d).array() - s.feature_mean[d]).square().sum() /
                          static_cast<double>(X.rows()));
            if (!(std_d > 0.0)) throw ConstantFeatureError(static_cast<int>(d));
            s.feature_std[d] = std_d;
        }
        s.target_mean = y.mean();
        return s;
    }

    Eigen::VectorXd apply(const Eigen::VectorXd& raw) const {
        return (raw - feature_mean).cwiseQuotient(feature_std);
    }

    Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& raw) const {
        return (raw.rowwise() - feature_mean.transpose()).array().rowwise() /
               feature_std.transpose().array();
    }
};

struct FitConfig {
    int restarts = 10;
    std::uint64_t seed = 42;
    int max_iterations = 200;
    double lml_tolerance = 1e-7;
    double gradient_tolerance = 1e-6;
    double initial_jitter = kDefaultJitter;
    bool standardize = true;
    // Extra optimizer starts appended after the random ones (standardized units).
    std::vector<Hyperparameters> extra_starts;
};

struct TrainedModel {
    Hyperparameters hyper;
    Eigen::MatrixXd X_train;   // standardized inputs, one row per observation
    Eigen::MatrixXd chol_phi;  // lower-triangular L with L L' = phi
    Eigen::VectorXd alpha;     // phi^-1 (y - target_mean)
    Standardizer standardizer;
    double lml = 0.0;
    double jitter = kDefaultJitter;  // diagonal jitter folded into phi
};

struct PosteriorPrediction {
    double mean = 0.0;
    double variance = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

// ---------------------------------------------------------------------------
// kernel
// ---------------------------------------------------------------------------

inline double kernel_ard(const Eigen::VectorXd& x_i, const Eigen::VectorXd& x_j,
                         const Hyperparameters& hyper) {
    if (x_i.size() != hyper.dim())
        throw DimensionMismatchError("kernel_ard", static_cast<std::size_t>(hyper.dim()),
                                     static_cast<std::size_t>(x_i.size()));
    if (x_j.size() != x_i.size())
        throw DimensionMismatchError("kernel_ard", static_cast<std::size_t>(x_i.size()),
                                     static_cast<std::size_t>(x_j.size()));
    double acc = 0.0;
    for (int d = 0; d < hyper.dim(); ++d) {
        const double diff = (x_i[d] - x_j[d]) / hyper.lengthscale(d);
        acc += diff * diff;
    }
    const double sf = hyper.sigma_f();
    return sf * sf * std::exp(-0.5 * acc);
}

namespace detail {

// Noise-free covariance K_f; symmetric by construction, diagonal exactly
// sigma_f^2.
inline Eigen::MatrixXd ard_covariance(const Eigen::MatrixXd& X, const Hyperparameters& hyper) {
    if (X.cols() != hyper.dim())
        throw DimensionMismatchError("ard_covariance", static_cast<std::size_t>(hyper.dim()),
                                     static_cast<std::size_t>(X.cols()));
    const auto n = X.rows();
    Eigen::VectorXd inv_l(hyper.dim());
    for (int d = 0; d < hyper.dim(); ++d) inv_l[d] = 1.0 / hyper.lengthscale(d);
    const double sf2 = hyper.sigma_f() * hyper.sigma_f();

    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        K(i, i) = sf2;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double acc = 0.0;
            for (int d = 0; d < hyper.dim(); ++d) {
                const double diff = (X(i, d) - X(j, d)) * inv_l[d];
                acc += diff * diff;
            }
            const double v = sf2 * std::exp(-0.5 * acc);
            K(i, j) = v;
            K(j, i) = v;
        }
    }
    return K;
}

struct PhiFactor {
    Eigen::LLT<Eigen::MatrixXd> llt;
    Eigen::MatrixXd K_f;
    double jitter = 0.0;
};

// Cholesky of phi = K_f + (sigma_n^2 + jitter) I, escalating the jitter by
// factors of 10 up to kMaxJitter before giving up.
inline PhiFactor factor_phi(const Eigen::MatrixXd& X, const Hyperparameters& hyper,
                            double initial_jitter) {
    PhiFactor out;
    out.K_f = ard_covariance(X, hyper);
    const double sn2 = hyper.sigma_n() * hyper.sigma_n();
    double jitter = initial_jitter;
    while (true) {
        Eigen::MatrixXd phi = out.K_f;
        phi.diagonal().array() += sn2 + jitter;
        out.llt.compute(phi);
        if (out.llt.info() == Eigen::Success) {
            out.jitter = jitter;
            return out;
        }
        if (jitter >= kMaxJitter) throw FactorizationError(kMaxJitter);
        jitter = (jitter <= 0.0) ? kDefaultJitter : jitter * 10.0;
    }
}

inline double lml_from_factor(const PhiFactor& fac, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& alpha) {
    const double log_det = 2.0 * fac.llt.matrixLLT().diagonal().array().log().sum();
    return -0.5 * y.dot(alpha) - 0.5 * log_det -
           0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi);
}

}  // namespace detail

// Full covariance of the noisy observations: K_f + (sigma_n^2 + jitter) I.
inline Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& X, const Hyperparameters& hyper,
                                     double jitter = kDefaultJitter) {
    Eigen::MatrixXd K = detail::ard_covariance(X, hyper);
    K.diagonal().array() += hyper.sigma_n() * hyper.sigma_n() + jitter;
    return K;
}

inline double log_marginal_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                      const Hyperparameters& hyper,
                                      double jitter = kDefaultJitter) {
    if (X.rows() != y.size())
        throw DimensionMismatchError("log_marginal_likelihood",
                                     static_cast<std::size_t>(X.rows()),
                                     static_cast<std::size_t>(y.size()));
    const auto fac = detail::factor_phi(X, hyper, jitter);
    const Eigen::VectorXd alpha = fac.llt.solve(y);
    return detail::lml_from_factor(fac, y, alpha);
}

// Analytic gradient of the log marginal likelihood with respect to the packed
// log-parameters. Uses the contraction W = alpha alpha' - phi^-1, so that
// d lml / d theta = 1/2 tr(W dphi/dtheta).
inline Eigen::VectorXd lml_gradient(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                    const Hyperparameters& hyper,
                                    double jitter = kDefaultJitter) {
    if (X.rows() != y.size())
        throw DimensionMismatchError("lml_gradient", static_cast<std::size_t>(X.rows()),
                                     static_cast<std::size_t>(y.size()));
    const auto n = X.rows();
    const int D = hyper.dim();
    const auto fac = detail::factor_phi(X, hyper, jitter);
    const Eigen::VectorXd alpha = fac.llt.solve(y);

    Eigen::MatrixXd W = fac.llt.solve(Eigen::MatrixXd::Identity(n, n));
    W = (alpha * alpha.transpose() - W).eval();

    Eigen::VectorXd grad(D + 2);
    // d phi / d log sigma_f = 2 K_f
    grad[0] = W.cwiseProduct(fac.K_f).sum();
    // d phi / d log l_d = K_f .* sqdist_d / l_d^2
    for (int d = 0; d < D; ++d) {
        const double inv_l2 = 1.0 / (hyper.lengthscale(d) * hyper.lengthscale(d));
        double acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = i + 1; j < n; ++j) {
                const double diff = X(i, d) - X(j, d);
                acc += W(i, j) * fac.K_f(i, j) * diff * diff;
            }
        }
        grad[d + 1] = acc * inv_l2;  // off-diagonal pairs counted twice, times 1/2
    }
    // d phi / d log sigma_n = 2 sigma_n^2 I
    grad[D + 1] = hyper.sigma_n() * hyper.sigma_n() * W.trace();
    return grad;
}

// Exact training at fixed hyperparameters: factorize phi and cache the solve
// of the centered targets. X must already be standardized and y centered
// consistently with the supplied standardizer.
inline TrainedModel build_model(const Eigen::MatrixXd& X, const Eigen::VectorXd& y_centered,
                                const Hyperparameters& hyper, const Standardizer& standardizer,
                                double jitter = kDefaultJitter) {
    if (X.rows() != y_centered.size())
        throw DimensionMismatchError("build_model", static_cast<std::size_t>(X.rows()),
                                     static_cast<std::size_t>(y_centered.size()));
    auto fac = detail::factor_phi(X, hyper, jitter);

    TrainedModel m;
    m.hyper = hyper;
    m.X_train = X;
    m.chol_phi = fac.llt.matrixL();
    m.alpha = fac.llt.solve(y_centered);
    m.standardizer = standardizer;
    m.jitter = fac.jitter;
    m.lml = detail::lml_from_factor(fac, y_centered, m.alpha);
    return m;
}

// Multi-start maximum-likelihood fit. Standardizes inputs and centers targets
// (unless disabled), draws `restarts` starting points from the configured
// ranges, runs L-BFGS from each plus any extra starts, and keeps the model
// with the highest achieved log marginal likelihood. Deterministic for a
// fixed seed.
inline TrainedModel fit(const Eigen::MatrixXd& raw_X, const Eigen::VectorXd& raw_y,
                        const FitConfig& config = {}) {
    const auto n = raw_X.rows();
    const int D = static_cast<int>(raw_X.cols());
    if (n < 2) throw InvalidConfigError("fit requires at least 2 training rows");
    if (raw_y.size() != n)
        throw DimensionMismatchError("fit", static_cast<std::size_t>(n),
                                     static_cast<std::size_t>(raw_y.size()));

    Standardizer st;
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    if (config.standardize) {
        st = Standardizer::fit(raw_X, raw_y);
        X = st.apply_rows(raw_X);
        y = raw_y.array() - st.target_mean;
    } else {
        st = Standardizer::identity(D);
        X = raw_X;
        y = raw_y;
    }

    const double y_std = std::max(std::sqrt(y.squaredNorm() / static_cast<double>(n)), 1e-8);

    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> u_scale(std::log(0.1), std::log(10.0));
    std::uniform_real_distribution<double> u_noise(std::log(1e-3), std::log(1.0));

    std::vector<Hyperparameters> starts;
    starts.reserve(static_cast<std::size_t>(config.restarts) + config.extra_starts.size());
    for (int r = 0; r < config.restarts; ++r) {
        Hyperparameters h;
        h.log_sigma_f = std::log(y_std) + u_scale(rng);
        h.log_lengthscale.resize(static_cast<std::size_t>(D));
        for (int d = 0; d < D; ++d) h.log_lengthscale[static_cast<std::size_t>(d)] = u_scale(rng);
        h.log_sigma_n = std::log(y_std) + u_noise(rng);
        starts.push_back(std::move(h));
    }
    for (const auto& h : config.extra_starts) {
        if (h.dim() != D)
            throw DimensionMismatchError("fit extra start", static_cast<std::size_t>(D),
                                         static_cast<std::size_t>(h.dim()));
        starts.push_back(h);
    }

    auto objective = [&](const Eigen::VectorXd& theta,
                         Eigen::VectorXd& grad) -> std::optional<double> {
        const auto h = Hyperparameters::unpack(theta);
        try {
            grad = -lml_gradient(X, y, h, config.initial_jitter);
            return -log_marginal_likelihood(X, y, h, config.initial_jitter);
        } catch (const FactorizationError&) {
            return std::nullopt;
        }
    };

    LbfgsOptions opt;
    opt.max_iterations = config.max_iterations;
    opt.f_tolerance = config.lml_tolerance;
    opt.g_tolerance = config.gradient_tolerance;

    bool have_best = false;
    Hyperparameters best_hyper;
    double best_lml = -std::numeric_limits<double>::infinity();
    for (const auto& start : starts) {
        const auto result = lbfgs_minimize(objective, start.pack(), opt);
        if (!result.valid) continue;
        const double lml = -result.f;
        if (!have_best || lml > best_lml) {
            have_best = true;
            best_lml = lml;
            best_hyper = Hyperparameters::unpack(result.x);
        }
    }
    if (!have_best) throw AllRestartsFailedError(static_cast<int>(starts.size()));

    return build_model(X, y, best_hyper, st, config.initial_jitter);
}

inline PosteriorPrediction predict(const TrainedModel& model, const Eigen::VectorXd& x_star_raw) {
    if (x_star_raw.size() != model.X_train.cols())
        throw DimensionMismatchError("predict", static_cast<std::size_t>(model.X_train.cols()),
                                     static_cast<std::size_t>(x_star_raw.size()));
    const Eigen::VectorXd x = model.standardizer.apply(x_star_raw);

    const auto n = model.X_train.rows();
    Eigen::VectorXd k_star(n);
    for (Eigen::Index i = 0; i < n; ++i)
        k_star[i] = kernel_ard(model.X_train.row(i).transpose(), x, model.hyper);

    const double sf2 = model.hyper.sigma_f() * model.hyper.sigma_f();
    const double sn2 = model.hyper.sigma_n() * model.hyper.sigma_n();

    PosteriorPrediction p;
    p.mean = k_star.dot(model.alpha) + model.standardizer.target_mean;
    const Eigen::VectorXd v =
        model.chol_phi.triangularView<Eigen::Lower>().solve(k_star);
    p.variance = std::max(sn2 + sf2 - v.squaredNorm(), 0.0);
    const double half_width = kCiZ95 * std::sqrt(p.variance);
    p.ci_low = p.mean - half_width;
    p.ci_high = p.mean + half_width;
    return p;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::ordered_json model_to_json(const TrainedModel& m) {
    nlohmann::ordered_json j;
    j["format_version"] = kModelFormatVersion;
    j["hyperparameters"] = {{"log_sigma_f", m.hyper.log_sigma_f},
                            {"log_lengthscale", m.hyper.log_lengthscale},
                            {"log_sigma_n", m.hyper.log_sigma_n}};
    j["standardizer"] = {
        {"feature_mean", std::vector<double>(m.standardizer.feature_mean.begin(),
                                             m.standardizer.feature_mean.end())},
        {"feature_std", std::vector<double>(m.standardizer.feature_std.begin(),
                                            m.standardizer.feature_std.end())},
        {"target_mean", m.standardizer.target_mean}};
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(m.X_train.rows()));
    for (Eigen::Index i = 0; i < m.X_train.rows(); ++i)
        rows[static_cast<std::size_t>(i)] =
            std::vector<double>(m.X_train.row(i).begin(), m.X_train.row(i).end());
    j["x_train"] = rows;
    j["alpha"] = std::vector<double>(m.alpha.begin(), m.alpha.end());
    j["lml"] = m.lml;
    j["jitter"] = m.jitter;
    return j;
}

inline TrainedModel model_from_json(const nlohmann::json& j) {
    if (!j.contains("format_version") || j.at("format_version").get<int>() != kModelFormatVersion)
        throw InvalidConfigError("unsupported model format version");

    TrainedModel m;
    const auto& h = j.at("hyperparameters");
    m.hyper.log_sigma_f = h.at("log_sigma_f").get<double>();
    m.hyper.log_lengthscale = h.at("log_lengthscale").get<std::vector<double>>();
    m.hyper.log_sigma_n = h.at("log_sigma_n").get<double>();

    const auto& s = j.at("standardizer");
    const auto fmean = s.at("feature_mean").get<std::vector<double>>();
    const auto fstd = s.at("feature_std").get<std::vector<double>>();
    m.standardizer.feature_mean =
        Eigen::Map<const Eigen::VectorXd>(fmean.data(), static_cast<Eigen::Index>(fmean.size()));
    m.standardizer.feature_std =
        Eigen::Map<const Eigen::VectorXd>(fstd.data(), static_cast<Eigen::Index>(fstd.size()));
    m.standardizer.target_mean = s.at("target_mean").get<double>();

    const auto rows = j.at("x_train").get<std::vector<std::vector<double>>>();
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto d = static_cast<Eigen::Index>(m.hyper.dim());
    m.X_train.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = rows[static_cast<std::size_t>(i)];
        if (static_cast<Eigen::Index>(row.size()) != d)
            throw InvalidConfigError("model x_train row has wrong dimension");
        m.X_train.row(i) = Eigen::Map<const Eigen::VectorXd>(row.data(), d).transpose();
    }

    const auto alpha = j.at("alpha").get<std::vector<double>>();
    m.alpha = Eigen::Map<const Eigen::VectorXd>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
    m.lml = j.at("lml").get<double>();
    m.jitter = j.at("jitter").get<double>();

    // The factor is recomputed; with the stored jitter this is deterministic
    // on a given platform.
    const auto fac = detail::factor_phi(m.X_train, m.hyper, m.jitter);
    m.chol_phi = fac.llt.matrixL();
    return m;
}

inline void save_model(const TrainedModel& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("file_not_writable", "cannot write model file " + path.string());
    out << model_to_json(m).dump(2) << '\n';
}

inline TrainedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("file_not_found", "cannot open model file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfigError("model file " + path.string() + ": " + e.what());
    }
    return model_from_json(j);
}

}  // namespace icgpr
