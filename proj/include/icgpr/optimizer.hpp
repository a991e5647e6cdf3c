#pragma once

// Limited-memory BFGS minimizer with backtracking line search, used for
// marginal-likelihood hyperparameter optimization. The objective may refuse
// a point (returning no value, e.g. when a factorization fails); the line
// search then shrinks the step, and a refusal at the starting point marks
// the whole run invalid.

#include <cmath>
#include <deque>
#include <optional>

#include <Eigen/Dense>

namespace icgpr {

struct LbfgsOptions {
    int max_iterations = 200;
    double f_tolerance = 1e-7;     // stop when |f_prev - f| drops below this
    double g_tolerance = 1e-6;     // stop when the gradient inf-norm drops below this
    int memory = 8;
    int max_line_search_steps = 40;
    double armijo_c1 = 1e-4;
};

struct LbfgsResult {
    Eigen::VectorXd x;
    double f = 0.0;
    int iterations = 0;
    bool converged = false;
    bool valid = false;  // false when the objective failed at the starting point
};

// Objective signature: std::optional<double> fn(const VectorXd& x, VectorXd& grad).
template <typename Objective>
LbfgsResult lbfgs_minimize(Objective&& fn, Eigen::VectorXd x0, const LbfgsOptions& opt = {}) {
    using Eigen::VectorXd;

    LbfgsResult res;
    const auto n = x0.size();
    VectorXd grad(n);
    auto f0 = fn(x0, grad);
    if (!f0) return res;

    res.valid = true;
    VectorXd x = std::move(x0);
    double f = *f0;

    // Best point seen anywhere, including rejected line-search trials.
    res.x = x;
    res.f = f;

    std::deque<VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;

    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        res.iterations = iter + 1;
        if (grad.lpNorm<Eigen::Infinity>() < opt.g_tolerance) {
            res.converged = true;
            break;
        }

        // Two-loop recursion for the search direction.
        VectorXd q = grad;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t i = s_hist.size(); i-- > 0;) {
            alpha[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= alpha[i] * y_hist[i];
        }
        if (!s_hist.empty()) {
            const double gamma =
                s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
            q *= gamma;
        }
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(q);
            q += (alpha[i] - beta) * s_hist[i];
        }
        VectorXd dir = -q;

        double dg = dir.dot(grad);
        if (dg >= 0.0) {  // not a descent direction; fall back to steepest descent
            dir = -grad;
            dg = dir.dot(grad);
        }

        double step = (iter == 0) ? std::min(1.0, 1.0 / grad.lpNorm<Eigen::Infinity>()) : 1.0;
        VectorXd x_new(n), grad_new(n);
        double f_new = f;
        bool accepted = false;
        for (int ls = 0; ls < opt.max_line_search_steps; ++ls) {
            x_new = x + step * dir;
            auto trial = fn(x_new, grad_new);
            if (trial) {
                if (*trial < res.f) {
                    res.x = x_new;
                    res.f = *trial;
                }
                if (*trial <= f + opt.armijo_c1 * step * dg) {
                    f_new = *trial;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if (!accepted) break;  // line search stalled; res already holds the best point

        const VectorXd s = x_new - x;
        const VectorXd y = grad_new - grad;
        const double sy = s.dot(y);
        if (sy > 1e-10 * s.norm() * y.norm()) {  // keep the inverse Hessian positive definite
            s_hist.push_back(s);
            y_hist.push_back(y);
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opt.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }

        const double df = f - f_new;
        x = std::move(x_new);
        grad = grad_new;
        f = f_new;
        if (df < opt.f_tolerance) {
            res.converged = true;
            break;
        }
    }
    return res;
}

}  // namespace icgpr
