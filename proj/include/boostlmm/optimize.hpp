#pragma once

#include <cmath>
#include <functional>
#include <limits>

#include <Eigen/Dense>

namespace boostlmm::optimize {

/// Golden-section search for the maximizer of a unimodal f on [lo, hi].
template <class F>
double golden_section_max(F&& f, double lo, double hi, double rel_tol = 1e-12,
                          int max_iter = 500) {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = f(c), fd = f(d);
    for (int it = 0; it < max_iter && (b - a) > rel_tol * (std::abs(a) + std::abs(b)); ++it) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

struct MinimizeResult {
    Eigen::VectorXd x;
    double value = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

struct BfgsOptions {
    int max_iter = 500;
    double value_tol = 1e-8;     // |f_k - f_{k-1}|
    double gradient_tol = 1e-6;  // inf-norm of the gradient
    double fd_step = 1e-5;
};

/// Central-difference gradient.
inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd xp = x;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double step = h * std::max(1.0, std::abs(x(k)));
        xp(k) = x(k) + step;
        const double fp = f(xp);
        xp(k) = x(k) - step;
        const double fm = f(xp);
        xp(k) = x(k);
        g(k) = (fp - fm) / (2.0 * step);
    }
    return g;
}

/**
 * BFGS with finite-difference gradients and Armijo backtracking. Converged
 * when successive values differ by less than value_tol and the gradient is
 * below gradient_tol, or when the value stops changing and the gradient is
 * within 1e3 * gradient_tol. Non-finite objective values are treated as +inf.
 */
inline MinimizeResult bfgs_minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                                    Eigen::VectorXd x0, const BfgsOptions& opt = {}) {
    auto safe = [&](const Eigen::VectorXd& x) {
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };
    const Eigen::Index n = x0.size();
    MinimizeResult res;
    res.x = std::move(x0);
    res.value = safe(res.x);
    if (!std::isfinite(res.value)) return res;

    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd g = numeric_gradient(safe, res.x, opt.fd_step);
    int stalled = 0;
    for (int it = 1; it <= opt.max_iter; ++it) {
        res.iterations = it;
        Eigen::VectorXd dir = -H * g;
        if (dir.dot(g) >= 0.0) {
            H.setIdentity();
            dir = -g;
        }
        double step = 1.0;
        double f_new = safe(res.x + step * dir);
        const double slope = g.dot(dir);
        while (f_new > res.value + 1e-4 * step * slope && step > 1e-14) {
            step *= 0.5;
            f_new = safe(res.x + step * dir);
        }
        if (!(f_new <= res.value)) {
            // No descent possible along any tried step: stationary to FD accuracy.
            res.converged = g.lpNorm<Eigen::Infinity>() < 1e3 * opt.gradient_tol;
            return res;
        }
        const Eigen::VectorXd s = step * dir;
        const Eigen::VectorXd x_new = res.x + s;
        const Eigen::VectorXd g_new = numeric_gradient(safe, x_new, opt.fd_step);
        const Eigen::VectorXd yk = g_new - g;
        const double sy = s.dot(yk);
        const double change = std::abs(res.value - f_new);
        res.x = x_new;
        res.value = f_new;
        g = g_new;
        if (change < opt.value_tol && g.lpNorm<Eigen::Infinity>() < opt.gradient_tol) {
            res.converged = true;
            return res;
        }
        // Value frozen at rounding level while the FD gradient sits on its
        // noise floor: same verdict as the no-descent exit.
        stalled = change <= 1e-14 * std::max(1.0, std::abs(f_new)) ? stalled + 1 : 0;
        if (stalled >= 3) {
            res.converged = g.lpNorm<Eigen::Infinity>() < 1e3 * opt.gradient_tol;
            return res;
        }
        if (sy > 1e-12 * s.norm() * yk.norm()) {
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
            H = (I - rho * s * yk.transpose()) * H * (I - rho * yk * s.transpose()) +
                rho * s * s.transpose();
        }
    }
    return res;
}

}  // namespace boostlmm::optimize
