#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "boostlmm/dataset.hpp"
#include "boostlmm/errors.hpp"
#include "boostlmm/model.hpp"
#include "boostlmm/optimize.hpp"

namespace boostlmm {

/// Result of a direct maximum-likelihood fit.
struct MlFit {
    ParamState state;  // gamma holds the BLUPs
    double loglik = 0.0;
    int iterations = 0;
};

/// ml_fit did not converge; the best iterate is attached.
class ConvergenceError : public NumericError {
public:
    ConvergenceError(const std::string& what, MlFit best)
        : NumericError(what), best_(std::move(best)) {}
    const MlFit& best() const { return best_; }

private:
    MlFit best_;
};

namespace detail {

// V_i = sigma2 I + Z_i Q Z_i'
inline Eigen::MatrixXd marginal_cov(const Dataset& data, Index i, double sigma2,
                                    const Eigen::MatrixXd& Q) {
    const auto Zi = data.Z_block(i);
    Eigen::MatrixXd V = Zi * Q * Zi.transpose();
    V.diagonal().array() += sigma2;
    return V;
}

inline Eigen::LLT<Eigen::MatrixXd> factor_marginal(const Dataset& data, Index i, double sigma2,
                                                   const Eigen::MatrixXd& Q) {
    Eigen::LLT<Eigen::MatrixXd> llt(marginal_cov(data, i, sigma2, Q));
    if (llt.info() != Eigen::Success) {
        throw NumericError("marginal covariance of cluster '" +
                           data.cluster_labels()[static_cast<std::size_t>(i)] +
                           "' is not positive definite");
    }
    return llt;
}

inline double logdet(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace detail

/// sum_i [ -1/2 log det(2 pi V_i) - 1/2 (y_i - mu_i)' V_i^{-1} (y_i - mu_i) ]
inline double marginal_loglik(double beta0, const Eigen::VectorXd& beta, double sigma2,
                              const Eigen::MatrixXd& Q, const Dataset& data) {
    if (!(sigma2 > 0.0)) throw NumericError("sigma2 must be positive");
    if (beta.size() != data.p()) throw InputError("beta has the wrong length");
    double ll = 0.0;
    for (Index i = 0; i < data.n_clusters(); ++i) {
        const auto llt = detail::factor_marginal(data, i, sigma2, Q);
        Eigen::VectorXd r = data.y_block(i) - data.X_block(i) * beta;
        r.array() -= beta0;
        const double ni = static_cast<double>(data.cluster_size(i));
        ll += -0.5 * (ni * std::log(2.0 * std::numbers::pi) + detail::logdet(llt)) -
              0.5 * r.dot(llt.solve(r));
    }
    return ll;
}

/// Gradient of marginal_loglik with respect to (beta0, beta).
inline Eigen::VectorXd marginal_score_beta(double beta0, const Eigen::VectorXd& beta,
                                           double sigma2, const Eigen::MatrixXd& Q,
                                           const Dataset& data) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(1 + data.p());
    for (Index i = 0; i < data.n_clusters(); ++i) {
        const auto llt = detail::factor_marginal(data, i, sigma2, Q);
        Eigen::VectorXd r = data.y_block(i) - data.X_block(i) * beta;
        r.array() -= beta0;
        const Eigen::VectorXd w = llt.solve(r);
        g(0) += w.sum();
        g.tail(data.p()) += data.X_block(i).transpose() * w;
    }
    return g;
}

namespace detail {

struct VarianceParams {
    double sigma2;
    Eigen::MatrixXd Q;
};

// theta = (log sigma2, lower-triangular L of Q = L L' with log diagonal),
// stacked column by column.
inline VarianceParams unpack_variance(const Eigen::VectorXd& theta, Index q) {
    VarianceParams out{std::exp(theta(0)), Eigen::MatrixXd::Zero(q, q)};
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(q, q);
    Index k = 1;
    for (Index c = 0; c < q; ++c) {
        for (Index r = c; r < q; ++r, ++k) L(r, c) = (r == c) ? std::exp(theta(k)) : theta(k);
    }
    out.Q = L * L.transpose();
    return out;
}

inline Eigen::VectorXd pack_variance(double sigma2, const Eigen::MatrixXd& Q) {
    const Index q = Q.rows();
    Eigen::VectorXd theta(1 + q * (q + 1) / 2);
    theta(0) = std::log(sigma2);
    const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(Q).matrixL();
    Index k = 1;
    for (Index c = 0; c < q; ++c) {
        for (Index r = c; r < q; ++r, ++k) theta(k) = (r == c) ? std::log(L(r, c)) : L(r, c);
    }
    return theta;
}

struct GlsSolution {
    double beta0;
    Eigen::VectorXd beta;
    double loglik;
};

// GLS fixed effects for given variance components and the resulting
// marginal log-likelihood.
inline GlsSolution profile_gls(const Dataset& data, double sigma2, const Eigen::MatrixXd& Q) {
    const Index p1 = data.p() + 1;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p1, p1);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p1);
    std::vector<Eigen::LLT<Eigen::MatrixXd>> factors;
    factors.reserve(static_cast<std::size_t>(data.n_clusters()));
    double logdet_sum = 0.0;
    for (Index i = 0; i < data.n_clusters(); ++i) {
        factors.push_back(factor_marginal(data, i, sigma2, Q));
        const auto& llt = factors.back();
        logdet_sum += logdet(llt);
        Eigen::MatrixXd Xt(data.cluster_size(i), p1);
        Xt << Eigen::VectorXd::Ones(data.cluster_size(i)), data.X_block(i);
        const Eigen::MatrixXd W = llt.solve(Xt);
        A.noalias() += Xt.transpose() * W;
        b.noalias() += W.transpose() * data.y_block(i);
    }
    const Eigen::VectorXd coef = A.ldlt().solve(b);
    double quad = 0.0;
    for (Index i = 0; i < data.n_clusters(); ++i) {
        Eigen::VectorXd r = data.y_block(i) - data.X_block(i) * coef.tail(data.p());
        r.array() -= coef(0);
        quad += r.dot(factors[static_cast<std::size_t>(i)].solve(r));
    }
    const double N = static_cast<double>(data.n_obs());
    return {coef(0), coef.tail(data.p()),
            -0.5 * (N * std::log(2.0 * std::numbers::pi) + logdet_sum) - 0.5 * quad};
}

inline Eigen::MatrixXd blups(const Dataset& data, double beta0, const Eigen::VectorXd& beta,
                             double sigma2, const Eigen::MatrixXd& Q) {
    Eigen::MatrixXd gamma(data.n_clusters(), data.q());
    for (Index i = 0; i < data.n_clusters(); ++i) {
        const auto llt = factor_marginal(data, i, sigma2, Q);
        Eigen::VectorXd r = data.y_block(i) - data.X_block(i) * beta;
        r.array() -= beta0;
        gamma.row(i) = (Q * data.Z_block(i).transpose() * llt.solve(r)).transpose();
    }
    return gamma;
}

}  // namespace detail

/**
 * Maximum-likelihood fit of the Gaussian mixed model with the random design
 * stored in `data`. The fixed effects are profiled out by GLS; the variance
 * components are optimized over a log-Cholesky parameterization by BFGS.
 * A vanishing random-effects variance is reported as Q ~ 0, not an error.
 */
inline MlFit ml_fit(const Dataset& data, int max_iter = 500) {
    const Index q = data.q();
    if (q < 1 || q > 3) throw InputError("ml_fit supports 1 to 3 random-effect columns");
    if (data.n_obs() <= data.p() + 1) {
        throw InputError("ml_fit needs more observations than fixed effects");
    }

    // Start from half the OLS residual variance on each component.
    Eigen::MatrixXd Xt(data.n_obs(), data.p() + 1);
    Xt << Eigen::VectorXd::Ones(data.n_obs()), data.X();
    const Eigen::VectorXd ols = Xt.colPivHouseholderQr().solve(data.y());
    const double v = std::max((data.y() - Xt * ols).squaredNorm() / data.n_obs(), 1e-8);
    Eigen::MatrixXd Q0 = Eigen::MatrixXd::Identity(q, q) * (0.5 * v);
    for (Index s = 1; s < q; ++s) {
        const auto z = data.Z().col(s);
        const double var_z = (z.array() - z.mean()).square().mean();
        if (var_z > 0) Q0(s, s) = 0.5 * v / var_z;
    }
    const Eigen::VectorXd theta0 = detail::pack_variance(0.5 * v, Q0);

    auto objective = [&](const Eigen::VectorXd& theta) {
        const auto vp = detail::unpack_variance(theta, q);
        try {
            return -detail::profile_gls(data, vp.sigma2, vp.Q).loglik;
        } catch (const NumericError&) {
            return std::numeric_limits<double>::infinity();
        }
    };
    optimize::BfgsOptions opt;
    opt.max_iter = max_iter;
    const auto res = optimize::bfgs_minimize(objective, theta0, opt);

    const auto vp = detail::unpack_variance(res.x, q);
    const auto gls = detail::profile_gls(data, vp.sigma2, vp.Q);
    MlFit fit;
    fit.state.beta0 = gls.beta0;
    fit.state.beta = gls.beta;
    fit.state.sigma2 = vp.sigma2;
    fit.state.Q = vp.Q;
    fit.state.gamma = detail::blups(data, gls.beta0, gls.beta, vp.sigma2, vp.Q);
    fit.loglik = gls.loglik;
    fit.iterations = res.iterations;
    if (!res.converged) {
        throw ConvergenceError("ml_fit did not converge in " + std::to_string(max_iter) +
                                   " iterations",
                               std::move(fit));
    }
    return fit;
}

}  // namespace boostlmm
