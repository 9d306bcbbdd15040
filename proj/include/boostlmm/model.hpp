#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "boostlmm/dataset.hpp"
#include "boostlmm/errors.hpp"

namespace boostlmm {

/// Smallest eigenvalue allowed for Q before a ridge is added.
inline constexpr double kCovarianceRidge = 1e-10;

/// Full parameter vector of the mixed model: effects and variance components.
struct ParamState {
    double beta0 = 0.0;
    Eigen::VectorXd beta;   // p
    Eigen::MatrixXd gamma;  // n x q, row i is gamma_i
    double sigma2 = 1.0;
    Eigen::MatrixXd Q;      // q x q

    void validate(const Dataset& data) const {
        if (beta.size() != data.p()) throw InputError("beta has the wrong length");
        if (gamma.rows() != data.n_clusters() || gamma.cols() != data.q()) {
            throw InputError("gamma must be n_clusters x q");
        }
        if (Q.rows() != data.q() || Q.cols() != data.q()) throw InputError("Q must be q x q");
        if (!(sigma2 > 0.0)) throw NumericError("sigma2 must be positive");
    }
};

/// Inverse of a symmetric covariance; adds kCovarianceRidge * I first when the
/// smallest eigenvalue falls below it. Throws if Q is not usable even then.
inline Eigen::MatrixXd covariance_inverse(const Eigen::MatrixXd& Q) {
    Eigen::MatrixXd sym = 0.5 * (Q + Q.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success || !sym.allFinite()) {
        throw NumericError("random-effects covariance is not finite");
    }
    const double min_eig = eig.eigenvalues().minCoeff();
    if (min_eig < -kCovarianceRidge) {
        throw NumericError("random-effects covariance is not positive semi-definite");
    }
    if (min_eig < kCovarianceRidge) {
        sym.diagonal().array() += kCovarianceRidge;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(sym);
    if (llt.info() != Eigen::Success) throw NumericError("random-effects covariance is singular");
    return llt.solve(Eigen::MatrixXd::Identity(sym.rows(), sym.cols()));
}

/// eta = beta0 + X beta (no random part).
inline Eigen::VectorXd fixed_predictor(const ParamState& s, const Dataset& data) {
    Eigen::VectorXd eta = data.X() * s.beta;
    eta.array() += s.beta0;
    return eta;
}

/// eta = beta0 + X beta + Z gamma.
inline Eigen::VectorXd linear_predictor(const ParamState& s, const Dataset& data) {
    Eigen::VectorXd eta = fixed_predictor(s, data);
    for (Index i = 0; i < data.n_clusters(); ++i) {
        eta.segment(data.cluster_begin(i), data.cluster_size(i)).noalias() +=
            data.Z_block(i) * s.gamma.row(i).transpose();
    }
    return eta;
}

inline double gaussian_loglik_from_rss(double rss, Index n_obs, double sigma2) {
    if (!(sigma2 > 0.0)) throw NumericError("sigma2 must be positive");
    const double N = static_cast<double>(n_obs);
    return -0.5 * N * std::log(2.0 * std::numbers::pi * sigma2) - rss / (2.0 * sigma2);
}

/// Sum over clusters of log f(y_i | effects, sigma2).
inline double conditional_loglik(const ParamState& s, const Dataset& data) {
    if (!(s.sigma2 > 0.0)) throw NumericError("sigma2 must be positive");
    const double rss = (data.y() - linear_predictor(s, data)).squaredNorm();
    return gaussian_loglik_from_rss(rss, data.n_obs(), s.sigma2);
}

/// 1/2 sum_i gamma_i' Q^{-1} gamma_i
inline double random_effects_penalty(const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& Q) {
    const Eigen::MatrixXd Qinv = covariance_inverse(Q);
    return 0.5 * (gamma * Qinv).cwiseProduct(gamma).sum();
}

inline double penalized_loglik(const ParamState& s, const Dataset& data) {
    return conditional_loglik(s, data) - random_effects_penalty(s.gamma, s.Q);
}

/**
 * Gradient of penalized_loglik with respect to the stacked effects
 * (beta0, beta_1..beta_p, gamma_1', ..., gamma_n').
 */
inline Eigen::VectorXd penalized_score(const ParamState& s, const Dataset& data) {
    const Index p = data.p();
    const Index q = data.q();
    const Eigen::VectorXd resid = data.y() - linear_predictor(s, data);
    const Eigen::MatrixXd Qinv = covariance_inverse(s.Q);
    Eigen::VectorXd g(1 + p + data.n_clusters() * q);
    g(0) = resid.sum() / s.sigma2;
    g.segment(1, p) = data.X().transpose() * resid / s.sigma2;
    for (Index i = 0; i < data.n_clusters(); ++i) {
        const auto r_i = resid.segment(data.cluster_begin(i), data.cluster_size(i));
        g.segment(1 + p + i * q, q) = data.Z_block(i).transpose() * r_i / s.sigma2 -
                                      Qinv * s.gamma.row(i).transpose();
    }
    return g;
}

}  // namespace boostlmm
