#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "boostlmm/ml_oracle.hpp"
#include "boostlmm/simulation.hpp"
#include "oracles.hpp"

using namespace boostlmm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST(MarginalLoglik, ZeroCovarianceIsConditionalAtZeroGamma) {
    const Dataset d = oracle::toy(5, 3, 2, 1);
    ParamState s = oracle::random_state(d, 2);
    s.gamma.setZero();
    EXPECT_NEAR(marginal_loglik(s.beta0, s.beta, s.sigma2, MatrixXd::Zero(1, 1), d),
                conditional_loglik(s, d), 1e-10);
}

TEST(MarginalLoglik, TwoByTwoHandArithmetic) {
    VectorXd y(3);
    y << 2.0, 0.5, 1.0;
    const Dataset d = Dataset::from_rows(y, {"1", "1", "2"}, MatrixXd::Zero(3, 0), {},
                                         MatrixXd::Ones(3, 1), {"(Intercept)"});
    const double b0 = 0.8, s2 = 0.5, t2 = 1.2;
    // cluster 1: V = [[s2+t2, t2], [t2, s2+t2]]
    const double a = s2 + t2, c = t2;
    const double det = a * a - c * c;
    const double r1 = 2.0 - b0, r2 = 0.5 - b0;
    const double quad = (a * r1 * r1 - 2 * c * r1 * r2 + a * r2 * r2) / det;
    const double ll1 = -0.5 * (2 * std::log(2 * std::numbers::pi) + std::log(det)) - 0.5 * quad;
    const double r3 = 1.0 - b0;
    const double ll2 = -0.5 * std::log(2 * std::numbers::pi * (s2 + t2)) - 0.5 * r3 * r3 / (s2 + t2);
    EXPECT_NEAR(marginal_loglik(b0, VectorXd(0), s2, MatrixXd::Constant(1, 1, t2), d), ll1 + ll2,
                1e-12);
}

TEST(MarginalLoglik, MatchesDenseOracle) {
    for (unsigned seed = 1; seed <= 4; ++seed) {
        const Dataset d = oracle::toy(4, 3, 2, seed, seed % 2 == 0);
        const ParamState s = oracle::random_state(d, seed + 10);
        const double want = oracle::marginal_loglik(s.beta0, s.beta, s.sigma2, s.Q, d);
        EXPECT_NEAR(marginal_loglik(s.beta0, s.beta, s.sigma2, s.Q, d), want,
                    1e-10 * std::abs(want));
    }
}

TEST(MarginalLoglik, MonteCarloIntegral) {
    // Two clusters, random intercept and slope; integrate f(y_i | gamma) p(gamma) by sampling.
    VectorXd y(5);
    y << 1.2, 0.4, 2.1, -0.3, 0.6;
    MatrixXd Z(5, 2);
    Z << 1, -0.5, 1, 0.7, 1, 1.1, 1, 0.2, 1, -1.0;
    const Dataset d = Dataset::from_rows(y, {"1", "1", "1", "2", "2"}, MatrixXd::Zero(5, 0), {},
                                         Z, {"(Intercept)", "z"});
    const double b0 = 0.5, s2 = 0.6;
    MatrixXd Q(2, 2);
    Q << 0.8, 0.3, 0.3, 0.5;
    const MatrixXd L = Q.llt().matrixL();
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> N01;
    const int draws = 1000000;
    for (Index i = 0; i < 2; ++i) {
        const auto Zi = d.Z_block(i);
        const VectorXd yi = d.y_block(i);
        double sum = 0.0, sumsq = 0.0;
        for (int k = 0; k < draws; ++k) {
            const Eigen::Vector2d g = L * Eigen::Vector2d(N01(rng), N01(rng));
            double ll = 0.0;
            for (Index j = 0; j < yi.size(); ++j) {
                ll += oracle::normal_logpdf(yi(j), b0 + Zi.row(j).dot(g), s2);
            }
            const double f = std::exp(ll);
            sum += f;
            sumsq += f * f;
        }
        const double mean = sum / draws;
        const double se = std::sqrt((sumsq / draws - mean * mean) / draws);
        // Exact single-cluster marginal density.
        MatrixXd Zs = Zi;
        const double exact = std::exp(
            -0.5 * (yi.size() * std::log(2 * std::numbers::pi) +
                    std::log((Zs * Q * Zs.transpose() + s2 * MatrixXd::Identity(yi.size(), yi.size()))
                                 .determinant())) -
            0.5 * (yi.array() - b0).matrix().dot(
                      (Zs * Q * Zs.transpose() + s2 * MatrixXd::Identity(yi.size(), yi.size()))
                          .inverse() *
                      (yi.array() - b0).matrix()));
        EXPECT_NEAR(mean, exact, 3 * se) << "cluster " << i;
    }
    // And the library sums the per-cluster logs.
    double want = 0.0;
    for (Index i = 0; i < 2; ++i) {
        const auto Zi = d.Z_block(i);
        const Index ni = Zi.rows();
        const MatrixXd V = Zi * Q * Zi.transpose() + s2 * MatrixXd::Identity(ni, ni);
        const VectorXd r = d.y_block(i).array() - b0;
        want += -0.5 * (ni * std::log(2 * std::numbers::pi) + std::log(V.determinant())) -
                0.5 * r.dot(V.inverse() * r);
    }
    EXPECT_NEAR(marginal_loglik(b0, VectorXd(0), s2, Q, d), want, 1e-12);
}

TEST(MarginalScore, BetaGradientMatchesFiniteDifferences) {
    const Dataset d = oracle::toy(6, 4, 3, 31, true);
    const ParamState s = oracle::random_state(d, 32);
    const VectorXd g = marginal_score_beta(s.beta0, s.beta, s.sigma2, s.Q, d);
    auto f = [&](const VectorXd& b) {
        return marginal_loglik(b(0), b.tail(d.p()), s.sigma2, s.Q, d);
    };
    VectorXd b(1 + d.p());
    b << s.beta0, s.beta;
    const VectorXd fd = oracle::fd_gradient(f, b, 1e-6);
    for (Index k = 0; k < g.size(); ++k) {
        EXPECT_NEAR(g(k), fd(k), 1e-5 * std::max(1.0, std::abs(fd(k))));
    }
}

TEST(MlFit, NoClusterSignalGivesOls) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> N01;
    const int n = 15, ni = 6, p = 2;
    const Index N = n * ni;
    MatrixXd X = MatrixXd::NullaryExpr(N, p, [&] { return N01(rng); });
    // Noise orthogonal to the cluster indicators and to X: OLS residuals have
    // zero cluster sums, so OLS solves the GLS equations for every Q.
    MatrixXd B(N, n + p);
    B.setZero();
    for (Index k = 0; k < N; ++k) B(k, k / ni) = 1.0;
    B.rightCols(p) = X;
    VectorXd e = VectorXd::NullaryExpr(N, [&] { return 0.5 * N01(rng); });
    e -= B * B.colPivHouseholderQr().solve(e);
    VectorXd y = X * Eigen::Vector2d(1.5, -0.7) + e;
    y.array() += 2.0;
    std::vector<std::string> ids;
    for (Index k = 0; k < N; ++k) ids.push_back(std::to_string(k / ni));
    const Dataset d = Dataset::from_rows(y, ids, X, {"a", "b"}, MatrixXd::Ones(N, 1),
                                         {"(Intercept)"});
    MatrixXd Xt(N, p + 1);
    Xt << VectorXd::Ones(N), X;
    const VectorXd ols = Xt.colPivHouseholderQr().solve(y);
    const MlFit fit = ml_fit(d);
    EXPECT_NEAR(fit.state.beta0, ols(0), 1e-6);
    EXPECT_NEAR(fit.state.beta(0), ols(1), 1e-6);
    EXPECT_NEAR(fit.state.beta(1), ols(2), 1e-6);
    EXPECT_LT(fit.state.Q(0, 0), 1e-4);
}

TEST(MlFit, BlupsSolveMixedModelEquations) {
    const Dataset d = oracle::toy(8, 5, 2, 14, true);
    const MlFit fit = ml_fit(d);
    const MatrixXd Qinv = fit.state.Q.inverse();
    for (Index i = 0; i < d.n_clusters(); ++i) {
        const auto Zi = d.Z_block(i);
        VectorXd r = d.y_block(i) - d.X_block(i) * fit.state.beta;
        r.array() -= fit.state.beta0;
        const VectorXd g = fit.state.gamma.row(i).transpose();
        const VectorXd eq = Zi.transpose() * (r - Zi * g) / fit.state.sigma2 - Qinv * g;
        EXPECT_LT(eq.cwiseAbs().maxCoeff(), 1e-8) << "cluster " << i;
    }
}

TEST(MlFit, AtLeastAsLikelyAsTruth) {
    for (bool slopes : {false, true}) {
        sim::SimDesign des;
        des.slopes = slopes;
        des.n_clusters = 30;
        des.p = 6;
        const sim::SimInstance inst = sim::gen_dataset(des, 0);
        const MlFit fit = ml_fit(inst.data);
        const ParamState& t = inst.truth;
        EXPECT_GE(fit.loglik, marginal_loglik(t.beta0, t.beta, t.sigma2, t.Q, inst.data));
        EXPECT_NEAR(fit.loglik,
                    marginal_loglik(fit.state.beta0, fit.state.beta, fit.state.sigma2, fit.state.Q,
                                    inst.data),
                    1e-8);
    }
}

TEST(MlFit, AffineCovariateRescaling) {
    const Dataset d = oracle::toy(10, 4, 3, 21);
    MatrixXd X = d.X();
    X.col(1) = 3.0 * X.col(1).array() + 2.0;
    const Dataset e = d.with_fixed(X, d.x_names());
    const MlFit a = ml_fit(d);
    const MlFit b = ml_fit(e);
    EXPECT_NEAR(b.state.beta(1) * 3.0, a.state.beta(1), 1e-5);
    EXPECT_NEAR(b.state.beta(0), a.state.beta(0), 1e-5);
    EXPECT_NEAR(b.state.beta(2), a.state.beta(2), 1e-5);
    EXPECT_NEAR(b.state.beta0 + 2.0 * b.state.beta(1), a.state.beta0, 1e-5);
    EXPECT_NEAR(b.loglik, a.loglik, 1e-6);
}

TEST(MlFit, TauEstimateOnSimulatedDesign) {
    sim::SimDesign des;
    des.tau = 0.8;
    des.p = 10;
    double mse = 0.0;
    const int reps = 5;
    for (int r = 0; r < reps; ++r) {
        const auto inst = sim::gen_dataset(des, r);
        mse += sim::score_estimate(ml_fit(inst.data).state, inst.truth).mse_tau / reps;
    }
    EXPECT_LT(mse, 0.1);
}

TEST(MlFit, NonConvergenceCarriesBestIterate) {
    const Dataset d = oracle::toy(10, 4, 2, 3, true);
    try {
        ml_fit(d, 1);
        FAIL() << "expected ConvergenceError";
    } catch (const ConvergenceError& e) {
        EXPECT_EQ(e.best().state.beta.size(), 2);
        EXPECT_TRUE(std::isfinite(e.best().loglik));
    }
}

TEST(MlFit, RejectsUnsupportedShapes) {
    const Dataset d = oracle::toy(2, 2, 4, 3);
    EXPECT_THROW(ml_fit(d), InputError);
}

TEST(MlFit, ConvergesWhenGradientNoiseExceedsTolerance) {
    // Intercept-only fit whose objective is ~1.6e3: the FD gradient bottoms out
    // near 3e-6, above the absolute tolerance, at the optimum.
    sim::SimDesign des;
    des.tau = 0.4;
    const Dataset full = sim::gen_dataset(des, 6).data;
    const Dataset d = full.with_fixed(MatrixXd(full.n_obs(), 0), {});
    const MlFit fit = ml_fit(d);
    EXPECT_LT(fit.iterations, 100);
    EXPECT_NEAR(fit.loglik, -1654.45531458, 1e-6);
}
