#include <gtest/gtest.h>

#include <sstream>

#include "boostlmm/simulation.hpp"

using namespace boostlmm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST(GenDataset, ClusterConstantColumnsExact) {
    sim::SimDesign des;
    const auto inst = sim::gen_dataset(des, 0);
    const Dataset& d = inst.data;
    EXPECT_EQ(detect_cluster_constant(d), (std::vector<Index>{0, 1}));
    for (Index i = 0; i < d.n_clusters(); ++i) {
        const auto Xi = d.X_block(i);
        EXPECT_EQ(Xi.col(0).minCoeff(), Xi.col(0).maxCoeff());
        EXPECT_EQ(Xi.col(1).minCoeff(), Xi.col(1).maxCoeff());
    }
    EXPECT_EQ(d.n_clusters(), 50);
    EXPECT_EQ(d.n_obs(), 500);
}

TEST(GenDataset, SlopesCovariance) {
    sim::SimDesign des;
    des.slopes = true;
    des.tau = 0.4;
    MatrixXd want(3, 3);
    want << 0.16, 0.096, 0.096, 0.096, 0.16, 0.096, 0.096, 0.096, 0.16;
    EXPECT_LT((des.true_Q() - want).cwiseAbs().maxCoeff(), 1e-15);
    const auto inst = sim::gen_dataset(des, 1);
    EXPECT_EQ(inst.data.q(), 3);
    EXPECT_EQ(inst.data.Z().col(1), inst.data.X().col(2));
    EXPECT_EQ(inst.data.Z().col(2), inst.data.X().col(3));
}

TEST(GenDataset, ResponseVarianceByTotalVariance) {
    sim::SimDesign des;
    des.p = 4;
    des.tau = 0.8;
    // Var(y) = sum beta^2 + tau^2 + sigma^2 = 54 + 0.64 + 0.16.
    const double want = 54.0 + 0.64 + 0.16;
    double pooled = 0.0;
    const int reps = 200;
    for (int r = 0; r < reps; ++r) {
        const VectorXd y = sim::gen_dataset(des, r).data.y();
        pooled += (y.array() - 1.0).square().mean() / reps;
    }
    EXPECT_NEAR(pooled, want, 0.03 * want);
}

TEST(GenDataset, BitForBitReproducible) {
    sim::SimDesign des;
    des.slopes = true;
    const auto a = sim::gen_dataset(des, 7);
    const auto b = sim::gen_dataset(des, 7);
    EXPECT_EQ(a.data.y(), b.data.y());
    EXPECT_EQ(a.data.X(), b.data.X());
    EXPECT_EQ(a.truth.gamma, b.truth.gamma);
    EXPECT_NE(a.data.y(), sim::gen_dataset(des, 8).data.y());
    des.seed = 2;
    EXPECT_NE(a.data.y(), sim::gen_dataset(des, 7).data.y());
}

TEST(FalsePositives, Extremes) {
    VectorXd b = VectorXd::Zero(10);
    b.head(4) << 2, 4, 3, 5;
    EXPECT_EQ(sim::false_positives(b), 0.0);
    b.tail(6).setConstant(0.01);
    EXPECT_EQ(sim::false_positives(b), 1.0);
    b(5) = 0.0;
    EXPECT_DOUBLE_EQ(sim::false_positives(b), 5.0 / 6.0);
}

TEST(ScoreEstimate, Definitions) {
    sim::SimDesign des;
    des.slopes = true;
    const auto inst = sim::gen_dataset(des, 0);
    ParamState est = inst.truth;
    est.beta(5) = 0.3;
    est.beta0 += 0.1;
    est.Q(0, 0) = 0.25;
    const auto m = sim::score_estimate(est, inst.truth);
    EXPECT_NEAR(m.mse_beta, 0.09 + 0.01, 1e-14);
    EXPECT_NEAR(m.mse_tau, 0.01, 1e-14);
    EXPECT_NEAR(m.mse_Q, 0.09 * 0.09, 1e-14);
    EXPECT_NEAR(m.false_positive_rate, 1.0 / 6.0, 1e-14);
}

TEST(RunStudy, SmallGridAndCsv) {
    sim::SimDesign des;
    des.n_clusters = 12;
    des.obs_per_cluster = 4;
    des.p = 5;
    des.replicates = 2;
    sim::StudyOptions opt;
    opt.m_stop = 60;
    opt.k = 3;
    opt.threads = 2;
    const auto cells = sim::run_study(
        {des}, {sim::Method::boost_a, sim::Method::ml_oracle, sim::Method::legacy}, opt);
    ASSERT_EQ(cells.size(), 3u);
    for (const auto& c : cells) {
        EXPECT_EQ(c.runs + c.failures, 2);
        EXPECT_GE(c.mean.mse_beta, 0.0);
    }
    std::ostringstream os;
    sim::write_study_csv(os, cells);
    const std::string csv = os.str();
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "design,tau,p,method,mse_beta,mse_tau,mse_Q,fp_rate,m_star,time_s,failures");
    EXPECT_NE(csv.find("boostLMM_a"), std::string::npos);
    EXPECT_NE(csv.find("legacy_nocorrection"), std::string::npos);

    // Deterministic given seeds.
    const auto again = sim::run_study({des}, {sim::Method::boost_a}, opt);
    EXPECT_EQ(again[0].mean.mse_beta, cells[0].mean.mse_beta);
}

TEST(RunStudy, OracleSkippedWhenTooManyCovariates) {
    sim::SimDesign des;
    des.n_clusters = 3;
    des.obs_per_cluster = 2;
    des.p = 6;
    des.replicates = 1;
    EXPECT_FALSE(sim::method_applicable(sim::Method::ml_oracle, des));
    EXPECT_TRUE(sim::method_applicable(sim::Method::boost_b, des));
}

TEST(Method, Names) {
    EXPECT_EQ(sim::parse_method("legacy"), sim::Method::legacy);
    EXPECT_EQ(sim::parse_method("boostLMM_b"), sim::Method::boost_b);
    EXPECT_THROW(sim::parse_method("lasso"), InputError);
}
