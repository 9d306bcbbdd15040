#include <gtest/gtest.h>

#include "boostlmm/dataset.hpp"
#include "oracles.hpp"

using namespace boostlmm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Three children measured at four ages; column 0 is a gender dummy, column 1 is age.
Dataset growth_like() {
    const std::vector<std::string> ids{"c", "c", "c", "c", "a", "a", "a", "a", "b", "b", "b", "b"};
    MatrixXd X(12, 2);
    VectorXd y(12);
    const double gender[] = {1, 0, 1};  // c, a, b
    for (int k = 0; k < 12; ++k) {
        X(k, 0) = gender[k / 4];
        X(k, 1) = 8 + 2 * (k % 4);
        y(k) = 20 + 0.5 * X(k, 1) - 2 * X(k, 0) + 0.1 * k;
    }
    return Dataset::from_rows(y, ids, X, {"female", "age"}, MatrixXd::Ones(12, 1),
                              {"(Intercept)"});
}

}  // namespace

TEST(DetectClusterConstant, GenderFlaggedAgeNot) {
    const Dataset d = growth_like();
    EXPECT_EQ(detect_cluster_constant(d), std::vector<Index>{0});
    EXPECT_EQ(d.cluster_constant_idx(), std::vector<Index>{0});
}

TEST(DetectClusterConstant, SingletonClustersFlagEverything) {
    MatrixXd X(4, 3);
    X << 1, 2, 3, 4, 5, 6, 7, 8, 9, 1, 2, 3;
    const Dataset d = Dataset::from_rows(VectorXd::LinSpaced(4, 0, 3), {"1", "2", "3", "4"}, X,
                                         {"a", "b", "c"}, MatrixXd::Ones(4, 1), {"(Intercept)"});
    EXPECT_EQ(detect_cluster_constant(d), (std::vector<Index>{0, 1, 2}));
}

TEST(DetectClusterConstant, ToleranceAbsorbsRoundTripNoise) {
    MatrixXd X(4, 1);
    X << 0.3, 0.3 + 1e-13, 0.7, 0.7;
    const Dataset d = Dataset::from_rows(VectorXd::Zero(4), {"1", "1", "2", "2"}, X, {"x"},
                                         MatrixXd::Ones(4, 1), {"(Intercept)"});
    EXPECT_EQ(d.cluster_constant_idx(), std::vector<Index>{0});
    X(1, 0) = 0.3 + 1e-9;
    const Dataset e = Dataset::from_rows(VectorXd::Zero(4), {"1", "1", "2", "2"}, X, {"x"},
                                         MatrixXd::Ones(4, 1), {"(Intercept)"});
    EXPECT_TRUE(e.cluster_constant_idx().empty());
}

TEST(Dataset, RowsGroupedAndSortedByCluster) {
    const Dataset d = growth_like();
    EXPECT_EQ(d.cluster_labels(), (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_EQ(d.n_clusters(), 3);
    EXPECT_EQ(d.n_obs(), 12);
    for (Index i = 0; i < 3; ++i) EXPECT_EQ(d.cluster_size(i), 4);
    // "a" rows came from positions 4..7 and keep their original order.
    EXPECT_DOUBLE_EQ(d.y()(0), 20 + 0.5 * 8 + 0.1 * 4);
    EXPECT_DOUBLE_EQ(d.y()(3), 20 + 0.5 * 14 + 0.1 * 7);
}

TEST(Dataset, NumericLabelsSortNumerically) {
    const Dataset d = Dataset::from_rows(VectorXd::LinSpaced(3, 0, 2), {"10", "9", "2"},
                                         MatrixXd::Zero(3, 0), {}, MatrixXd::Ones(3, 1),
                                         {"(Intercept)"});
    EXPECT_EQ(d.cluster_labels(), (std::vector<std::string>{"2", "9", "10"}));
    EXPECT_DOUBLE_EQ(d.y()(0), 2.0);
}

TEST(Dataset, SingleClusterRejected) {
    try {
        Dataset::from_rows(VectorXd::Zero(3), {"1", "1", "1"}, MatrixXd::Zero(3, 0), {},
                           MatrixXd::Ones(3, 1), {"(Intercept)"});
        FAIL() << "expected InputError";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("mixed model requires >= 2 clusters"),
                  std::string::npos);
    }
}

TEST(Dataset, RejectsBadShapesAndValues) {
    EXPECT_THROW(Dataset::from_rows(VectorXd::Zero(3), {"1", "2"}, MatrixXd::Zero(3, 0), {},
                                    MatrixXd::Ones(3, 1), {"(Intercept)"}),
                 InputError);
    MatrixXd Z = MatrixXd::Ones(4, 1);
    Z(2, 0) = 2.0;
    EXPECT_THROW(Dataset::from_rows(VectorXd::Zero(4), {"1", "1", "2", "2"}, MatrixXd::Zero(4, 0),
                                    {}, Z, {"(Intercept)"}),
                 InputError);
    VectorXd y = VectorXd::Zero(4);
    y(1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(Dataset::from_rows(y, {"1", "1", "2", "2"}, MatrixXd::Zero(4, 0), {},
                                    MatrixXd::Ones(4, 1), {"(Intercept)"}),
                 InputError);
}

TEST(Dataset, ConstantOverrideIsValidated) {
    const Dataset d = growth_like();
    EXPECT_THROW(d.with_cluster_constant({1}), InputError);  // age varies
    EXPECT_TRUE(d.with_cluster_constant({}).cluster_constant_idx().empty());
}

TEST(Dataset, SubsetKeepsClusterOrder) {
    const Dataset d = growth_like();
    const std::vector<Index> pick{2, 0};
    const Dataset s = d.subset(pick);
    EXPECT_EQ(s.cluster_labels(), (std::vector<std::string>{"a", "c"}));
    EXPECT_EQ(s.n_obs(), 8);
    EXPECT_EQ(s.y_block(1), d.y_block(2));
    const std::vector<Index> one{1};
    EXPECT_THROW(d.subset(one), InputError);
}

TEST(Dataset, ClusterLevelValues) {
    const Dataset d = growth_like();
    const std::vector<Index> cols{0};
    const MatrixXd lv = d.cluster_level(cols);
    ASSERT_EQ(lv.rows(), 3);
    EXPECT_DOUBLE_EQ(lv(0, 0), 0.0);  // a
    EXPECT_DOUBLE_EQ(lv(1, 0), 1.0);  // b
    EXPECT_DOUBLE_EQ(lv(2, 0), 1.0);  // c
}
