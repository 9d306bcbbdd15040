#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "boostlmm/dataset.hpp"
#include "boostlmm/errors.hpp"

namespace boostlmm {

/// Thrown when the cluster-constant covariates (with the ones column) are
/// linearly dependent.
class SingularCorrectionError : public NumericError {
public:
    SingularCorrectionError(const std::string& what, std::vector<std::string> columns)
        : NumericError(what), columns_(std::move(columns)) {}
    const std::vector<std::string>& columns() const { return columns_; }

private:
    std::vector<std::string> columns_;
};

/**
 * Projection onto the orthogonal complement of span(1, X_c) at the cluster
 * level. Xc_tilde is n x (p_c + 1); Xcor = (Xc_tilde' Xc_tilde)^{-1} Xc_tilde'.
 */
struct CorrectionOperator {
    Eigen::MatrixXd Xc_tilde;
    Eigen::MatrixXd Xcor;
    std::vector<Index> columns;  // X columns used (after any dropping)

    /// v - Xc_tilde (Xcor v)
    Eigen::VectorXd project_out(const Eigen::VectorXd& v) const {
        return v - Xc_tilde * (Xcor * v);
    }
};

enum class CollinearPolicy { error, drop_with_warning };

namespace detail {

inline CorrectionOperator make_correction(const Eigen::MatrixXd& Xc_tilde,
                                          std::vector<Index> columns) {
    const Eigen::MatrixXd gram = Xc_tilde.transpose() * Xc_tilde;
    CorrectionOperator op;
    op.Xc_tilde = Xc_tilde;
    op.Xcor = gram.ldlt().solve(Xc_tilde.transpose());
    op.columns = std::move(columns);
    return op;
}

inline Index numeric_rank(const Eigen::MatrixXd& A) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-10);
    return qr.rank();
}

}  // namespace detail

/**
 * Builds the correction from the dataset's cluster-constant columns.
 * With CollinearPolicy::error a rank-deficient (1, X_c) throws
 * SingularCorrectionError naming the columns that add no new direction;
 * with drop_with_warning those columns are left out instead.
 */
inline CorrectionOperator build_correction(const Dataset& data,
                                           CollinearPolicy policy = CollinearPolicy::error) {
    const auto& cols = data.cluster_constant_idx();
    const Index n = data.n_clusters();
    const Eigen::MatrixXd levels = data.cluster_level(cols);

    // Greedy scan: keep a column only if it raises the rank.
    Eigen::MatrixXd kept = Eigen::MatrixXd::Ones(n, 1);
    std::vector<Index> kept_cols;
    std::vector<std::string> offending;
    for (std::size_t k = 0; k < cols.size(); ++k) {
        Eigen::MatrixXd trial(n, kept.cols() + 1);
        trial << kept, levels.col(static_cast<Index>(k));
        if (detail::numeric_rank(trial) == trial.cols()) {
            kept = std::move(trial);
            kept_cols.push_back(cols[k]);
        } else {
            offending.push_back(data.x_names()[static_cast<std::size_t>(cols[k])]);
        }
    }
    if (!offending.empty()) {
        std::string names;
        for (const auto& s : offending) names += (names.empty() ? "" : ", ") + s;
        if (policy == CollinearPolicy::error) {
            throw SingularCorrectionError(
                "cluster-constant covariates are collinear with the intercept or each other: " +
                    names,
                offending);
        }
        warn("dropping collinear cluster-constant columns from the correction: " + names);
    }
    return detail::make_correction(kept, std::move(kept_cols));
}

}  // namespace boostlmm
