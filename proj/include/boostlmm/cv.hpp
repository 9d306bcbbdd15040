#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "boostlmm/dataset.hpp"
#include "boostlmm/engine.hpp"
#include "boostlmm/errors.hpp"
#include "boostlmm/model.hpp"
#include "boostlmm/parallel.hpp"

namespace boostlmm {

/// Cluster-wise fold assignment.
struct FoldPlan {
    int k = 0;
    std::vector<int> assignment;  // cluster -> fold in [0, k)

    std::vector<Index> fold_clusters(int fold) const {
        std::vector<Index> out;
        for (std::size_t i = 0; i < assignment.size(); ++i) {
            if (assignment[i] == fold) out.push_back(static_cast<Index>(i));
        }
        return out;
    }
    std::vector<Index> complement_clusters(int fold) const {
        std::vector<Index> out;
        for (std::size_t i = 0; i < assignment.size(); ++i) {
            if (assignment[i] != fold) out.push_back(static_cast<Index>(i));
        }
        return out;
    }
};

/// CV_k^[m] for m = 1..m_stop and its first minimizer.
struct CvCurve {
    std::vector<double> values;  // values[m-1] = CV at iteration m
    int m_star = 0;
    // Largest correction residuals seen in any fold fit (0 when disabled).
    double max_intercept_orthogonality = 0.0;
    double max_slope_mean = 0.0;
};

/// Largest per-iteration correction diagnostics of a trace; 0 when the
/// correction is off.
inline std::pair<double, double> max_orthogonality(const BoostTrace& t) {
    double icpt = 0.0, slope = 0.0;
    for (std::size_t m = 0; m < t.intercept_orthogonality.size(); ++m) {
        if (!std::isnan(t.intercept_orthogonality[m])) icpt = std::max(icpt, t.intercept_orthogonality[m]);
        if (!std::isnan(t.slope_mean[m])) slope = std::max(slope, t.slope_mean[m]);
    }
    return {icpt, slope};
}

/// Seeded shuffle of the cluster labels followed by round-robin assignment.
inline FoldPlan partition_clusters(Index n, int k, std::uint64_t seed) {
    if (k < 2) throw InputError("cross-validation needs at least 2 folds");
    if (k > n) throw InputError("more folds than clusters");
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    FoldPlan plan;
    plan.k = k;
    plan.assignment.assign(static_cast<std::size_t>(n), 0);
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        plan.assignment[static_cast<std::size_t>(order[pos])] = static_cast<int>(pos % static_cast<std::size_t>(k));
    }
    return plan;
}

/**
 * Held-out fold term (1/N_l) r' (I + Z_l Q* Z_l')^{-1} r with
 * r = y_l - beta0 - X_l beta and Q* = Q / sigma2, over the listed clusters
 * of `data`. The block-diagonal system is solved cluster by cluster.
 */
inline double cv_criterion(const Dataset& data, std::span<const Index> clusters, double beta0,
                           const Eigen::VectorXd& beta, const Eigen::MatrixXd& Q, double sigma2) {
    if (!(sigma2 > 0.0)) throw NumericError("sigma2 must be positive");
    if (clusters.empty()) throw InputError("held-out fold is empty");
    const Eigen::MatrixXd Qstar = Q / sigma2;
    double quad = 0.0;
    Index n_obs = 0;
    for (const Index i : clusters) {
        const auto Zi = data.Z_block(i);
        Eigen::MatrixXd W = Zi * Qstar * Zi.transpose();
        W.diagonal().array() += 1.0;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(W);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
            throw NumericError("held-out weight matrix is not positive definite");
        }
        Eigen::VectorXd r = data.y_block(i) - data.X_block(i) * beta;
        r.array() -= beta0;
        quad += r.dot(ldlt.solve(r));
        n_obs += data.cluster_size(i);
    }
    return quad / static_cast<double>(n_obs);
}

/// Same criterion over every cluster of `heldout`.
inline double cv_criterion(const Dataset& heldout, double beta0, const Eigen::VectorXd& beta,
                           const Eigen::MatrixXd& Q, double sigma2) {
    std::vector<Index> all(static_cast<std::size_t>(heldout.n_clusters()));
    std::iota(all.begin(), all.end(), Index{0});
    return cv_criterion(heldout, all, beta0, beta, Q, sigma2);
}

struct CvResult {
    CvCurve curve;
    FoldPlan plan;
    ParamState state;  // full-data refit truncated at m*
    BoostTrace trace;  // trace of that refit
};

/// CV curve over m = 1..m_stop for a given fold plan. Each fold is fitted on
/// its complement, starting values and correction rebuilt there.
inline CvCurve cv_curve(const Dataset& data, const BoostConfig& config, const FoldPlan& plan,
                        unsigned fold_threads = 1) {
    config.validate();
    if (config.m_stop < 1) throw InputError("cross-validation needs m_stop >= 1");
    if (plan.assignment.size() != static_cast<std::size_t>(data.n_clusters())) {
        throw InputError("fold plan does not match the number of clusters");
    }
    const auto m_stop = static_cast<std::size_t>(config.m_stop);
    const auto k = static_cast<std::size_t>(plan.k);
    std::vector<std::vector<double>> per_fold(k);
    std::vector<std::pair<double, double>> diag(k);
    parallel_for(k, fold_threads, [&](std::size_t f) {
        const int fold = static_cast<int>(f);
        const std::vector<Index> heldout = plan.fold_clusters(fold);
        const Dataset train = data.subset(plan.complement_clusters(fold));
        const BoostTrace t = boost_fit(train, config, CollinearPolicy::drop_with_warning);
        diag[f] = max_orthogonality(t);
        auto& vals = per_fold[f];
        vals.resize(m_stop);
        for (std::size_t m = 1; m <= m_stop; ++m) {
            const auto row = static_cast<Index>(m);
            const Eigen::VectorXd beta = t.beta_path.row(row).tail(data.p()).transpose();
            vals[m - 1] = cv_criterion(data, heldout, t.beta_path(row, 0), beta, t.Q_path[m],
                                       t.sigma2_path[m]);
        }
    });

    CvCurve curve;
    curve.values.assign(m_stop, 0.0);
    for (const auto& vals : per_fold) {
        for (std::size_t m = 0; m < m_stop; ++m) curve.values[m] += vals[m] / plan.k;
    }
    for (const auto& [icpt, slope] : diag) {
        curve.max_intercept_orthogonality = std::max(curve.max_intercept_orthogonality, icpt);
        curve.max_slope_mean = std::max(curve.max_slope_mean, slope);
    }
    const auto best = std::min_element(curve.values.begin(), curve.values.end());
    curve.m_star = static_cast<int>(best - curve.values.begin()) + 1;
    return curve;
}

/// k-fold cluster-wise cross-validation of the boosting path, then a
/// full-data refit truncated at m*.
inline CvResult cv_select(const Dataset& data, const BoostConfig& config, int k,
                          std::uint64_t seed, unsigned fold_threads = 1) {
    config.validate();
    if (config.m_stop < 1) throw InputError("cross-validation needs m_stop >= 1");
    CvResult out;
    out.plan = partition_clusters(data.n_clusters(), k, seed);
    out.curve = cv_curve(data, config, out.plan, fold_threads);

    BoostConfig refit = config;
    refit.m_stop = out.curve.m_star;
    out.trace = boost_fit(data, refit);
    out.state = out.trace.final_state;
    return out;
}

}  // namespace boostlmm
