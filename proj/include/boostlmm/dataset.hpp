#pragma once

#include <algorithm>
#include <charconv>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "boostlmm/errors.hpp"

namespace boostlmm {

using Eigen::Index;

/// Absolute tolerance on the within-cluster range for a column to count as
/// cluster-constant.
inline constexpr double kConstantTolerance = 1e-12;

/**
 * Long-format clustered observations for a linear mixed model.
 *
 * Rows are stored grouped contiguously by cluster; the factory sorts them
 * stably by cluster label. X holds the p fixed-effect covariates (the
 * intercept is implicit), Z the q random-effect columns with the constant
 * one column first. Immutable after construction.
 */
class Dataset {
public:
    static Dataset from_rows(Eigen::VectorXd y, const std::vector<std::string>& row_clusters,
                             Eigen::MatrixXd X, std::vector<std::string> x_names, Eigen::MatrixXd Z,
                             std::vector<std::string> z_names,
                             std::optional<std::vector<Index>> cluster_constant = std::nullopt);

    const Eigen::VectorXd& y() const { return y_; }
    const Eigen::MatrixXd& X() const { return X_; }
    const Eigen::MatrixXd& Z() const { return Z_; }
    const std::vector<std::string>& x_names() const { return x_names_; }
    const std::vector<std::string>& z_names() const { return z_names_; }
    const std::vector<std::string>& cluster_labels() const { return labels_; }
    const std::vector<Index>& cluster_constant_idx() const { return constant_idx_; }

    Index n_obs() const { return y_.size(); }
    Index n_clusters() const { return static_cast<Index>(labels_.size()); }
    Index p() const { return X_.cols(); }
    Index q() const { return Z_.cols(); }

    Index cluster_begin(Index i) const { return offsets_[static_cast<std::size_t>(i)]; }
    Index cluster_size(Index i) const {
        return offsets_[static_cast<std::size_t>(i) + 1] - offsets_[static_cast<std::size_t>(i)];
    }
    auto y_block(Index i) const { return y_.segment(cluster_begin(i), cluster_size(i)); }
    auto X_block(Index i) const { return X_.middleRows(cluster_begin(i), cluster_size(i)); }
    auto Z_block(Index i) const { return Z_.middleRows(cluster_begin(i), cluster_size(i)); }

    /// Cluster index of every observation row.
    std::vector<Index> row_cluster() const;

    /// n x |cols| matrix of per-cluster values (first row of each cluster).
    Eigen::MatrixXd cluster_level(std::span<const Index> cols) const;

    /// Copy with a different cluster-constant flag set (validated).
    Dataset with_cluster_constant(std::vector<Index> cols) const;

    /// Copy restricted to the given clusters, kept in ascending index order.
    Dataset subset(std::span<const Index> clusters) const;

    /// Copy with the fixed-effect design replaced (same rows).
    Dataset with_fixed(Eigen::MatrixXd X, std::vector<std::string> names) const;

private:
    Dataset() = default;
    void validate_constant(const std::vector<Index>& cols) const;

    Eigen::VectorXd y_;
    Eigen::MatrixXd X_;
    Eigen::MatrixXd Z_;
    std::vector<std::string> x_names_;
    std::vector<std::string> z_names_;
    std::vector<std::string> labels_;
    std::vector<Index> offsets_;
    std::vector<Index> constant_idx_;
};

/// Columns of X whose within-cluster range is at most kConstantTolerance in
/// every cluster. Singleton clusters are constant by definition.
inline std::vector<Index> detect_cluster_constant(const Dataset& data) {
    std::vector<Index> out;
    for (Index c = 0; c < data.p(); ++c) {
        bool constant = true;
        for (Index i = 0; i < data.n_clusters() && constant; ++i) {
            const auto col = data.X_block(i).col(c);
            constant = (col.maxCoeff() - col.minCoeff()) <= kConstantTolerance;
        }
        if (constant) out.push_back(c);
    }
    return out;
}

namespace detail {

inline bool parse_integer(const std::string& s, long long& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

// Sort key order for cluster labels: numeric when every label is an
// integer, lexicographic otherwise.
inline std::vector<std::size_t> cluster_sort_order(const std::vector<std::string>& rows) {
    std::vector<long long> numeric(rows.size());
    bool all_numeric = true;
    for (std::size_t r = 0; r < rows.size() && all_numeric; ++r) {
        all_numeric = parse_integer(rows[r], numeric[r]);
    }
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (all_numeric) {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return numeric[a] < numeric[b]; });
    } else {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return rows[a] < rows[b]; });
    }
    return order;
}

}  // namespace detail

inline Dataset Dataset::from_rows(Eigen::VectorXd y, const std::vector<std::string>& row_clusters,
                                  Eigen::MatrixXd X, std::vector<std::string> x_names,
                                  Eigen::MatrixXd Z, std::vector<std::string> z_names,
                                  std::optional<std::vector<Index>> cluster_constant) {
    const Index N = y.size();
    if (N == 0) throw InputError("dataset is empty");
    if (static_cast<Index>(row_clusters.size()) != N || X.rows() != N || Z.rows() != N) {
        throw InputError("response, cluster ids, X and Z must have the same number of rows");
    }
    if (static_cast<Index>(x_names.size()) != X.cols()) {
        throw InputError("fixed-effect names do not match the number of X columns");
    }
    if (static_cast<Index>(z_names.size()) != Z.cols()) {
        throw InputError("random-effect names do not match the number of Z columns");
    }
    if (Z.cols() < 1 || !(Z.col(0).array() == 1.0).all()) {
        throw InputError("first random-effect column must be the constant intercept column");
    }
    if (!y.allFinite() || !X.allFinite() || !Z.allFinite()) {
        throw InputError("dataset contains non-finite values");
    }

    const auto order = detail::cluster_sort_order(row_clusters);
    Dataset d;
    d.y_.resize(N);
    d.X_.resize(N, X.cols());
    d.Z_.resize(N, Z.cols());
    for (Index r = 0; r < N; ++r) {
        const auto src = static_cast<Index>(order[static_cast<std::size_t>(r)]);
        d.y_(r) = y(src);
        d.X_.row(r) = X.row(src);
        d.Z_.row(r) = Z.row(src);
        const std::string& label = row_clusters[static_cast<std::size_t>(src)];
        if (d.labels_.empty() || d.labels_.back() != label) {
            d.labels_.push_back(label);
            d.offsets_.push_back(r);
        }
    }
    d.offsets_.push_back(N);
    if (d.n_clusters() < 2) throw InputError("mixed model requires >= 2 clusters");
    d.x_names_ = std::move(x_names);
    d.z_names_ = std::move(z_names);

    if (cluster_constant) {
        d.validate_constant(*cluster_constant);
        d.constant_idx_ = std::move(*cluster_constant);
    } else {
        d.constant_idx_ = detect_cluster_constant(d);
    }
    return d;
}

inline void Dataset::validate_constant(const std::vector<Index>& cols) const {
    for (const Index c : cols) {
        if (c < 0 || c >= p()) throw InputError("cluster-constant column index out of range");
        for (Index i = 0; i < n_clusters(); ++i) {
            const auto col = X_block(i).col(c);
            if (col.maxCoeff() - col.minCoeff() > kConstantTolerance) {
                throw InputError("column '" + x_names_[static_cast<std::size_t>(c)] +
                                 "' is not constant within cluster '" +
                                 labels_[static_cast<std::size_t>(i)] + "'");
            }
        }
    }
}

inline std::vector<Index> Dataset::row_cluster() const {
    std::vector<Index> out(static_cast<std::size_t>(n_obs()));
    for (Index i = 0; i < n_clusters(); ++i) {
        for (Index r = cluster_begin(i); r < cluster_begin(i) + cluster_size(i); ++r) {
            out[static_cast<std::size_t>(r)] = i;
        }
    }
    return out;
}

inline Eigen::MatrixXd Dataset::cluster_level(std::span<const Index> cols) const {
    Eigen::MatrixXd out(n_clusters(), static_cast<Index>(cols.size()));
    for (Index i = 0; i < n_clusters(); ++i) {
        for (std::size_t k = 0; k < cols.size(); ++k) {
            out(i, static_cast<Index>(k)) = X_(cluster_begin(i), cols[k]);
        }
    }
    return out;
}

inline Dataset Dataset::with_cluster_constant(std::vector<Index> cols) const {
    validate_constant(cols);
    Dataset d = *this;
    d.constant_idx_ = std::move(cols);
    return d;
}

inline Dataset Dataset::subset(std::span<const Index> clusters) const {
    std::vector<Index> keep(clusters.begin(), clusters.end());
    std::sort(keep.begin(), keep.end());
    if (std::adjacent_find(keep.begin(), keep.end()) != keep.end()) {
        throw InputError("subset lists a cluster twice");
    }
    Index rows = 0;
    for (const Index i : keep) {
        if (i < 0 || i >= n_clusters()) throw InputError("subset cluster index out of range");
        rows += cluster_size(i);
    }
    if (keep.size() < 2) throw InputError("mixed model requires >= 2 clusters");

    Dataset d;
    d.y_.resize(rows);
    d.X_.resize(rows, p());
    d.Z_.resize(rows, q());
    Index at = 0;
    for (const Index i : keep) {
        const Index len = cluster_size(i);
        d.offsets_.push_back(at);
        d.labels_.push_back(labels_[static_cast<std::size_t>(i)]);
        d.y_.segment(at, len) = y_block(i);
        d.X_.middleRows(at, len) = X_block(i);
        d.Z_.middleRows(at, len) = Z_block(i);
        at += len;
    }
    d.offsets_.push_back(rows);
    d.x_names_ = x_names_;
    d.z_names_ = z_names_;
    d.constant_idx_ = constant_idx_;
    return d;
}

inline Dataset Dataset::with_fixed(Eigen::MatrixXd X, std::vector<std::string> names) const {
    if (X.rows() != n_obs() || static_cast<Index>(names.size()) != X.cols()) {
        throw InputError("replacement fixed-effect design has the wrong shape");
    }
    Dataset d = *this;
    d.X_ = std::move(X);
    d.x_names_ = std::move(names);
    d.constant_idx_ = detect_cluster_constant(d);
    return d;
}

}  // namespace boostlmm
