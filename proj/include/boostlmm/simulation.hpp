#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "boostlmm/cv.hpp"
#include "boostlmm/dataset.hpp"
#include "boostlmm/engine.hpp"
#include "boostlmm/ml_oracle.hpp"
#include "boostlmm/model.hpp"
#include "boostlmm/parallel.hpp"

namespace boostlmm::sim {

/// Informative effects beta_1..beta_4; covariates 1 and 2 are cluster-constant.
inline constexpr double kTrueBeta0 = 1.0;
inline constexpr std::array<double, 4> kInformative = {2.0, 4.0, 3.0, 5.0};

struct SimDesign {
    int n_clusters = 50;
    int obs_per_cluster = 10;
    int p = 10;
    double tau = 0.4;
    double sigma = 0.4;
    bool slopes = false;  // random slopes on covariates 3 and 4
    double cor_target = 0.6;
    int replicates = 20;
    std::uint64_t seed = 1;

    std::string name() const { return slopes ? "slopes" : "intercept"; }

    Eigen::MatrixXd true_Q() const {
        const int q = slopes ? 3 : 1;
        const double t2 = tau * tau;
        Eigen::MatrixXd Q = Eigen::MatrixXd::Constant(q, q, cor_target * t2);
        Q.diagonal().setConstant(t2);
        return Q;
    }

    Eigen::VectorXd true_beta() const {
        Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
        for (int r = 0; r < 4 && r < p; ++r) b(r) = kInformative[static_cast<std::size_t>(r)];
        return b;
    }

    // Distinguishes grid cells in the RNG seed.
    std::uint64_t key() const {
        return (slopes ? 1ULL << 40 : 0ULL) ^
               (static_cast<std::uint64_t>(std::llround(tau * 1000.0)) << 20) ^
               static_cast<std::uint64_t>(p) ^
               (static_cast<std::uint64_t>(n_clusters) << 48) ^
               (static_cast<std::uint64_t>(obs_per_cluster) << 56);
    }
};

struct SimInstance {
    Dataset data;
    ParamState truth;
};

inline std::mt19937_64 replicate_rng(const SimDesign& d, int replicate) {
    const std::uint64_t key = d.key();
    std::seed_seq seq{static_cast<std::uint32_t>(d.seed), static_cast<std::uint32_t>(d.seed >> 32),
                      static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32),
                      static_cast<std::uint32_t>(replicate)};
    return std::mt19937_64(seq);
}

/// One replicate of the design; deterministic given (seed, design, replicate).
inline SimInstance gen_dataset(const SimDesign& d, int replicate) {
    if (d.p < 4) throw InputError("simulation design needs p >= 4");
    if (d.n_clusters < 2 || d.obs_per_cluster < 1) throw InputError("invalid cluster layout");
    auto rng = replicate_rng(d, replicate);
    std::normal_distribution<double> normal(0.0, 1.0);

    const Index n = d.n_clusters;
    const Index ni = d.obs_per_cluster;
    const Index N = n * ni;
    const Eigen::MatrixXd Q = d.true_Q();
    const Index q = Q.rows();
    const Eigen::MatrixXd L = Q.llt().matrixL();
    const Eigen::VectorXd beta = d.true_beta();

    Eigen::MatrixXd X(N, d.p);
    Eigen::MatrixXd Z(N, q);
    Eigen::VectorXd y(N);
    Eigen::MatrixXd gamma(n, q);
    std::vector<std::string> rows(static_cast<std::size_t>(N));
    for (Index i = 0; i < n; ++i) {
        const double x1 = normal(rng);
        const double x2 = normal(rng);
        Eigen::VectorXd z(q);
        for (Index s = 0; s < q; ++s) z(s) = normal(rng);
        gamma.row(i) = (L * z).transpose();
        for (Index j = 0; j < ni; ++j) {
            const Index row = i * ni + j;
            rows[static_cast<std::size_t>(row)] = std::to_string(i + 1);
            X(row, 0) = x1;
            X(row, 1) = x2;
            for (Index r = 2; r < d.p; ++r) X(row, r) = normal(rng);
            Z(row, 0) = 1.0;
            if (d.slopes) {
                Z(row, 1) = X(row, 2);
                Z(row, 2) = X(row, 3);
            }
            y(row) = kTrueBeta0 + X.row(row).dot(beta) + Z.row(row).dot(gamma.row(i)) +
                     d.sigma * normal(rng);
        }
    }

    std::vector<std::string> x_names;
    for (int r = 1; r <= d.p; ++r) x_names.push_back("x" + std::to_string(r));
    std::vector<std::string> z_names{"(Intercept)"};
    if (d.slopes) {
        z_names.push_back("x3");
        z_names.push_back("x4");
    }
    SimInstance inst{Dataset::from_rows(std::move(y), rows, std::move(X), std::move(x_names),
                                        std::move(Z), std::move(z_names),
                                        std::vector<Index>{0, 1}),
                     ParamState{}};
    inst.truth.beta0 = kTrueBeta0;
    inst.truth.beta = beta;
    inst.truth.gamma = gamma;
    inst.truth.sigma2 = d.sigma * d.sigma;
    inst.truth.Q = Q;
    return inst;
}

/// Share of non-informative coefficients (index >= n_informative) that are
/// nonzero.
inline double false_positives(const Eigen::VectorXd& beta_hat, Index n_informative = 4) {
    const Index noise = beta_hat.size() - n_informative;
    if (noise <= 0) return 0.0;
    Index selected = 0;
    for (Index r = n_informative; r < beta_hat.size(); ++r) selected += beta_hat(r) != 0.0;
    return static_cast<double>(selected) / static_cast<double>(noise);
}

struct SimMetrics {
    double mse_beta = 0.0;  // includes the intercept
    double mse_tau = 0.0;
    double mse_Q = 0.0;
    double false_positive_rate = 0.0;
    int m_star = 0;
    double wall_time_seconds = 0.0;
    // Correction diagnostics over every fold fit and the refit.
    double max_intercept_orthogonality = 0.0;
    double max_slope_mean = 0.0;
};

inline SimMetrics score_estimate(const ParamState& est, const ParamState& truth) {
    SimMetrics m;
    m.mse_beta = std::pow(est.beta0 - truth.beta0, 2) + (est.beta - truth.beta).squaredNorm();
    const double tau = std::sqrt(truth.Q(0, 0));
    const double tau_hat = std::sqrt(std::max(est.Q(0, 0), 0.0));
    m.mse_tau = std::pow(tau - tau_hat, 2);
    m.mse_Q = (truth.Q - est.Q).squaredNorm();
    m.false_positive_rate = false_positives(est.beta);
    return m;
}

enum class Method { boost_a, boost_b, ml_oracle, legacy };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::boost_a: return "boostLMM_a";
        case Method::boost_b: return "boostLMM_b";
        case Method::ml_oracle: return "ml_oracle";
        case Method::legacy: return "legacy_nocorrection";
    }
    return "unknown";
}

inline Method parse_method(const std::string& s) {
    for (Method m : {Method::boost_a, Method::boost_b, Method::ml_oracle, Method::legacy}) {
        if (s == method_name(m)) return m;
    }
    if (s == "a") return Method::boost_a;
    if (s == "b") return Method::boost_b;
    if (s == "ml" || s == "oracle") return Method::ml_oracle;
    if (s == "legacy") return Method::legacy;
    throw InputError("unknown simulation method '" + s + "'");
}

struct StudyOptions {
    double nu = 0.1;
    int m_stop = 1000;
    int k = 10;
    unsigned threads = 1;
};

inline BoostConfig method_config(Method m, const StudyOptions& opt) {
    if (m == Method::legacy) return BoostConfig::legacy(opt.nu, opt.m_stop);
    BoostConfig c;
    c.nu = opt.nu;
    c.m_stop = opt.m_stop;
    c.start_mode = m == Method::boost_b ? StartMode::ml_intercept_ranef : StartMode::zero_ranef;
    return c;
}

inline bool method_applicable(Method m, const SimDesign& d) {
    return m != Method::ml_oracle ||
           d.p + 1 < static_cast<long long>(d.n_clusters) * d.obs_per_cluster;
}

/// Fits one replicate with one method and scores it against the truth.
inline SimMetrics evaluate(Method m, const SimInstance& inst, const StudyOptions& opt,
                           std::uint64_t cv_seed) {
    const auto start = std::chrono::steady_clock::now();
    SimMetrics out;
    if (m == Method::ml_oracle) {
        out = score_estimate(ml_fit(inst.data).state, inst.truth);
    } else {
        const CvResult cv = cv_select(inst.data, method_config(m, opt), opt.k, cv_seed);
        out = score_estimate(cv.state, inst.truth);
        const auto [icpt, slope] = max_orthogonality(cv.trace);
        out.m_star = cv.curve.m_star;
        out.max_intercept_orthogonality = std::max(icpt, cv.curve.max_intercept_orthogonality);
        out.max_slope_mean = std::max(slope, cv.curve.max_slope_mean);
    }
    out.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

struct CellResult {
    SimDesign design;
    Method method = Method::boost_a;
    SimMetrics mean;
    int runs = 0;
    int failures = 0;
    std::vector<SimMetrics> replicates;
};

/**
 * Runs every (design, method, replicate) job on a work queue and averages
 * metrics per cell. Replicate failures are counted, not fatal. ml_oracle is
 * skipped when p + 1 >= N.
 */
inline std::vector<CellResult> run_study(const std::vector<SimDesign>& designs,
                                         const std::vector<Method>& methods,
                                         const StudyOptions& opt) {
    struct Job {
        std::size_t cell;
        int replicate;
    };
    std::vector<CellResult> cells;
    std::vector<Job> jobs;
    for (const auto& d : designs) {
        for (const Method m : methods) {
            if (!method_applicable(m, d)) continue;
            CellResult c;
            c.design = d;
            c.method = m;
            c.replicates.resize(static_cast<std::size_t>(d.replicates));
            cells.push_back(std::move(c));
            for (int r = 0; r < d.replicates; ++r) jobs.push_back({cells.size() - 1, r});
        }
    }
    std::vector<char> failed(jobs.size(), 0);
    parallel_for(jobs.size(), opt.threads, [&](std::size_t j) {
        const Job& job = jobs[j];
        CellResult& cell = cells[job.cell];
        try {
            const SimInstance inst = gen_dataset(cell.design, job.replicate);
            const std::uint64_t cv_seed = cell.design.seed * 7919ULL + static_cast<std::uint64_t>(job.replicate);
            cell.replicates[static_cast<std::size_t>(job.replicate)] =
                evaluate(cell.method, inst, opt, cv_seed);
        } catch (const std::exception& e) {
            failed[j] = 1;
            warn("replicate " + std::to_string(job.replicate) + " of " + cell.design.name() +
                 " / " + method_name(cell.method) + " failed: " + e.what());
        }
    });
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        CellResult& cell = cells[jobs[j].cell];
        if (failed[j]) {
            ++cell.failures;
            continue;
        }
        const SimMetrics& r = cell.replicates[static_cast<std::size_t>(jobs[j].replicate)];
        cell.mean.mse_beta += r.mse_beta;
        cell.mean.mse_tau += r.mse_tau;
        cell.mean.mse_Q += r.mse_Q;
        cell.mean.false_positive_rate += r.false_positive_rate;
        cell.mean.m_star += r.m_star;
        cell.mean.wall_time_seconds += r.wall_time_seconds;
        cell.mean.max_intercept_orthogonality =
            std::max(cell.mean.max_intercept_orthogonality, r.max_intercept_orthogonality);
        cell.mean.max_slope_mean = std::max(cell.mean.max_slope_mean, r.max_slope_mean);
        ++cell.runs;
    }
    for (auto& cell : cells) {
        if (cell.runs == 0) continue;
        const double k = cell.runs;
        cell.mean.mse_beta /= k;
        cell.mean.mse_tau /= k;
        cell.mean.mse_Q /= k;
        cell.mean.false_positive_rate /= k;
        cell.mean.m_star = static_cast<int>(std::lround(cell.mean.m_star / k));
        cell.mean.wall_time_seconds /= k;
    }
    return cells;
}

/// CSV: design,tau,p,method,mse_beta,mse_tau,mse_Q,fp_rate,m_star,time_s,failures
inline void write_study_csv(std::ostream& os, const std::vector<CellResult>& cells) {
    os << "design,tau,p,method,mse_beta,mse_tau,mse_Q,fp_rate,m_star,time_s,failures\n";
    const auto old = os.precision(12);
    for (const auto& c : cells) {
        const bool empty = c.runs == 0;
        auto num = [&](double v) -> std::string {
            if (empty) return "NA";
            std::ostringstream s;
            s << std::setprecision(12) << v;
            return s.str();
        };
        os << c.design.name() << ',' << c.design.tau << ',' << c.design.p << ','
           << method_name(c.method) << ',' << num(c.mean.mse_beta) << ',' << num(c.mean.mse_tau)
           << ',' << num(c.mean.mse_Q) << ',' << num(c.mean.false_positive_rate) << ','
           << (empty ? std::string("NA") : std::to_string(c.mean.m_star)) << ','
           << num(c.mean.wall_time_seconds) << ',' << c.failures << '\n';
    }
    os.precision(old);
}

}  // namespace boostlmm::sim
