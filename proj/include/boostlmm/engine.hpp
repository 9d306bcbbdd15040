#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "boostlmm/correction.hpp"
#include "boostlmm/dataset.hpp"
#include "boostlmm/errors.hpp"
#include "boostlmm/ml_oracle.hpp"
#include "boostlmm/model.hpp"
#include "boostlmm/optimize.hpp"
#include "boostlmm/parallel.hpp"

namespace boostlmm {

enum class StartMode {
    zero_ranef,          // beta0 = mean(y), gamma = 0, Q = 0.1 I
    ml_intercept_ranef,  // ML fit of y = beta0 + Z gamma + eps
};

struct BoostConfig {
    double nu = 0.1;
    std::optional<double> nu_ran;  // random-effects step; defaults to nu
    int m_stop = 100;
    StartMode start_mode = StartMode::zero_ranef;
    bool correction_enabled = true;
    // Legacy order: the random effects are updated before the fixed effects.
    bool random_first = false;
    // Charge log(N)/2 log-likelihood units for moving a coefficient off zero.
    bool bic_entry_cost = false;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    bool verify_sigma2 = false;

    double random_step() const { return nu_ran.value_or(nu); }

    void validate() const {
        if (!(nu > 0.0 && nu <= 1.0)) throw InputError("step length nu must lie in (0, 1]");
        if (nu_ran && !(*nu_ran > 0.0 && *nu_ran <= 1.0)) {
            throw InputError("random-effects step length must lie in (0, 1]");
        }
        if (m_stop < 0) throw InputError("m_stop must be non-negative");
    }

    /// Uncorrected booster imitating the older joint scheme: ML start, full
    /// random-effects steps taken first, information-criterion entry cost.
    static BoostConfig legacy(double nu, int m_stop) {
        BoostConfig c;
        c.nu = nu;
        c.nu_ran = 1.0;
        c.m_stop = m_stop;
        c.start_mode = StartMode::ml_intercept_ranef;
        c.correction_enabled = false;
        c.random_first = true;
        c.bic_entry_cost = true;
        return c;
    }
};

/// One evaluated fixed-effect candidate: full (unscaled) Fisher step for
/// (beta0, beta_r) and the conditional log-likelihood after applying it.
struct CandidateUpdate {
    Index r = 0;
    double u0 = 0.0;
    double ur = 0.0;
    double candidate_loglik = 0.0;
};

struct FixedStepResult {
    ParamState state;
    Index selected = -1;
    std::vector<CandidateUpdate> candidates;
    std::vector<Index> skipped;
};

struct BoostTrace {
    Eigen::MatrixXd beta_path;  // (m+1) x (p+1), column 0 is the intercept
    std::vector<Index> selected;
    std::vector<double> sigma2_path;
    std::vector<Eigen::MatrixXd> Q_path;
    std::vector<double> penloglik_path;
    // Per iteration: max |Xc_tilde' gamma_.1| and max_s |mean(gamma_.s)|, s >= 2.
    // NaN when the correction is disabled.
    std::vector<double> intercept_orthogonality;
    std::vector<double> slope_mean;
    ParamState final_state;

    int iterations() const { return static_cast<int>(selected.size()); }
};

/// Error raised inside boost_fit, tagged with the failing iteration.
class IterationError : public NumericError {
public:
    IterationError(int iteration, const std::string& what)
        : NumericError("iteration " + std::to_string(iteration) + ": " + what),
          iteration_(iteration) {}
    int iteration() const { return iteration_; }

private:
    int iteration_;
};

/// Column sums and sums of squares of X, reused across iterations.
struct FixedDesignCache {
    Eigen::VectorXd sum;
    Eigen::VectorXd sumsq;

    explicit FixedDesignCache(const Dataset& data)
        : sum(data.X().colwise().sum().transpose()),
          sumsq(data.X().colwise().squaredNorm().transpose()) {}
};

inline double sample_variance(const Eigen::VectorXd& v) {
    const double n = static_cast<double>(v.size());
    return (v.array() - v.mean()).square().sum() / (n - 1.0);
}

inline ParamState zero_start(const Dataset& data) {
    ParamState s;
    s.beta0 = data.y().mean();
    s.beta = Eigen::VectorXd::Zero(data.p());
    s.gamma = Eigen::MatrixXd::Zero(data.n_clusters(), data.q());
    s.sigma2 = sample_variance(data.y());
    if (!(s.sigma2 > 0.0)) s.sigma2 = 1e-10;
    s.Q = Eigen::MatrixXd::Identity(data.q(), data.q()) * 0.1;
    return s;
}

/// Starting values; beta is always zero.
inline ParamState init_state(const Dataset& data, const BoostConfig& config) {
    if (config.start_mode == StartMode::zero_ranef) return zero_start(data);
    try {
        const Dataset intercept_only = data.with_fixed(Eigen::MatrixXd(data.n_obs(), 0), {});
        MlFit fit = ml_fit(intercept_only);
        ParamState s;
        s.beta0 = fit.state.beta0;
        s.beta = Eigen::VectorXd::Zero(data.p());
        s.gamma = std::move(fit.state.gamma);
        s.sigma2 = fit.state.sigma2;
        s.Q = std::move(fit.state.Q);
        return s;
    } catch (const NumericError& e) {
        warn(std::string("ML starting values failed (") + e.what() +
             "); falling back to zero random effects");
        return zero_start(data);
    }
}

/**
 * Component-wise fixed-effects step. Every candidate r gets the full Fisher
 * update of (beta0, beta_r) against the current residual; the candidate with
 * the largest conditional log-likelihood after that full update is taken
 * with step nu. Ties go to the smallest index.
 */
inline FixedStepResult fixed_effects_step(const ParamState& state, const Dataset& data,
                                          const BoostConfig& config,
                                          const FixedDesignCache* cache = nullptr) {
    const Index p = data.p();
    const double N = static_cast<double>(data.n_obs());
    std::optional<FixedDesignCache> local;
    if (cache == nullptr) cache = &local.emplace(data);

    const Eigen::VectorXd resid = data.y() - linear_predictor(state, data);
    const double rss = resid.squaredNorm();
    const double rsum = resid.sum();
    const Eigen::VectorXd xr = data.X().transpose() * resid;
    const double entry_cost = config.bic_entry_cost ? 0.5 * std::log(N) : 0.0;

    std::vector<CandidateUpdate> all(static_cast<std::size_t>(p));
    std::vector<char> ok(static_cast<std::size_t>(p), 0);
    parallel_for(static_cast<std::size_t>(p), config.threads, [&](std::size_t k) {
        const auto r = static_cast<Index>(k);
        const double sx = cache->sum(r);
        const double sxx = cache->sumsq(r);
        // F_r = sigma^-2 [[N, sx], [sx, sxx]], s_r = sigma^-2 [rsum, x'r]; sigma^2 cancels.
        const double det = N * sxx - sx * sx;
        if (!(det > 1e-12 * N * std::max(sxx, 1e-300))) return;
        const double u0 = (sxx * rsum - sx * xr(r)) / det;
        const double ur = (N * xr(r) - sx * rsum) / det;
        const double trial_rss = rss - 2.0 * (u0 * rsum + ur * xr(r)) + u0 * u0 * N +
                                 2.0 * u0 * ur * sx + ur * ur * sxx;
        all[k] = {r, u0, ur, gaussian_loglik_from_rss(std::max(trial_rss, 0.0),
                                                      data.n_obs(), state.sigma2)};
        ok[k] = 1;
    });

    FixedStepResult out;
    double best = -std::numeric_limits<double>::infinity();
    for (Index r = 0; r < p; ++r) {
        const auto k = static_cast<std::size_t>(r);
        if (!ok[k]) {
            out.skipped.push_back(r);
            continue;
        }
        out.candidates.push_back(all[k]);
        const double score = all[k].candidate_loglik - (state.beta(r) == 0.0 ? entry_cost : 0.0);
        if (score > best) {
            best = score;
            out.selected = r;
        }
    }
    if (out.selected < 0) throw NumericError("every fixed-effect candidate has a singular Fisher matrix");

    const CandidateUpdate& chosen = all[static_cast<std::size_t>(out.selected)];
    out.state = state;
    out.state.beta0 += config.nu * chosen.u0;
    out.state.beta(out.selected) += config.nu * chosen.ur;
    return out;
}

/**
 * Weak Fisher-scoring step for the random effects, solved cluster by
 * cluster: gamma_i + nu F_i^{-1} s_i with F_i = Z_i'Z_i / sigma2 + Q^{-1}.
 */
inline Eigen::MatrixXd random_effects_update(const ParamState& state, const Dataset& data,
                                             double nu, unsigned threads = 1) {
    const Eigen::MatrixXd Qinv = covariance_inverse(state.Q);
    const Eigen::VectorXd resid = data.y() - linear_predictor(state, data);
    Eigen::MatrixXd out = state.gamma;
    parallel_for(static_cast<std::size_t>(data.n_clusters()), threads, [&](std::size_t k) {
        const auto i = static_cast<Index>(k);
        const auto Zi = data.Z_block(i);
        const Eigen::VectorXd gi = state.gamma.row(i).transpose();
        const Eigen::VectorXd score =
            Zi.transpose() * resid.segment(data.cluster_begin(i), data.cluster_size(i)) /
                state.sigma2 -
            Qinv * gi;
        const Eigen::MatrixXd F = Zi.transpose() * Zi / state.sigma2 + Qinv;
        Eigen::LLT<Eigen::MatrixXd> llt(F);
        if (llt.info() != Eigen::Success) {
            throw NumericError("random-effects Fisher matrix is singular");
        }
        out.row(i) = (gi + nu * llt.solve(score)).transpose();
    });
    return out;
}

/// Intercept column: orthogonal projection against (1, X_c). Slope columns:
/// mean removed.
inline Eigen::MatrixXd correct_random_effects(const Eigen::MatrixXd& gamma_tilde,
                                              const CorrectionOperator& cor) {
    Eigen::MatrixXd out = gamma_tilde;
    out.col(0) = cor.project_out(gamma_tilde.col(0));
    for (Index s = 1; s < out.cols(); ++s) {
        out.col(s).array() -= out.col(s).mean();
    }
    return out;
}

/// Approximate EM update Q = 1/n sum_i (F_i^{-1} + gamma_i gamma_i').
inline Eigen::MatrixXd update_Q(const ParamState& state, const Dataset& data) {
    const Eigen::MatrixXd Qinv = covariance_inverse(state.Q);
    const Index q = data.q();
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(q, q);
    for (Index i = 0; i < data.n_clusters(); ++i) {
        const auto Zi = data.Z_block(i);
        const Eigen::MatrixXd F = Zi.transpose() * Zi / state.sigma2 + Qinv;
        acc += F.llt().solve(Eigen::MatrixXd::Identity(q, q));
        acc += state.gamma.row(i).transpose() * state.gamma.row(i);
    }
    acc /= static_cast<double>(data.n_clusters());
    return 0.5 * (acc + acc.transpose());
}

/// sigma2 maximizing the conditional likelihood by 1-D golden-section search
/// on (1e-8, 10 Var(y)); used to cross-check the closed form.
inline double sigma2_by_golden_section(const ParamState& state, const Dataset& data) {
    const double rss = (data.y() - linear_predictor(state, data)).squaredNorm();
    const double hi = 10.0 * sample_variance(data.y());
    auto f = [&](double s2) { return gaussian_loglik_from_rss(rss, data.n_obs(), s2); };
    return optimize::golden_section_max(f, 1e-8, hi, 1e-14);
}

/// Closed-form maximizer ||y - eta||^2 / N of the conditional likelihood.
inline double update_sigma2(const ParamState& state, const Dataset& data, bool verify = false) {
    const double rss = (data.y() - linear_predictor(state, data)).squaredNorm();
    double s2 = rss / static_cast<double>(data.n_obs());
    if (!(s2 > 0.0)) {
        warn("zero residual vector; sigma2 floored at 1e-10");
        return 1e-10;
    }
    if (verify) {
        const double numeric = sigma2_by_golden_section(state, data);
        if (std::abs(numeric - s2) > 1e-6 * s2) {
            throw NumericError("closed-form sigma2 disagrees with golden-section search");
        }
    }
    return s2;
}

namespace detail {

inline void record(BoostTrace& t, Index row, const ParamState& s, const Dataset& data) {
    t.beta_path(row, 0) = s.beta0;
    t.beta_path.row(row).tail(data.p()) = s.beta.transpose();
    t.sigma2_path.push_back(s.sigma2);
    t.Q_path.push_back(s.Q);
    t.penloglik_path.push_back(penalized_loglik(s, data));
}

}  // namespace detail

/**
 * Runs the full boosting path for m_stop iterations. Each iteration: fixed
 * effects step, random effects step, correction, Q update, sigma2 update
 * (random effects first when config.random_first). Choosing m* is left to
 * cross-validation.
 */
inline BoostTrace boost_fit(const Dataset& data, const BoostConfig& config,
                            CollinearPolicy policy = CollinearPolicy::error) {
    config.validate();
    std::optional<CorrectionOperator> cor;
    if (config.correction_enabled) cor = build_correction(data, policy);
    const FixedDesignCache cache(data);

    BoostTrace trace;
    ParamState state = init_state(data, config);
    state.validate(data);
    trace.beta_path.resize(config.m_stop + 1, data.p() + 1);
    detail::record(trace, 0, state, data);

    bool warned_skip = false;
    auto random_step = [&] {
        state.gamma = random_effects_update(state, data, config.random_step(), config.threads);
        if (cor) state.gamma = correct_random_effects(state.gamma, *cor);
    };
    for (int m = 1; m <= config.m_stop; ++m) {
        try {
            if (config.random_first) random_step();
            FixedStepResult step = fixed_effects_step(state, data, config, &cache);
            if (!step.skipped.empty() && !warned_skip) {
                warn(std::to_string(step.skipped.size()) +
                     " fixed-effect candidate(s) skipped: singular Fisher matrix");
                warned_skip = true;
            }
            state = std::move(step.state);
            trace.selected.push_back(step.selected);
            if (!config.random_first) random_step();
            state.Q = update_Q(state, data);
            state.sigma2 = update_sigma2(state, data, config.verify_sigma2);
            detail::record(trace, m, state, data);
        } catch (const IterationError&) {
            throw;
        } catch (const NumericError& e) {
            throw IterationError(m, e.what());
        }
        if (cor) {
            trace.intercept_orthogonality.push_back(
                (cor->Xc_tilde.transpose() * state.gamma.col(0)).cwiseAbs().maxCoeff());
            double slope = 0.0;
            for (Index s = 1; s < data.q(); ++s) {
                slope = std::max(slope, std::abs(state.gamma.col(s).mean()));
            }
            trace.slope_mean.push_back(slope);
        } else {
            trace.intercept_orthogonality.push_back(std::numeric_limits<double>::quiet_NaN());
            trace.slope_mean.push_back(std::numeric_limits<double>::quiet_NaN());
        }
    }
    trace.final_state = std::move(state);
    return trace;
}

}  // namespace boostlmm
