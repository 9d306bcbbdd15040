// Command-line front end: fit / cv / oracle on CSV data, simulate for the
// simulation grid.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "boostlmm/boostlmm.hpp"

namespace {

using namespace boostlmm;

struct DataArgs {
    std::string data;
    std::string response;
    std::string cluster;
    std::vector<std::string> fixed;
    std::vector<std::string> square;
    std::vector<std::string> slopes;
    std::vector<std::string> constant;
    bool random_intercept = true;
    bool standardize = false;
};

struct BoostArgs {
    double nu = 0.1;
    double nu_ran = 0.0;
    int m_stop = 1000;
    int k = 10;
    std::uint64_t seed = 1;
    std::string start = "a";
    bool no_correction = false;
    bool legacy = false;
    unsigned threads = 1;
    bool verify_sigma2 = false;
};

void add_data_options(CLI::App* app, DataArgs& a) {
    app->add_option("--data", a.data, "CSV file in long format")->required()->check(CLI::ExistingFile);
    app->add_option("--response", a.response, "response column")->required();
    app->add_option("--cluster", a.cluster, "cluster id column")->required();
    app->add_option("--fixed", a.fixed, "fixed-effect columns")->delimiter(',');
    app->add_option("--square", a.square, "columns entering also squared")->delimiter(',');
    app->add_flag("--random-intercept", a.random_intercept,
                  "random intercept (always present)");
    app->add_option("--random-slope", a.slopes, "random-slope columns")->delimiter(',');
    app->add_option("--constant", a.constant,
                    "cluster-constant columns for the correction (default: detected)")
        ->delimiter(',');
    app->add_flag("--standardize", a.standardize,
                  "scale covariates internally, report on the original scale");
}

void add_boost_options(CLI::App* app, BoostArgs& b) {
    app->add_option("--nu", b.nu, "step length")->capture_default_str();
    app->add_option("--nu-ran", b.nu_ran, "random-effects step length (default: nu)");
    app->add_option("--mstop", b.m_stop, "maximal number of iterations")->capture_default_str();
    app->add_option("--k", b.k, "cross-validation folds; 0 keeps all mstop iterations")
        ->capture_default_str();
    app->add_option("--seed", b.seed, "fold assignment seed")->capture_default_str();
    app->add_option("--start", b.start, "starting values: a (zero) or b (ML intercept model)")
        ->check(CLI::IsMember({"a", "b"}))
        ->capture_default_str();
    app->add_flag("--no-correction", b.no_correction, "disable the random-effects correction");
    app->add_flag("--legacy", b.legacy, "uncorrected legacy scheme");
    app->add_option("--threads", b.threads, "worker threads")->capture_default_str();
    app->add_flag("--verify-sigma2", b.verify_sigma2,
                  "cross-check every sigma2 update by golden-section search");
}

io::ModelSpec model_spec(const DataArgs& a) {
    io::ModelSpec s;
    s.response = a.response;
    s.cluster = a.cluster;
    s.fixed = a.fixed;
    s.square = a.square;
    s.random_slopes = a.slopes;
    if (!a.constant.empty()) s.cluster_constant = a.constant;
    return s;
}

BoostConfig boost_config(const BoostArgs& b) {
    BoostConfig c = b.legacy ? BoostConfig::legacy(b.nu, b.m_stop) : BoostConfig{};
    if (!b.legacy) {
        c.nu = b.nu;
        c.m_stop = b.m_stop;
        c.start_mode = b.start == "b" ? StartMode::ml_intercept_ranef : StartMode::zero_ranef;
        c.correction_enabled = !b.no_correction;
    }
    if (b.nu_ran > 0.0) c.nu_ran = b.nu_ran;
    c.threads = b.threads;
    c.verify_sigma2 = b.verify_sigma2;
    c.validate();
    return c;
}

io::FitReport make_report(const Dataset& data, const ParamState& state, Eigen::MatrixXd path,
                          std::optional<CvCurve> curve, int m_star,
                          const std::optional<io::Standardization>& stdz) {
    io::FitReport rep;
    rep.x_names = data.x_names();
    rep.z_names = data.z_names();
    rep.cluster_labels = data.cluster_labels();
    rep.state = state;
    rep.curve = std::move(curve);
    rep.m_star = m_star;
    if (stdz) {
        stdz->back_transform(rep.state.beta0, rep.state.beta);
        for (Index m = 0; m < path.rows(); ++m) {
            double b0 = path(m, 0);
            Eigen::VectorXd b = path.row(m).tail(data.p()).transpose();
            stdz->back_transform(b0, b);
            path(m, 0) = b0;
            path.row(m).tail(data.p()) = b.transpose();
        }
    }
    rep.beta_path = std::move(path);
    return rep;
}

void print_summary(const io::FitReport& rep) {
    std::printf("m* = %d\n", rep.m_star);
    std::printf("%-16s %14.6f\n", "(Intercept)", rep.state.beta0);
    for (std::size_t r = 0; r < rep.x_names.size(); ++r) {
        std::printf("%-16s %14.6f\n", rep.x_names[r].c_str(),
                    rep.state.beta(static_cast<Index>(r)));
    }
    std::printf("sigma2 = %.6f\n", rep.state.sigma2);
    for (Index r = 0; r < rep.state.Q.rows(); ++r) {
        std::printf("Q[%ld,] =", static_cast<long>(r));
        for (Index c = 0; c < rep.state.Q.cols(); ++c) std::printf(" %.6f", rep.state.Q(r, c));
        std::printf("\n");
    }
}

int run_fit(const DataArgs& a, const BoostArgs& b, const std::string& out, bool cv_only) {
    Dataset data = io::ingest_csv(a.data, model_spec(a));
    std::optional<io::Standardization> stdz;
    if (a.standardize) {
        stdz = io::Standardization::fit(data);
        data = stdz->apply(data);
    }
    const BoostConfig config = boost_config(b);
    if (cv_only) {
        if (b.k < 2) throw InputError("cv needs --k >= 2");
        const CvResult cv = cv_select(data, config, b.k, b.seed, b.threads);
        std::error_code ec;
        std::filesystem::create_directories(out, ec);
        std::ofstream os(std::filesystem::path(out) / "cv.csv");
        if (!os) throw InputError("cannot write to '" + out + "'");
        os << "iteration,cv\n" << std::setprecision(12);
        for (std::size_t m = 0; m < cv.curve.values.size(); ++m) {
            os << (m + 1) << ',' << cv.curve.values[m] << '\n';
        }
        std::printf("m* = %d (CV = %.8g)\n", cv.curve.m_star,
                    cv.curve.values[static_cast<std::size_t>(cv.curve.m_star - 1)]);
        return 0;
    }
    io::FitReport rep;
    if (b.k >= 2) {
        const CvResult cv = cv_select(data, config, b.k, b.seed, b.threads);
        rep = make_report(data, cv.state, cv.trace.beta_path, cv.curve, cv.curve.m_star, stdz);
    } else {
        const BoostTrace t = boost_fit(data, config);
        rep = make_report(data, t.final_state, t.beta_path, std::nullopt, config.m_stop, stdz);
    }
    io::export_results(rep, out);
    print_summary(rep);
    return 0;
}

int run_oracle(const DataArgs& a, const std::string& out) {
    Dataset data = io::ingest_csv(a.data, model_spec(a));
    MlFit fit = ml_fit(data);
    Eigen::MatrixXd path(1, data.p() + 1);
    path(0, 0) = fit.state.beta0;
    path.row(0).tail(data.p()) = fit.state.beta.transpose();
    io::FitReport rep = make_report(data, fit.state, path, std::nullopt, 0, std::nullopt);
    io::export_results(rep, out);
    print_summary(rep);
    std::printf("loglik = %.8f\n", fit.loglik);
    return 0;
}

struct SimArgs {
    std::vector<std::string> designs{"intercept"};
    std::vector<double> taus{0.4};
    std::vector<int> ps{10};
    std::vector<std::string> methods{"a", "b", "ml", "legacy"};
    int replicates = 20;
    int n_clusters = 50;
    int obs = 10;
    std::uint64_t seed = 1;
    double nu = 0.1;
    int m_stop = 1000;
    int k = 10;
    unsigned threads = 1;
    std::string out;
};

int run_simulate(const SimArgs& s) {
    std::vector<sim::SimDesign> designs;
    for (const auto& name : s.designs) {
        if (name != "intercept" && name != "slopes") {
            throw InputError("unknown design '" + name + "'");
        }
        for (const double tau : s.taus) {
            for (const int p : s.ps) {
                sim::SimDesign d;
                d.slopes = name == "slopes";
                d.tau = tau;
                d.p = p;
                d.replicates = s.replicates;
                d.n_clusters = s.n_clusters;
                d.obs_per_cluster = s.obs;
                d.seed = s.seed;
                designs.push_back(d);
            }
        }
    }
    std::vector<sim::Method> methods;
    for (const auto& m : s.methods) methods.push_back(sim::parse_method(m));
    sim::StudyOptions opt;
    opt.nu = s.nu;
    opt.m_stop = s.m_stop;
    opt.k = s.k;
    opt.threads = s.threads;
    const auto cells = sim::run_study(designs, methods, opt);
    if (s.out.empty()) {
        sim::write_study_csv(std::cout, cells);
    } else {
        std::ofstream os(s.out);
        if (!os) throw InputError("cannot write '" + s.out + "'");
        sim::write_study_csv(os, cells);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Likelihood-based boosting for linear mixed models"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "key=value file with option defaults");
    bool quiet = false;
    app.add_flag("--quiet", quiet, "suppress warnings");

    DataArgs fit_data;
    BoostArgs fit_boost;
    std::string fit_out = "boostlmm_out";
    auto* fit = app.add_subcommand("fit", "boost, choose m* by CV, export results");
    add_data_options(fit, fit_data);
    add_boost_options(fit, fit_boost);
    fit->add_option("--out", fit_out, "output directory")->capture_default_str();

    DataArgs cv_data;
    BoostArgs cv_boost;
    std::string cv_out = "boostlmm_out";
    auto* cv = app.add_subcommand("cv", "cross-validation curve only");
    add_data_options(cv, cv_data);
    add_boost_options(cv, cv_boost);
    cv->add_option("--out", cv_out, "output directory")->capture_default_str();

    DataArgs or_data;
    std::string or_out = "boostlmm_out";
    auto* oracle = app.add_subcommand("oracle", "direct maximum-likelihood fit");
    add_data_options(oracle, or_data);
    oracle->add_option("--out", or_out, "output directory")->capture_default_str();

    SimArgs sa;
    auto* simulate = app.add_subcommand("simulate", "simulation grid");
    simulate->add_option("--design", sa.designs, "intercept and/or slopes")->delimiter(',');
    simulate->add_option("--tau", sa.taus, "random-intercept sd values")->delimiter(',');
    simulate->add_option("--p", sa.ps, "numbers of covariates")->delimiter(',');
    simulate->add_option("--methods", sa.methods, "a, b, ml, legacy")->delimiter(',');
    simulate->add_option("--replicates", sa.replicates)->capture_default_str();
    simulate->add_option("--clusters", sa.n_clusters)->capture_default_str();
    simulate->add_option("--obs", sa.obs, "observations per cluster")->capture_default_str();
    simulate->add_option("--seed", sa.seed)->capture_default_str();
    simulate->add_option("--nu", sa.nu)->capture_default_str();
    simulate->add_option("--mstop", sa.m_stop)->capture_default_str();
    simulate->add_option("--k", sa.k)->capture_default_str();
    simulate->add_option("--threads", sa.threads)->capture_default_str();
    simulate->add_option("--out", sa.out, "CSV output file (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    set_warnings_enabled(!quiet);

    try {
        if (*fit) return run_fit(fit_data, fit_boost, fit_out, false);
        if (*cv) return run_fit(cv_data, cv_boost, cv_out, true);
        if (*oracle) return run_oracle(or_data, or_out);
        if (*simulate) return run_simulate(sa);
    } catch (const InputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
