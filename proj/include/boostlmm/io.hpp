#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "boostlmm/cv.hpp"
#include "boostlmm/dataset.hpp"
#include "boostlmm/engine.hpp"
#include "boostlmm/errors.hpp"
#include "boostlmm/model.hpp"

namespace boostlmm::io {

/// Parsed CSV: header plus rows of raw string fields.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw InputError("column '" + name + "' not found");
        return static_cast<std::size_t>(it - header.begin());
    }
};

namespace detail {

// Splits one record; handles double-quoted fields with "" escapes. Quoted
// fields may not span lines.
inline std::vector<std::string> split_record(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    if (quoted) throw InputError("unterminated quoted field");
    out.push_back(std::move(field));
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline bool is_missing(const std::string& s) {
    return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == ".";
}

inline std::optional<double> parse_double(const std::string& s) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline std::string format12(double v) {
    std::ostringstream s;
    s << std::setprecision(12) << v;
    return s.str();
}

}  // namespace detail

inline CsvTable read_csv(std::istream& in) {
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw InputError("CSV input is empty");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    for (auto& h : detail::split_record(line)) t.header.push_back(detail::trim(h));
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        auto rec = detail::split_record(line);
        if (rec.size() != t.header.size()) {
            throw InputError("line " + std::to_string(lineno) + " has " +
                             std::to_string(rec.size()) + " fields, expected " +
                             std::to_string(t.header.size()));
        }
        for (auto& f : rec) f = detail::trim(f);
        t.rows.push_back(std::move(rec));
    }
    return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    return read_csv(in);
}

/// Model formula for ingestion.
struct ModelSpec {
    std::string response;
    std::string cluster;
    std::vector<std::string> fixed;
    std::vector<std::string> square;         // adds "<col>^2" columns
    std::vector<std::string> random_slopes;  // Z = (1, slopes...)
    std::optional<std::vector<std::string>> cluster_constant;  // overrides detection
};

/**
 * Builds a Dataset from a CSV table. Non-numeric fixed-effect columns are
 * expanded into 0/1 dummies named "<col>_<level>" (lexicographically first
 * level is the reference). Rows with a missing value in any used column are
 * dropped with a warning.
 */
inline Dataset ingest(const CsvTable& t, const ModelSpec& spec) {
    if (t.rows.empty()) throw InputError("CSV contains no data rows");
    if (spec.response.empty() || spec.cluster.empty()) {
        throw InputError("response and cluster columns are required");
    }
    const std::size_t ycol = t.column(spec.response);
    const std::size_t ccol = t.column(spec.cluster);
    std::vector<std::size_t> used{ycol, ccol};
    for (const auto& f : spec.fixed) used.push_back(t.column(f));
    for (const auto& f : spec.square) used.push_back(t.column(f));
    for (const auto& f : spec.random_slopes) used.push_back(t.column(f));

    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const bool complete = std::none_of(used.begin(), used.end(), [&](std::size_t c) {
            return detail::is_missing(t.rows[r][c]);
        });
        if (complete) keep.push_back(r);
    }
    if (keep.size() < t.rows.size()) {
        warn("dropped " + std::to_string(t.rows.size() - keep.size()) +
             " row(s) with missing values");
    }
    if (keep.empty()) throw InputError("no complete rows remain");
    const auto N = static_cast<Index>(keep.size());

    auto numeric_column = [&](std::size_t c, bool required) -> std::optional<Eigen::VectorXd> {
        Eigen::VectorXd v(N);
        for (Index k = 0; k < N; ++k) {
            const auto& field = t.rows[keep[static_cast<std::size_t>(k)]][c];
            const auto d = detail::parse_double(field);
            if (!d) {
                if (required) {
                    throw InputError("column '" + t.header[c] + "' has non-numeric value '" +
                                     field + "'");
                }
                return std::nullopt;
            }
            v(k) = *d;
        }
        return v;
    };

    Eigen::VectorXd y = *numeric_column(ycol, true);
    std::vector<std::string> clusters;
    clusters.reserve(keep.size());
    for (const auto r : keep) clusters.push_back(t.rows[r][ccol]);

    std::vector<Eigen::VectorXd> xcols;
    std::vector<std::string> xnames;
    for (const auto& name : spec.fixed) {
        const std::size_t c = t.column(name);
        if (auto v = numeric_column(c, false)) {
            xcols.push_back(std::move(*v));
            xnames.push_back(name);
            continue;
        }
        std::set<std::string> levels;
        for (const auto r : keep) levels.insert(t.rows[r][c]);
        if (levels.size() < 2) throw InputError("categorical column '" + name + "' has one level");
        for (auto it = std::next(levels.begin()); it != levels.end(); ++it) {
            Eigen::VectorXd d(N);
            for (Index k = 0; k < N; ++k) {
                d(k) = t.rows[keep[static_cast<std::size_t>(k)]][c] == *it ? 1.0 : 0.0;
            }
            xcols.push_back(std::move(d));
            xnames.push_back(name + "_" + *it);
        }
    }
    for (const auto& name : spec.square) {
        Eigen::VectorXd v = *numeric_column(t.column(name), true);
        xcols.push_back(v.array().square());
        xnames.push_back(name + "^2");
    }

    Eigen::MatrixXd X(N, static_cast<Index>(xcols.size()));
    for (std::size_t c = 0; c < xcols.size(); ++c) X.col(static_cast<Index>(c)) = xcols[c];
    Eigen::MatrixXd Z(N, 1 + static_cast<Index>(spec.random_slopes.size()));
    Z.col(0).setOnes();
    std::vector<std::string> znames{"(Intercept)"};
    for (std::size_t s = 0; s < spec.random_slopes.size(); ++s) {
        Z.col(static_cast<Index>(s) + 1) = *numeric_column(t.column(spec.random_slopes[s]), true);
        znames.push_back(spec.random_slopes[s]);
    }

    std::optional<std::vector<Index>> constant;
    if (spec.cluster_constant) {
        constant.emplace();
        for (const auto& name : *spec.cluster_constant) {
            const auto it = std::find(xnames.begin(), xnames.end(), name);
            if (it == xnames.end()) {
                throw InputError("cluster-constant override '" + name +
                                 "' is not a fixed-effect column");
            }
            constant->push_back(static_cast<Index>(it - xnames.begin()));
        }
    }
    return Dataset::from_rows(std::move(y), clusters, std::move(X), std::move(xnames),
                              std::move(Z), std::move(znames), std::move(constant));
}

inline Dataset ingest_csv(const std::filesystem::path& path, const ModelSpec& spec) {
    return ingest(read_csv(path), spec);
}

/// Column centering/scaling with back-transformation of coefficients.
struct Standardization {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;

    static Standardization fit(const Dataset& data) {
        Standardization s;
        s.mean = data.X().colwise().mean().transpose();
        s.scale.resize(data.p());
        for (Index c = 0; c < data.p(); ++c) {
            const double sd = std::sqrt(sample_variance(data.X().col(c)));
            s.scale(c) = sd > 0.0 ? sd : 1.0;
        }
        return s;
    }

    Dataset apply(const Dataset& data) const {
        Eigen::MatrixXd X = (data.X().rowwise() - mean.transpose()).array().rowwise() /
                            scale.transpose().array();
        return data.with_fixed(std::move(X), data.x_names())
            .with_cluster_constant(data.cluster_constant_idx());
    }

    /// Maps coefficients fitted on the standardized design back to the
    /// original covariate scale.
    void back_transform(double& beta0, Eigen::VectorXd& beta) const {
        beta = beta.cwiseQuotient(scale);
        beta0 -= beta.dot(mean);
    }
};

/// Everything export_results writes.
struct FitReport {
    std::vector<std::string> x_names;
    std::vector<std::string> z_names;
    std::vector<std::string> cluster_labels;
    Eigen::MatrixXd beta_path;  // rows = iterations 0..m*, col 0 intercept
    ParamState state;
    std::optional<CvCurve> curve;
    int m_star = 0;
};

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw InputError("failed writing '" + path.string() + "'");
}

inline double round12(double v) { return std::stod(format12(v)); }

}  // namespace detail

/// Writes estimates.json, path.csv, cv.csv and ranef.csv into out_dir.
inline void export_results(const FitReport& rep, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) {
        throw InputError("cannot create output directory '" + out_dir.string() + "'");
    }
    const ParamState& s = rep.state;

    nlohmann::ordered_json est;
    est["intercept"] = detail::round12(s.beta0);
    nlohmann::ordered_json beta = nlohmann::ordered_json::object();
    for (std::size_t r = 0; r < rep.x_names.size(); ++r) {
        beta[rep.x_names[r]] = detail::round12(s.beta(static_cast<Index>(r)));
    }
    est["beta"] = std::move(beta);
    est["tau"] = detail::round12(std::sqrt(std::max(s.Q(0, 0), 0.0)));
    nlohmann::ordered_json Q = nlohmann::ordered_json::array();
    for (Index r = 0; r < s.Q.rows(); ++r) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (Index c = 0; c < s.Q.cols(); ++c) row.push_back(detail::round12(s.Q(r, c)));
        Q.push_back(std::move(row));
    }
    est["Q"] = std::move(Q);
    est["random_effects"] = rep.z_names;
    est["sigma2"] = detail::round12(s.sigma2);
    est["m_star"] = rep.m_star;
    detail::write_file(out_dir / "estimates.json", est.dump(2) + "\n");

    std::ostringstream path;
    path << "iteration,(Intercept)";
    for (const auto& n : rep.x_names) path << ',' << n;
    path << '\n';
    for (Index m = 0; m < rep.beta_path.rows(); ++m) {
        path << m;
        for (Index c = 0; c < rep.beta_path.cols(); ++c) {
            path << ',' << detail::format12(rep.beta_path(m, c));
        }
        path << '\n';
    }
    detail::write_file(out_dir / "path.csv", path.str());

    std::ostringstream cv;
    cv << "iteration,cv\n";
    if (rep.curve) {
        for (std::size_t m = 0; m < rep.curve->values.size(); ++m) {
            cv << (m + 1) << ',' << detail::format12(rep.curve->values[m]) << '\n';
        }
    }
    detail::write_file(out_dir / "cv.csv", cv.str());

    std::ostringstream ranef;
    ranef << "cluster";
    for (const auto& n : rep.z_names) ranef << ',' << n;
    ranef << '\n';
    for (Index i = 0; i < s.gamma.rows(); ++i) {
        ranef << rep.cluster_labels[static_cast<std::size_t>(i)];
        for (Index c = 0; c < s.gamma.cols(); ++c) {
            ranef << ',' << detail::format12(s.gamma(i, c));
        }
        ranef << '\n';
    }
    detail::write_file(out_dir / "ranef.csv", ranef.str());
}

/// Reads ranef.csv back: cluster labels and the n x q matrix.
inline std::pair<std::vector<std::string>, Eigen::MatrixXd> read_ranef(
    const std::filesystem::path& path) {
    const CsvTable t = read_csv(path);
    if (t.header.empty() || t.header[0] != "cluster") throw InputError("not a ranef.csv file");
    Eigen::MatrixXd g(static_cast<Index>(t.rows.size()), static_cast<Index>(t.header.size()) - 1);
    std::vector<std::string> labels;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        labels.push_back(t.rows[r][0]);
        for (std::size_t c = 1; c < t.header.size(); ++c) {
            const auto v = detail::parse_double(t.rows[r][c]);
            if (!v) throw InputError("non-numeric random effect in ranef.csv");
            g(static_cast<Index>(r), static_cast<Index>(c) - 1) = *v;
        }
    }
    return {std::move(labels), std::move(g)};
}

}  // namespace boostlmm::io
