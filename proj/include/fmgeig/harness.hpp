#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmgeig/discretization.hpp"
#include "fmgeig/eigsolve.hpp"
#include "fmgeig/errors.hpp"
#include "fmgeig/fmg.hpp"
#include "fmgeig/mesh.hpp"

namespace fmgeig {

using json = nlohmann::json;

enum class Study { convergence, contraction, work_scaling, single_solve };
enum class ReferenceKind { extra_level, file };
enum class ReportFormat { csv, json };

inline std::string to_string(Study s) {
    switch (s) {
    case Study::convergence: return "convergence";
    case Study::contraction: return "contraction";
    case Study::work_scaling: return "work-scaling";
    case Study::single_solve: return "single-solve";
    }
    return "?";
}

struct ExperimentConfig {
    Study study = Study::convergence;
    struct Problem {
        int dim = 2;
        double zeta = 1.0;
        int sigma = 1;
        std::string potential = "harmonic";
    } problem;
    struct Mesh {
        int divisions_per_axis = 8; // of V_{h_1}
        int n_levels = 4;
        int coarse_space_level = 0; // how many refinements V_H sits below V_{h_1}
    } mesh;
    FmgParams algorithm{};
    struct Reference {
        ReferenceKind kind = ReferenceKind::extra_level;
        int extra_levels = 1;
        std::string path;
        double tolerance = 1e-12;
    } reference;
    struct Output {
        std::string path;
        ReportFormat format = ReportFormat::csv;
    } output;
    std::uint64_t seed = 0;

    ProblemSpec problem_spec() const {
        ProblemSpec s;
        s.dim = problem.dim;
        s.zeta = problem.zeta;
        s.sigma = problem.sigma;
        if (problem.potential == "harmonic") {
            s.potential = ProblemSpec::harmonic();
            s.potential_degree = 2;
        }
        s.validate();
        return s;
    }

    int coarsest_divisions() const { return mesh.divisions_per_axis >> mesh.coarse_space_level; }
    std::size_t first_level() const { return std::size_t(mesh.coarse_space_level); }
    std::size_t finest_level() const { return first_level() + std::size_t(mesh.n_levels) - 1; }

    void validate() const {
        if (problem.dim != 2 && problem.dim != 3) throw ConfigError("problem.dim", "must be 2 or 3");
        if (!(problem.zeta >= 0.0) || !std::isfinite(problem.zeta)) throw ConfigError("problem.zeta", "must be >= 0");
        if (problem.sigma < 1) throw ConfigError("problem.sigma", "must be a positive integer");
        if (problem.sigma > 1)
            throw ConfigError("problem.sigma", "only sigma = 1 is supported by the degree-4 quadrature rules");
        if (problem.potential != "none" && problem.potential != "harmonic")
            throw ConfigError("problem.potential", "must be \"none\" or \"harmonic\"");
        if (mesh.divisions_per_axis < 1) throw ConfigError("mesh.divisions_per_axis", "must be >= 1");
        if (mesh.n_levels < 1) throw ConfigError("mesh.n_levels", "must be >= 1");
        if (mesh.coarse_space_level < 0 || mesh.coarse_space_level > 20)
            throw ConfigError("mesh.coarse_space_level", "must lie in [0, 20]");
        if (coarsest_divisions() < 1 || (coarsest_divisions() << mesh.coarse_space_level) != mesh.divisions_per_axis)
            throw ConfigError("mesh.coarse_space_level",
                              "divisions_per_axis must be divisible by 2^coarse_space_level");
        if (algorithm.m < 1) throw ConfigError("algorithm.m", "must be >= 1");
        if (algorithm.p < 1) throw ConfigError("algorithm.p", "must be >= 1");
        if (algorithm.mg.pre_steps < 0) throw ConfigError("algorithm.pre_smoothing", "must be >= 0");
        if (algorithm.mg.post_steps < 0) throw ConfigError("algorithm.post_smoothing", "must be >= 0");
        if (algorithm.mg.pre_steps + algorithm.mg.post_steps < 1)
            throw ConfigError("algorithm.pre_smoothing", "at least one smoothing step is required");
        auto check_scf = [](const ScfSettings& s, const std::string& at) {
            if (!(s.tol_lambda > 0.0)) throw ConfigError(at + ".tol_lambda", "must be > 0");
            if (!(s.tol_u > 0.0)) throw ConfigError(at + ".tol_u", "must be > 0");
            if (s.max_iter < 1) throw ConfigError(at + ".max_iter", "must be >= 1");
            if (!(s.damping > 0.0 && s.damping <= 1.0)) throw ConfigError(at + ".damping", "must lie in (0, 1]");
        };
        check_scf(algorithm.scf, "algorithm.scf");
        if (algorithm.scf_augmented.max_iter < 1) throw ConfigError("algorithm.scf.augmented_max_iter", "must be >= 1");
        if (reference.extra_levels < 1) throw ConfigError("reference.extra_levels", "must be >= 1");
        if (!(reference.tolerance > 0.0)) throw ConfigError("reference.tolerance", "must be > 0");
        if (reference.kind == ReferenceKind::file && reference.path.empty())
            throw ConfigError("reference.path", "required when reference.kind is \"file\"");
    }
};

namespace detail {

template <class T>
T get_field(const json& obj, const char* key, const std::string& path, T fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    try {
        if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(path, "expected a string");
            return v.get<std::string>();
        } else if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
            return v.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (v.is_number_integer()) return v.get<T>();
            if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>()) return T(v.get<double>());
            throw ConfigError(path, "expected an integer");
        } else {
            if (!v.is_number()) throw ConfigError(path, "expected a number");
            return v.get<T>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(path, e.what());
    }
}

inline const json& section(const json& root, const char* key, const std::string& path) {
    static const json empty = json::object();
    if (!root.contains(key)) return empty;
    const json& s = root.at(key);
    if (!s.is_object()) throw ConfigError(path, "expected an object");
    return s;
}

inline void reject_unknown(const json& obj, std::initializer_list<const char*> keys, const std::string& prefix) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : keys) known = known || it.key() == k;
        if (!known) throw ConfigError(prefix.empty() ? it.key() : prefix + "." + it.key(), "unknown field");
    }
}

} // namespace detail

/// Parses a config document. Every field is optional except that the
/// document must be an object; unknown keys are rejected with their path.
inline ExperimentConfig parse_config(const json& doc) {
    using detail::get_field;
    using detail::section;
    if (!doc.is_object()) throw ConfigError("<root>", "config must be a JSON object");
    detail::reject_unknown(doc, {"study", "problem", "mesh", "algorithm", "reference", "output", "seed"}, "");
    ExperimentConfig c;

    std::string study = get_field<std::string>(doc, "study", "study", "convergence");
    if (study == "convergence") c.study = Study::convergence;
    else if (study == "contraction") c.study = Study::contraction;
    else if (study == "work-scaling") c.study = Study::work_scaling;
    else if (study == "single-solve") c.study = Study::single_solve;
    else throw ConfigError("study", "unknown study \"" + study + "\"");

    const json& pr = section(doc, "problem", "problem");
    detail::reject_unknown(pr, {"dim", "zeta", "sigma", "potential"}, "problem");
    c.problem.dim = get_field<int>(pr, "dim", "problem.dim", c.problem.dim);
    c.problem.zeta = get_field<double>(pr, "zeta", "problem.zeta", c.problem.zeta);
    c.problem.sigma = get_field<int>(pr, "sigma", "problem.sigma", c.problem.sigma);
    c.problem.potential = get_field<std::string>(pr, "potential", "problem.potential", c.problem.potential);

    const json& me = section(doc, "mesh", "mesh");
    detail::reject_unknown(me, {"divisions_per_axis", "n_levels", "coarse_space_level"}, "mesh");
    c.mesh.divisions_per_axis =
        get_field<int>(me, "divisions_per_axis", "mesh.divisions_per_axis", c.mesh.divisions_per_axis);
    c.mesh.n_levels = get_field<int>(me, "n_levels", "mesh.n_levels", c.mesh.n_levels);
    c.mesh.coarse_space_level =
        get_field<int>(me, "coarse_space_level", "mesh.coarse_space_level", c.mesh.coarse_space_level);

    const json& al = section(doc, "algorithm", "algorithm");
    detail::reject_unknown(al, {"m", "p", "pre_smoothing", "post_smoothing", "scf", "record_diagnostics"},
                           "algorithm");
    auto& a = c.algorithm;
    a.m = get_field<int>(al, "m", "algorithm.m", a.m);
    a.p = get_field<int>(al, "p", "algorithm.p", a.p);
    a.mg.pre_steps = get_field<int>(al, "pre_smoothing", "algorithm.pre_smoothing", a.mg.pre_steps);
    a.mg.post_steps = get_field<int>(al, "post_smoothing", "algorithm.post_smoothing", a.mg.post_steps);
    a.record_diagnostics =
        get_field<bool>(al, "record_diagnostics", "algorithm.record_diagnostics", a.record_diagnostics);
    const json& sc = section(al, "scf", "algorithm.scf");
    detail::reject_unknown(sc, {"tol_lambda", "tol_u", "max_iter", "damping", "augmented_max_iter"}, "algorithm.scf");
    a.scf.tol_lambda = get_field<double>(sc, "tol_lambda", "algorithm.scf.tol_lambda", a.scf.tol_lambda);
    a.scf.tol_u = get_field<double>(sc, "tol_u", "algorithm.scf.tol_u", a.scf.tol_u);
    a.scf.max_iter = get_field<int>(sc, "max_iter", "algorithm.scf.max_iter", a.scf.max_iter);
    a.scf.damping = get_field<double>(sc, "damping", "algorithm.scf.damping", a.scf.damping);
    a.scf_augmented.tol_lambda = a.scf.tol_lambda;
    a.scf_augmented.tol_u = a.scf.tol_u;
    a.scf_augmented.damping = a.scf.damping;
    a.scf_augmented.max_iter =
        get_field<int>(sc, "augmented_max_iter", "algorithm.scf.augmented_max_iter", a.scf_augmented.max_iter);

    const json& re = section(doc, "reference", "reference");
    detail::reject_unknown(re, {"kind", "extra_levels", "path", "tolerance"}, "reference");
    std::string kind = get_field<std::string>(re, "kind", "reference.kind", "extra-level");
    if (kind == "extra-level") c.reference.kind = ReferenceKind::extra_level;
    else if (kind == "file") c.reference.kind = ReferenceKind::file;
    else throw ConfigError("reference.kind", "must be \"extra-level\" or \"file\"");
    c.reference.extra_levels = get_field<int>(re, "extra_levels", "reference.extra_levels", c.reference.extra_levels);
    c.reference.path = get_field<std::string>(re, "path", "reference.path", c.reference.path);
    c.reference.tolerance = get_field<double>(re, "tolerance", "reference.tolerance", c.reference.tolerance);

    const json& ou = section(doc, "output", "output");
    detail::reject_unknown(ou, {"path", "format"}, "output");
    c.output.path = get_field<std::string>(ou, "path", "output.path", c.output.path);
    std::string fmt = get_field<std::string>(ou, "format", "output.format", "csv");
    if (fmt == "csv") c.output.format = ReportFormat::csv;
    else if (fmt == "json") c.output.format = ReportFormat::json;
    else throw ConfigError("output.format", "must be \"csv\" or \"json\"");

    c.seed = get_field<std::uint64_t>(doc, "seed", "seed", c.seed);
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", "cannot open " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("<file>", path + ": " + e.what());
    }
    return parse_config(doc);
}

/// rate(k) = ln(e_{k-1}/e_k)/ln(beta); undefined for k = 0 and for non-positive errors.
inline std::vector<std::optional<double>> compute_rates(const std::vector<double>& errors, double beta = 2.0) {
    if (!(beta > 1.0)) throw InvalidArgument("compute_rates: beta must be > 1");
    std::vector<std::optional<double>> r(errors.size());
    for (std::size_t k = 1; k < errors.size(); ++k) {
        double a = errors[k - 1], b = errors[k];
        if (a > 0.0 && b > 0.0 && std::isfinite(a) && std::isfinite(b)) r[k] = std::log(a / b) / std::log(beta);
    }
    return r;
}

struct ReportRow {
    int level = 1; // k of V_{h_k}
    std::size_t n_elements = 0;
    std::size_t n_dofs = 0;
    double lambda = 0.0;
    std::optional<double> err_lambda, err_a, err_l2;
    std::optional<double> rate_lambda, rate_a, rate_l2;
    std::uint64_t work_units = 0;
    double wall_seconds = 0.0;
    int varpi_max = 0;
    std::optional<double> gamma_obs;
};

struct ErrorReport {
    std::string study;
    std::vector<ReportRow> rows;
    std::optional<double> reference_lambda;
    std::vector<std::optional<double>> theta_obs; // contraction study only, per row
};

inline const char* report_header() {
    return "level,n_elements,n_dofs,lambda,err_lambda,err_a,err_l2,rate_lambda,rate_a,rate_l2,work_units,wall_seconds,"
           "varpi_max,gamma_obs";
}

namespace detail {

inline std::string fmt12(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

inline std::string fmt12(const std::optional<double>& v) { return v ? fmt12(*v) : std::string(); }

inline json json12(const std::optional<double>& v) {
    if (!v || !std::isfinite(*v)) return nullptr;
    return std::strtod(fmt12(*v).c_str(), nullptr);
}

} // namespace detail

inline std::string format_report(const ErrorReport& report, ReportFormat format) {
    if (format == ReportFormat::csv) {
        std::ostringstream os;
        os << report_header() << '\n';
        for (const auto& r : report.rows) {
            using detail::fmt12;
            os << r.level << ',' << r.n_elements << ',' << r.n_dofs << ',' << fmt12(r.lambda) << ','
               << fmt12(r.err_lambda) << ',' << fmt12(r.err_a) << ',' << fmt12(r.err_l2) << ','
               << fmt12(r.rate_lambda) << ',' << fmt12(r.rate_a) << ',' << fmt12(r.rate_l2) << ',' << r.work_units
               << ',' << fmt12(r.wall_seconds) << ',' << r.varpi_max << ',' << fmt12(r.gamma_obs) << '\n';
        }
        return os.str();
    }
    json rows = json::array();
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        const auto& r = report.rows[i];
        using detail::json12;
        json row = {{"level", r.level},
                    {"n_elements", r.n_elements},
                    {"n_dofs", r.n_dofs},
                    {"lambda", json12(r.lambda)},
                    {"err_lambda", json12(r.err_lambda)},
                    {"err_a", json12(r.err_a)},
                    {"err_l2", json12(r.err_l2)},
                    {"rate_lambda", json12(r.rate_lambda)},
                    {"rate_a", json12(r.rate_a)},
                    {"rate_l2", json12(r.rate_l2)},
                    {"work_units", r.work_units},
                    {"wall_seconds", json12(r.wall_seconds)},
                    {"varpi_max", r.varpi_max},
                    {"gamma_obs", json12(r.gamma_obs)}};
        if (i < report.theta_obs.size()) row["theta_obs"] = json12(report.theta_obs[i]);
        rows.push_back(std::move(row));
    }
    json doc = {{"study", report.study}, {"reference_lambda", detail::json12(report.reference_lambda)}, {"rows", rows}};
    return doc.dump(2) + "\n";
}

inline void emit_report(const ErrorReport& report, ReportFormat format, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("emit_report: cannot open " + path);
    out << format_report(report, format);
    if (!out) throw std::runtime_error("emit_report: write failed for " + path);
}

/// Parses the JSON form produced by format_report.
inline ErrorReport parse_report_json(const std::string& text) {
    json doc = json::parse(text);
    ErrorReport r;
    r.study = doc.at("study").get<std::string>();
    auto opt = [](const json& v) -> std::optional<double> {
        if (v.is_null()) return std::nullopt;
        return v.get<double>();
    };
    r.reference_lambda = opt(doc.at("reference_lambda"));
    for (const auto& j : doc.at("rows")) {
        ReportRow row;
        row.level = j.at("level").get<int>();
        row.n_elements = j.at("n_elements").get<std::size_t>();
        row.n_dofs = j.at("n_dofs").get<std::size_t>();
        row.lambda = j.at("lambda").get<double>();
        row.err_lambda = opt(j.at("err_lambda"));
        row.err_a = opt(j.at("err_a"));
        row.err_l2 = opt(j.at("err_l2"));
        row.rate_lambda = opt(j.at("rate_lambda"));
        row.rate_a = opt(j.at("rate_a"));
        row.rate_l2 = opt(j.at("rate_l2"));
        row.work_units = j.at("work_units").get<std::uint64_t>();
        row.wall_seconds = j.at("wall_seconds").get<double>();
        row.varpi_max = j.at("varpi_max").get<int>();
        row.gamma_obs = opt(j.at("gamma_obs"));
        if (j.contains("theta_obs")) r.theta_obs.push_back(opt(j.at("theta_obs")));
        r.rows.push_back(row);
    }
    return r;
}

/// A reference eigenpair on hierarchy level `level` built from `divisions` per axis.
struct ReferenceSolution {
    int dim = 2;
    int divisions = 0;
    std::size_t level = 0;
    double lambda = 0.0;
    Vector u;
};

inline void write_reference(const ReferenceSolution& ref, const std::string& path) {
    json doc = {{"dim", ref.dim}, {"divisions_per_axis", ref.divisions}, {"level", ref.level},
                {"lambda", ref.lambda}, {"u", ref.u}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_reference: cannot open " + path);
    out << doc.dump() << '\n';
}

inline ReferenceSolution read_reference(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("reference.path", "cannot open " + path);
    try {
        json doc = json::parse(in);
        ReferenceSolution r;
        r.dim = doc.at("dim").get<int>();
        r.divisions = doc.at("divisions_per_axis").get<int>();
        r.level = doc.at("level").get<std::size_t>();
        r.lambda = doc.at("lambda").get<double>();
        r.u = doc.at("u").get<Vector>();
        return r;
    } catch (const json::exception& e) {
        throw ConfigError("reference.path", path + ": " + e.what());
    }
}

/// Worst per-cycle energy-norm contraction of the V-cycle on \hat A_level over
/// `samples` random initial errors (b = 0, `cycles` cycles each, so smooth
/// components that survive the first cycle are measured too).
inline double measure_mg_contraction(const Discretization& disc, std::size_t level, MgSettings settings,
                                     int samples = 20, std::uint64_t seed = 0, int cycles = 6) {
    MgContext ctx = disc.mg_context(level, settings, nullptr);
    const CsrMatrix& A = disc.stiffness(level);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const std::size_t n = A.rows();
    Vector zero(n, 0.0);
    double theta = 0.0;
    for (int s = 0; s < samples; ++s) {
        Vector e(n);
        for (double& v : e) v = dist(rng);
        double before = std::sqrt(A.quadratic_form(e));
        for (int c = 0; c < cycles && before > 1e-300; ++c) {
            e = v_cycle(ctx, level, zero, e);
            double after = std::sqrt(A.quadratic_form(e));
            theta = std::max(theta, after / before);
            before = after;
        }
    }
    return theta;
}

/// Errors of a level-k vector against a reference on a finer level of the same hierarchy.
struct LevelErrors {
    double err_lambda = 0.0, err_a = 0.0, err_l2 = 0.0;
};

inline LevelErrors errors_against(const Discretization& disc, std::size_t level, double lambda,
                                  std::span<const double> u, const ReferenceSolution& ref) {
    Vector up = disc.prolongate(u, level, ref.level);
    LevelErrors e;
    e.err_lambda = std::abs(lambda - ref.lambda);
    e.err_a = signed_distance(up, ref.u, disc.stiffness(ref.level));
    e.err_l2 = signed_distance(up, ref.u, disc.mass(ref.level));
    return e;
}

/// Direct solve on `level`, warm-started from a coarser approximation on `from`.
inline ReferenceSolution solve_reference(const Discretization& disc, std::size_t level, std::size_t from,
                                         std::span<const double> guess, double tolerance, std::size_t direct_limit) {
    Vector x0 = guess.empty() ? Vector{} : disc.prolongate(guess, from, level);
    ScfResult r = solve_level(disc, level, diagnostic_settings(tolerance), x0, nullptr, direct_limit);
    if (!r.converged) throw SolverError("reference solve did not converge", r.delta_lambda, int(level));
    ReferenceSolution ref;
    ref.dim = disc.mesh(0).dim;
    ref.divisions = 0;
    ref.level = level;
    ref.lambda = r.pair.lambda;
    ref.u = std::move(r.pair.u);
    return ref;
}

struct ExperimentResult {
    ErrorReport report;
    std::vector<LevelTrace> traces;
    std::vector<EigenPair> level_pairs; // the solution reported at each row
    std::optional<ReferenceSolution> reference;
};

/// Builds the hierarchy, runs the configured study and fills the report.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const ProblemSpec spec = cfg.problem_spec();
    const std::size_t first = cfg.first_level();
    const std::size_t finest = cfg.finest_level();
    const bool want_errors = cfg.study != Study::work_scaling;

    Discretization disc(build_hierarchy(cfg.problem.dim, cfg.coarsest_divisions(), int(finest) + 1), spec);

    FmgParams params = cfg.algorithm;
    params.coarse_level = 0;
    params.first_level = first;
    if (cfg.study == Study::contraction) params.record_diagnostics = true;

    ExperimentResult out;
    out.report.study = to_string(cfg.study);

    if (cfg.study == Study::single_solve) {
        Vector prev;
        for (std::size_t k = first; k <= finest; ++k) {
            LevelTrace t;
            t.level_index = k;
            t.n_dofs = disc.n_dofs(k);
            t.n_elements = disc.mesh(k).n_cells();
            auto start = std::chrono::steady_clock::now();
            disc.charge_level_setup(k, &t.work);
            Vector x0 = prev.empty() ? Vector{} : disc.prolongate(prev, k - 1, k);
            ScfResult r;
            try {
                r = solve_level(disc, k, params.scf, x0, &t.work, params.direct_dof_limit);
            } catch (const SolverError& e) {
                throw SolverError(std::string(e.what()) + " (level " + std::to_string(k) + ")", e.residual(),
                                  int(k));
            }
            if (!r.converged) throw SolverError("single-solve: SCF did not converge", r.delta_lambda, int(k));
            t.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            t.scf_iterations = r.iterations;
            t.lambda = r.pair.lambda;
            prev = r.pair.u;
            out.level_pairs.push_back(std::move(r.pair));
            out.traces.push_back(std::move(t));
        }
    } else {
        FmgResult r = full_multigrid(disc, params);
        out.traces = std::move(r.traces);
        out.level_pairs = std::move(r.level_pairs);
    }

    if (want_errors) {
        const EigenPair& top = out.level_pairs.back();
        if (cfg.reference.kind == ReferenceKind::extra_level) {
            const std::size_t ref_level = finest + std::size_t(cfg.reference.extra_levels);
            disc.ensure_levels(ref_level + 1);
            out.reference = solve_reference(disc, ref_level, finest, top.u, cfg.reference.tolerance,
                                            params.direct_dof_limit);
            out.reference->divisions = cfg.coarsest_divisions();
        } else {
            ReferenceSolution ref = read_reference(cfg.reference.path);
            if (ref.dim != cfg.problem.dim) throw ConfigError("reference.path", "dimension differs from problem.dim");
            if (ref.divisions != cfg.coarsest_divisions())
                throw ConfigError("reference.path", "coarsest divisions_per_axis differ from the configured mesh");
            if (ref.level <= finest) throw ConfigError("reference.path", "reference level must be finer than the study");
            disc.ensure_levels(ref.level + 1);
            if (ref.u.size() != disc.n_dofs(ref.level))
                throw ConfigError("reference.path", "coefficient count does not match the reference level");
            out.reference = std::move(ref);
        }
    }

    std::vector<double> el, ea, eb;
    for (std::size_t i = 0; i < out.traces.size(); ++i) {
        const LevelTrace& t = out.traces[i];
        ReportRow row;
        row.level = int(t.level_index - first) + 1;
        row.n_elements = t.n_elements;
        row.n_dofs = t.n_dofs;
        row.lambda = out.level_pairs[i].lambda;
        row.work_units = t.work.work_units();
        row.wall_seconds = t.wall_seconds;
        row.varpi_max = t.varpi_max();
        double g = t.gamma_max();
        if (!std::isnan(g)) row.gamma_obs = g;
        if (out.reference) {
            LevelErrors e = errors_against(disc, t.level_index, row.lambda, out.level_pairs[i].u, *out.reference);
            row.err_lambda = e.err_lambda;
            row.err_a = e.err_a;
            row.err_l2 = e.err_l2;
            el.push_back(e.err_lambda);
            ea.push_back(e.err_a);
            eb.push_back(e.err_l2);
        }
        out.report.rows.push_back(row);
    }
    if (out.reference) {
        out.report.reference_lambda = out.reference->lambda;
        auto rl = compute_rates(el), ra = compute_rates(ea), rb = compute_rates(eb);
        for (std::size_t i = 0; i < out.report.rows.size(); ++i) {
            out.report.rows[i].rate_lambda = rl[i];
            out.report.rows[i].rate_a = ra[i];
            out.report.rows[i].rate_l2 = rb[i];
        }
    }
    if (cfg.study == Study::contraction) {
        for (const LevelTrace& t : out.traces) {
            if (t.level_index == 0) out.report.theta_obs.push_back(std::nullopt);
            else out.report.theta_obs.push_back(measure_mg_contraction(disc, t.level_index, params.mg, 20, cfg.seed));
        }
    }
    return out;
}

} // namespace fmgeig
