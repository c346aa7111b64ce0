// Command-line driver: runs one experiment from a JSON config and writes the report.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fmgeig/fmgeig.hpp"

namespace {

enum exit_code { ok = 0, generic_failure = 1, config_failure = 2, solver_failure = 3 };

fmgeig::json read_document(const std::string& path) {
    if (path.empty()) return fmgeig::json::object();
    std::ifstream in(path);
    if (!in) throw fmgeig::ConfigError("<file>", "cannot open " + path);
    try {
        return fmgeig::json::parse(in);
    } catch (const fmgeig::json::parse_error& e) {
        throw fmgeig::ConfigError("<file>", path + ": " + e.what());
    }
}

void ensure_object(fmgeig::json& doc, const char* key) {
    if (!doc.contains(key)) doc[key] = fmgeig::json::object();
    if (!doc[key].is_object()) throw fmgeig::ConfigError(key, "expected an object");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Full multigrid solver for nonlinear elliptic eigenvalue problems"};
    app.name("solve");
    std::string config_path, study, out, format, dump_mesh, dump_stiffness, write_ref;
    int levels = 0, dim = 0;
    double zeta = -1.0;
    long long seed = -1;
    bool quiet = false;
    app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    app.add_option("--study", study, "convergence | contraction | work-scaling | single-solve");
    app.add_option("--levels", levels, "number of levels starting at V_{h_1}");
    app.add_option("--zeta", zeta, "nonlinearity coefficient");
    app.add_option("--dim", dim, "spatial dimension (2 or 3)");
    app.add_option("--out", out, "report path (stdout when omitted)");
    app.add_option("--format", format, "csv | json");
    app.add_option("--seed", seed, "seed for randomized measurements");
    app.add_option("--dump-mesh", dump_mesh, "write the finest study mesh as text");
    app.add_option("--dump-stiffness", dump_stiffness, "write the finest stiffness matrix in coordinate format");
    app.add_option("--write-reference", write_ref, "save the computed reference solution for reference.kind = file");
    app.add_flag("-q,--quiet", quiet, "no progress output on stderr");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return config_failure;
    }

    try {
        fmgeig::json doc = read_document(config_path);
        if (!doc.is_object()) throw fmgeig::ConfigError("<root>", "config must be a JSON object");
        if (!study.empty()) doc["study"] = study;
        if (levels != 0) {
            ensure_object(doc, "mesh");
            doc["mesh"]["n_levels"] = levels;
        }
        if (dim != 0) {
            ensure_object(doc, "problem");
            doc["problem"]["dim"] = dim;
        }
        if (zeta != -1.0) {
            ensure_object(doc, "problem");
            doc["problem"]["zeta"] = zeta;
        }
        if (!out.empty() || !format.empty()) ensure_object(doc, "output");
        if (!out.empty()) doc["output"]["path"] = out;
        if (!format.empty()) doc["output"]["format"] = format;
        if (seed >= 0) doc["seed"] = seed;
        fmgeig::ExperimentConfig cfg = fmgeig::parse_config(doc);

        if (!dump_mesh.empty() || !dump_stiffness.empty()) {
            fmgeig::MeshHierarchy h =
                fmgeig::build_hierarchy(cfg.problem.dim, cfg.coarsest_divisions(), int(cfg.finest_level()) + 1);
            if (!dump_mesh.empty()) fmgeig::write_mesh(h.finest(), dump_mesh);
            if (!dump_stiffness.empty()) {
                fmgeig::FeSpace space(h.finest());
                fmgeig::write_coordinate(fmgeig::assemble_stiffness(space, cfg.problem_spec()), dump_stiffness);
            }
        }

        if (!quiet)
            std::cerr << "study " << fmgeig::to_string(cfg.study) << ", d = " << cfg.problem.dim
                      << ", zeta = " << cfg.problem.zeta << ", levels = " << cfg.mesh.n_levels << "\n";
        fmgeig::ExperimentResult result = fmgeig::run_experiment(cfg);
        if (!write_ref.empty()) {
            if (!result.reference) throw fmgeig::ConfigError("--write-reference", "this study computes no reference");
            fmgeig::write_reference(*result.reference, write_ref);
        }
        if (cfg.output.path.empty())
            std::cout << fmgeig::format_report(result.report, cfg.output.format);
        else
            fmgeig::emit_report(result.report, cfg.output.format, cfg.output.path);
        return ok;
    } catch (const fmgeig::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return config_failure;
    } catch (const fmgeig::SolverError& e) {
        std::cerr << "solver failure";
        if (e.level() >= 0) std::cerr << " at level " << e.level();
        std::cerr << ": " << e.what() << "\n";
        return solver_failure;
    } catch (const fmgeig::ResourceError& e) {
        std::cerr << "resource limit at level " << e.level() << ": " << e.what() << "\n";
        return solver_failure;
    } catch (const fmgeig::AssemblyError& e) {
        std::cerr << "assembly failure: " << e.what() << "\n";
        return solver_failure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return generic_failure;
    }
}
