// Command-line driver: solve, verify-oracle, diagnose, describe.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "mpsink/config.hpp"
#include "mpsink/oracle_suite.hpp"
#include "mpsink/run.hpp"

namespace {

struct Overrides {
    std::optional<std::string> out;
    std::optional<double> tol;
    std::optional<std::size_t> max_iter;
    std::optional<std::string> sweep;
    std::optional<std::string> log_domain;
    std::optional<std::size_t> frame_stride;
};

void apply(const Overrides& o, mpsink::RunConfig& c) {
    using mpsink::Error;
    using mpsink::ErrorCode;
    if (o.out) c.output.out_dir = *o.out;
    if (o.tol) {
        if (!(*o.tol > 0.0)) throw Error(ErrorCode::Config, "--tol must be > 0");
        c.solver.tol = *o.tol;
    }
    if (o.max_iter) {
        if (*o.max_iter < 1) throw Error(ErrorCode::Config, "--max-iter must be >= 1");
        c.solver.max_iter = *o.max_iter;
    }
    if (o.sweep) c.solver.sweep = *o.sweep == "jacobi" ? mpsink::SweepOrder::jacobi : mpsink::SweepOrder::gauss_seidel;
    if (o.log_domain) {
        c.solver.log_domain = *o.log_domain == "on"    ? mpsink::LogDomainMode::on
                              : *o.log_domain == "off" ? mpsink::LogDomainMode::off
                                                       : mpsink::LogDomainMode::automatic;
    }
    if (o.frame_stride) {
        if (*o.frame_stride < 1) throw Error(ErrorCode::Config, "--frame-stride must be >= 1");
        c.output.frame_stride = *o.frame_stride;
    }
}

int cmd_solve(const std::string& config_path, const Overrides& o, bool quiet) {
    mpsink::RunConfig config;
    mpsink::ProblemSpec spec;
    try {
        config = mpsink::parse_config_file(config_path);
        apply(o, config);
        spec = mpsink::build_problem(config);
        mpsink::validate(spec);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return mpsink::exit_config;
    }
    const std::filesystem::path out =
        o.out ? std::filesystem::path(*o.out)
              : (std::filesystem::path(config.output.out_dir).is_absolute()
                     ? std::filesystem::path(config.output.out_dir)
                     : std::filesystem::path(config_path).parent_path() / config.output.out_dir);
    try {
        const mpsink::RunOutcome r = mpsink::run(config, spec, out, quiet ? nullptr : &std::cerr);
        if (!quiet) {
            std::cout << mpsink::to_string(r.status) << " after " << r.iterations << " sweeps";
            if (!r.message.empty()) std::cout << " (" << r.message << ")";
            std::cout << "\noutput: " << out.string() << "\n";
        }
        return r.exit;
    } catch (const mpsink::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return mpsink::exit_config;
    }
}

int cmd_verify(bool quiet) {
    const mpsink::OracleSuiteReport rep = mpsink::run_oracle_suite();
    for (const auto& c : rep.cases) {
        if (quiet && c.passed) continue;
        std::cout << (c.passed ? "ok   " : "FAIL ") << "seed " << c.seed << " [" << c.description << "] marginals "
                  << c.marginal_error << " entropy " << c.entropy_error << " inner " << c.inner_error << "\n";
    }
    std::cout << (rep.passed() ? "all " : "FAILED: ") << rep.cases.size() << " oracle cases, " << rep.seconds
              << " s\n";
    return rep.passed() ? 0 : 1;
}

int cmd_diagnose(const std::string& dir) {
    const auto problems = mpsink::verify_manifest(dir);
    for (const auto& p : problems) std::cerr << "missing or corrupt: " << p << "\n";
    if (!problems.empty()) return 1;
    try {
        std::cout << mpsink::diagnose(dir).dump(2) << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int cmd_describe(const std::string& config_path, const Overrides& o) {
    try {
        mpsink::RunConfig config = mpsink::parse_config_file(config_path);
        apply(o, config);
        std::cout << mpsink::describe(config).dump(2) << "\n";
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return mpsink::exit_config;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-population entropic mean field game solver"};
    app.require_subcommand(1);

    std::string config_path;
    std::string run_dir;
    Overrides o;
    bool quiet = false;
    auto add_overrides = [&](CLI::App* sub) {
        sub->add_option("--out", o.out, "Output directory");
        sub->add_option("--tol", o.tol, "Convergence tolerance");
        sub->add_option("--max-iter", o.max_iter, "Sweep limit");
        sub->add_option("--sweep", o.sweep, "gauss-seidel or jacobi")
            ->transform(CLI::Transformer(std::map<std::string, std::string>{{"gauss-seidel", "gauss_seidel"},
                                                                            {"gauss_seidel", "gauss_seidel"},
                                                                            {"jacobi", "jacobi"}})
                            .description(""))
            ->check(CLI::IsMember({"gauss_seidel", "jacobi"}));
        sub->add_option("--log-domain", o.log_domain, "auto, on or off")->check(CLI::IsMember({"auto", "on", "off"}));
        sub->add_option("--frame-stride", o.frame_stride, "Write every n-th time frame");
    };

    CLI::App* solve = app.add_subcommand("solve", "Run a solve and write frames, manifest and logs");
    solve->add_option("--config", config_path, "JSON run configuration")->required();
    add_overrides(solve);
    solve->add_flag("--quiet", quiet, "No progress output");

    CLI::App* verify = app.add_subcommand("verify-oracle", "Check the solver against brute-force references");
    verify->add_flag("--quiet", quiet, "Only print failures");

    CLI::App* diag = app.add_subcommand("diagnose", "Recompute diagnostics from a run directory");
    diag->add_option("--out", run_dir, "Run directory")->required();
    diag->add_flag("--quiet", quiet, "Accepted for symmetry");

    CLI::App* desc = app.add_subcommand("describe", "Print the resolved configuration");
    desc->add_option("--config", config_path, "JSON run configuration")->required();
    add_overrides(desc);
    desc->add_flag("--quiet", quiet, "Accepted for symmetry");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : mpsink::exit_config;
    }

    if (solve->parsed()) return cmd_solve(config_path, o, quiet);
    if (verify->parsed()) return cmd_verify(quiet);
    if (diag->parsed()) return cmd_diagnose(run_dir);
    return cmd_describe(config_path, o);
}
