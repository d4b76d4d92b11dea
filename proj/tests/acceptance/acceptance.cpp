// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <sys/resource.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "mpsink/config.hpp"
#include "mpsink/diagnostics.hpp"
#include "mpsink/oracle_suite.hpp"

using namespace mpsink;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
    std::printf("%s  %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

void info(const std::string& text) {
    std::printf("      %s\n", text.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Worst constraint violations seen after any sweep of any run below.
struct ConstraintWatch {
    double initial_l1 = 0.0;
    double mass_defect = 0.0;
    bool negative = false;
    std::size_t sweeps = 0;

    void operator()(const Solver& s, IterationRecord&) {
        ++sweeps;
        for (std::size_t i = 0; i < s.spec().populations(); ++i) {
            initial_l1 = std::max(initial_l1, l1_distance(s.marginals().rho[i][0], s.spec().rho0[i]));
            for (const auto& m : s.marginals().rho[i]) {
                mass_defect = std::max(mass_defect, std::abs(m.sum() - 1.0));
                for (double v : m.values) negative = negative || v < 0.0 || !std::isfinite(v);
            }
        }
    }
};

ConstraintWatch watch;

RunConfig load(const std::string& name) { return parse_config_file(std::string(MPSINK_CONFIG_DIR) + "/" + name); }

RunConfig desk(RunConfig c) {
    c.points = {50, 50};
    c.steps = 16;
    return c;
}

struct Run {
    ProblemSpec spec;
    std::unique_ptr<Solver> solver;
    SolveReport report;
    double seconds = 0.0;
};

Run solve_config(const RunConfig& c) {
    Run r;
    r.spec = build_problem(c);
    r.solver = std::make_unique<Solver>(r.spec, c.solver);
    const auto t0 = std::chrono::steady_clock::now();
    r.report = r.solver->solve([](const Solver& s, IterationRecord& rec) { watch(s, rec); });
    r.seconds = seconds_since(t0);
    return r;
}

std::string run_summary(const Run& r) {
    return std::string(to_string(r.report.status)) + " in " + std::to_string(r.report.iterations.size()) +
           " sweeps, " + fmt("%.1f s", r.seconds);
}

double distance_to(const std::vector<double>& b, double x, double y) { return std::hypot(b[0] - x, b[1] - y); }

bool finite_state(const Solver& s) {
    for (const auto& pop : s.marginals().rho)
        for (const auto& m : pop)
            for (double v : m.values)
                if (!std::isfinite(v)) return false;
    for (const auto& pop : s.potentials().u)
        for (const auto& f : pop)
            for (double v : f.values)
                if (std::isnan(v)) return false;
    return true;
}

// Terminal barycenters against targets; returns the worst distance.
double barycenter_check(const Run& r, const std::vector<std::array<double, 2>>& targets, std::string& detail) {
    double worst = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto b = barycenter(r.spec.grid, r.solver->marginals().rho[i].back());
        const double d = distance_to(b, targets[i][0], targets[i][1]);
        worst = std::max(worst, d);
        char buf[128];
        std::snprintf(buf, sizeof buf, "rho%zu(T) at (%.3f, %.3f), %.3f from target; ", i + 1, b[0], b[1], d);
        detail += buf;
    }
    return worst;
}

double max_of(const std::vector<double>& v) { return *std::max_element(v.begin(), v.end()); }

std::size_t peak_rss_bytes() {
    rusage u{};
    getrusage(RUSAGE_SELF, &u);
    return static_cast<std::size_t>(u.ru_maxrss) * 1024;
}

} // namespace

int main() {
    // Memory first, so the peak resident size belongs to the full-size run alone.
    {
        RunConfig c = load("swap_ball.json");
        c.solver.convolution = ConvolutionMethod::fft;
        c.solver.max_iter = 3;
        const ProblemSpec spec = build_problem(c);
        const auto t0 = std::chrono::steady_clock::now();
        Solver solver(spec, c.solver);
        const SolveReport rep = solver.solve([](const Solver& s, IterationRecord& rec) { watch(s, rec); });
        const std::size_t n = spec.populations(), m = spec.grid.size(), k1 = spec.steps + 1;
        const std::size_t fields = solver.field_storage();
        const std::size_t bound = 4 * n * k1 * m;
        const std::size_t rss = peak_rss_bytes();
        // A dense M x M kernel alone would need 8 * M^2 bytes (800 MB here).
        const std::size_t rss_limit = 8 * m * m / 2;
        report(fields <= bound && rss < rss_limit && rep.iterations.size() == 3 && finite_state(solver),
               "Memory scaling (100x100, K=32, N=2)",
               std::to_string(rep.iterations.size()) + " sweeps in " + fmt("%.1f s", seconds_since(t0)) + ", " +
                   std::to_string(fields) + " field doubles (bound 4*N*(K+1)*M = " + std::to_string(bound) +
                   "), peak RSS " + fmt("%.0f MB", static_cast<double>(rss) / 1e6) + " (limit " +
                   fmt("%.0f MB", static_cast<double>(rss_limit) / 1e6) + ")");
    }

    // Oracle equivalence.
    const OracleSuiteReport oracle = run_oracle_suite(24, 1);
    {
        double marg = 0.0, ent = 0.0;
        bool shapes = true;
        for (const auto& c : oracle.cases) {
            marg = std::max(marg, c.marginal_error);
            ent = std::max(ent, c.entropy_error);
        }
        for (std::uint64_t seed = 1; seed <= oracle.cases.size(); ++seed) {
            const auto t = detail::random_tiny_instance(seed);
            for (std::size_t a = 0; a < t.spec.grid.dims(); ++a) shapes = shapes && t.spec.grid.points(a) <= 3;
            shapes = shapes && t.spec.grid.dims() <= 2 && t.spec.steps <= 3 && t.spec.populations() <= 2;
        }
        report(oracle.cases.size() >= 20 && shapes && marg <= 1e-12 && ent <= 1e-10 && oracle.seconds < 5.0,
               "Oracle equivalence",
               std::to_string(oracle.cases.size()) + " cases, max marginal error " + fmt("%.2e", marg) +
                   " (tol 1e-12), max entropy error " + fmt("%.2e", ent) + " (tol 1e-10), " +
                   fmt("%.3f s", oracle.seconds));
    }

    // Heat-flow limit.
    {
        const Run r = solve_config(load("heat_flow.json"));
        MassField rho = r.spec.rho0[0];
        double worst = 0.0;
        for (std::size_t k = 0; k <= r.spec.steps; ++k) {
            worst = std::max(worst, l1_distance(rho, r.solver->marginals().rho[0][k]));
            rho = field_cast<MassField>(kernel_apply(r.solver->kernel(), rho));
        }
        report(r.report.status == SolveStatus::converged && r.report.iterations.size() <= 2 && worst <= 1e-8 &&
                   r.seconds < 10.0,
               "Heat-flow limit (50x50, K=16)",
               run_summary(r) + ", max L1 to kernel-propagated rho0 " + fmt("%.2e", worst) + " (tol 1e-8)");
    }

    // Ball-kernel swap at desk scale (Gauss-Seidel), plus the fixed-point certificate on its converged state.
    const RunConfig ball_cfg = desk(load("swap_ball.json"));
    Run ball = solve_config(ball_cfg);
    {
        std::string detail;
        const double worst = barycenter_check(ball, {{0.8, 0.45}, {0.2, 0.5}}, detail);
        const double sep = max_of(separation_metric(ball.solver->marginals().rho, 0, 1, 0.2, ball.spec.grid));
        report(ball.report.status == SolveStatus::converged && worst <= 0.15 && sep <= 0.05 && ball.seconds <= 300.0,
               "Two-population swap, ball kernel (desk scale)",
               run_summary(ball) + "; " + detail + "max separation " + fmt("%.4f", sep) + " (tol 0.05)");
    }
    {
        const PotentialStack before = ball.solver->potentials();
        Solver extra = *ball.solver;
        extra.sweep();
        double change = 0.0;
        for (std::size_t i = 0; i < before.populations(); ++i)
            for (std::size_t k = 0; k < before.u[i].size(); ++k)
                change = std::max(change, sup_distance(before.u[i][k], extra.potentials().u[i][k]));
        double inner = 0.0;
        for (const auto& c : oracle.cases) inner = std::max(inner, c.inner_error);
        report(ball.report.status == SolveStatus::converged && change <= 1e-5 && inner <= 1e-10,
               "Fixed-point certificate",
               "extra sweep after convergence at tol 1e-6 moves potentials by " + fmt("%.2e", change) +
                   " (tol 1e-5); brute-force inner subproblem vs solver inner step " + fmt("%.2e", inner) +
                   " over " + std::to_string(oracle.cases.size()) + " tiny instances (tol 1e-10)");
    }

    // Mirror symmetry under Jacobi sweeps.
    {
        RunConfig c = ball_cfg;
        c.solver.sweep = SweepOrder::jacobi;
        const Run r = solve_config(c);
        double worst = 0.0;
        for (std::size_t k = 0; k <= r.spec.steps; ++k)
            worst = std::max(worst, mirror_distance(r.spec.grid, r.solver->marginals().rho[0][k],
                                                    r.solver->marginals().rho[1][k], {true, false}));
        report(worst <= 1e-6, "Mirror symmetry (Jacobi, ball-kernel swap, desk scale)",
               run_summary(r) + ", max_k ||rho1_k - M rho2_k||_1 = " + fmt("%.3e", worst) + " (tol 1e-6)");
        // The same check with the first target moved to (0.8, 0.5), the mirror image of the second.
        RunConfig sym = c;
        sym.populations[0].final_cost.target = {0.8, 0.5};
        const Run s = solve_config(sym);
        double sym_worst = 0.0;
        for (std::size_t k = 0; k <= s.spec.steps; ++k)
            sym_worst = std::max(sym_worst, mirror_distance(s.spec.grid, s.solver->marginals().rho[0][k],
                                                            s.solver->marginals().rho[1][k], {true, false}));
        info("with mirror-symmetric final costs (rho1 target (0.8, 0.5)): max_k ||rho1_k - M rho2_k||_1 = " +
             fmt("%.3e", sym_worst) + ", " + run_summary(s));
    }

    // Truncated Coulomb swap.
    const RunConfig coulomb_cfg = desk(load("swap_coulomb.json"));
    Run coulomb = solve_config(coulomb_cfg);
    {
        std::string detail;
        const double worst = barycenter_check(coulomb, {{0.8, 0.45}, {0.2, 0.5}}, detail);
        const double sep = max_of(separation_metric(coulomb.solver->marginals().rho, 0, 1, 0.05, coulomb.spec.grid));
        report(coulomb.report.status == SolveStatus::converged && worst <= 0.15 && sep <= 0.2,
               "Two-population swap, truncated Coulomb (desk scale)",
               run_summary(coulomb) + "; " + detail + "max separation at r=0.05 " + fmt("%.4f", sep) + " (tol 0.2)");
    }

    // Small viscosity against the matching eps = 1 runs.
    {
        const std::pair<const char*, const Run*> cases[] = {{"swap_ball_eps0005.json", &ball},
                                                            {"swap_coulomb_eps0005.json", &coulomb}};
        bool ok = true;
        std::string detail;
        for (const auto& [file, reference] : cases) {
            const RunConfig c = desk(load(file));
            const Run r = solve_config(c);
            const bool finite = r.report.status != SolveStatus::diverged && finite_state(*r.solver);
            ok = ok && finite && c.epsilon == 0.005 && c.solver.log_domain == LogDomainMode::on;
            detail += std::string(file) + ": " + run_summary(r) + (finite ? ", finite" : ", NON-FINITE") + ", m2(T)";
            for (std::size_t i = 0; i < r.spec.populations(); ++i) {
                const double small = second_moment(r.spec.grid, r.solver->marginals().rho[i].back());
                const double unit = second_moment(reference->spec.grid, reference->solver->marginals().rho[i].back());
                ok = ok && small < unit;
                detail += fmt(" %.5f", small) + fmt(" vs %.5f", unit);
            }
            detail += "; ";
        }
        report(ok, "Small viscosity eps=0.005, ball and Coulomb (log domain, desk scale)", detail);
    }

    // Three-population rotation.
    {
        const Run r = solve_config(desk(load("three_populations.json")));
        std::string detail;
        const double worst = barycenter_check(r, {{0.8, 0.5}, {0.5, 0.1}, {0.2, 0.5}}, detail);
        report(r.report.status == SolveStatus::converged && worst <= 0.15, "Three-population rotation (desk scale)",
               run_summary(r) + "; " + detail);
    }

    // Hopf-Cole / Fokker-Planck cross-validation.
    {
        const Run r = solve_config(load("quadratic_bowl.json"));
        const auto residuals = fp_forward_consistency(*r.solver);
        const double worst = max_of(residuals[0]);
        report(r.report.status == SolveStatus::converged && worst <= 0.05,
               "Hopf-Cole/FP cross-validation (V=0, quadratic g, desk scale)",
               run_summary(r) + ", max_k L1 residual " + fmt("%.2e", worst) + " (tol 0.05)");
        const auto drift = fp_forward_consistency(*r.solver, FpScheme::gradient_drift);
        info("finite-difference drift variant: max_k L1 residual " + fmt("%.3f", max_of(drift[0])));
    }

    report(watch.initial_l1 <= 1e-12 && watch.mass_defect <= 1e-10 && !watch.negative, "Constraint exactness",
           "over " + std::to_string(watch.sweeps) + " sweeps of every run above: max L1(rho_0, rho0) " +
               fmt("%.2e", watch.initial_l1) + " (tol 1e-12), max |mass - 1| " + fmt("%.2e", watch.mass_defect) +
               " (tol 1e-10)" + (watch.negative ? ", NEGATIVE OR NON-FINITE MASS" : ""));

    std::printf("%s: %d criteria failed\n", failures == 0 ? "ALL PASSED" : "FAILED", failures);
    return failures == 0 ? 0 : 1;
}
