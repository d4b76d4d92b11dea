#pragma once

#include <chrono>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mpsink/mmot.hpp"
#include "mpsink/oracle.hpp"
#include "mpsink/solver.hpp"

namespace mpsink {

inline constexpr double kOracleMarginalTolerance = 1e-12;
inline constexpr double kOracleEntropyTolerance = 1e-10;
inline constexpr double kOracleInnerTolerance = 1e-10;

struct OracleCase {
    std::uint64_t seed = 0;
    std::string description;
    double marginal_error = 0.0; // max abs, message passing vs dense tensor
    double entropy_error = 0.0;  // |closed form - direct|
    double inner_error = 0.0;    // max abs, solver inner step vs brute-force subproblem
    bool passed = false;
};

struct OracleSuiteReport {
    std::vector<OracleCase> cases;
    double seconds = 0.0;

    bool passed() const {
        for (const auto& c : cases)
            if (!c.passed) return false;
        return !cases.empty();
    }
};

namespace detail {

struct TinyInstance {
    ProblemSpec spec;
    SolverOptions options;
    std::string description;
};

inline TinyInstance random_tiny_instance(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };

    TinyInstance t;
    const std::size_t dims = pick(1, 2);
    std::vector<std::size_t> pts(dims);
    for (auto& p : pts) p = pick(2, 3);
    t.spec.grid = build_grid(dims, pts);
    t.spec.steps = pick(1, 3);
    t.spec.horizon = uniform(0.5, 2.0);
    t.spec.epsilon = uniform(0.05, 1.5);
    t.spec.boundary = pick(0, 1) == 0 ? Boundary::reflecting : Boundary::truncated;
    const std::size_t n = pick(1, 2);
    const std::size_t m = t.spec.grid.size();
    for (std::size_t i = 0; i < n; ++i) {
        ScalarField raw(m);
        for (auto& v : raw.values) v = uniform(0.05, 1.0);
        t.spec.rho0.push_back(normalize(raw));
        ScalarField g(m);
        for (auto& v : g.values) v = uniform(-1.0, 1.0);
        t.spec.g.push_back(g);
    }
    t.spec.interactions = InteractionMatrix(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            switch (pick(0, 3)) {
            case 0: break;
            case 1: t.spec.interactions.set(i, j, BallIndicator{uniform(0.5, 3.0), uniform(0.2, 0.9)}); break;
            case 2: t.spec.interactions.set(i, j, TruncatedCoulomb{uniform(1.0, 4.0)}); break;
            default:
                t.spec.interactions.set(i, j, TabulatedRadial{{0.0, 0.3, 0.8}, {uniform(0.0, 2.0), uniform(0.0, 1.0), 0.0}});
            }
        }
    }
    t.options.symmetrize = pick(0, 1) == 1;
    t.options.sweep = pick(0, 1) == 1 ? SweepOrder::jacobi : SweepOrder::gauss_seidel;
    t.options.log_domain = pick(0, 1) == 1 ? LogDomainMode::on : LogDomainMode::off;
    t.description = std::to_string(dims) + "d grid " + std::to_string(m) + " cells, K=" +
                    std::to_string(t.spec.steps) + ", N=" + std::to_string(n) +
                    (t.spec.boundary == Boundary::reflecting ? ", reflecting" : ", truncated") +
                    (t.options.log_domain == LogDomainMode::on ? ", log messages" : ", linear messages");
    return t;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double e = 0.0;
    for (std::size_t x = 0; x < a.size(); ++x) e = std::max(e, std::abs(a[x] - b[x]));
    return e;
}

} // namespace detail

/**
 * One randomized tiny instance: random potentials are checked against the
 * dense tensor (marginals and entropy), then one solver sweep is replayed
 * population by population against the brute-force inner subproblem.
 */
inline OracleCase run_oracle_case(std::uint64_t seed) {
    detail::TinyInstance t = detail::random_tiny_instance(seed);
    OracleCase out;
    out.seed = seed;
    out.description = t.description;
    const ProblemSpec& spec = t.spec;
    const std::size_t m = spec.grid.size();

    Solver solver(spec, t.options);
    const SeparableKernel& kernel = solver.kernel();
    const double w0 = solver.reference_weight();

    // Random interior/final potentials; u_0 fitted so the plan is a probability.
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    PotentialStack u(spec.populations(), spec.steps, m);
    for (auto& pop : u.u)
        for (std::size_t k = 1; k <= spec.steps; ++k)
            for (auto& v : pop[k].values) v = dist(rng);
    solver.set_potentials(u);
    for (std::size_t i = 0; i < spec.populations(); ++i) {
        solver.update_initial_potential(i);
        solver.refresh_forward(i);
    }
    const DensePlan reference = materialize_reference(kernel, spec.steps, w0);
    for (std::size_t i = 0; i < spec.populations(); ++i) {
        const auto& ui = solver.potentials().u[i];
        const DensePlan plan = materialize_plan(ui, kernel, w0);
        for (std::size_t k = 0; k <= spec.steps; ++k) {
            out.marginal_error = std::max(out.marginal_error, detail::max_abs_diff(solver.marginals().rho[i][k].values,
                                                                                   direct_marginal(plan, k).values));
        }
        const double closed = plan_entropy(ui, solver.marginals().rho[i]);
        out.entropy_error = std::max(out.entropy_error, std::abs(closed - direct_entropy(plan, reference)));
    }

    // Replay one sweep.
    InnerCostConvention conv;
    conv.interior_factor = solver.cost_factor() * solver.quadrature_weight();
    conv.final_factor = solver.cost_factor();
    conv.symmetrize = t.options.symmetrize;
    const MarginalTable frozen_jacobi = solver.marginals().rho;
    for (std::size_t i = 0; i < spec.populations(); ++i) {
        const MarginalTable frozen = t.options.sweep == SweepOrder::jacobi ? frozen_jacobi : solver.marginals().rho;
        solver.update_interior_potentials(i, frozen);
        solver.update_final_potential(i);
        solver.refresh_backward(i);
        solver.update_initial_potential(i);
        solver.refresh_forward(i);
        const InnerSolution sol =
            inner_subproblem_bruteforce(i, spec.interactions, frozen, spec.rho0[i], spec.g[i], kernel, w0, conv);
        for (std::size_t k = 0; k <= spec.steps; ++k) {
            out.inner_error = std::max(out.inner_error, detail::max_abs_diff(solver.marginals().rho[i][k].values,
                                                                             sol.marginals[k].values));
        }
    }
    out.passed = out.marginal_error <= kOracleMarginalTolerance && out.entropy_error <= kOracleEntropyTolerance &&
                 out.inner_error <= kOracleInnerTolerance;
    return out;
}

inline OracleSuiteReport run_oracle_suite(std::size_t cases = 24, std::uint64_t first_seed = 1) {
    OracleSuiteReport report;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t c = 0; c < cases; ++c) report.cases.push_back(run_oracle_case(first_seed + c));
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

} // namespace mpsink
