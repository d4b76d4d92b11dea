#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mpsink/error.hpp"
#include "mpsink/grid.hpp"
#include "mpsink/heat_kernel.hpp"
#include "mpsink/interaction.hpp"
#include "mpsink/mmot.hpp"

namespace mpsink {

enum class SweepOrder { gauss_seidel, jacobi };

struct SolverOptions {
    SweepOrder sweep = SweepOrder::gauss_seidel;
    /// Use V^{i,j} + V^{j,i} in the interior potentials.
    bool symmetrize = false;
    /// Drop the T/K weight on interior potentials.
    bool legacy_unweighted = false;
    /// Store +g and +interaction in the plan exponents instead of the cost-penalizing negatives.
    bool literal_signs = false;
    /// Divide g and V by epsilon, i.e. minimize epsilon * H(Q|R_eps) + costs. Off: H(Q|R_eps) + costs.
    bool viscosity_scaled_costs = false;
    /// Relaxation of interior-potential updates, in (0, 1].
    double damping = 1.0;
    LogDomainMode log_domain = LogDomainMode::automatic;
    ConvolutionMethod convolution = ConvolutionMethod::automatic;
    double tol = 1e-6;
    std::size_t max_iter = 2000;
};

struct ProblemSpec {
    GridSpec grid;
    double horizon = 1.0;
    std::size_t steps = 1;
    double epsilon = 1.0;
    Boundary boundary = Boundary::reflecting;
    std::vector<MassField> rho0;
    std::vector<ScalarField> g;
    InteractionMatrix interactions;

    std::size_t populations() const { return rho0.size(); }
    double time_step() const { return horizon / static_cast<double>(steps); }
    double kernel_variance() const { return epsilon * horizon / static_cast<double>(steps); }
};

inline void validate(const ProblemSpec& spec) {
    require(spec.steps >= 1, ErrorCode::InvalidArgument, "K must be >= 1");
    require(std::isfinite(spec.epsilon) && spec.epsilon > 0.0, ErrorCode::InvalidArgument, "epsilon must be > 0");
    require(std::isfinite(spec.horizon) && spec.horizon > 0.0, ErrorCode::InvalidArgument, "T must be > 0");
    const std::size_t n = spec.populations();
    require(n >= 1, ErrorCode::InvalidArgument, "at least one population is required");
    require(spec.g.size() == n, ErrorCode::InvalidArgument, "one final cost per population is required");
    require(spec.interactions.populations() == n, ErrorCode::InvalidArgument,
            "interaction matrix size does not match population count");
    for (std::size_t i = 0; i < n; ++i) {
        check_compatible(spec.grid, spec.rho0[i].size(), "initial density");
        check_compatible(spec.grid, spec.g[i].size(), "final cost");
        double total = 0.0;
        for (double v : spec.rho0[i].values) {
            require(std::isfinite(v) && v >= 0.0, ErrorCode::InvalidArgument, "initial density must be >= 0");
            total += v;
        }
        require(std::abs(total - 1.0) <= 1e-10, ErrorCode::NotNormalized,
                "initial density " + std::to_string(i) + " must have unit mass");
        for (double v : spec.g[i].values) require(std::isfinite(v), ErrorCode::InvalidArgument, "final cost must be finite");
    }
}

struct IterationRecord {
    std::size_t index = 0;
    /// L1 distance between the initial marginal and rho0, measured before the u_0 update.
    std::vector<double> marginal_error;
    /// sup over (i, k) of |u_new - u_old|.
    double max_potential_change = 0.0;
    /// sum of marginal_error + max_potential_change.
    double convergence_error = 0.0;
    double wall_time = 0.0;
    std::optional<std::vector<double>> energies;
};

enum class SolveStatus { converged, max_iter, diverged };

inline const char* to_string(SolveStatus s) {
    switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::diverged: return "diverged";
    }
    return "unknown";
}

struct SolveReport {
    std::vector<IterationRecord> iterations;
    SolveStatus status = SolveStatus::max_iter;
    std::string message;
};

/// Potential assigned to cells where rho0 vanishes (e^{u} underflows to 0).
inline constexpr double kVacuumPotential = -1e4;

/// Sweeps whose error stays 10x above its running minimum before a solve is declared divergent.
inline constexpr std::size_t kDivergencePatience = 50;

/**
 * Multi-population semi-implicit Sinkhorn iteration. Each population's plan
 * is kept in product form through its potentials u[i][0..K]; the interior
 * potentials are frozen linearizations of the interaction against the other
 * populations' marginals and u[i][0] enforces the initial marginal exactly.
 */
class Solver {
public:
    Solver(ProblemSpec spec, SolverOptions options)
        : spec_(std::move(spec)), options_(options) {
        validate(spec_);
        require(options_.damping > 0.0 && options_.damping <= 1.0, ErrorCode::InvalidArgument,
                "damping must lie in (0, 1]");
        kernel_ = discretize_heat_kernel(spec_.grid, spec_.kernel_variance(), spec_.boundary);
        domain_ = resolve_domain(options_.log_domain, spec_.grid, spec_.kernel_variance());
        ops_.emplace(spec_.interactions, spec_.grid, options_.convolution);
        w0_ = reference_initial_weight(spec_.grid);
        const std::size_t n = spec_.populations();
        potentials_ = PotentialStack(n, spec_.steps, spec_.grid.size());
        messages_.reserve(n);
        marginals_.rho.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            messages_.emplace_back(potentials_.u[i], kernel_, domain_);
            marginals_.rho[i] = all_marginals(potentials_.u[i], messages_[i], w0_);
        }
    }

    const ProblemSpec& spec() const { return spec_; }
    const SolverOptions& options() const { return options_; }
    const SeparableKernel& kernel() const { return kernel_; }
    MessageDomain domain() const { return domain_; }
    double reference_weight() const { return w0_; }
    const PotentialStack& potentials() const { return potentials_; }
    const MarginalSet& marginals() const { return marginals_; }
    const PopulationMessages& messages(std::size_t i) const { return messages_[i]; }
    const InteractionOperators& operators() const { return *ops_; }

    double quadrature_weight() const { return options_.legacy_unweighted ? 1.0 : spec_.time_step(); }
    double cost_sign() const { return options_.literal_signs ? 1.0 : -1.0; }
    /// Multiplier carried by every cost entering the plan exponents.
    double cost_factor() const {
        return cost_sign() * (options_.viscosity_scaled_costs ? 1.0 / spec_.epsilon : 1.0);
    }

    /// Replace the potentials (e.g. loaded from disk) and rebuild messages and marginals.
    void set_potentials(PotentialStack u) {
        require(u.populations() == spec_.populations() && u.steps() == spec_.steps, ErrorCode::ShapeMismatch,
                "potential stack does not match problem");
        potentials_ = std::move(u);
        for (std::size_t i = 0; i < spec_.populations(); ++i) refresh(i);
    }

    void update_final_potential(std::size_t i) {
        const ScalarField& g = spec_.g[i];
        ScalarField& uK = potentials_.u[i][spec_.steps];
        for (std::size_t x = 0; x < g.size(); ++x) uK[x] = cost_factor() * g[x];
    }

    /// Interior potentials k = 1..K-1 from the given marginals of the other populations.
    void update_interior_potentials(std::size_t i, const MarginalTable& others) {
        const double theta = options_.damping;
        for (std::size_t k = 1; k < spec_.steps; ++k) {
            const ScalarField field = assemble_linearized_potential(i, k, *ops_, others, options_.symmetrize,
                                                                    quadrature_weight(), spec_.grid.size());
            ScalarField& u = potentials_.u[i][k];
            for (std::size_t x = 0; x < u.size(); ++x) {
                const double target = cost_factor() * field[x];
                u[x] = theta == 1.0 ? target : (1.0 - theta) * u[x] + theta * target;
            }
        }
    }

    /**
     * u_0 = log(rho0 / (w0 beta_0)) using the current backward messages.
     * Returns the L1 distance between the initial marginal and rho0 just before the update.
     */
    double update_initial_potential(std::size_t i) {
        const MassField& rho0 = spec_.rho0[i];
        const ScalarField& beta0 = messages_[i].beta()[0];
        ScalarField& u0 = potentials_.u[i][0];
        const bool log_domain = domain_ == MessageDomain::log;
        const double log_w0 = std::log(w0_);
        double before = 0.0;
        for (std::size_t x = 0; x < u0.size(); ++x) {
            const double log_beta = log_domain ? beta0[x] : std::log(beta0[x]);
            const double current = std::exp(log_w0 + u0[x] + log_beta);
            before += std::abs(current - rho0[x]);
            if (rho0[x] > 0.0) {
                require(std::isfinite(log_beta), ErrorCode::Infeasible,
                        "backward message vanishes where the initial density is positive "
                        "(population " + std::to_string(i) + ", cell " + std::to_string(x) + ")");
                u0[x] = std::log(rho0[x]) - log_w0 - log_beta;
            } else {
                u0[x] = kVacuumPotential;
            }
        }
        // A stale u_0 against fresh interior potentials can overshoot enormously;
        // saturate so the measurement stays finite.
        return std::min(before, std::numeric_limits<double>::max());
    }

    void refresh_backward(std::size_t i) { messages_[i].recompute_backward(potentials_.u[i], kernel_); }

    void refresh_forward(std::size_t i) {
        messages_[i].recompute_forward(potentials_.u[i], kernel_);
        marginals_.rho[i] = all_marginals(potentials_.u[i], messages_[i], w0_);
    }

    void refresh(std::size_t i) {
        refresh_backward(i);
        refresh_forward(i);
    }

    struct SweepStats {
        std::vector<double> marginal_error;
        double max_potential_change = 0.0;
    };

    /// One pass over all populations.
    SweepStats sweep() {
        const std::size_t n = spec_.populations();
        SweepStats stats;
        stats.marginal_error.resize(n, 0.0);
        std::optional<MarginalTable> frozen;
        if (options_.sweep == SweepOrder::jacobi) frozen = marginals_.rho;
        for (std::size_t i = 0; i < n; ++i) {
            const std::vector<ScalarField> previous = potentials_.u[i];
            update_interior_potentials(i, frozen ? *frozen : marginals_.rho);
            update_final_potential(i);
            refresh_backward(i);
            stats.marginal_error[i] = update_initial_potential(i);
            refresh_forward(i);
            for (std::size_t k = 0; k <= spec_.steps; ++k) {
                stats.max_potential_change =
                    std::max(stats.max_potential_change, sup_distance(previous[k], potentials_.u[i][k]));
            }
        }
        return stats;
    }

    using Observer = std::function<void(const Solver&, IterationRecord&)>;

    SolveReport solve(const Observer& observer = {}) {
        SolveReport report;
        double best = std::numeric_limits<double>::infinity();
        std::size_t above = 0;
        const auto start = std::chrono::steady_clock::now();
        for (std::size_t it = 1; it <= options_.max_iter; ++it) {
            SweepStats stats;
            try {
                stats = sweep();
            } catch (const Error& e) {
                if (e.code() != ErrorCode::Overflow) throw;
                report.status = SolveStatus::diverged;
                report.message = e.what();
                return report;
            }
            IterationRecord rec;
            rec.index = it;
            rec.marginal_error = stats.marginal_error;
            rec.max_potential_change = stats.max_potential_change;
            rec.convergence_error = stats.max_potential_change;
            for (double e : stats.marginal_error) rec.convergence_error += e;
            rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (observer) observer(*this, rec);
            report.iterations.push_back(rec);

            const double err = rec.convergence_error;
            if (!std::isfinite(err)) {
                report.status = SolveStatus::diverged;
                report.message = "non-finite convergence error";
                return report;
            }
            if (err < options_.tol) {
                report.status = SolveStatus::converged;
                return report;
            }
            best = std::min(best, err);
            above = err > 10.0 * best ? above + 1 : 0;
            if (above >= kDivergencePatience) {
                report.status = SolveStatus::diverged;
                report.message = "convergence error stayed 10x above its minimum for " +
                                 std::to_string(kDivergencePatience) + " sweeps";
                return report;
            }
        }
        report.status = SolveStatus::max_iter;
        return report;
    }

    /// Doubles held in solver-owned fields (potentials, messages, marginals).
    std::size_t field_storage() const {
        std::size_t total = 0;
        for (std::size_t i = 0; i < spec_.populations(); ++i) {
            for (const auto& f : potentials_.u[i]) total += f.size();
            for (const auto& f : messages_[i].alpha()) total += f.size();
            for (const auto& f : messages_[i].beta()) total += f.size();
            for (const auto& f : marginals_.rho[i]) total += f.size();
        }
        return total;
    }

private:
    ProblemSpec spec_;
    SolverOptions options_;
    SeparableKernel kernel_;
    MessageDomain domain_ = MessageDomain::linear;
    std::optional<InteractionOperators> ops_;
    double w0_ = 0.0;
    PotentialStack potentials_;
    std::vector<PopulationMessages> messages_;
    MarginalSet marginals_;
};

struct SolveResult {
    MarginalSet marginals;
    PotentialStack potentials;
    SolveReport report;
};

inline SolveResult solve(const ProblemSpec& spec, double tol = 1e-6, std::size_t max_iter = 2000,
                         SolverOptions options = {}) {
    options.tol = tol;
    options.max_iter = max_iter;
    Solver solver(spec, options);
    SolveReport report = solver.solve();
    return {solver.marginals(), solver.potentials(), std::move(report)};
}

} // namespace mpsink
