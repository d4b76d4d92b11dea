#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mpsink/error.hpp"
#include "mpsink/grid.hpp"
#include "mpsink/heat_kernel.hpp"
#include "mpsink/interaction.hpp"

// Brute-force references for tiny instances. Everything here enumerates the
// full path space, so it is only meant for tests and `verify-oracle`.

namespace mpsink {

/// Largest path-space size materialize_plan accepts.
inline constexpr double kOraclePathLimit = 1e7;

/// Path measure over (x_0, ..., x_K), row-major with x_0 slowest.
struct DensePlan {
    std::size_t cells = 0;
    std::size_t steps = 0;
    std::vector<double> weights;

    std::size_t paths() const { return weights.size(); }
};

namespace detail {

inline std::size_t checked_path_count(std::size_t cells, std::size_t steps) {
    const double count = std::pow(static_cast<double>(cells), static_cast<double>(steps + 1));
    require(count <= kOraclePathLimit, ErrorCode::SizeGuard,
            "oracle path space has " + std::to_string(count) + " paths (limit 1e7)");
    return static_cast<std::size_t>(std::llround(count));
}

// Visits every path with its reference weight (without w0) and its summed tilt.
template <class Visit>
void for_each_path(std::size_t cells, std::size_t steps, const std::vector<double>& kernel,
                   std::span<const ScalarField> u, Visit&& visit) {
    const std::size_t total = checked_path_count(cells, steps);
    std::vector<std::size_t> path(steps + 1, 0);
    for (std::size_t p = 0; p < total; ++p) {
        std::size_t rem = p;
        for (std::size_t k = steps + 1; k-- > 0;) {
            path[k] = rem % cells;
            rem /= cells;
        }
        double ref = 1.0;
        double tilt = 0.0;
        for (std::size_t k = 0; k <= steps; ++k) {
            if (k > 0) ref *= kernel[path[k - 1] * cells + path[k]];
            if (!u.empty()) tilt += u[k][path[k]];
        }
        visit(p, path, ref, tilt);
    }
}

} // namespace detail

/// pi(x) = w0 prod_k e^{u_k(x_k)} prod_k K(x_{k-1}, x_k).
inline DensePlan materialize_plan(std::span<const ScalarField> u, const SeparableKernel& kernel, double w0) {
    const std::size_t cells = kernel.grid.size();
    const std::size_t steps = u.size() - 1;
    DensePlan plan{cells, steps, std::vector<double>(detail::checked_path_count(cells, steps))};
    const std::vector<double> k = dense_kernel_matrix(kernel);
    detail::for_each_path(cells, steps, k, u, [&](std::size_t p, const auto&, double ref, double tilt) {
        plan.weights[p] = w0 * ref * std::exp(tilt);
    });
    return plan;
}

/// Reference path measure R = w0 prod_k K(x_{k-1}, x_k).
inline DensePlan materialize_reference(const SeparableKernel& kernel, std::size_t steps, double w0) {
    const std::size_t cells = kernel.grid.size();
    std::vector<ScalarField> zero(steps + 1, ScalarField(cells, 0.0));
    return materialize_plan(zero, kernel, w0);
}

inline MassField direct_marginal(const DensePlan& plan, std::size_t k) {
    require(k <= plan.steps, ErrorCode::InvalidArgument, "direct_marginal: time index out of range");
    MassField out(plan.cells, 0.0);
    std::size_t stride = 1;
    for (std::size_t j = k; j < plan.steps; ++j) stride *= plan.cells;
    for (std::size_t p = 0; p < plan.paths(); ++p) out[(p / stride) % plan.cells] += plan.weights[p];
    return out;
}

/// sum_paths pi log(pi / R).
inline double direct_entropy(const DensePlan& plan, const DensePlan& reference) {
    require(plan.paths() == reference.paths(), ErrorCode::ShapeMismatch, "direct_entropy: plan size mismatch");
    double h = 0.0;
    for (std::size_t p = 0; p < plan.paths(); ++p) {
        const double pi = plan.weights[p];
        if (pi == 0.0) continue;
        require(reference.weights[p] > 0.0, ErrorCode::InvalidArgument, "plan is not dominated by the reference");
        h += pi * std::log(pi / reference.weights[p]);
    }
    return h;
}

/// out(x) = sum_y V(x - y) mass(y), evaluating V at every pair of cell centers.
inline ScalarField bruteforce_convolution(const InteractionKernel& kernel, const GridSpec& grid,
                                          const MassField& rho, bool adjoint = false) {
    ScalarField out(grid.size(), 0.0);
    if (kernel.is_zero()) return out;
    std::vector<double> z(grid.dims());
    for (std::size_t x = 0; x < grid.size(); ++x) {
        double s = 0.0;
        for (std::size_t y = 0; y < grid.size(); ++y) {
            for (std::size_t a = 0; a < grid.dims(); ++a) {
                const double dz = (static_cast<double>(grid.axis_index(x, a)) -
                                   static_cast<double>(grid.axis_index(y, a))) * grid.spacing(a);
                z[a] = adjoint ? -dz : dz;
            }
            s += kernel(z) * rho[y];
        }
        out[x] = s;
    }
    return out;
}

/// Convention of the linearized costs, mirroring the solver options.
struct InnerCostConvention {
    double interior_factor = 1.0; // multiplies the summed interaction field at k = 1..K-1
    double final_factor = -1.0;   // multiplies g at k = K
    bool symmetrize = false;
};

struct InnerSolution {
    std::vector<ScalarField> u;
    std::vector<MassField> marginals;
    double entropy = 0.0;
    std::size_t iterations = 0;
    double constraint_error = 0.0;
};

/**
 * Solves the single-population problem obtained by freezing the other
 * populations' marginals, on the materialized path space: the interior and
 * final tilts are computed by pairwise summation and the initial tilt is
 * fitted by plain Sinkhorn on the dense plan's first marginal.
 */
inline InnerSolution inner_subproblem_bruteforce(std::size_t i, const InteractionMatrix& interactions,
                                                 const std::vector<std::vector<MassField>>& frozen,
                                                 const MassField& rho0, const ScalarField& g,
                                                 const SeparableKernel& kernel, double w0,
                                                 const InnerCostConvention& conv, double tol = 1e-14,
                                                 std::size_t max_iter = 100000) {
    const GridSpec& grid = kernel.grid;
    const std::size_t cells = grid.size();
    const std::size_t steps = frozen.at(i).size() - 1;
    require(steps >= 1, ErrorCode::InvalidArgument, "inner subproblem needs K >= 1");
    const std::size_t n = interactions.populations();
    InnerSolution sol;
    sol.u.assign(steps + 1, ScalarField(cells, 0.0));
    for (std::size_t k = 1; k < steps; ++k) {
        ScalarField field(cells, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const ScalarField a = bruteforce_convolution(interactions(i, j), grid, frozen[j][k]);
            for (std::size_t x = 0; x < cells; ++x) field[x] += a[x];
            if (conv.symmetrize) {
                const ScalarField b = bruteforce_convolution(interactions(j, i), grid, frozen[j][k], true);
                for (std::size_t x = 0; x < cells; ++x) field[x] += b[x];
            }
        }
        for (std::size_t x = 0; x < cells; ++x) sol.u[k][x] = conv.interior_factor * field[x];
    }
    for (std::size_t x = 0; x < cells; ++x) sol.u[steps][x] = conv.final_factor * g[x];

    // Paths factor as e^{u_0(x_0)} times a tail weight that only depends on x_0.
    const std::vector<double> kmat = dense_kernel_matrix(kernel);
    std::vector<double> tail(cells, 0.0);
    std::vector<ScalarField> tail_u = sol.u;
    tail_u[0] = ScalarField(cells, 0.0);
    detail::for_each_path(cells, steps, kmat, tail_u, [&](std::size_t, const auto& path, double ref, double tilt) {
        tail[path[0]] += w0 * ref * std::exp(tilt);
    });
    for (std::size_t it = 1; it <= max_iter; ++it) {
        double err = 0.0;
        for (std::size_t x = 0; x < cells; ++x) {
            const double m = std::exp(sol.u[0][x]) * tail[x];
            err += std::abs(m - rho0[x]);
            if (rho0[x] > 0.0) {
                require(tail[x] > 0.0, ErrorCode::Infeasible, "oracle: unreachable initial cell");
                sol.u[0][x] += std::log(rho0[x]) - std::log(m);
            } else {
                sol.u[0][x] = -1e4;
            }
        }
        sol.iterations = it;
        sol.constraint_error = err;
        if (err < tol) break;
        require(it < max_iter, ErrorCode::NoConvergence,
                "oracle Sinkhorn did not reach tol " + std::to_string(tol) + " in " + std::to_string(max_iter) +
                    " iterations");
    }
    const DensePlan plan = materialize_plan(sol.u, kernel, w0);
    for (std::size_t k = 0; k <= steps; ++k) sol.marginals.push_back(direct_marginal(plan, k));
    sol.entropy = direct_entropy(plan, materialize_reference(kernel, steps, w0));
    return sol;
}

} // namespace mpsink
