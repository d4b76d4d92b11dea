#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mpsink/error.hpp"
#include "mpsink/grid.hpp"
#include "mpsink/heat_kernel.hpp"
#include "mpsink/interaction.hpp"
#include "mpsink/mmot.hpp"
#include "mpsink/solver.hpp"

namespace mpsink {

/// s (log s - 1) + 1, with H(0) = 1.
inline double entropy_density(double s) {
    require(s >= 0.0, ErrorCode::InvalidArgument, "entropy density of a negative ratio");
    return s > 0.0 ? s * (std::log(s) - 1.0) + 1.0 : 1.0;
}

/// H(mu | sigma) = sum_x sigma(x) H(mu(x) / sigma(x)) for probability vectors.
inline double relative_entropy(const MassField& mu, const MassField& sigma) {
    require(mu.size() == sigma.size(), ErrorCode::ShapeMismatch, "relative_entropy: size mismatch");
    double h = 0.0;
    for (std::size_t x = 0; x < mu.size(); ++x) {
        if (sigma[x] > 0.0) {
            h += sigma[x] * entropy_density(mu[x] / sigma[x]);
        } else {
            require(mu[x] == 0.0, ErrorCode::InvalidArgument, "mu is not absolutely continuous w.r.t. sigma");
        }
    }
    return h;
}

/// (T/K) sum_{k=1}^{K-1} sum_{i != j} <V^{i,j} * rho^j_k, rho^i_k>.
inline double interaction_energy(const MarginalTable& marginals, const InteractionOperators& ops, double horizon,
                                 std::size_t steps) {
    const std::size_t n = ops.populations();
    double total = 0.0;
    for (std::size_t k = 1; k < steps; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const ConvolutionOperator* op = ops.get(i, j);
                if (i == j || op == nullptr) continue;
                total += inner(op->apply(marginals[j][k]), marginals[i][k]);
            }
        }
    }
    return horizon / static_cast<double>(steps) * total;
}

inline double interaction_energy(const MarginalTable& marginals, const InteractionMatrix& matrix,
                                 const GridSpec& grid, double horizon, std::size_t steps) {
    return interaction_energy(marginals, InteractionOperators(matrix, grid), horizon, steps);
}

/// sum_i <g^i, rho^i_K>.
inline double final_cost(const MarginalTable& marginals, const std::vector<ScalarField>& g) {
    require(marginals.size() == g.size(), ErrorCode::ShapeMismatch, "final_cost: population mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) total += inner(g[i], marginals[i].back());
    return total;
}

struct EnergyBreakdown {
    std::vector<double> entropic;
    double interaction_total = 0.0;
    double final_cost_total = 0.0;
    double grand_total = 0.0;
    /// H(rho^i_0 | reference initial law).
    std::vector<double> initial_entropy;
    /// entropic - initial_entropy; the kinetic-energy identity only holds for epsilon = 1.
    std::vector<double> eulerian_estimate;
    bool eulerian_valid = false;
};

inline EnergyBreakdown energy_breakdown(const ProblemSpec& spec, const PotentialStack& potentials,
                                       const MarginalTable& marginals, const InteractionOperators& ops) {
    EnergyBreakdown e;
    const std::size_t n = spec.populations();
    const MassField reference = uniform_field(spec.grid);
    for (std::size_t i = 0; i < n; ++i) {
        e.entropic.push_back(plan_entropy(potentials.u[i], marginals[i]));
        e.initial_entropy.push_back(relative_entropy(spec.rho0[i], reference));
        e.eulerian_estimate.push_back(e.entropic.back() - e.initial_entropy.back());
    }
    e.eulerian_valid = spec.epsilon == 1.0;
    e.interaction_total = interaction_energy(marginals, ops, spec.horizon, spec.steps);
    e.final_cost_total = final_cost(marginals, spec.g);
    e.grand_total = e.interaction_total + e.final_cost_total;
    for (double s : e.entropic) e.grand_total += s;
    return e;
}

inline EnergyBreakdown energy_breakdown(const Solver& solver) {
    return energy_breakdown(solver.spec(), solver.potentials(), solver.marginals().rho, solver.operators());
}

/// Per population and time: sum_{j != i} (V^{i,j} + V^{j,i}) * rho^j_k.
inline std::vector<std::vector<ScalarField>> assemble_H_fields(const MarginalTable& marginals,
                                                               const InteractionOperators& ops,
                                                               std::size_t grid_size) {
    const std::size_t n = ops.populations();
    std::vector<std::vector<ScalarField>> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t steps = marginals[i].size();
        for (std::size_t k = 0; k < steps; ++k) {
            out[i].push_back(assemble_linearized_potential(i, k, ops, marginals, true, 1.0, grid_size));
        }
    }
    return out;
}

inline std::vector<std::vector<ScalarField>> assemble_H_fields(const MarginalTable& marginals,
                                                               const InteractionMatrix& matrix,
                                                               const GridSpec& grid) {
    return assemble_H_fields(marginals, InteractionOperators(matrix, grid), grid.size());
}

/**
 * Hopf-Cole solution of the backward HJB equation
 *   -d_t u - (eps/2) Lap u + |grad u|^2 / 2 = H,  u(T) = g,
 * through v = exp(-u / eps), which solves the linear backward equation
 * d_t v + (eps/2) Lap v = (H / eps) v. Discretized by Lie splitting on the
 * solver's time grid: v_K = exp(-g/eps), v_k = exp(-dt H_k / eps) K v_{k+1}.
 */
struct HopfColeState {
    std::vector<ScalarField> v;
    std::vector<ScalarField> u;
    std::vector<ScalarField> H_fields;
    double epsilon = 1.0;
};

inline HopfColeState hopf_cole_backward(const std::vector<ScalarField>& H_fields, const ScalarField& g,
                                        double epsilon, double horizon, std::size_t steps, const GridSpec& grid,
                                        Boundary boundary = Boundary::reflecting) {
    require(H_fields.size() == steps + 1, ErrorCode::ShapeMismatch, "hopf_cole_backward needs K+1 H fields");
    require(epsilon > 0.0 && horizon > 0.0, ErrorCode::InvalidArgument, "hopf_cole_backward needs eps, T > 0");
    const std::size_t cells = g.size();
    for (const auto& h : H_fields) {
        require(h.size() == cells, ErrorCode::ShapeMismatch, "H field size mismatch");
        for (double x : h.values) require(std::isfinite(x), ErrorCode::InvalidArgument, "H fields must be finite");
    }
    const double dt = horizon / static_cast<double>(steps);
    const SeparableKernel kernel = discretize_heat_kernel(grid, epsilon * dt, boundary);

    HopfColeState s;
    s.epsilon = epsilon;
    s.H_fields = H_fields;
    s.v.assign(steps + 1, ScalarField(cells));
    for (std::size_t x = 0; x < cells; ++x) s.v[steps][x] = std::exp(-g[x] / epsilon);
    for (std::size_t k = steps; k-- > 0;) {
        ScalarField next = kernel_apply(kernel, s.v[k + 1]);
        for (std::size_t x = 0; x < cells; ++x) next[x] *= std::exp(-dt * H_fields[k][x] / epsilon);
        s.v[k] = std::move(next);
    }
    s.u.assign(steps + 1, ScalarField(cells));
    for (std::size_t k = 0; k <= steps; ++k) {
        for (std::size_t x = 0; x < cells; ++x) {
            require(s.v[k][x] > 0.0, ErrorCode::Overflow,
                    "Hopf-Cole transform underflowed; rerun with log-domain messages or smaller costs");
            s.u[k][x] = -epsilon * std::log(s.v[k][x]);
        }
    }
    return s;
}

/// -grad u by centered differences, one-sided at boundary cells; one field per axis.
inline std::vector<ScalarField> velocity_field(const GridSpec& grid, const ScalarField& u) {
    check_compatible(grid, u.size(), "velocity_field");
    std::vector<ScalarField> out(grid.dims(), ScalarField(grid.size()));
    for (std::size_t a = 0; a < grid.dims(); ++a) {
        const std::size_t n = grid.points(a);
        const std::size_t stride = grid.strides()[a];
        const double h = grid.spacing(a);
        for (std::size_t x = 0; x < grid.size(); ++x) {
            const std::size_t idx = grid.axis_index(x, a);
            double d;
            if (idx == 0) {
                d = (u[x + stride] - u[x]) / h;
            } else if (idx + 1 == n) {
                d = (u[x] - u[x - stride]) / h;
            } else {
                d = (u[x + stride] - u[x - stride]) / (2.0 * h);
            }
            out[a][x] = -d;
        }
    }
    return out;
}

enum class FpScheme {
    /// Doob transform by the Hopf-Cole function: rho_{k+1} = v_{k+1} K(rho_k / K v_{k+1}).
    h_transform,
    /// Heat kernel tilted by the finite-difference drift -grad u_{k+1} at the departure cell.
    gradient_drift,
};

namespace detail {

inline MassField fp_step_h_transform(const SeparableKernel& kernel, const MassField& rho, const ScalarField& v_next) {
    const ScalarField kv = kernel_apply(kernel, v_next);
    MassField ratio(rho.size());
    for (std::size_t x = 0; x < rho.size(); ++x) ratio[x] = kv[x] > 0.0 ? rho[x] / kv[x] : 0.0;
    MassField moved = kernel_apply(kernel, ratio);
    for (std::size_t x = 0; x < rho.size(); ++x) moved[x] *= v_next[x];
    return normalize(moved);
}

inline MassField fp_step_gradient(const SeparableKernel& kernel, const MassField& rho,
                                  const std::vector<ScalarField>& drift, double epsilon) {
    const GridSpec& grid = kernel.grid;
    const std::size_t d = grid.dims();
    MassField out(grid.size(), 0.0);
    std::vector<std::vector<double>> axis_weights(d);
    for (std::size_t x = 0; x < grid.size(); ++x) {
        if (rho[x] == 0.0) continue;
        for (std::size_t a = 0; a < d; ++a) {
            const std::size_t n = grid.points(a);
            const std::size_t xa = grid.axis_index(x, a);
            auto& w = axis_weights[a];
            w.assign(n, 0.0);
            // exp(b (y - x) / eps) shifts the Gaussian by b * dt; the dt-only
            // factor cancels in the normalization below.
            double top = -std::numeric_limits<double>::infinity();
            for (std::size_t ya = 0; ya < n; ++ya) {
                const double dy = grid.center(a, ya) - grid.center(a, xa);
                w[ya] = kernel.log_axis[a](xa, ya) + drift[a][x] * dy / epsilon;
                top = std::max(top, w[ya]);
            }
            double s = 0.0;
            for (double& wy : w) {
                wy = std::exp(wy - top);
                s += wy;
            }
            for (double& wy : w) wy /= s;
        }
        for (std::size_t y = 0; y < grid.size(); ++y) {
            double w = rho[x];
            for (std::size_t a = 0; a < d; ++a) w *= axis_weights[a][grid.axis_index(y, a)];
            out[y] += w;
        }
    }
    return normalize(out);
}

} // namespace detail

/**
 * Propagates rho0 forward with the control implied by the Hopf-Cole value
 * function and returns the per-k L1 distance to the given marginals.
 */
inline std::vector<double> fp_forward_consistency(const SeparableKernel& kernel, const MassField& rho0,
                                                  const std::vector<MassField>& marginals, const HopfColeState& hc,
                                                  FpScheme scheme = FpScheme::h_transform) {
    const std::size_t steps = marginals.size() - 1;
    require(hc.v.size() == steps + 1, ErrorCode::ShapeMismatch, "Hopf-Cole state does not match marginals");
    std::vector<double> residual(steps + 1);
    MassField rho = rho0;
    residual[0] = l1_distance(rho, normalize(marginals[0]));
    for (std::size_t k = 0; k < steps; ++k) {
        if (scheme == FpScheme::h_transform) {
            rho = detail::fp_step_h_transform(kernel, rho, hc.v[k + 1]);
        } else {
            rho = detail::fp_step_gradient(kernel, rho, velocity_field(kernel.grid, hc.u[k + 1]), hc.epsilon);
        }
        residual[k + 1] = l1_distance(rho, normalize(marginals[k + 1]));
    }
    return residual;
}

/**
 * Cross-checks a solver state against its HJB counterpart: the running cost
 * and terminal cost the solver exponentiates are converted to the
 * (eps/2)-viscosity HJB convention, solved by Hopf-Cole, and the resulting
 * control is used to transport rho0.
 */
inline std::vector<std::vector<double>> fp_forward_consistency(const Solver& solver,
                                                               FpScheme scheme = FpScheme::h_transform) {
    const ProblemSpec& spec = solver.spec();
    const double eps = spec.epsilon;
    const std::size_t n = spec.populations();
    const std::size_t cells = spec.grid.size();
    // Solver exponents: u_K = c g, u_k = c w F_k. Hopf-Cole uses exp(-g_eff/eps), exp(-dt H_eff/eps).
    const double c = solver.cost_factor();
    const double w = solver.quadrature_weight();
    const double dt = spec.time_step();
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<ScalarField> H(spec.steps + 1, ScalarField(cells, 0.0));
        for (std::size_t k = 1; k < spec.steps; ++k) {
            const ScalarField F = assemble_linearized_potential(i, k, solver.operators(), solver.marginals().rho,
                                                                solver.options().symmetrize, 1.0, cells);
            for (std::size_t x = 0; x < cells; ++x) H[k][x] = -c * eps * w * F[x] / dt;
        }
        ScalarField g_eff(cells);
        for (std::size_t x = 0; x < cells; ++x) g_eff[x] = -c * eps * spec.g[i][x];
        const HopfColeState hc = hopf_cole_backward(H, g_eff, eps, spec.horizon, spec.steps, spec.grid, spec.boundary);
        out.push_back(fp_forward_consistency(solver.kernel(), spec.rho0[i], solver.marginals().rho[i], hc, scheme));
    }
    return out;
}

/// m_k = <chi_{|z|<r} * rho^j_k, rho^i_k> on normalized marginals.
inline std::vector<double> separation_metric(const MarginalTable& marginals, std::size_t i, std::size_t j,
                                             double radius, const GridSpec& grid) {
    require(i != j, ErrorCode::InvalidArgument, "separation_metric needs two different populations");
    const ConvolutionOperator ball(BallIndicator{1.0, radius}, grid);
    std::vector<double> out;
    for (std::size_t k = 0; k < marginals[i].size(); ++k) {
        const MassField a = normalize(marginals[i][k]);
        const MassField b = normalize(marginals[j][k]);
        out.push_back(std::clamp(inner(ball.apply(b), a), 0.0, 1.0));
    }
    return out;
}

inline std::vector<double> barycenter(const GridSpec& grid, const MassField& field) {
    check_compatible(grid, field.size(), "barycenter");
    std::vector<double> b(grid.dims(), 0.0);
    double total = 0.0;
    for (std::size_t x = 0; x < field.size(); ++x) {
        total += field[x];
        for (std::size_t a = 0; a < grid.dims(); ++a) b[a] += field[x] * grid.center(a, grid.axis_index(x, a));
    }
    require(total > 0.0, ErrorCode::InvalidArgument, "barycenter of an empty field");
    for (double& c : b) c /= total;
    return b;
}

/// Mass-weighted mean squared distance to the barycenter.
inline double second_moment(const GridSpec& grid, const MassField& field) {
    const std::vector<double> b = barycenter(grid, field);
    double total = 0.0, m2 = 0.0;
    for (std::size_t x = 0; x < field.size(); ++x) {
        double r2 = 0.0;
        for (std::size_t a = 0; a < grid.dims(); ++a) {
            const double dx = grid.center(a, grid.axis_index(x, a)) - b[a];
            r2 += dx * dx;
        }
        m2 += field[x] * r2;
        total += field[x];
    }
    return m2 / total;
}

/// L1 distance between rho_i and the reflection of rho_j along the flagged axes.
inline double mirror_distance(const GridSpec& grid, const MassField& rho_i, const MassField& rho_j,
                              const std::vector<bool>& axes) {
    return l1_distance(rho_i, apply_permutation(rho_j, reflection_permutation(grid, axes)));
}

} // namespace mpsink
