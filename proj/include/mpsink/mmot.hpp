#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mpsink/error.hpp"
#include "mpsink/grid.hpp"
#include "mpsink/heat_kernel.hpp"

namespace mpsink {

/// How forward/backward messages are stored: as values or as their logarithms.
enum class MessageDomain { linear, log };

enum class LogDomainMode { automatic, on, off };

/// The automatic rule switches to log storage once the kernel is narrower than two cells.
inline MessageDomain resolve_domain(LogDomainMode mode, const GridSpec& grid, double tau) {
    if (mode == LogDomainMode::on) return MessageDomain::log;
    if (mode == LogDomainMode::off) return MessageDomain::linear;
    double h = 0.0;
    for (double s : grid.spacing()) h = std::max(h, s);
    return tau < 4.0 * h * h ? MessageDomain::log : MessageDomain::linear;
}

/// Weight of each cell under the reference initial law (uniform probability).
inline double reference_initial_weight(const GridSpec& grid) { return 1.0 / static_cast<double>(grid.size()); }

/// Dual potentials u[i][k], i over populations and k = 0..K.
struct PotentialStack {
    std::vector<std::vector<ScalarField>> u;

    PotentialStack() = default;
    PotentialStack(std::size_t populations, std::size_t steps, std::size_t cells)
        : u(populations, std::vector<ScalarField>(steps + 1, ScalarField(cells, 0.0))) {}

    std::size_t populations() const { return u.size(); }
    std::size_t steps() const { return u.empty() ? 0 : u.front().size() - 1; }
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw Error(ErrorCode::Overflow, std::string(what) +
                                                 " produced a non-finite value; use log-domain messages");
        }
    }
}

// e^{u} * message (linear) or u + log message (log).
inline ScalarField tilt(const ScalarField& u, const ScalarField& msg, MessageDomain domain) {
    ScalarField out(u.size());
    if (domain == MessageDomain::linear) {
        for (std::size_t x = 0; x < u.size(); ++x) out[x] = std::exp(u[x]) * msg[x];
    } else {
        for (std::size_t x = 0; x < u.size(); ++x) out[x] = u[x] + msg[x];
    }
    return out;
}

inline ScalarField transport(const SeparableKernel& kernel, const ScalarField& f, MessageDomain domain) {
    if (domain == MessageDomain::linear) {
        ScalarField out = kernel_apply(kernel, f);
        check_finite(out.values, "message recursion");
        return out;
    }
    return kernel_apply_log(kernel, f);
}

inline double neutral(MessageDomain domain) { return domain == MessageDomain::linear ? 1.0 : 0.0; }

} // namespace detail

/// alpha_0 = 1, alpha_{k+1} = K (e^{u_k} alpha_k).
inline std::vector<ScalarField> forward_messages(std::span<const ScalarField> u, const SeparableKernel& kernel,
                                                 MessageDomain domain = MessageDomain::linear) {
    require(!u.empty(), ErrorCode::InvalidArgument, "forward_messages needs at least one potential");
    const std::size_t cells = kernel.grid.size();
    std::vector<ScalarField> alpha(u.size());
    alpha[0] = ScalarField(cells, detail::neutral(domain));
    for (std::size_t k = 0; k + 1 < u.size(); ++k) {
        check_compatible(kernel.grid, u[k].size(), "forward_messages");
        alpha[k + 1] = detail::transport(kernel, detail::tilt(u[k], alpha[k], domain), domain);
    }
    return alpha;
}

/// beta_K = 1, beta_{k-1} = K (e^{u_k} beta_k).
inline std::vector<ScalarField> backward_messages(std::span<const ScalarField> u, const SeparableKernel& kernel,
                                                  MessageDomain domain = MessageDomain::linear) {
    require(!u.empty(), ErrorCode::InvalidArgument, "backward_messages needs at least one potential");
    const std::size_t cells = kernel.grid.size();
    const std::size_t last = u.size() - 1;
    std::vector<ScalarField> beta(u.size());
    beta[last] = ScalarField(cells, detail::neutral(domain));
    for (std::size_t k = last; k > 0; --k) {
        check_compatible(kernel.grid, u[k].size(), "backward_messages");
        beta[k - 1] = detail::transport(kernel, detail::tilt(u[k], beta[k], domain), domain);
    }
    return beta;
}

/**
 * Forward and backward messages of one population's product-form plan
 * pi = w0 (prod_k e^{u_k(x_k)}) prod_k K(x_{k-1}, x_k).
 */
class PopulationMessages {
public:
    PopulationMessages() = default;
    PopulationMessages(std::span<const ScalarField> u, const SeparableKernel& kernel, MessageDomain domain)
        : domain_(domain) {
        recompute(u, kernel);
    }

    MessageDomain domain() const { return domain_; }
    const std::vector<ScalarField>& alpha() const { return alpha_; }
    const std::vector<ScalarField>& beta() const { return beta_; }

    void recompute(std::span<const ScalarField> u, const SeparableKernel& kernel) {
        alpha_ = forward_messages(u, kernel, domain_);
        beta_ = backward_messages(u, kernel, domain_);
    }

    void recompute_forward(std::span<const ScalarField> u, const SeparableKernel& kernel) {
        alpha_ = forward_messages(u, kernel, domain_);
    }

    void recompute_backward(std::span<const ScalarField> u, const SeparableKernel& kernel) {
        beta_ = backward_messages(u, kernel, domain_);
    }

    /// Refresh only the messages that depend on u[k].
    void potential_changed(std::span<const ScalarField> u, const SeparableKernel& kernel, std::size_t k) {
        require(alpha_.size() == u.size() && beta_.size() == u.size(), ErrorCode::InvalidArgument,
                "message cache does not match potentials");
        for (std::size_t j = k; j + 1 < u.size(); ++j) {
            alpha_[j + 1] = detail::transport(kernel, detail::tilt(u[j], alpha_[j], domain_), domain_);
        }
        for (std::size_t j = k; j > 0; --j) {
            beta_[j - 1] = detail::transport(kernel, detail::tilt(u[j], beta_[j], domain_), domain_);
        }
    }

    /// w0 e^{u_k} alpha_k beta_k.
    MassField marginal(std::span<const ScalarField> u, std::size_t k, double w0) const {
        const std::size_t cells = u[k].size();
        MassField out(cells);
        if (domain_ == MessageDomain::linear) {
            for (std::size_t x = 0; x < cells; ++x) out[x] = w0 * std::exp(u[k][x]) * alpha_[k][x] * beta_[k][x];
        } else {
            const double lw = std::log(w0);
            for (std::size_t x = 0; x < cells; ++x) out[x] = std::exp(lw + u[k][x] + alpha_[k][x] + beta_[k][x]);
        }
        for (std::size_t x = 0; x < cells; ++x) {
            require(!std::isnan(out[x]), ErrorCode::Overflow,
                    "marginal is NaN: messages and potentials are inconsistent");
        }
        return out;
    }

    /// Total plan mass evaluated through time slice k.
    double plan_mass(std::span<const ScalarField> u, std::size_t k, double w0) const {
        return marginal(u, k, w0).sum();
    }

private:
    MessageDomain domain_ = MessageDomain::linear;
    std::vector<ScalarField> alpha_;
    std::vector<ScalarField> beta_;
};

/// Marginals rho[i][k] of each population's plan.
struct MarginalSet {
    std::vector<std::vector<MassField>> rho;

    std::size_t populations() const { return rho.size(); }

    double mass(std::size_t i, std::size_t k) const { return rho[i][k].sum(); }

    MassField normalized(std::size_t i, std::size_t k) const { return normalize(rho[i][k]); }
};

inline MassField marginal(std::span<const ScalarField> u, const PopulationMessages& messages, std::size_t k,
                          double w0) {
    return messages.marginal(u, k, w0);
}

inline std::vector<MassField> all_marginals(std::span<const ScalarField> u, const PopulationMessages& messages,
                                            double w0) {
    std::vector<MassField> out;
    out.reserve(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) out.push_back(messages.marginal(u, k, w0));
    return out;
}

/// Relative mass tolerance for treating a plan as a probability.
inline constexpr double kPlanMassTolerance = 1e-9;

/**
 * H(pi | R) for the product-form plan: log(dpi/dR) = sum_k u_k(x_k), so the
 * entropy is sum_k <u_k, rho_k>.
 */
inline double plan_entropy(std::span<const ScalarField> u, std::span<const MassField> marginals) {
    require(u.size() == marginals.size(), ErrorCode::ShapeMismatch, "plan_entropy: potentials/marginals mismatch");
    const double mass = marginals.front().sum();
    require(std::abs(mass - 1.0) <= kPlanMassTolerance, ErrorCode::NotNormalized,
            "plan_entropy needs a probability plan (mass " + std::to_string(mass) + ")");
    double h = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) h += inner(u[k], marginals[k]);
    return h;
}

} // namespace mpsink
