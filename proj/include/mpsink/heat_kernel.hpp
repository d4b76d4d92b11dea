#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mpsink/error.hpp"
#include "mpsink/grid.hpp"

namespace mpsink {

enum class Boundary { reflecting, truncated };

/// Dense n x n matrix, row-major.
struct AxisMatrix {
    std::size_t n = 0;
    std::vector<double> entries;

    double operator()(std::size_t row, std::size_t col) const { return entries[row * n + col]; }
    double& operator()(std::size_t row, std::size_t col) { return entries[row * n + col]; }
};

/**
 * Discrete heat kernel H_tau on a tensor grid, stored as one symmetric matrix
 * per axis. `axis` holds the kernel weights and `log_axis` their logarithms
 * (computed directly, so far-field entries stay finite where the linear
 * weights underflow).
 */
struct SeparableKernel {
    std::vector<AxisMatrix> axis;
    std::vector<AxisMatrix> log_axis;
    double tau = 0.0;
    Boundary boundary = Boundary::reflecting;
    GridSpec grid;
};

namespace detail {

inline double log_sum_exp(const std::vector<double>& terms) {
    double top = -std::numeric_limits<double>::infinity();
    for (double t : terms) top = std::max(top, t);
    if (!std::isfinite(top)) return top;
    double s = 0.0;
    for (double t : terms) s += std::exp(t - top);
    return top + std::log(s);
}

// Number of image pairs per side. At least 5; more when the Gaussian is wide
// compared to the axis so the neglected images stay below roundoff.
inline int image_count(double tau, double length) {
    const double sigma = std::sqrt(tau);
    const int wide = static_cast<int>(std::ceil((9.0 * sigma / length + 1.0) / 2.0));
    return std::max(5, wide);
}

inline void build_axis(std::size_t n, double h, double tau, Boundary boundary, AxisMatrix& lin,
                       AxisMatrix& log) {
    const double length = h * static_cast<double>(n);
    const int images = image_count(tau, length);

    // Normalizer: the Gaussian summed over the whole (image-extended) lattice,
    // which is exactly what a column of the folded kernel sums to.
    const long lattice = static_cast<long>(n) * (2 * images + 2);
    std::vector<double> terms;
    terms.reserve(2 * lattice + 1);
    for (long j = -lattice; j <= lattice; ++j) {
        const double z = static_cast<double>(j) * h;
        terms.push_back(-z * z / (2.0 * tau));
    }
    const double log_norm = log_sum_exp(terms);

    lin.n = log.n = n;
    lin.entries.assign(n * n, 0.0);
    log.entries.assign(n * n, 0.0);
    std::vector<double> exps;
    for (std::size_t a = 0; a < n; ++a) {
        const double t = (static_cast<double>(a) + 0.5) * h;
        for (std::size_t b = 0; b <= a; ++b) {
            const double s = (static_cast<double>(b) + 0.5) * h;
            exps.clear();
            if (boundary == Boundary::reflecting) {
                for (int m = -images; m <= images; ++m) {
                    const double shift = 2.0 * m * length;
                    const double d1 = t - (shift + s);
                    const double d2 = t - (shift - s);
                    exps.push_back(-d1 * d1 / (2.0 * tau));
                    exps.push_back(-d2 * d2 / (2.0 * tau));
                }
            } else {
                exps.push_back(-(t - s) * (t - s) / (2.0 * tau));
            }
            const double value = log_sum_exp(exps) - log_norm;
            log(a, b) = log(b, a) = value;
            lin(a, b) = lin(b, a) = std::exp(value);
        }
    }
}

} // namespace detail

/**
 * Heat kernel with variance `tau` per axis. Reflecting boundaries fold the
 * Gaussian by the method of images, so each axis matrix is symmetric with unit
 * column sums; truncated boundaries keep the bare Gaussian and leak mass.
 */
inline SeparableKernel discretize_heat_kernel(const GridSpec& grid, double tau,
                                              Boundary boundary = Boundary::reflecting) {
    require(std::isfinite(tau) && tau > 0.0, ErrorCode::InvalidArgument, "heat kernel needs tau > 0");
    SeparableKernel k;
    k.tau = tau;
    k.boundary = boundary;
    k.grid = grid;
    k.axis.resize(grid.dims());
    k.log_axis.resize(grid.dims());
    for (std::size_t a = 0; a < grid.dims(); ++a) {
        detail::build_axis(grid.points(a), grid.spacing(a), tau, boundary, k.axis[a], k.log_axis[a]);
    }
    return k;
}

namespace detail {

// View a flat field as (outer, n, inner) around `axis` and contract the middle
// index with the matrix: out[o, i, r] = sum_j A[i, j] in[o, j, r].
inline void apply_axis(const AxisMatrix& m, const GridSpec& grid, std::size_t axis,
                       const std::vector<double>& in, std::vector<double>& out) {
    const std::size_t n = grid.points(axis);
    const std::size_t inner = grid.strides()[axis];
    const std::size_t outer = grid.size() / (n * inner);
    out.assign(in.size(), 0.0);
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = in.data() + o * n * inner;
        double* dst = out.data() + o * n * inner;
        if (inner == 1) {
            for (std::size_t i = 0; i < n; ++i) {
                const double* row = m.entries.data() + i * n;
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += row[j] * src[j];
                dst[i] = acc;
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                double* d = dst + i * inner;
                for (std::size_t j = 0; j < n; ++j) {
                    const double w = m(i, j);
                    const double* s = src + j * inner;
                    for (std::size_t r = 0; r < inner; ++r) d[r] += w * s[r];
                }
            }
        }
    }
}

// Log-domain counterpart: out[o, i, r] = logsumexp_j (logA[i, j] + in[o, j, r]).
inline void apply_axis_log(const AxisMatrix& logm, const GridSpec& grid, std::size_t axis,
                           const std::vector<double>& in, std::vector<double>& out) {
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    const std::size_t n = grid.points(axis);
    const std::size_t inner = grid.strides()[axis];
    const std::size_t outer = grid.size() / (n * inner);
    out.assign(in.size(), 0.0);
    std::vector<double> top(inner), acc(inner);
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = in.data() + o * n * inner;
        double* dst = out.data() + o * n * inner;
        for (std::size_t i = 0; i < n; ++i) {
            std::fill(top.begin(), top.end(), neg_inf);
            for (std::size_t j = 0; j < n; ++j) {
                const double w = logm(i, j);
                const double* s = src + j * inner;
                for (std::size_t r = 0; r < inner; ++r) top[r] = std::max(top[r], w + s[r]);
            }
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                const double w = logm(i, j);
                const double* s = src + j * inner;
                for (std::size_t r = 0; r < inner; ++r) {
                    if (top[r] != neg_inf) acc[r] += std::exp(w + s[r] - top[r]);
                }
            }
            double* d = dst + i * inner;
            for (std::size_t r = 0; r < inner; ++r) {
                d[r] = top[r] == neg_inf ? neg_inf : top[r] + std::log(acc[r]);
            }
        }
    }
}

} // namespace detail

/// Applies the kernel one tensor mode at a time.
template <class Tag>
Field<Tag> kernel_apply(const SeparableKernel& kernel, const Field<Tag>& field) {
    check_compatible(kernel.grid, field.size(), "kernel_apply");
    std::vector<double> cur = field.values, next;
    for (std::size_t a = 0; a < kernel.grid.dims(); ++a) {
        detail::apply_axis(kernel.axis[a], kernel.grid, a, cur, next);
        cur.swap(next);
    }
    return Field<Tag>(std::move(cur));
}

/// log(K exp(f)), evaluated with per-fiber log-sum-exp.
inline ScalarField kernel_apply_log(const SeparableKernel& kernel, const ScalarField& log_field) {
    check_compatible(kernel.grid, log_field.size(), "kernel_apply_log");
    std::vector<double> cur = log_field.values, next;
    for (std::size_t a = 0; a < kernel.grid.dims(); ++a) {
        detail::apply_axis_log(kernel.log_axis[a], kernel.grid, a, cur, next);
        cur.swap(next);
    }
    return ScalarField(std::move(cur));
}

/// Full M x M matrix of the kernel (row-major). Only sensible for tiny grids.
inline std::vector<double> dense_kernel_matrix(const SeparableKernel& kernel) {
    const GridSpec& g = kernel.grid;
    const std::size_t m = g.size();
    std::vector<double> dense(m * m, 1.0);
    for (std::size_t x = 0; x < m; ++x) {
        for (std::size_t y = 0; y < m; ++y) {
            double w = 1.0;
            for (std::size_t a = 0; a < g.dims(); ++a) w *= kernel.axis[a](g.axis_index(x, a), g.axis_index(y, a));
            dense[x * m + y] = w;
        }
    }
    return dense;
}

} // namespace mpsink
