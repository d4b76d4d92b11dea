#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "mpsink/error.hpp"
#include "mpsink/fft_convolution.hpp"
#include "mpsink/grid.hpp"

namespace mpsink {

struct ZeroKernel {};

/// strength if |z| < radius, else 0.
struct BallIndicator {
    double strength = 0.0;
    double radius = 0.0;
};

/// min(cap, 1/|z|).
struct TruncatedCoulomb {
    double cap = 0.0;
};

/// V(z) = f(|z|), piecewise linear through (radius[i], value[i]), constant outside.
struct TabulatedRadial {
    std::vector<double> radius;
    std::vector<double> value;
};

/**
 * V sampled on a displacement lattice: axis a covers offsets
 * -(n_a - 1) .. (n_a - 1) in steps of spacing[a], stored row-major over the
 * (2 n_1 - 1) x ... x (2 n_d - 1) box with axis 0 slowest.
 */
struct TabulatedTable {
    std::vector<std::size_t> points;
    std::vector<double> spacing;
    std::vector<double> values;

    std::size_t extent(std::size_t axis) const { return 2 * points[axis] - 1; }
};

using KernelVariant = std::variant<ZeroKernel, BallIndicator, TruncatedCoulomb, TabulatedRadial, TabulatedTable>;

class InteractionKernel {
public:
    InteractionKernel() = default;
    InteractionKernel(ZeroKernel k) : variant_(k) {}
    InteractionKernel(BallIndicator k) : variant_(k) {
        require(k.strength >= 0.0 && std::isfinite(k.strength), ErrorCode::InvalidArgument,
                "ball strength must be finite and >= 0");
        require(k.radius >= 0.0 && std::isfinite(k.radius), ErrorCode::InvalidArgument,
                "ball radius must be finite and >= 0");
    }
    InteractionKernel(TruncatedCoulomb k) : variant_(k) {
        require(k.cap > 0.0 && std::isfinite(k.cap), ErrorCode::InvalidArgument,
                "coulomb cap must be finite and > 0");
    }
    InteractionKernel(TabulatedRadial k) : variant_(std::move(k)) {
        const auto& t = std::get<TabulatedRadial>(variant_);
        require(!t.radius.empty() && t.radius.size() == t.value.size(), ErrorCode::InvalidArgument,
                "radial table needs matching nonempty radius/value arrays");
        require(std::is_sorted(t.radius.begin(), t.radius.end()), ErrorCode::InvalidArgument,
                "radial table radii must be sorted");
        check_values(t.value);
    }
    InteractionKernel(TabulatedTable k) : variant_(std::move(k)) {
        const auto& t = std::get<TabulatedTable>(variant_);
        require(!t.points.empty() && t.points.size() == t.spacing.size(), ErrorCode::InvalidArgument,
                "lattice table needs one spacing per axis");
        std::size_t n = 1;
        for (std::size_t a = 0; a < t.points.size(); ++a) n *= t.extent(a);
        require(t.values.size() == n, ErrorCode::ShapeMismatch, "lattice table has wrong number of values");
        check_values(t.values);
    }

    const KernelVariant& variant() const { return variant_; }
    bool is_zero() const { return std::holds_alternative<ZeroKernel>(variant_); }

    /// V(z) == V(-z) everywhere.
    bool symmetric() const {
        if (const auto* t = std::get_if<TabulatedTable>(&variant_)) {
            const std::size_t n = t->values.size();
            for (std::size_t i = 0; i < n; ++i) {
                if (t->values[i] != t->values[n - 1 - i]) return false;
            }
        }
        return true;
    }

    double operator()(std::span<const double> z) const;

private:
    static void check_values(const std::vector<double>& v) {
        for (double x : v) {
            require(std::isfinite(x) && x >= 0.0, ErrorCode::InvalidArgument,
                    "interaction values must be finite and >= 0");
        }
    }

    KernelVariant variant_{ZeroKernel{}};
};

inline double eval_kernel(const InteractionKernel& kernel, std::span<const double> z) {
    double r2 = 0.0;
    for (double c : z) r2 += c * c;
    const double r = std::sqrt(r2);
    return std::visit(
        [&](const auto& k) -> double {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, ZeroKernel>) {
                return 0.0;
            } else if constexpr (std::is_same_v<K, BallIndicator>) {
                return r < k.radius ? k.strength : 0.0;
            } else if constexpr (std::is_same_v<K, TruncatedCoulomb>) {
                return r > 0.0 ? std::min(k.cap, 1.0 / r) : k.cap;
            } else if constexpr (std::is_same_v<K, TabulatedRadial>) {
                const auto& rs = k.radius;
                if (r <= rs.front()) return k.value.front();
                if (r >= rs.back()) return k.value.back();
                const auto it = std::upper_bound(rs.begin(), rs.end(), r);
                const std::size_t hi = static_cast<std::size_t>(it - rs.begin());
                const std::size_t lo = hi - 1;
                const double w = (r - rs[lo]) / (rs[hi] - rs[lo]);
                return (1.0 - w) * k.value[lo] + w * k.value[hi];
            } else {
                require(z.size() == k.points.size(), ErrorCode::ShapeMismatch,
                        "displacement dimension does not match lattice table");
                std::size_t flat = 0;
                for (std::size_t a = 0; a < z.size(); ++a) {
                    const long off = std::lround(z[a] / k.spacing[a]);
                    const long n = static_cast<long>(k.points[a]);
                    if (off <= -n || off >= n) return 0.0;
                    flat = flat * k.extent(a) + static_cast<std::size_t>(off + n - 1);
                }
                return k.values[flat];
            }
        },
        kernel.variant());
}

inline double InteractionKernel::operator()(std::span<const double> z) const { return eval_kernel(*this, z); }

/// Samples V on the grid's displacement lattice (layout of TabulatedTable).
inline std::vector<double> displacement_table(const InteractionKernel& kernel, const GridSpec& grid) {
    const std::size_t d = grid.dims();
    std::vector<std::size_t> ext(d);
    std::size_t total = 1;
    for (std::size_t a = 0; a < d; ++a) {
        ext[a] = 2 * grid.points(a) - 1;
        total *= ext[a];
    }
    std::vector<double> table(total, 0.0);
    if (kernel.is_zero()) return table;
    std::vector<double> z(d);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat;
        for (std::size_t a = d; a-- > 0;) {
            const std::size_t idx = rem % ext[a];
            rem /= ext[a];
            const long off = static_cast<long>(idx) - static_cast<long>(grid.points(a) - 1);
            z[a] = static_cast<double>(off) * grid.spacing(a);
        }
        table[flat] = eval_kernel(kernel, z);
    }
    return table;
}

/// Reads a lattice table stored as raw little-endian float64 values.
inline TabulatedTable load_tabulated_table(const std::string& path, const GridSpec& grid) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open interaction table " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    TabulatedTable t;
    t.points = grid.points();
    t.spacing = grid.spacing();
    std::size_t n = 1;
    for (std::size_t a = 0; a < grid.dims(); ++a) n *= t.extent(a);
    require(bytes.size() == n * sizeof(double), ErrorCode::ShapeMismatch,
            "interaction table " + path + " has " + std::to_string(bytes.size()) + " bytes, expected " +
                std::to_string(n * sizeof(double)));
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        for (int b = 7; b >= 0; --b) {
            bits = (bits << 8) | static_cast<unsigned char>(bytes[i * 8 + static_cast<std::size_t>(b)]);
        }
        std::memcpy(&t.values[i], &bits, sizeof(double));
    }
    return t;
}

enum class ConvolutionMethod { automatic, dense, fft };

/// Grids with at most this many cells use direct summation.
inline constexpr std::size_t kDenseConvolutionLimit = 4096;

/**
 * Discrete convolution out(x) = sum_y V(x - y) mass(y) for one kernel on one
 * grid. The displacement table (and for the FFT path its spectrum) is built
 * once at construction.
 */
class ConvolutionOperator {
public:
    ConvolutionOperator(const InteractionKernel& kernel, const GridSpec& grid,
                        ConvolutionMethod method = ConvolutionMethod::automatic)
        : grid_(grid), zero_(kernel.is_zero()), even_(kernel.symmetric()) {
        if (method == ConvolutionMethod::automatic) {
            method = grid.size() <= kDenseConvolutionLimit ? ConvolutionMethod::dense : ConvolutionMethod::fft;
        }
        method_ = method;
        if (zero_) return;
        table_ = displacement_table(kernel, grid);
        if (method_ == ConvolutionMethod::fft) build_fft();
    }

    ConvolutionMethod method() const { return method_; }
    const GridSpec& grid() const { return grid_; }

    ScalarField apply(const MassField& rho) const {
        check_compatible(grid_, rho.size(), "convolve_density");
        ScalarField out(grid_.size(), 0.0);
        if (zero_) return out;
        if (method_ == ConvolutionMethod::dense) {
            apply_dense(rho, out);
        } else {
            apply_fft(rho, out);
        }
        return out;
    }

    /// out(x) = sum_y V(y - x) mass(y).
    ScalarField apply_adjoint(const MassField& rho) const {
        if (even_) return apply(rho);
        const std::vector<std::size_t> perm = reflection_permutation(grid_, std::vector<bool>(grid_.dims(), true));
        return apply_permutation(apply(apply_permutation(rho, perm)), perm);
    }

private:
    void apply_dense(const MassField& rho, ScalarField& out) const {
        const std::size_t d = grid_.dims();
        const std::size_t n_last = grid_.points(d - 1);
        const std::size_t m = grid_.size();
        const std::size_t prefixes = m / n_last;
        // Table strides.
        std::vector<std::size_t> tstride(d);
        std::size_t s = 1;
        for (std::size_t a = d; a-- > 0;) {
            tstride[a] = s;
            s *= 2 * grid_.points(a) - 1;
        }
        // For every y-prefix (all axes but the last), its table offset.
        std::vector<std::size_t> yoff(prefixes);
        for (std::size_t p = 0; p < prefixes; ++p) {
            const std::size_t flat = p * n_last;
            std::size_t off = 0;
            for (std::size_t a = 0; a + 1 < d; ++a) off += grid_.axis_index(flat, a) * tstride[a];
            yoff[p] = off;
        }
        // Reverse each last-axis row of the mass so the table row is read forward.
        std::vector<double> reversed(m);
        for (std::size_t p = 0; p < prefixes; ++p) {
            for (std::size_t j = 0; j < n_last; ++j) reversed[p * n_last + j] = rho[p * n_last + (n_last - 1 - j)];
        }
        for (std::size_t x = 0; x < m; ++x) {
            std::size_t base = 0;
            for (std::size_t a = 0; a < d; ++a) base += (grid_.axis_index(x, a) + grid_.points(a) - 1) * tstride[a];
            double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
            for (std::size_t p = 0; p < prefixes; ++p) {
                const double* row = table_.data() + (base - yoff[p] - (n_last - 1));
                const double* mass = reversed.data() + p * n_last;
                std::size_t j = 0;
                for (; j + 4 <= n_last; j += 4) {
                    acc0 += row[j] * mass[j];
                    acc1 += row[j + 1] * mass[j + 1];
                    acc2 += row[j + 2] * mass[j + 2];
                    acc3 += row[j + 3] * mass[j + 3];
                }
                for (; j < n_last; ++j) acc0 += row[j] * mass[j];
            }
            out[x] = (acc0 + acc1) + (acc2 + acc3);
        }
    }

    void build_fft() {
        const std::size_t d = grid_.dims();
        std::vector<int> shape(d);
        std::size_t padded = 1;
        for (std::size_t a = 0; a < d; ++a) {
            shape[a] = static_cast<int>(2 * grid_.points(a));
            padded *= static_cast<std::size_t>(shape[a]);
        }
        // Wrap displacement -n+1..n-1 into the periodic box of size 2n.
        std::vector<double> filter(padded, 0.0);
        std::vector<std::size_t> ext(d);
        for (std::size_t a = 0; a < d; ++a) ext[a] = 2 * grid_.points(a) - 1;
        for (std::size_t flat = 0; flat < table_.size(); ++flat) {
            std::size_t rem = flat, target = 0, stride = 1;
            std::vector<std::size_t> idx(d);
            for (std::size_t a = d; a-- > 0;) {
                idx[a] = rem % ext[a];
                rem /= ext[a];
            }
            for (std::size_t a = d; a-- > 0;) {
                const long off = static_cast<long>(idx[a]) - static_cast<long>(grid_.points(a) - 1);
                const long wrapped = off < 0 ? off + shape[a] : off;
                target += static_cast<std::size_t>(wrapped) * stride;
                stride *= static_cast<std::size_t>(shape[a]);
            }
            filter[target] = table_[flat];
        }
        shape_ = shape;
        fft_ = std::make_shared<detail::CircularConvolver>(shape, filter);
    }

    void apply_fft(const MassField& rho, ScalarField& out) const {
        const std::size_t d = grid_.dims();
        std::vector<double> buf(fft_->size(), 0.0);
        std::vector<std::size_t> pstride(d);
        std::size_t s = 1;
        for (std::size_t a = d; a-- > 0;) {
            pstride[a] = s;
            s *= static_cast<std::size_t>(shape_[a]);
        }
        auto padded_index = [&](std::size_t flat) {
            std::size_t p = 0;
            for (std::size_t a = 0; a < d; ++a) p += grid_.axis_index(flat, a) * pstride[a];
            return p;
        };
        for (std::size_t i = 0; i < grid_.size(); ++i) buf[padded_index(i)] = rho[i];
        fft_->convolve(buf);
        for (std::size_t i = 0; i < grid_.size(); ++i) out[i] = std::max(0.0, buf[padded_index(i)]);
    }

    GridSpec grid_;
    bool zero_ = false;
    bool even_ = true;
    ConvolutionMethod method_ = ConvolutionMethod::dense;
    std::vector<double> table_;
    std::vector<int> shape_;
    std::shared_ptr<detail::CircularConvolver> fft_;
};

inline ScalarField convolve_density(const InteractionKernel& kernel, const GridSpec& grid, const MassField& rho,
                                    ConvolutionMethod method = ConvolutionMethod::automatic) {
    return ConvolutionOperator(kernel, grid, method).apply(rho);
}

/// N x N kernels V^{i,j}; the diagonal is always Zero.
class InteractionMatrix {
public:
    InteractionMatrix() = default;
    explicit InteractionMatrix(std::size_t n) : n_(n), kernels_(n * n) {}

    std::size_t populations() const { return n_; }

    const InteractionKernel& operator()(std::size_t i, std::size_t j) const { return kernels_[i * n_ + j]; }

    void set(std::size_t i, std::size_t j, InteractionKernel k) {
        require(i < n_ && j < n_, ErrorCode::InvalidArgument, "interaction index out of range");
        require(i != j || k.is_zero(), ErrorCode::InvalidArgument,
                "self-interaction V^{i,i} must be Zero");
        kernels_[i * n_ + j] = std::move(k);
    }

    /// Same kernel on every off-diagonal pair.
    static InteractionMatrix all_pairs(std::size_t n, const InteractionKernel& k) {
        InteractionMatrix m(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) m.set(i, j, k);
        return m;
    }

    bool all_zero() const {
        return std::all_of(kernels_.begin(), kernels_.end(), [](const auto& k) { return k.is_zero(); });
    }

private:
    std::size_t n_ = 0;
    std::vector<InteractionKernel> kernels_;
};

/// Convolution operators for every pair, built once per solve.
class InteractionOperators {
public:
    InteractionOperators(const InteractionMatrix& matrix, const GridSpec& grid,
                         ConvolutionMethod method = ConvolutionMethod::automatic)
        : n_(matrix.populations()), ops_(n_ * n_) {
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t j = 0; j < n_; ++j) {
                if (!matrix(i, j).is_zero()) ops_[i * n_ + j] = std::make_shared<ConvolutionOperator>(matrix(i, j), grid, method);
            }
        }
    }

    std::size_t populations() const { return n_; }

    /// nullptr for Zero kernels.
    const ConvolutionOperator* get(std::size_t i, std::size_t j) const { return ops_[i * n_ + j].get(); }

private:
    std::size_t n_;
    std::vector<std::shared_ptr<ConvolutionOperator>> ops_;
};

/// Marginals indexed [population][time].
using MarginalTable = std::vector<std::vector<MassField>>;

/**
 * weight * sum_{j != i} V^{i,j} * rho^j_k. With `symmetrize` the adjoint term
 * sum_y V^{j,i}(y - x) rho^j_k(y) is added.
 */
inline ScalarField assemble_linearized_potential(std::size_t i, std::size_t k, const InteractionOperators& ops,
                                                 const MarginalTable& marginals, bool symmetrize, double weight,
                                                 std::size_t grid_size) {
    const std::size_t n = ops.populations();
    require(i < n, ErrorCode::InvalidArgument, "population index out of range");
    ScalarField out(grid_size, 0.0);
    auto accumulate = [&](const ConvolutionOperator* op, const MassField& rho, bool adjoint) {
        if (op == nullptr) return;
        const ScalarField c = adjoint ? op->apply_adjoint(rho) : op->apply(rho);
        for (std::size_t x = 0; x < grid_size; ++x) out[x] += c[x];
    };
    for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const bool needed = ops.get(i, j) != nullptr || (symmetrize && ops.get(j, i) != nullptr);
        if (!needed) continue;
        require(j < marginals.size() && k < marginals[j].size() && marginals[j][k].size() == grid_size,
                ErrorCode::InvalidArgument,
                "marginal of population " + std::to_string(j) + " at time " + std::to_string(k) +
                    " missing (sweep ordering bug)");
        const MassField& rho = marginals[j][k];
        accumulate(ops.get(i, j), rho, false);
        if (symmetrize) accumulate(ops.get(j, i), rho, true);
    }
    for (double& v : out.values) v *= weight;
    return out;
}

inline ScalarField assemble_linearized_potential(std::size_t i, std::size_t k, const InteractionMatrix& matrix,
                                                 const GridSpec& grid, const MarginalTable& marginals,
                                                 bool symmetrize, double weight) {
    return assemble_linearized_potential(i, k, InteractionOperators(matrix, grid), marginals, symmetrize, weight,
                                         grid.size());
}

} // namespace mpsink
