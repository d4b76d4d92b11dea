#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mpsink/error.hpp"

namespace mpsink {

struct Interval {
    double lo = 0.0;
    double hi = 1.0;

    double length() const { return hi - lo; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

/**
 * Cell-centered tensor-product grid. Flat indices are row-major with axis 0
 * slowest, so in 2D the flat index of cell (i, j) is i * n1 + j.
 */
class GridSpec {
public:
    GridSpec() = default;

    GridSpec(std::vector<std::size_t> points, std::vector<Interval> extent)
        : points_(std::move(points)), extent_(std::move(extent)) {
        require(!points_.empty(), ErrorCode::InvalidArgument, "grid needs at least one axis");
        require(extent_.size() == points_.size(), ErrorCode::InvalidArgument,
                "extent and point counts must have the same number of axes");
        spacing_.resize(points_.size());
        strides_.resize(points_.size());
        for (std::size_t a = 0; a < points_.size(); ++a) {
            require(points_[a] >= 2, ErrorCode::InvalidArgument,
                    "axis " + std::to_string(a) + " needs at least 2 points");
            const double len = extent_[a].length();
            require(std::isfinite(extent_[a].lo) && std::isfinite(extent_[a].hi) && len > 0.0,
                    ErrorCode::InvalidArgument, "axis " + std::to_string(a) + " has a degenerate extent");
            spacing_[a] = len / static_cast<double>(points_[a]);
        }
        std::size_t stride = 1;
        for (std::size_t a = points_.size(); a-- > 0;) {
            strides_[a] = stride;
            stride *= points_[a];
        }
        size_ = stride;
    }

    std::size_t dims() const { return points_.size(); }
    std::size_t size() const { return size_; }
    const std::vector<std::size_t>& points() const { return points_; }
    const std::vector<Interval>& extent() const { return extent_; }
    const std::vector<double>& spacing() const { return spacing_; }
    const std::vector<std::size_t>& strides() const { return strides_; }
    std::size_t points(std::size_t axis) const { return points_[axis]; }
    double spacing(std::size_t axis) const { return spacing_[axis]; }

    double cell_volume() const {
        return std::accumulate(spacing_.begin(), spacing_.end(), 1.0, std::multiplies<>());
    }

    double center(std::size_t axis, std::size_t index) const {
        return extent_[axis].lo + (static_cast<double>(index) + 0.5) * spacing_[axis];
    }

    std::size_t axis_index(std::size_t flat, std::size_t axis) const {
        return (flat / strides_[axis]) % points_[axis];
    }

    std::vector<double> center_of(std::size_t flat) const {
        std::vector<double> x(dims());
        for (std::size_t a = 0; a < dims(); ++a) x[a] = center(a, axis_index(flat, a));
        return x;
    }

    /// Flat index of the cell whose center is nearest to `x`.
    std::size_t nearest_cell(std::span<const double> x) const {
        require(x.size() == dims(), ErrorCode::ShapeMismatch, "point dimension does not match grid");
        std::size_t flat = 0;
        for (std::size_t a = 0; a < dims(); ++a) {
            const double s = (x[a] - extent_[a].lo) / spacing_[a] - 0.5;
            const auto idx = static_cast<long>(std::lround(s));
            const long clamped = std::clamp(idx, 0L, static_cast<long>(points_[a]) - 1);
            flat += static_cast<std::size_t>(clamped) * strides_[a];
        }
        return flat;
    }

    friend bool operator==(const GridSpec& a, const GridSpec& b) {
        return a.points_ == b.points_ && a.extent_ == b.extent_;
    }

private:
    std::vector<std::size_t> points_;
    std::vector<Interval> extent_;
    std::vector<double> spacing_;
    std::vector<std::size_t> strides_;
    std::size_t size_ = 0;
};

inline GridSpec build_grid(std::size_t dims, std::vector<std::size_t> points_per_axis,
                           std::vector<Interval> extent_per_axis = {}) {
    require(dims >= 1, ErrorCode::InvalidArgument, "grid dimension must be >= 1");
    require(points_per_axis.size() == dims, ErrorCode::InvalidArgument,
            "points_per_axis must have one entry per axis");
    if (extent_per_axis.empty()) extent_per_axis.assign(dims, Interval{0.0, 1.0});
    return GridSpec(std::move(points_per_axis), std::move(extent_per_axis));
}

struct MassTag {};
struct ScalarTag {};

/// Values on grid cells. The tag separates per-cell masses from scalar potentials.
template <class Tag>
struct Field {
    std::vector<double> values;

    Field() = default;
    explicit Field(std::size_t n, double fill = 0.0) : values(n, fill) {}
    explicit Field(std::vector<double> v) : values(std::move(v)) {}

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
    double* data() { return values.data(); }
    const double* data() const { return values.data(); }
    std::span<double> span() { return values; }
    std::span<const double> span() const { return values; }

    double sum() const {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }

    friend bool operator==(const Field&, const Field&) = default;
};

using MassField = Field<MassTag>;
using ScalarField = Field<ScalarTag>;

template <class Out, class In>
Out field_cast(const In& in) {
    return Out(in.values);
}

inline void check_compatible(const GridSpec& grid, std::size_t n, const char* what) {
    require(grid.size() == n, ErrorCode::ShapeMismatch,
            std::string(what) + ": field has " + std::to_string(n) + " entries, grid has " +
                std::to_string(grid.size()));
}

template <class Tag>
MassField normalize(const Field<Tag>& field) {
    double total = 0.0;
    for (double v : field.values) {
        require(std::isfinite(v) && v >= 0.0, ErrorCode::InvalidArgument,
                "normalize: entries must be finite and nonnegative");
        total += v;
    }
    require(total > 0.0, ErrorCode::InvalidArgument, "normalize: field has no positive entry");
    MassField out(field.size());
    for (std::size_t i = 0; i < field.size(); ++i) out[i] = field[i] / total;
    return out;
}

/// exp(-sum_a w_a (x_a - c_a)^2) at cell centers, rescaled to unit mass.
inline MassField gaussian_field(const GridSpec& grid, std::span<const double> center,
                                std::span<const double> axis_weights) {
    require(center.size() == grid.dims() && axis_weights.size() == grid.dims(),
            ErrorCode::ShapeMismatch, "gaussian_field: center/weights dimension mismatch");
    // Evaluate relative to the largest exponent so a peak far outside the
    // domain does not underflow every cell.
    std::vector<double> exponent(grid.size(), 0.0);
    for (std::size_t flat = 0; flat < grid.size(); ++flat) {
        double e = 0.0;
        for (std::size_t a = 0; a < grid.dims(); ++a) {
            const double dx = grid.center(a, grid.axis_index(flat, a)) - center[a];
            e -= axis_weights[a] * dx * dx;
        }
        exponent[flat] = e;
    }
    const double top = *std::max_element(exponent.begin(), exponent.end());
    ScalarField raw(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) raw[i] = std::exp(exponent[i] - top);
    MassField out = normalize(raw);
    // Keep every cell strictly positive so log-densities stay finite.
    for (double& v : out.values) v = std::max(v, std::numeric_limits<double>::min());
    return out;
}

inline MassField uniform_field(const GridSpec& grid) {
    return MassField(grid.size(), 1.0 / static_cast<double>(grid.size()));
}

inline MassField dirac_field(const GridSpec& grid, std::size_t flat) {
    require(flat < grid.size(), ErrorCode::InvalidArgument, "dirac_field: index out of range");
    MassField out(grid.size());
    out[flat] = 1.0;
    return out;
}

/// Flat-index permutation realizing the reflection x_a -> lo_a + hi_a - x_a
/// on the axes flagged in `axes`.
inline std::vector<std::size_t> reflection_permutation(const GridSpec& grid,
                                                       const std::vector<bool>& axes) {
    require(axes.size() == grid.dims(), ErrorCode::ShapeMismatch, "reflection axes mismatch");
    std::vector<std::size_t> perm(grid.size());
    for (std::size_t flat = 0; flat < grid.size(); ++flat) {
        std::size_t target = 0;
        for (std::size_t a = 0; a < grid.dims(); ++a) {
            std::size_t idx = grid.axis_index(flat, a);
            if (axes[a]) idx = grid.points(a) - 1 - idx;
            target += idx * grid.strides()[a];
        }
        perm[flat] = target;
    }
    return perm;
}

template <class Tag>
Field<Tag> apply_permutation(const Field<Tag>& f, const std::vector<std::size_t>& perm) {
    Field<Tag> out(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) out[perm[i]] = f[i];
    return out;
}

template <class A, class B>
double l1_distance(const Field<A>& a, const Field<B>& b) {
    require(a.size() == b.size(), ErrorCode::ShapeMismatch, "l1_distance: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s;
}

template <class A, class B>
double sup_distance(const Field<A>& a, const Field<B>& b) {
    require(a.size() == b.size(), ErrorCode::ShapeMismatch, "sup_distance: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, std::abs(a[i] - b[i]));
    return s;
}

template <class A, class B>
double inner(const Field<A>& a, const Field<B>& b) {
    require(a.size() == b.size(), ErrorCode::ShapeMismatch, "inner: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace mpsink
