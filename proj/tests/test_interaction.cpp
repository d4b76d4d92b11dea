#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "generators.hpp"
#include "mpsink/interaction.hpp"

using namespace mpsink;

namespace {

double eval_at(const InteractionKernel& k, std::vector<double> z) { return k(z); }

// out(x) = sum_y V(c_x - c_y) rho(y) with V evaluated at the actual center difference.
ScalarField double_loop(const InteractionKernel& k, const GridSpec& g, const MassField& rho) {
    ScalarField out(g.size(), 0.0);
    for (std::size_t x = 0; x < g.size(); ++x) {
        const auto cx = g.center_of(x);
        for (std::size_t y = 0; y < g.size(); ++y) {
            const auto cy = g.center_of(y);
            std::vector<double> z(g.dims());
            for (std::size_t a = 0; a < g.dims(); ++a) z[a] = cx[a] - cy[a];
            out[x] += k(z) * rho[y];
        }
    }
    return out;
}

InteractionKernel random_kernel(gen::Rng& rng, const GridSpec& g) {
    switch (rng.index(0, 3)) {
    case 0: return BallIndicator{rng.uniform(1.0, 200.0), rng.uniform(0.05, 0.6)};
    case 1: return TruncatedCoulomb{rng.uniform(5.0, 1000.0)};
    case 2: return TabulatedRadial{{0.0, 0.1, 0.4}, {rng.uniform(0.0, 5.0), rng.uniform(0.0, 5.0), 0.0}};
    default: {
        TabulatedTable t;
        t.points = g.points();
        t.spacing = g.spacing();
        std::size_t n = 1;
        for (std::size_t a = 0; a < g.dims(); ++a) n *= t.extent(a);
        for (std::size_t i = 0; i < n; ++i) t.values.push_back(rng.uniform(0.0, 3.0));
        return t;
    }
    }
}

} // namespace

TEST(Kernel, BallAndCoulombValues) {
    const InteractionKernel ball = BallIndicator{120.0, 0.2};
    EXPECT_EQ(eval_at(ball, {0.1, 0.0}), 120.0);
    EXPECT_EQ(eval_at(ball, {0.0, 0.25}), 0.0);
    const InteractionKernel coulomb = TruncatedCoulomb{1000.0};
    EXPECT_EQ(eval_at(coulomb, {0.0, 0.0}), 1000.0);
    EXPECT_DOUBLE_EQ(eval_at(coulomb, {0.1, 0.0}), 10.0);
    EXPECT_DOUBLE_EQ(eval_at(coulomb, {0.0006, 0.0008}), 1000.0);
}

TEST(Kernel, RadialTableInterpolatesLinearly) {
    const InteractionKernel k = TabulatedRadial{{0.0, 0.1, 0.3}, {4.0, 2.0, 1.0}};
    EXPECT_DOUBLE_EQ(eval_at(k, {0.05}), 3.0);
    EXPECT_DOUBLE_EQ(eval_at(k, {-0.2}), 1.5);
    EXPECT_DOUBLE_EQ(eval_at(k, {0.0, 0.9}), 1.0);
}

TEST(Kernel, RejectsInvalidParameters) {
    EXPECT_THROW(InteractionKernel(BallIndicator{-1.0, 0.2}), Error);
    EXPECT_THROW(InteractionKernel(BallIndicator{1.0, -0.2}), Error);
    EXPECT_THROW(InteractionKernel(TruncatedCoulomb{0.0}), Error);
    EXPECT_THROW(InteractionKernel(TruncatedCoulomb{INFINITY}), Error);
    EXPECT_THROW(InteractionKernel(TabulatedRadial{{0.0, 1.0}, {1.0, -1.0}}), Error);
    EXPECT_THROW(InteractionKernel(TabulatedRadial{{1.0, 0.0}, {1.0, 1.0}}), Error);
}

TEST(KernelProperty, NonnegativeAndFinite) {
    gen::Rng rng(31);
    const GridSpec g = build_grid(2, {6, 6});
    for (int trial = 0; trial < 40; ++trial) {
        const InteractionKernel k = random_kernel(rng, g);
        for (int s = 0; s < 50; ++s) {
            const double v = eval_at(k, {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
            EXPECT_GE(v, 0.0);
            EXPECT_TRUE(std::isfinite(v));
        }
        EXPECT_TRUE(std::isfinite(eval_at(k, {0.0, 0.0})));
    }
}

TEST(InteractionMatrix, DiagonalMustBeZero) {
    InteractionMatrix m(2);
    EXPECT_THROW(m.set(0, 0, BallIndicator{1.0, 0.1}), Error);
    EXPECT_NO_THROW(m.set(0, 1, BallIndicator{1.0, 0.1}));
    EXPECT_THROW(m.set(2, 0, BallIndicator{1.0, 0.1}), Error);
    EXPECT_TRUE(InteractionMatrix(3).all_zero());
    const InteractionMatrix all = InteractionMatrix::all_pairs(3, TruncatedCoulomb{5.0});
    for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(all(i, i).is_zero());
    EXPECT_FALSE(all(0, 2).is_zero());
}

TEST(Convolution, ZeroKernelGivesZero) {
    const GridSpec g = build_grid(2, {5, 5});
    gen::Rng rng(1);
    const ScalarField out = convolve_density(InteractionKernel(), g, rng.mass(g.size()));
    for (double v : out.values) EXPECT_EQ(v, 0.0);
}

TEST(Convolution, DiracSiftsTheKernel) {
    const GridSpec g = build_grid(2, {9, 7});
    const InteractionKernel k = TruncatedCoulomb{1000.0};
    const std::size_t y0 = 3 * 7 + 2;
    for (ConvolutionMethod m : {ConvolutionMethod::dense, ConvolutionMethod::fft}) {
        const ScalarField out = convolve_density(k, g, dirac_field(g, y0), m);
        for (std::size_t x = 0; x < g.size(); ++x) {
            const auto cx = g.center_of(x), cy = g.center_of(y0);
            EXPECT_NEAR(out[x], eval_at(k, {cx[0] - cy[0], cx[1] - cy[1]}), 1e-10);
        }
    }
}

TEST(Convolution, FastPathMatchesDoubleLoopOnBall) {
    const GridSpec g = build_grid(2, {8, 8});
    gen::Rng rng(2);
    const MassField rho = rng.mass(g.size());
    const InteractionKernel k = BallIndicator{120.0, 0.2};
    const ScalarField ref = double_loop(k, g, rho);
    const ScalarField fft = convolve_density(k, g, rho, ConvolutionMethod::fft);
    const ScalarField dense = convolve_density(k, g, rho, ConvolutionMethod::dense);
    for (std::size_t x = 0; x < g.size(); ++x) {
        EXPECT_NEAR(fft[x], ref[x], 1e-10);
        EXPECT_NEAR(dense[x], ref[x], 1e-12);
    }
}

TEST(ConvolutionProperty, FastAndDenseAgreeUpTo32x32) {
    gen::Rng rng(33);
    for (int trial = 0; trial < 40; ++trial) {
        const GridSpec g = rng.grid(trial % 3 == 0 ? 1 : 2, 2, 32);
        const InteractionKernel k = random_kernel(rng, g);
        const MassField rho = rng.sparse_mass(g.size());
        const ScalarField dense = convolve_density(k, g, rho, ConvolutionMethod::dense);
        const ScalarField fft = convolve_density(k, g, rho, ConvolutionMethod::fft);
        for (std::size_t x = 0; x < g.size(); ++x) EXPECT_NEAR(fft[x], dense[x], 1e-10);
    }
}

TEST(ConvolutionProperty, DenseMatchesDoubleLoopInThreeDimensions) {
    gen::Rng rng(34);
    for (int trial = 0; trial < 10; ++trial) {
        const GridSpec g = rng.grid(3, 2, 5);
        const InteractionKernel k = random_kernel(rng, g);
        const MassField rho = rng.mass(g.size());
        const ScalarField ref = double_loop(k, g, rho);
        for (ConvolutionMethod m : {ConvolutionMethod::dense, ConvolutionMethod::fft}) {
            const ScalarField out = convolve_density(k, g, rho, m);
            for (std::size_t x = 0; x < g.size(); ++x) EXPECT_NEAR(out[x], ref[x], 1e-10);
        }
    }
}

TEST(ConvolutionProperty, LinearMonotoneAndBounded) {
    gen::Rng rng(35);
    for (int trial = 0; trial < 30; ++trial) {
        const GridSpec g = rng.grid(2, 2, 12);
        const InteractionKernel k = random_kernel(rng, g);
        const MassField a = rng.mass(g.size()), b = rng.mass(g.size());
        const double s = rng.uniform(0.0, 2.0);
        MassField mix(g.size());
        for (std::size_t x = 0; x < g.size(); ++x) mix[x] = a[x] + s * b[x];
        const ScalarField ca = convolve_density(k, g, a), cb = convolve_density(k, g, b);
        const ScalarField cm = convolve_density(k, g, mix);
        for (std::size_t x = 0; x < g.size(); ++x) {
            EXPECT_NEAR(cm[x], ca[x] + s * cb[x], 1e-10);
            // mix >= a entrywise.
            EXPECT_GE(cm[x], ca[x] - 1e-12);
        }
    }
    const GridSpec g = build_grid(2, {20, 20});
    const InteractionKernel ball = BallIndicator{120.0, 0.2};
    for (int trial = 0; trial < 10; ++trial) {
        const ScalarField out = convolve_density(ball, g, rng.mass(g.size()));
        for (double v : out.values) EXPECT_LE(v, 120.0 + 1e-10);
    }
}

TEST(ConvolutionProperty, SymmetricKernelsAreSelfAdjoint) {
    gen::Rng rng(36);
    for (int trial = 0; trial < 30; ++trial) {
        const GridSpec g = rng.grid(2, 2, 16);
        InteractionKernel k = random_kernel(rng, g);
        if (!k.symmetric()) k = TruncatedCoulomb{50.0};
        const MassField r = rng.mass(g.size()), s = rng.mass(g.size());
        EXPECT_NEAR(inner(convolve_density(k, g, r), s), inner(convolve_density(k, g, s), r), 1e-10);
    }
}

TEST(ConvolutionProperty, AdjointFlipsTheDisplacement) {
    gen::Rng rng(37);
    for (int trial = 0; trial < 20; ++trial) {
        const GridSpec g = rng.grid(2, 2, 9);
        TabulatedTable t;
        t.points = g.points();
        t.spacing = g.spacing();
        std::size_t n = 1;
        for (std::size_t a = 0; a < g.dims(); ++a) n *= t.extent(a);
        for (std::size_t i = 0; i < n; ++i) t.values.push_back(rng.uniform(0.0, 3.0));
        const InteractionKernel k = t;
        ASSERT_FALSE(k.symmetric());
        for (ConvolutionMethod m : {ConvolutionMethod::dense, ConvolutionMethod::fft}) {
            const ConvolutionOperator op(k, g, m);
            const MassField r = rng.mass(g.size()), s = rng.mass(g.size());
            // <K r, s> = <r, K^T s>
            EXPECT_NEAR(inner(op.apply(r), s), inner(op.apply_adjoint(s), r), 1e-10);
        }
    }
}

TEST(Convolution, RejectsMismatchedGrid) {
    const GridSpec g = build_grid(2, {4, 4});
    EXPECT_THROW(convolve_density(BallIndicator{1.0, 0.2}, g, MassField(15, 1.0 / 15)), Error);
}

TEST(Convolution, AutomaticSwitchesToFftAbove4096Cells) {
    EXPECT_EQ(ConvolutionOperator(BallIndicator{1.0, 0.1}, build_grid(2, {64, 64})).method(), ConvolutionMethod::dense);
    EXPECT_EQ(ConvolutionOperator(BallIndicator{1.0, 0.1}, build_grid(2, {65, 64})).method(), ConvolutionMethod::fft);
}

TEST(Convolution, LoadsLatticeTableFromDisk) {
    const GridSpec g = build_grid(2, {3, 2});
    const std::size_t n = 5 * 3;
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = 0.5 * static_cast<double>(i);
    const auto path = std::filesystem::temp_directory_path() / "mpsink_table_test.bin";
    {
        std::ofstream out(path, std::ios::binary);
        for (double v : values) {
            unsigned char b[8];
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
            out.write(reinterpret_cast<const char*>(b), 8);
        }
    }
    const TabulatedTable t = load_tabulated_table(path.string(), g);
    EXPECT_EQ(t.values, values);
    // Offset (+1, -1) lives at row 1 + 2, column -1 + 1.
    const InteractionKernel k = t;
    EXPECT_DOUBLE_EQ(eval_at(k, {g.spacing(0), -g.spacing(1)}), values[3 * 3 + 0]);
    std::filesystem::resize_file(path, 8 * (n - 1));
    EXPECT_THROW(load_tabulated_table(path.string(), g), Error);
    std::filesystem::remove(path);
}

TEST(LinearizedPotential, ZeroKernelsGiveZero) {
    const GridSpec g = build_grid(2, {4, 4});
    gen::Rng rng(3);
    const MarginalTable marg{{rng.mass(16), rng.mass(16)}, {rng.mass(16), rng.mass(16)}};
    const ScalarField f = assemble_linearized_potential(0, 1, InteractionMatrix(2), g, marg, true, 0.5);
    for (double v : f.values) EXPECT_EQ(v, 0.0);
}

TEST(LinearizedPotential, SymmetrizedIsTwiceForSymmetricPairs) {
    const GridSpec g = build_grid(2, {6, 6});
    gen::Rng rng(4);
    const MarginalTable marg{{rng.mass(36)}, {rng.mass(36)}};
    const InteractionMatrix m = InteractionMatrix::all_pairs(2, BallIndicator{120.0, 0.2});
    const ScalarField one = assemble_linearized_potential(0, 0, m, g, marg, false, 1.0);
    const ScalarField two = assemble_linearized_potential(0, 0, m, g, marg, true, 1.0);
    for (std::size_t x = 0; x < 36; ++x) EXPECT_EQ(two[x], 2.0 * one[x]);
}

TEST(LinearizedPotential, ThreePopulationFieldIsSumOfBallConvolutions) {
    const GridSpec g = build_grid(2, {12, 12});
    const std::vector<double> w50{50.0, 50.0}, w80{80.0, 80.0};
    const MassField r2 = gaussian_field(g, std::vector<double>{0.8, 0.5}, w50);
    const MassField r3 = gaussian_field(g, std::vector<double>{0.5, 0.1}, w80);
    const MassField r1 = gaussian_field(g, std::vector<double>{0.2, 0.5}, w50);
    const InteractionKernel ball = BallIndicator{120.0, 0.2};
    const InteractionMatrix m = InteractionMatrix::all_pairs(3, ball);
    const MarginalTable marg{{r1}, {r2}, {r3}};
    const double w = 1.0 / 32.0;
    const ScalarField f = assemble_linearized_potential(0, 0, m, g, marg, false, w);
    const ScalarField a = double_loop(ball, g, r2), b = double_loop(ball, g, r3);
    for (std::size_t x = 0; x < g.size(); ++x) EXPECT_NEAR(f[x], w * (a[x] + b[x]), 1e-12);
}

TEST(LinearizedPotential, MissingMarginalIsReported) {
    const GridSpec g = build_grid(2, {4, 4});
    gen::Rng rng(5);
    const MarginalTable marg{{rng.mass(16), rng.mass(16)}, {rng.mass(16)}};
    const InteractionMatrix m = InteractionMatrix::all_pairs(2, BallIndicator{1.0, 0.3});
    EXPECT_THROW(assemble_linearized_potential(0, 1, m, g, marg, false, 1.0), Error);
}
