#include "stylesplat/sh.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace stylesplat;

namespace {

Vec3<double> random_unit(std::mt19937& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3<double> v(n(rng), n(rng), n(rng));
    return v.normalized();
}

}  // namespace

TEST(SphericalHarmonics, DcOnlyIsDirectionIndependent) {
    std::array<double, kShCoeffCount> c{};
    c[0] = 0.7;
    c[1] = -0.2;
    c[2] = 1.3;
    std::mt19937 rng(1);
    for (int i = 0; i < 50; ++i) {
        const auto rgb = evaluate_sh(c, random_unit(rng));
        EXPECT_NEAR(rgb[0], 0.7 * 0.28209479 + 0.5, 1e-8);
        EXPECT_NEAR(rgb[1], -0.2 * 0.28209479 + 0.5, 1e-8);
        EXPECT_NEAR(rgb[2], 1.3 * 0.28209479 + 0.5, 1e-8);
    }
}

TEST(SphericalHarmonics, ZeroCoefficientsGiveMidGrey) {
    std::array<float, kShCoeffCount> c{};
    const auto rgb = evaluate_sh(c, Vec3<float>(0, 0, 1));
    EXPECT_EQ(rgb, Vec3<float>(0.5f, 0.5f, 0.5f));
}

TEST(SphericalHarmonics, ClampsBelowZero) {
    std::array<double, kShCoeffCount> c{};
    c[0] = -10.0;
    EXPECT_EQ(evaluate_sh(c, Vec3<double>(1, 0, 0))[0], 0.0);
}

// Parity: degree-l basis functions satisfy Y(-d) = (-1)^l Y(d).
TEST(SphericalHarmonics, AntipodalParity) {
    std::mt19937 rng(2);
    const int degree_of[kShBasisCount] = {0, 1, 1, 1, 2, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3};
    for (int trial = 0; trial < 100; ++trial) {
        const auto d = random_unit(rng);
        const auto a = sh_basis<double>(d);
        const auto b = sh_basis<double>(-d);
        for (int k = 0; k < kShBasisCount; ++k)
            EXPECT_NEAR(b[k], (degree_of[k] % 2 ? -1.0 : 1.0) * a[k], 1e-12) << "basis " << k;
    }
}

// Independent oracle: Gauss-Legendre x trapezoid quadrature on the sphere must
// find the 16 basis functions orthonormal, as real SH are.
TEST(SphericalHarmonics, BasisIsOrthonormalUnderQuadrature) {
    constexpr int n_theta = 24, n_phi = 48;
    // Gauss-Legendre nodes on [-1, 1] by Newton iteration on P_n.
    std::vector<double> nodes(n_theta), weights(n_theta);
    for (int i = 0; i < n_theta; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n_theta + 0.5));
        for (int it = 0; it < 100; ++it) {
            double p0 = 1, p1 = x;
            for (int k = 2; k <= n_theta; ++k) {
                const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            const double dp = n_theta * (x * p1 - p0) / (x * x - 1);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        double p0 = 1, p1 = x;
        for (int k = 2; k <= n_theta; ++k) {
            const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        const double dp = n_theta * (x * p1 - p0) / (x * x - 1);
        nodes[i] = x;
        weights[i] = 2.0 / ((1 - x * x) * dp * dp);
    }
    double gram[kShBasisCount][kShBasisCount] = {};
    for (int i = 0; i < n_theta; ++i) {
        const double z = nodes[i], r = std::sqrt(1 - z * z);
        for (int j = 0; j < n_phi; ++j) {
            const double phi = 2 * std::numbers::pi * j / n_phi;
            const auto b = sh_basis<double>(Vec3<double>(r * std::cos(phi), r * std::sin(phi), z));
            const double wq = weights[i] * 2 * std::numbers::pi / n_phi;
            for (int a = 0; a < kShBasisCount; ++a)
                for (int c = 0; c < kShBasisCount; ++c) gram[a][c] += wq * b[a] * b[c];
        }
    }
    for (int a = 0; a < kShBasisCount; ++a)
        for (int c = 0; c < kShBasisCount; ++c) EXPECT_NEAR(gram[a][c], a == c ? 1.0 : 0.0, 1e-10) << a << "," << c;
}

TEST(SphericalHarmonics, BasisGradientMatchesFiniteDifferences) {
    std::mt19937 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto d = random_unit(rng);
        const auto g = sh_basis_gradient<double>(d);
        for (int axis = 0; axis < 3; ++axis) {
            Vec3<double> dp = d, dm = d;
            dp[axis] += 1e-6;
            dm[axis] -= 1e-6;
            const auto bp = sh_basis<double>(dp), bm = sh_basis<double>(dm);
            for (int k = 0; k < kShBasisCount; ++k) EXPECT_NEAR(g[k][axis], (bp[k] - bm[k]) / 2e-6, 1e-7);
        }
    }
}
