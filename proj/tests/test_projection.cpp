#include "stylesplat/projection.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace stylesplat;

TEST(Cov3d, IdentityCase) {
    const auto cov = compute_cov3d<double>(Vec3<double>::Zero(), Vec4<double>(1, 0, 0, 0));
    EXPECT_TRUE(cov.isApprox(Mat3<double>::Identity(), 1e-15));
}

TEST(Cov3d, QuarterTurnAboutZSwapsAxes) {
    const double h = std::sqrt(0.5);
    const auto cov = compute_cov3d<double>(Vec3<double>(std::log(2.0), 0, 0), Vec4<double>(h, 0, 0, h));
    Mat3<double> expected = Mat3<double>::Zero();
    expected.diagonal() << 1, 4, 1;
    EXPECT_LT((cov - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Cov3d, RandomInputsArePsdAndMatchDirectProduct) {
    std::mt19937 rng(5);
    std::normal_distribution<double> n(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        const Vec3<double> ls(n(rng), n(rng), n(rng));
        const Vec4<double> q(n(rng), n(rng), n(rng), n(rng));
        const auto cov = compute_cov3d<double>(ls, q);
        // Independent route: Eigen's quaternion-to-matrix.
        const Eigen::Quaterniond eq(q[0], q[1], q[2], q[3]);
        const Mat3<double> r = eq.normalized().toRotationMatrix();
        const Mat3<double> s = ls.array().exp().matrix().asDiagonal();
        const Mat3<double> direct = r * s * s.transpose() * r.transpose();
        EXPECT_LT((cov - direct).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, direct.cwiseAbs().maxCoeff()));
        EXPECT_TRUE(cov.isApprox(cov.transpose()));
        const Eigen::SelfAdjointEigenSolver<Mat3<double>> es(cov);
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8);
    }
}

TEST(Project, NearPlaneCulls) {
    const auto cam = test_support::front_camera<double>(64, 64, 50.0);
    Gaussian3D<double> g;
    g.position = Vec3<double>(0, 0, 0);
    EXPECT_FALSE(project(g, cam).has_value());
    g.position = Vec3<double>(0, 0, 0.01);
    EXPECT_FALSE(project(g, cam).has_value());
    g.position = Vec3<double>(0, 0, -2.0);
    EXPECT_FALSE(project(g, cam).has_value());
}

TEST(Project, OpticalAxisLandsOnPrincipalPoint) {
    auto cam = test_support::front_camera<double>(64, 48, 40.0);
    cam.cx = 30.25;
    cam.cy = 20.5;
    Gaussian3D<double> g;
    g.position = Vec3<double>(0, 0, 3.0);
    const auto s = project(g, cam);
    ASSERT_TRUE(s);
    EXPECT_DOUBLE_EQ(s->mean2d[0], 30.25);
    EXPECT_DOUBLE_EQ(s->mean2d[1], 20.5);
    EXPECT_DOUBLE_EQ(s->depth, 3.0);
}

TEST(Project, IsotropicClosedForm) {
    const double f = 50.0, d = 4.0, sigma = 0.2;
    const auto cam = test_support::front_camera<double>(64, 64, f);
    Gaussian3D<double> g;
    g.position = Vec3<double>(0, 0, d);
    g.log_scale = Vec3<double>::Constant(std::log(sigma));
    g.rotation = Vec4<double>(0.3, 0.1, -0.7, 0.2);  // irrelevant for an isotropic Gaussian
    const auto s = project(g, cam);
    ASSERT_TRUE(s);
    const double expected = std::pow(f * sigma / d, 2) + 0.3;
    EXPECT_NEAR(s->cov2d(0, 0), expected, 1e-10);
    EXPECT_NEAR(s->cov2d(1, 1), expected, 1e-10);
    EXPECT_NEAR(s->cov2d(0, 1), 0.0, 1e-10);
    EXPECT_TRUE((s->conic * s->cov2d).isApprox(Mat2<double>::Identity(), 1e-12));
    EXPECT_EQ(s->radius, static_cast<int>(std::ceil(3 * std::sqrt(expected))));
}

TEST(Project, OffscreenFootprintCulls) {
    const auto cam = test_support::front_camera<double>(32, 32, 30.0);
    Gaussian3D<double> g;
    g.position = Vec3<double>(5.0, 0, 2.0);  // projects ~75 px right of the center
    g.log_scale = Vec3<double>::Constant(std::log(0.01));
    EXPECT_FALSE(project(g, cam).has_value());
    g.log_scale = Vec3<double>::Constant(std::log(3.0));  // big enough to spill into view
    EXPECT_TRUE(project(g, cam).has_value());
}

TEST(Project, RegularisedCovarianceIsPositiveDefinite) {
    const auto cam = test_support::front_camera<double>(64, 64, 60.0);
    const auto scene = test_support::random_scene<double>(9, {.count = 200, .log_scale_min = -12, .log_scale_max = 0});
    for (const auto& g : scene.gaussians) {
        const auto s = project(g, cam);
        if (!s) continue;
        EXPECT_EQ(s->cov2d(0, 1), s->cov2d(1, 0));
        const Eigen::SelfAdjointEigenSolver<Mat2<double>> es(s->cov2d);
        EXPECT_GE(es.eigenvalues().minCoeff(), 0.3 - 1e-9);
    }
}

// Screen-space chain rule, checked one screen quantity at a time against
// central differences of project().
TEST(ProjectBackward, MatchesFiniteDifferencesPerScreenQuantity) {
    std::mt19937 rng(12);
    std::normal_distribution<double> n(0, 1);
    auto cam = Camera<double>::look_at(Vec3<double>(0.3, -0.2, -0.5), Vec3<double>(0, 0, 3), Vec3<double>(0, -1, 0),
                                       55.0, 64, 64);
    const auto scene = test_support::random_scene<double>(21, {.count = 10});
    for (const auto& g0 : scene.gaussians) {
        const auto s0 = project(g0, cam);
        if (!s0) continue;
        Splat2DGrad<double> up;
        up.mean2d = Vec2<double>(n(rng), n(rng));
        const double off = n(rng);
        up.conic << n(rng), off, off, n(rng);
        up.color = Vec3<double>(n(rng), n(rng), n(rng));
        up.alpha_base = n(rng);
        GaussianGrad<double> analytic;
        project_backward(g0, cam, *s0, up, analytic);

        auto objective = [&](const Gaussian3D<double>& g) {
            const auto s = project(g, cam);
            return up.mean2d.dot(s->mean2d) + (up.conic.array() * s->conic.array()).sum() + up.color.dot(s->color) +
                   up.alpha_base * s->alpha_base;
        };
        for (int slot = 0; slot < test_support::kParamSlots; ++slot) {
            auto gp = g0, gm = g0;
            test_support::param(gp, slot) += 1e-6;
            test_support::param(gm, slot) -= 1e-6;
            const double fd = (objective(gp) - objective(gm)) / 2e-6;
            Gaussian3D<double> view;
            view.position = analytic.position;
            view.log_scale = analytic.log_scale;
            view.rotation = analytic.rotation;
            view.opacity_logit = analytic.opacity_logit;
            view.sh_coeffs = analytic.sh_coeffs;
            const double a = test_support::param(view, slot);
            EXPECT_NEAR(a, fd, 1e-5 * std::max(1.0, std::abs(fd))) << test_support::slot_field(slot) << " " << slot;
        }
    }
}
