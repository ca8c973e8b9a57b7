#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ionimp/metrics.hpp"

using namespace ionimp;
using namespace ionimp::metrics;

namespace {

std::vector<Vec2> grid_points(std::size_t rows, std::size_t cols, double pitch, Vec2 origin = {}, double rot = 0) {
    std::vector<Vec2> out;
    const double cr = std::cos(rot), sr = std::sin(rot);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const double u = pitch * static_cast<double>(c), v = pitch * static_cast<double>(r);
            out.push_back(origin + Vec2{cr * u - sr * v, sr * u + cr * v});
        }
    return out;
}

GridModel fixed_grid(std::size_t rows, std::size_t cols) {
    GridModel g;
    g.rows = rows;
    g.cols = cols;
    return g;
}

}  // namespace

TEST(RegisterGrid, ExactGrid) {
    const auto pts = grid_points(3, 4, 2000);
    const auto reg = register_grid(pts, 2000);
    EXPECT_EQ(reg.grid.rows, 3u);
    EXPECT_EQ(reg.grid.cols, 4u);
    EXPECT_NEAR(reg.grid.rotation, 0, 1e-15);
    for (const auto& r : reg.residuals) {
        EXPECT_NEAR(r.x, 0, 1e-9);
        EXPECT_NEAR(r.y, 0, 1e-9);
    }
    for (std::size_t k = 0; k < pts.size(); ++k) {
        EXPECT_EQ(reg.nodes[k].row, static_cast<long>(k / 4));
        EXPECT_EQ(reg.nodes[k].col, static_cast<long>(k % 4));
    }
}

TEST(RegisterGrid, RecoversTranslation) {
    const auto reg = register_grid(grid_points(3, 4, 2000, {13, -7}), 2000);
    EXPECT_NEAR(reg.grid.origin.x, 13, 1e-9);
    EXPECT_NEAR(reg.grid.origin.y, -7, 1e-9);
    EXPECT_NEAR(reg.grid.rotation, 0, 1e-12);
}

TEST(RegisterGrid, RecoversRotationUnlessDisabled) {
    const double rot = 0.01;
    const auto pts = grid_points(3, 4, 2000, {500, 250}, rot);
    const auto reg = register_grid(pts, 2000);
    EXPECT_NEAR(reg.grid.rotation, rot, 1e-12);
    EXPECT_NEAR(reg.grid.origin.x, 500, 1e-9);
    EXPECT_EQ(reg.grid.fitted_dof, 3u);
    const auto fixed = register_grid(pts, 2000, {.fit_rotation = false});
    EXPECT_EQ(fixed.grid.rotation, 0.0);
    EXPECT_EQ(fixed.grid.fitted_dof, 2u);
    double ss = 0;
    for (const auto& r : fixed.residuals) ss += r.x * r.x + r.y * r.y;
    EXPECT_GT(ss, 1.0);
}

TEST(RegisterGrid, MissingNodesKeepIndices) {
    auto pts = grid_points(3, 4, 2000, {100, 100});
    pts.erase(pts.begin() + 5);
    pts.erase(pts.begin());
    const auto reg = register_grid(pts, 2000);
    EXPECT_EQ(reg.nodes.front().row, 0);
    EXPECT_EQ(reg.nodes.front().col, 1);
    EXPECT_NEAR(reg.grid.origin.x, 100, 1e-9);
}

TEST(RegisterGrid, PerturbedGridDispersion) {
    int ok = 0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
        std::mt19937_64 g(static_cast<unsigned>(s));
        std::normal_distribution<double> n(0, 57);
        auto pts = grid_points(10, 10, 2000, {40, -30});
        for (auto& p : pts) p += Vec2{n(g), n(g)};
        const auto reg = register_grid(pts, 2000);
        const auto rep = accuracy_sigma(pts, reg.grid, {}, {.unbiased = true});
        if (std::abs(rep.sigma / 57 - 1) <= 0.15) ++ok;
    }
    EXPECT_EQ(ok, seeds);
}

TEST(RegisterGrid, Errors) {
    const auto pts = grid_points(1, 2, 2000);
    EXPECT_THROW(register_grid(pts, 2000), InvalidArgument);
    const auto three = grid_points(1, 3, 2000);
    EXPECT_THROW(register_grid(three, 0), InvalidArgument);
    const std::vector<Vec2> clash{{0, 0}, {30, 10}, {2000, 0}, {4000, 0}};
    try {
        register_grid(clash, 2000);
        FAIL();
    } catch (const AmbiguousAssignment& e) {
        EXPECT_NE(std::string(e.what()).find("centers 1 and 2"), std::string::npos);
    }
}

TEST(Accuracy, ZeroResiduals) {
    const auto pts = grid_points(3, 4, 2000);
    EXPECT_EQ(accuracy_sigma(pts, fixed_grid(3, 4), {}).sigma, 0.0);
}

TEST(Accuracy, FourPointAnalytic) {
    const double a = 40;
    const std::vector<Vec2> pts{{a, 0}, {2000 - a, 0}, {4000, a}, {6000, -a}};
    const auto rep = accuracy_sigma(pts, fixed_grid(1, 4), {});
    EXPECT_NEAR(rep.sigma, a / std::numbers::sqrt2, 1e-12);
    EXPECT_EQ(rep.n_points, 4u);
    // Divisor 8 - 2 with a translation-only grid.
    GridModel g = fixed_grid(1, 4);
    g.fitted_dof = 2;
    EXPECT_NEAR(accuracy_sigma(pts, g, {}, {.unbiased = true}).sigma, std::sqrt(4 * a * a / 6), 1e-12);
}

TEST(Accuracy, ExclusionsHonored) {
    auto pts = grid_points(3, 4, 2000);
    pts[0] += Vec2{500, 0};
    const auto rep = accuracy_sigma(pts, fixed_grid(3, 4), {1, 99});
    EXPECT_EQ(rep.sigma, 0.0);
    EXPECT_EQ(rep.n_points, 11u);
    EXPECT_EQ(rep.excluded, std::vector<int>{1});
}

TEST(Accuracy, TranslationInvariantAfterRegistration) {
    std::mt19937_64 g(5);
    std::normal_distribution<double> n(0, 50);
    auto pts = grid_points(3, 4, 2000);
    for (auto& p : pts) p += Vec2{n(g), n(g)};
    const double s0 = accuracy_sigma(pts, register_grid(pts, 2000).grid, {7}).sigma;
    for (auto& p : pts) p += Vec2{731.25, -1234.5};
    const double s1 = accuracy_sigma(pts, register_grid(pts, 2000).grid, {7}).sigma;
    EXPECT_NEAR(s0, s1, 1e-9);
}

TEST(Accuracy, TooFewPoints) {
    const auto pts = grid_points(1, 3, 2000);
    EXPECT_THROW(accuracy_sigma(pts, fixed_grid(1, 3), {1, 2}), InvalidArgument);
}

TEST(Precision, CoincidentIsZero) {
    const std::vector<std::vector<Vec2>> spots{{{5, 5}, {5, 5}}, {{100, 0}, {100, 0}, {100, 0}}};
    EXPECT_EQ(precision_sigma(spots, {}).sigma, 0.0);
}

TEST(Precision, TwoIonAnalytic) {
    const double d = 30;
    const std::vector<std::vector<Vec2>> spots{{{d, 0}, {-d, 0}}};
    const auto rep = precision_sigma(spots, {});
    EXPECT_NEAR(rep.sigma, d / std::numbers::sqrt2, 1e-12);
    EXPECT_EQ(rep.n_points, 2u);
    // Two degrees of freedom left after the centroid: 2d^2 / 2.
    EXPECT_NEAR(precision_sigma(spots, {}, {.unbiased = true}).sigma, d, 1e-12);
}

TEST(Precision, SingletonsSkipped) {
    const double d = 30;
    const std::vector<std::vector<Vec2>> spots{{{1e4, 1e4}}, {{d, 0}, {-d, 0}}, {}};
    const auto rep = precision_sigma(spots, {});
    EXPECT_NEAR(rep.sigma, d / std::numbers::sqrt2, 1e-12);
    EXPECT_EQ(rep.n_points, 2u);
}

TEST(Precision, PerSpotTranslationInvariant) {
    std::mt19937_64 g(9);
    std::normal_distribution<double> n(0, 45);
    std::vector<std::vector<Vec2>> spots(6);
    for (auto& s : spots)
        for (int k = 0; k < 4; ++k) s.push_back({n(g), n(g)});
    const double s0 = precision_sigma(spots, {3}).sigma;
    for (std::size_t k = 0; k < spots.size(); ++k)
        for (auto& p : spots[k]) p += Vec2{2000.0 * static_cast<double>(k) + 17.5, -99.0 * static_cast<double>(k)};
    EXPECT_NEAR(precision_sigma(spots, {3}).sigma, s0, 1e-9);
}

TEST(Precision, ExclusionsAndErrors) {
    const std::vector<std::vector<Vec2>> spots{{{0, 0}, {500, 0}}, {{30, 0}, {-30, 0}}};
    const auto rep = precision_sigma(spots, {1});
    EXPECT_NEAR(rep.sigma, 30 / std::numbers::sqrt2, 1e-12);
    EXPECT_EQ(rep.excluded, std::vector<int>{1});
    EXPECT_THROW(precision_sigma(spots, {1, 2}), InvalidArgument);
    const std::vector<std::vector<Vec2>> singles{{{0, 0}}, {{1, 1}}};
    EXPECT_THROW(precision_sigma(singles, {}), InvalidArgument);
}

TEST(Precision, RecoversGaussianSpread) {
    // Many 4-ion spots at sigma 49: the biased pooled estimator targets
    // sigma * sqrt(3/4); the unbiased one targets sigma.
    std::mt19937_64 g(21);
    std::normal_distribution<double> n(0, 49);
    std::vector<std::vector<Vec2>> spots(500);
    for (auto& s : spots)
        for (int k = 0; k < 4; ++k) s.push_back({n(g), n(g)});
    EXPECT_NEAR(precision_sigma(spots, {}).sigma, 49 * std::sqrt(0.75), 0.05 * 49);
    EXPECT_NEAR(precision_sigma(spots, {}, {.unbiased = true}).sigma, 49, 0.05 * 49);
}
