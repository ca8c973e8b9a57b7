#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ionimp/analyze.hpp"
#include "ionimp/simulator.hpp"
#include "oracles.hpp"
#include "reference_tables.hpp"

using namespace ionimp;
using namespace ionimp::analyze;

namespace {

constexpr double kPixel = 25.0;
constexpr double kC = 115.0;

}  // namespace

// ---------------------------------------------------------------------------
// Aperture photometry
// ---------------------------------------------------------------------------

TEST(Aperture, UniformImageNetsZero) {
    const ScanImage img(81, 81, kPixel, 6e-3, {0, 0}, 12.5);
    EXPECT_NEAR(spot_net_counts(img, default_aperture({1000, 1000})), 0.0, 1e-9);
}

TEST(Aperture, GaussianMatchesAnalyticIntegral) {
    const double A = 2000;
    const auto img = oracle::gaussian_image(81, 81, kPixel, {-1000, -1000}, A, {0, 0}, kC);
    const ApertureSpec ap{{0, 0}, 4 * kC, 5 * kC, 7 * kC};
    const double analytic = 2 * std::numbers::pi * kC * kC * A / (kPixel * kPixel);
    EXPECT_NEAR(spot_net_counts(img, ap) / analytic, 1.0, 2e-3);
}

TEST(Aperture, DefaultCropCapturesEncircledFraction) {
    // 3c crop: 1 - exp(-4.5) of the spot, the [4c, 6c] annulus sees ~exp(-8).
    const double A = 2000;
    const auto img = oracle::gaussian_image(81, 81, kPixel, {-1000, -1000}, A, {0, 0}, kC);
    const double analytic = 2 * std::numbers::pi * kC * kC * A / (kPixel * kPixel);
    EXPECT_NEAR(spot_net_counts(img, default_aperture({0, 0})) / analytic, 1 - std::exp(-4.5), 2e-3);
}

TEST(Aperture, RenderedSingleIonAtCalibration) {
    sim::EmitterMap m;
    m.fov = {{-1500, -1500}, {1500, 1500}};
    m.add({{0, 0}, 4, true, 1});
    auto cfg = sim::scan_for_fov(m.fov);
    cfg.noiseless = true;
    cfg.background = 1.0;
    const auto img = sim::render_scan(m, cfg, 334e3, Seed{1});
    EXPECT_NEAR(spot_net_counts(img, default_aperture({0, 0})) / 334e3, 1.0, 0.015);
}

TEST(Aperture, OffsetInvariant) {
    auto img = sim::poisson_sample(oracle::gaussian_image(81, 81, kPixel, {-1000, -1000}, 900, {20, -10}, kC, 3), Seed{4});
    const auto ap = default_aperture({20, -10});
    const double net = spot_net_counts(img, ap);
    for (double& v : img.data()) v += 41.75;
    EXPECT_NEAR(spot_net_counts(img, ap), net, 1e-6);
}

TEST(Aperture, Validation) {
    const ScanImage img(41, 41, kPixel, 6e-3, {0, 0}, 1);
    EXPECT_THROW(spot_net_counts(img, default_aperture({500, 500})), GeometryMismatch);
    EXPECT_THROW(spot_net_counts(img, {{500, 500}, 100, 50, 80}), InvalidArgument);
    EXPECT_THROW(spot_net_counts(img, {{500, 500}, 0, 50, 80}), InvalidArgument);
    EXPECT_TRUE(aperture_fits(img, {{500, 500}, 100, 200, 512.5}));
    EXPECT_FALSE(aperture_fits(img, {{500, 500}, 100, 200, 513}));
}

// ---------------------------------------------------------------------------
// Quantification
// ---------------------------------------------------------------------------

TEST(Quantify, Examples) {
    auto q = quantify_spot(1231, 395, 1);
    EXPECT_EQ(format_units(q.ions_fractional), "3.12");
    EXPECT_EQ(q.ions_rounded, 3);
    EXPECT_EQ(q.spot_id, 1);
    q = quantify_spot(299, 334);
    EXPECT_EQ(format_units(q.ions_fractional), "0.90");
    EXPECT_EQ(q.ions_rounded, 1);
    q = quantify_spot(0, 334);
    EXPECT_EQ(format_units(q.ions_fractional), "0.00");
    EXPECT_EQ(q.ions_rounded, 0);
    EXPECT_THROW(quantify_spot(1, 0), InvalidArgument);
}

TEST(Quantify, IntegerMultiplesRoundTrip) {
    for (double unit : {334.0, 395.0, 376.75, 1e-3, 7e5})
        for (long k = 0; k <= 200; ++k) EXPECT_EQ(quantify_spot(static_cast<double>(k) * unit, unit).ions_rounded, k);
}

TEST(Quantify, RoundingRules) {
    EXPECT_EQ(round_ions(2.5), 3);
    EXPECT_EQ(round_ions(0.5), 1);
    EXPECT_EQ(round_ions(0.49), 0);
    EXPECT_EQ(round_ions(-0.4), 0);
    EXPECT_EQ(round_ions(-3.0), 0);
    EXPECT_EQ(format_units(-0.004), "0.00");
}

TEST(Quantify, PublishedTablesReproduce) {
    const auto check = [](const auto& rows, double unit, long sum) {
        long total = 0;
        for (const auto& r : rows) {
            const auto q = quantify_spot(r.kcounts, unit, r.spot);
            EXPECT_NEAR(q.ions_fractional, r.units, 0.01 + 1e-12) << "spot " << r.spot;
            EXPECT_EQ(q.ions_rounded, r.rounded) << "spot " << r.spot;
            total += q.ions_rounded;
        }
        EXPECT_EQ(total, sum);
    };
    check(reference::kAreaA, reference::kUnitA, reference::kSumA);
    check(reference::kAreaB, reference::kUnitB, reference::kSumB);
}

TEST(Calibrate, Means) {
    EXPECT_EQ(calibrate_unit(std::vector<double>{395}), 395);
    EXPECT_DOUBLE_EQ(calibrate_unit(std::vector<double>{396, 434}), 415);
    EXPECT_DOUBLE_EQ(calibrate_unit(std::vector<double>{299, 424, 371, 413}), 376.75);
    EXPECT_THROW(calibrate_unit(std::vector<double>{}), InvalidArgument);
}

// ---------------------------------------------------------------------------
// PSF width
// ---------------------------------------------------------------------------

TEST(PsfWidth, NoiselessIsExact) {
    const auto img = oracle::gaussian_image(41, 41, kPixel, {-500, -500}, 3000, {0, 0}, kC);
    const std::vector<RoiRef> rois{{&img, {0, 0, 41, 41}}};
    const auto est = estimate_psf_width(rois);
    EXPECT_NEAR(est.c, kC, 1e-6);
    EXPECT_EQ(est.used, 1u);
}

TEST(PsfWidth, TenPoissonRois) {
    std::vector<ScanImage> imgs;
    for (std::uint64_t s = 0; s < 10; ++s)
        imgs.push_back(sim::poisson_sample(
            oracle::gaussian_image(41, 41, kPixel, {-500, -500}, 3000, {7.0 * static_cast<double>(s), -5}, kC, 1),
            Seed{s}));
    std::vector<RoiRef> rois;
    for (const auto& im : imgs) rois.push_back({&im, {0, 0, 41, 41}});
    const auto est = estimate_psf_width(rois);
    EXPECT_EQ(est.used, 10u);
    EXPECT_GE(est.c, 112);
    EXPECT_LE(est.c, 118);
}

TEST(PsfWidth, FailedRoisExcluded) {
    const auto good = oracle::gaussian_image(41, 41, kPixel, {-500, -500}, 3000, {0, 0}, 120);
    const ScanImage dead(41, 41, kPixel, 6e-3, {-500, -500}, 0.0);
    const std::vector<RoiRef> rois{{&good, {0, 0, 41, 41}}, {&dead, {0, 0, 41, 41}}};
    const auto est = estimate_psf_width(rois);
    EXPECT_EQ(est.used, 1u);
    EXPECT_EQ(est.failed, 1u);
    EXPECT_NEAR(est.c, 120, 1e-6);
    EXPECT_TRUE(std::isnan(est.per_roi[1]));
    const std::vector<RoiRef> only_dead{{&dead, {0, 0, 41, 41}}};
    EXPECT_THROW(estimate_psf_width(only_dead), Error);
    EXPECT_THROW(estimate_psf_width(std::span<const RoiRef>{}), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Registration
// ---------------------------------------------------------------------------

TEST(Shift, RecoversIntegerShift) {
    // Same scene imaged with the stage displaced by (+3, -2) pixels.
    const Vec2 o{-1000, -1000};
    auto ref = oracle::gaussian_image(81, 81, kPixel, o, 500, {0, 0}, kC, 1);
    auto mov = oracle::gaussian_image(81, 81, kPixel, o, 500, {-2 * kPixel, 3 * kPixel}, kC, 1);
    for (const Vec2 p : {Vec2{300, -200}, Vec2{-400, 350}}) {
        const auto a = oracle::gaussian_image(81, 81, kPixel, o, 300, p, kC);
        const auto b = oracle::gaussian_image(81, 81, kPixel, o, 300, p + Vec2{-2 * kPixel, 3 * kPixel}, kC);
        for (std::size_t k = 0; k < a.data().size(); ++k) {
            ref.data()[k] += a.data()[k];
            mov.data()[k] += b.data()[k];
        }
    }
    const auto s = estimate_shift(ref, mov, 8);
    EXPECT_EQ(s, (PixelShift{3, -2}));
    const auto back = apply_shift(ref, mov, s);
    for (std::size_t i = 10; i < 70; ++i)
        for (std::size_t j = 10; j < 70; ++j) EXPECT_NEAR(back.at(i, j), ref.at(i, j), 1e-9);
    EXPECT_EQ(estimate_shift(ref, ref, 8), (PixelShift{0, 0}));
}

TEST(Shift, Validation) {
    const ScanImage a(10, 10, kPixel, 6e-3, {0, 0}), b(11, 10, kPixel, 6e-3, {0, 0});
    EXPECT_THROW(estimate_shift(a, b, 2), GeometryMismatch);
    EXPECT_THROW(estimate_shift(a, a, -1), InvalidArgument);
    EXPECT_THROW(apply_shift(a, b, {}), GeometryMismatch);
}

// ---------------------------------------------------------------------------
// Anneal difference
// ---------------------------------------------------------------------------

namespace {

struct Scenario {
    sim::ImplantPlan plan;
    sim::EmitterMap before, after;
};

/// Area-B-like layout with two active ions per spot, sites cycled.
Scenario base_scenario() {
    Scenario s;
    s.plan = sim::build_plan({.area = sim::Area::B, .origin = {2000, 2000}});
    s.before.fov = sim::plan_fov(s.plan, 2000);
    int site = 1;
    for (std::size_t id = 1; id <= 12; ++id)
        for (int k = 0; k < 2; ++k) {
            const Vec2 p = s.plan.spot_center(id) + Vec2{k ? 25.0 : -20.0, k ? -15.0 : 30.0};
            s.before.add({p, site, true, static_cast<int>(id)});
            site = site % 6 + 1;
        }
    s.after = s.before;
    return s;
}

ScanImage render(const sim::EmitterMap& m) {
    auto cfg = sim::scan_for_fov(m.fov);
    cfg.noiseless = true;
    cfg.background = 1.0;
    return sim::render_scan(m, cfg, 334e3, Seed{1});
}

}  // namespace

TEST(AnnealDiff, IdenticalScansUnchanged) {
    const auto sc = base_scenario();
    const auto img = render(sc.before);
    const auto centers = sc.plan.spot_centers();
    const auto rep = anneal_diff_report(img, img, centers, 334e3);
    ASSERT_EQ(rep.spots.size(), 12u);
    for (const auto& ch : rep.spots) {
        EXPECT_EQ(ch.kind, ChangeKind::unchanged);
        EXPECT_EQ(ch.count, 0);
    }
    EXPECT_TRUE(rep.off_spot.empty());
}

TEST(AnnealDiff, VanishedAndAppearedScenario) {
    auto sc = base_scenario();
    // Drop the first ion of spots 2, 5, 10; add one to spots 1 and 4.
    for (int id : {2, 5, 10}) {
        const auto it = std::find_if(sc.after.emitters.begin(), sc.after.emitters.end(),
                                     [id](const sim::Emitter& e) { return e.spot == id; });
        sc.after.emitters.erase(it);
    }
    sc.after.add({sc.plan.spot_center(1) + Vec2{40, 40}, 3, true, 1});
    sc.after.add({sc.plan.spot_center(4) + Vec2{-35, 10}, 6, true, 4});
    // One native appears halfway between spots 6 and 7, one row up.
    const Vec2 native = 0.5 * (sc.plan.spot_center(6) + sc.plan.spot_center(11));
    sc.after.add({native, 2, true, sim::kNative});

    const auto centers = sc.plan.spot_centers();
    const double unit = 334e3 * (1 - std::exp(-4.5));
    const auto rep = anneal_diff_report(render(sc.before), render(sc.after), centers, unit);
    for (const auto& ch : rep.spots) {
        SCOPED_TRACE("spot " + std::to_string(ch.spot_id));
        if (ch.spot_id == 2 || ch.spot_id == 5 || ch.spot_id == 10) {
            EXPECT_EQ(ch.kind, ChangeKind::vanished);
            EXPECT_EQ(ch.count, 1);
            EXPECT_NEAR(ch.delta_units, 1.0, 0.02);
        } else if (ch.spot_id == 1 || ch.spot_id == 4) {
            EXPECT_EQ(ch.kind, ChangeKind::appeared);
            EXPECT_EQ(ch.count, 1);
            EXPECT_NEAR(ch.delta_units, -1.0, 0.02);
        } else {
            EXPECT_EQ(ch.kind, ChangeKind::unchanged);
            EXPECT_NEAR(ch.delta_units, 0.0, 0.02);
        }
    }
    ASSERT_EQ(rep.off_spot.size(), 1u);
    EXPECT_EQ(rep.off_spot[0].kind, ChangeKind::appeared);
    EXPECT_EQ(rep.off_spot[0].count, 1);
    EXPECT_LT(norm(rep.off_spot[0].position - native), kPixel);
}

TEST(AnnealDiff, Validation) {
    const ScanImage a(40, 40, kPixel, 6e-3, {0, 0}), b(41, 40, kPixel, 6e-3, {0, 0});
    EXPECT_THROW(anneal_diff_report(a, b, {}, 334e3), GeometryMismatch);
    EXPECT_THROW(anneal_diff_report(a, a, {}, 0), InvalidArgument);
    EXPECT_STREQ(to_string(ChangeKind::vanished), "vanished");
}
