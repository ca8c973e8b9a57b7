#pragma once

// Forward model: dot-grid implantation plans, beam/straggle scatter, a
// single-shot stochastic anneal, native background emitters, and
// polarization-summed photon-count scans.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ionimp/core.hpp"
#include "ionimp/optics.hpp"

namespace ionimp::sim {

enum class Area { A, B };

struct PlanSpec {
    Area area = Area::B;
    Vec2 origin{};          // nm, center of spot 1
    double pitch = 2000.0;  // nm
    std::size_t rows = 3;
    std::size_t cols = 4;
    /// Overrides the per-area default when non-zero.
    std::size_t ions_per_spot = 0;
    /// Area B's last spot received two ions instead of four.
    bool short_last_spot = true;
    /// Random offset of each spot center from its nominal grid node.
    double pointing_sigma = 0.0;  // nm
    double energy_kev = 5.9;
    double depth_nm = 6.0;
};

struct ImplantPlan {
    Vec2 origin{};
    double pitch = 2000.0;
    std::size_t rows = 3;
    std::size_t cols = 4;
    std::vector<std::size_t> ions;  // per spot, spot id = index + 1
    double pointing_sigma = 0.0;
    double energy_kev = 5.9;
    double depth_nm = 6.0;

    std::size_t spot_count() const { return ions.size(); }

    std::size_t planned_ions() const {
        std::size_t n = 0;
        for (auto k : ions) n += k;
        return n;
    }

    /// Nominal center of spot `id` (1-based, row-major).
    Vec2 spot_center(std::size_t id) const {
        if (id < 1 || id > spot_count()) throw InvalidArgument("spot id out of range");
        const std::size_t k = id - 1;
        return {origin.x + pitch * static_cast<double>(k % cols), origin.y + pitch * static_cast<double>(k / cols)};
    }

    std::vector<Vec2> spot_centers() const {
        std::vector<Vec2> c;
        for (std::size_t id = 1; id <= spot_count(); ++id) c.push_back(spot_center(id));
        return c;
    }
};

inline ImplantPlan build_plan(const PlanSpec& spec) {
    if (!(spec.pitch > 0.0)) throw InvalidArgument("build_plan: pitch must be > 0");
    if (spec.rows == 0 || spec.cols == 0) throw InvalidArgument("build_plan: grid must have rows and cols");
    if (!(spec.pointing_sigma >= 0.0)) throw InvalidArgument("build_plan: pointing_sigma must be >= 0");
    const std::size_t per_spot = spec.ions_per_spot ? spec.ions_per_spot : (spec.area == Area::A ? 8 : 4);
    ImplantPlan plan{spec.origin, spec.pitch, spec.rows, spec.cols,
                     std::vector<std::size_t>(spec.rows * spec.cols, per_spot),
                     spec.pointing_sigma, spec.energy_kev, spec.depth_nm};
    if (spec.area == Area::B && spec.short_last_spot && plan.ions.size() == 12) plan.ions.back() = 2;
    return plan;
}

// ---------------------------------------------------------------------------
// Emitters
// ---------------------------------------------------------------------------

struct Rect {
    Vec2 min{};
    Vec2 max{};

    double width() const { return max.x - min.x; }
    double height() const { return max.y - min.y; }
    double area() const { return width() * height(); }
    bool contains(const Vec2& p) const { return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y; }
};

inline constexpr int kNative = 0;

struct Emitter {
    Vec2 position{};
    int site = 1;
    bool active = false;
    int spot = kNative;  // implanted spot id, or kNative

    bool native() const { return spot == kNative; }
};

struct EmitterMap {
    Rect fov{};
    std::vector<Emitter> emitters;

    void add(const Emitter& e) {
        if (!fov.contains(e.position)) throw InvalidArgument("emitter outside field of view");
        if (e.site < 1 || e.site > optics::kSiteCount) throw InvalidArgument("emitter site must be 1..6");
        emitters.push_back(e);
    }

    std::size_t active_in_spot(int spot) const {
        return static_cast<std::size_t>(std::count_if(emitters.begin(), emitters.end(), [spot](const Emitter& e) {
            return e.active && e.spot == spot;
        }));
    }

    std::size_t active_count() const {
        return static_cast<std::size_t>(
            std::count_if(emitters.begin(), emitters.end(), [](const Emitter& e) { return e.active; }));
    }
};

/// Union of two maps over the bounding field of view.
inline EmitterMap merge(const EmitterMap& a, const EmitterMap& b) {
    EmitterMap out;
    out.fov = {{std::min(a.fov.min.x, b.fov.min.x), std::min(a.fov.min.y, b.fov.min.y)},
               {std::max(a.fov.max.x, b.fov.max.x), std::max(a.fov.max.y, b.fov.max.y)}};
    out.emitters = a.emitters;
    out.emitters.insert(out.emitters.end(), b.emitters.begin(), b.emitters.end());
    return out;
}

/// Field of view covering the plan's grid plus `margin` on every side.
inline Rect plan_fov(const ImplantPlan& plan, double margin = 2000.0) {
    const Vec2 lo = plan.origin;
    const Vec2 hi{plan.origin.x + plan.pitch * static_cast<double>(plan.cols - 1),
                  plan.origin.y + plan.pitch * static_cast<double>(plan.rows - 1)};
    return {{lo.x - margin, lo.y - margin}, {hi.x + margin, hi.y + margin}};
}

namespace detail {

inline int draw_site(Rng& rng) { return std::uniform_int_distribution<int>(1, optics::kSiteCount)(rng); }

inline Vec2 gaussian_offset(Rng& rng, double sigma) {
    if (sigma == 0.0) return {};
    std::normal_distribution<double> n(0.0, sigma);
    const double dx = n(rng);
    const double dy = n(rng);
    return {dx, dy};
}

inline Vec2 uniform_in(Rng& rng, const Rect& r) {
    const double x = r.min.x + r.width() * rng.uniform();
    const double y = r.min.y + r.height() * rng.uniform();
    return {x, y};
}

}  // namespace detail

/// Places every planned ion at its spot center plus an isotropic Gaussian
/// offset of width sqrt(beam^2 + straggle^2). Ions start inactive.
inline EmitterMap implant(const ImplantPlan& plan, double beam_sigma, double straggle_sigma, Seed seed,
                          double fov_margin = 2000.0) {
    if (!(beam_sigma >= 0.0) || !(straggle_sigma >= 0.0)) throw InvalidArgument("implant: sigmas must be >= 0");
    const double spread = std::hypot(beam_sigma, straggle_sigma);
    EmitterMap map;
    map.fov = plan_fov(plan, fov_margin);
    Rng rng(derive(seed, 0x696d706cULL));
    for (std::size_t id = 1; id <= plan.spot_count(); ++id) {
        const Vec2 center = plan.spot_center(id) + detail::gaussian_offset(rng, plan.pointing_sigma);
        for (std::size_t k = 0; k < plan.ions[id - 1]; ++k) {
            Emitter e;
            e.position = center + detail::gaussian_offset(rng, spread);
            e.site = detail::draw_site(rng);
            e.active = false;
            e.spot = static_cast<int>(id);
            map.add(e);
        }
    }
    return map;
}

struct AnnealModel {
    double activation_yield = 0.5;
    double migration_loss = 0.0;
    double migration_sigma = 0.0;  // nm
    /// Native emitters appearing / vanishing per 100 um^2 per anneal.
    double native_appear_rate = 1.0;
    double native_vanish_rate = 0.0;

    void validate() const {
        const auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (!prob(activation_yield) || !prob(migration_loss)) {
            throw InvalidArgument("AnnealModel: probabilities must lie in [0, 1]");
        }
        if (!(migration_sigma >= 0.0)) throw InvalidArgument("AnnealModel: migration_sigma must be >= 0");
        if (!(native_appear_rate >= 0.0) || !(native_vanish_rate >= 0.0)) {
            throw InvalidArgument("AnnealModel: native rates must be >= 0");
        }
    }
};

inline constexpr double kHundredSquareMicrons = 1e8;  // nm^2

/// One anneal step. Each implanted emitter that is still dark activates with
/// probability activation_yield; every active implanted emitter is then lost
/// (removed from the map) with probability migration_loss or otherwise
/// displaced by a Gaussian of width migration_sigma. Native emitters only see
/// the appear/vanish rates.
inline EmitterMap anneal(const EmitterMap& map, const AnnealModel& model, Seed seed) {
    model.validate();
    Rng rng(derive(seed, 0x616e6e6cULL));
    EmitterMap out;
    out.fov = map.fov;
    out.emitters.reserve(map.emitters.size());
    for (const Emitter& src : map.emitters) {
        Emitter e = src;
        if (!e.native()) {
            if (!e.active) e.active = rng.uniform() < model.activation_yield;
            if (e.active) {
                if (rng.uniform() < model.migration_loss) continue;
                if (model.migration_sigma > 0.0) {
                    Vec2 p;
                    do {
                        p = e.position + detail::gaussian_offset(rng, model.migration_sigma);
                    } while (!out.fov.contains(p));
                    e.position = p;
                }
            }
        }
        out.emitters.push_back(e);
    }

    const double area_units = map.fov.area() / kHundredSquareMicrons;
    if (model.native_vanish_rate > 0.0) {
        auto n = std::poisson_distribution<long>(model.native_vanish_rate * area_units)(rng);
        while (n-- > 0) {
            std::vector<std::size_t> live;
            for (std::size_t k = 0; k < out.emitters.size(); ++k)
                if (out.emitters[k].native() && out.emitters[k].active) live.push_back(k);
            if (live.empty()) break;
            const auto pick = std::uniform_int_distribution<std::size_t>(0, live.size() - 1)(rng);
            out.emitters.erase(out.emitters.begin() + static_cast<std::ptrdiff_t>(live[pick]));
        }
    }
    if (model.native_appear_rate > 0.0) {
        auto n = std::poisson_distribution<long>(model.native_appear_rate * area_units)(rng);
        while (n-- > 0) {
            Emitter e;
            e.position = detail::uniform_in(rng, out.fov);
            e.site = detail::draw_site(rng);
            e.active = true;
            e.spot = kNative;
            out.add(e);
        }
    }
    return out;
}

/// Native Pr3+ emitters within `depth_of_field` of the focal plane. The count
/// is Poisson with mean density * area * depth.
inline EmitterMap sample_native_background(const Rect& fov, double density_cm3, double depth_of_field_nm, Seed seed) {
    if (!(density_cm3 >= 0.0)) throw InvalidArgument("density must be >= 0");
    if (!(depth_of_field_nm >= 0.0)) throw InvalidArgument("depth of field must be >= 0");
    constexpr double kCm3ToNm3 = 1e21;
    const double mean = density_cm3 / kCm3ToNm3 * fov.area() * depth_of_field_nm;
    EmitterMap map;
    map.fov = fov;
    if (mean <= 0.0) return map;
    Rng rng(derive(seed, 0x6e617469ULL));
    const long n = std::poisson_distribution<long>(mean)(rng);
    for (long k = 0; k < n; ++k) {
        Emitter e;
        e.position = detail::uniform_in(rng, fov);
        e.site = detail::draw_site(rng);
        e.active = true;
        e.spot = kNative;
        map.add(e);
    }
    return map;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

struct ScanConfig {
    Vec2 origin{};  // center of pixel (0, 0), nm
    std::size_t width = 0;
    std::size_t height = 0;
    double pixel_size = ScanImage::kDefaultPixelSize;
    double dwell = ScanImage::kDefaultDwell;
    /// Uniform background per pixel, summed over the polarization set.
    double background = 0.0;
    optics::PsfModel psf{};
    optics::BrightnessModel brightness_model = optics::BrightnessModel::linear;
    bool noiseless = false;
    /// PSF tails beyond this many widths are not evaluated (exp(-32) ~ 1e-14).
    double cutoff_widths = 8.0;

    void validate() const {
        if (width == 0 || height == 0) throw InvalidArgument("ScanConfig: empty raster");
        if (!(pixel_size > 0.0)) throw InvalidArgument("ScanConfig: pixel_size must be > 0");
        if (!(background >= 0.0)) throw InvalidArgument("ScanConfig: background must be >= 0");
        psf.validate();
    }
};

/// Raster covering `fov`, pixel (0, 0) centered on its lower corner.
inline ScanConfig scan_for_fov(const Rect& fov, double pixel_size = ScanImage::kDefaultPixelSize) {
    ScanConfig cfg;
    cfg.origin = fov.min;
    cfg.pixel_size = pixel_size;
    cfg.width = static_cast<std::size_t>(std::floor(fov.width() / pixel_size)) + 1;
    cfg.height = static_cast<std::size_t>(std::floor(fov.height() / pixel_size)) + 1;
    return cfg;
}

/// Noise-free expected counts. Each active emitter contributes
/// brightness * relative_brightness(site, pol) * (normalized pixel PSF) per
/// polarization, so the three canonical polarizations together integrate to
/// `brightness_per_ion` whatever the site.
inline ScanImage expected_scan(const EmitterMap& map, const ScanConfig& cfg,
                               std::span<const optics::Polarization> pols, double brightness_per_ion) {
    cfg.validate();
    if (!(brightness_per_ion > 0.0)) throw InvalidArgument("brightness_per_ion must be > 0");
    ScanImage img(cfg.width, cfg.height, cfg.pixel_size, cfg.dwell, cfg.origin, cfg.background);
    const double c = cfg.psf.c;
    const double norm = cfg.pixel_size * cfg.pixel_size / (2.0 * std::numbers::pi * c * c);
    const double reach = cfg.cutoff_widths * c;
    const double inv2c2 = 1.0 / (2.0 * c * c);
    for (const Emitter& e : map.emitters) {
        if (!e.active) continue;
        const auto site = optics::site_axes(e.site);
        double weight = 0.0;
        for (const auto& pol : pols) weight += optics::relative_brightness(site, pol, cfg.brightness_model);
        const double amp = brightness_per_ion * weight * norm;
        if (amp == 0.0) continue;
        const PixelRect r = rect_around(img, e.position, reach);
        for (std::size_t i = r.row; i < r.row + r.rows; ++i) {
            for (std::size_t j = r.col; j < r.col + r.cols; ++j) {
                const Vec2 d = img.pixel_center(i, j) - e.position;
                img.at(i, j) += amp * std::exp(-(d.x * d.x + d.y * d.y) * inv2c2);
            }
        }
    }
    return img;
}

/// Poisson draw per pixel from its own counter-derived stream, so the result
/// does not depend on traversal order.
inline ScanImage poisson_sample(const ScanImage& expected, Seed seed) {
    ScanImage out = expected;
    auto& d = out.data();
    const Seed base = derive(seed, 0x706f6973ULL);
    for (std::size_t k = 0; k < d.size(); ++k) {
        const double lambda = expected.data()[k];
        if (!(lambda >= 0.0)) throw InvalidArgument("poisson_sample: negative rate");
        if (lambda == 0.0) {
            d[k] = 0.0;
            continue;
        }
        Rng rng(derive(base, k));
        d[k] = static_cast<double>(std::poisson_distribution<long long>(lambda)(rng));
    }
    return out;
}

inline ScanImage render_scan(const EmitterMap& map, const ScanConfig& cfg, std::span<const optics::Polarization> pols,
                             double brightness_per_ion, Seed seed) {
    ScanImage img = expected_scan(map, cfg, pols, brightness_per_ion);
    return cfg.noiseless ? img : poisson_sample(img, seed);
}

inline ScanImage render_scan(const EmitterMap& map, const ScanConfig& cfg, double brightness_per_ion, Seed seed) {
    const auto pols = optics::canonical_polarizations();
    return render_scan(map, cfg, pols, brightness_per_ion, seed);
}

}  // namespace ionimp::sim
