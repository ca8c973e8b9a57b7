#pragma once

// Crystal-field optics of Pr3+ on the six D2 dodecahedral sites of YAG:
// site axes, electric-dipole selection rules, excitation efficiency under
// linear polarization for a [111]-cut crystal, and the isotropic Gaussian PSF.

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "ionimp/core.hpp"

namespace ionimp::optics {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt3 = 0.57735026918962576451;
inline constexpr double kInvSqrt6 = 0.40824829046386301637;

struct SiteOrientation {
    int id = 1;
    Vec3 x_axis, y_axis, z_axis;
};

inline constexpr int kSiteCount = 6;

/// Local axes of site `id` (1..6). Sites pair up on the three cube axes:
/// {1,2} z = [001], {3,4} z = [100], {5,6} z = [010]. Within a pair the local
/// x axis runs along one of the two {110}-type directions normal to z, and
/// y = z cross x keeps every frame right-handed.
inline SiteOrientation site_axes(int id) {
    if (id < 1 || id > kSiteCount) throw InvalidArgument("site id must be in 1..6, got " + std::to_string(id));
    static constexpr std::array<Vec3, 3> kZ = {Vec3{0, 0, 1}, Vec3{1, 0, 0}, Vec3{0, 1, 0}};
    static constexpr std::array<Vec3, 6> kX = {
        Vec3{kInvSqrt2, kInvSqrt2, 0},  Vec3{-kInvSqrt2, kInvSqrt2, 0},   // [110], [-110]
        Vec3{0, kInvSqrt2, kInvSqrt2},  Vec3{0, -kInvSqrt2, kInvSqrt2},   // [011], [0-11]
        Vec3{kInvSqrt2, 0, kInvSqrt2},  Vec3{kInvSqrt2, 0, -kInvSqrt2}};  // [101], [10-1]
    const Vec3 z = kZ[static_cast<std::size_t>((id - 1) / 2)];
    const Vec3 x = kX[static_cast<std::size_t>(id - 1)];
    return {id, x, cross(z, x), z};
}

// ---------------------------------------------------------------------------
// Level scheme and selection rules
// ---------------------------------------------------------------------------

enum class Irrep { G1 = 1, G2, G3, G4 };

inline Irrep parse_irrep(std::string_view s) {
    if (s == "G1" || s == "Gamma1" || s == "Γ1") return Irrep::G1;
    if (s == "G2" || s == "Gamma2" || s == "Γ2") return Irrep::G2;
    if (s == "G3" || s == "Gamma3" || s == "Γ3") return Irrep::G3;
    if (s == "G4" || s == "Gamma4" || s == "Γ4") return Irrep::G4;
    throw InvalidArgument("unknown D2 representation label: " + std::string(s));
}

inline std::string to_string(Irrep g) { return "G" + std::to_string(static_cast<int>(g)); }

enum class DipoleAxis { x, y, z, forbidden };

inline std::string_view to_string(DipoleAxis a) {
    switch (a) {
        case DipoleAxis::x: return "x";
        case DipoleAxis::y: return "y";
        case DipoleAxis::z: return "z";
        case DipoleAxis::forbidden: return "-";
    }
    return "?";
}

/// Electric-dipole selection rules in D2 symmetry.
inline DipoleAxis transition_axis(Irrep from, Irrep to) {
    using enum DipoleAxis;
    static constexpr DipoleAxis kTable[4][4] = {
        //  G1         G2         G3         G4
        {forbidden, y,         z,         x},          // G1
        {y,         forbidden, x,         z},          // G2
        {z,         x,         forbidden, y},          // G3
        {x,         z,         y,         forbidden},  // G4
    };
    const int i = static_cast<int>(from) - 1;
    const int j = static_cast<int>(to) - 1;
    if (i < 0 || i > 3 || j < 0 || j > 3) throw InvalidArgument("representation out of range");
    return kTable[i][j];
}

struct Level {
    Irrep irrep;
    double energy_cm1;
};

/// The three thermally populated 3H4 ground sublevels.
inline constexpr std::array<Level, 3> kGroundSublevels = {
    Level{Irrep::G3, 0.0}, Level{Irrep::G1, 19.0}, Level{Irrep::G4, 50.0}};

// ---------------------------------------------------------------------------
// Polarization and excitation
// ---------------------------------------------------------------------------

struct Polarization {
    Vec3 propagation{kInvSqrt3, kInvSqrt3, kInvSqrt3};
    double angle = 0.0;  // radians, measured from e1 toward e2
};

/// Transverse basis (e1, e2) with e1 x e2 = k. For k along [111] this is
/// e1 = (1,-1,0)/sqrt2, e2 = (1,1,-2)/sqrt6.
inline std::pair<Vec3, Vec3> transverse_basis(const Vec3& propagation) {
    const Vec3 k = normalized(propagation);
    Vec3 ref = cross(k, Vec3{0, 0, 1});
    if (norm(ref) < 1e-9) ref = cross(k, Vec3{1, 0, 0});
    const Vec3 e1 = normalized(ref);
    return {e1, cross(k, e1)};
}

inline Vec3 polarization_vector(const Polarization& pol) {
    const auto [e1, e2] = transverse_basis(pol.propagation);
    return std::cos(pol.angle) * e1 + std::sin(pol.angle) * e2;
}

/// The three linear polarizations (0, 60, 120 degrees) that each darken one
/// pair of sites.
inline std::array<Polarization, 3> canonical_polarizations() {
    constexpr double third = std::numbers::pi / 3.0;
    return {Polarization{{kInvSqrt3, kInvSqrt3, kInvSqrt3}, 0.0},
            Polarization{{kInvSqrt3, kInvSqrt3, kInvSqrt3}, third},
            Polarization{{kInvSqrt3, kInvSqrt3, kInvSqrt3}, 2.0 * third}};
}

/// First-step z-dipole absorption: |E . z|^2.
inline double excitation_efficiency(const SiteOrientation& site, const Polarization& pol) {
    const double p = dot(polarization_vector(pol), site.z_axis);
    return p * p;
}

/// How the two-photon brightness scales with the first-step efficiency.
enum class BrightnessModel {
    linear,     // proportional to |E.z|^2 (second step saturated)
    quadratic,  // proportional to |E.z|^4 (both steps linear)
};

/// Fraction of a site's total (three-polarization) signal that is emitted
/// under `pol`. Normalized so that a bright site under a canonical
/// polarization gives 1/2 and the canonical triple sums to 1.
inline double relative_brightness(const SiteOrientation& site, const Polarization& pol,
                                  BrightnessModel model = BrightnessModel::linear) {
    const double r = 2.0 * excitation_efficiency(site, pol);  // 1 on a bright canonical site
    return 0.5 * (model == BrightnessModel::linear ? r : r * r);
}

// ---------------------------------------------------------------------------
// PSF
// ---------------------------------------------------------------------------

struct PsfModel {
    double c = 115.0;  // nm

    void validate() const {
        if (!(c > 0.0)) throw InvalidArgument("PsfModel: c must be > 0");
    }
};

/// A * exp(-(u^2 + v^2) / (2 c^2)) + B with (u, v) the offset rotated by beta.
/// With a single width the rotation drops out.
inline double psf_intensity(double dx, double dy, const PsfModel& model, double amplitude, double beta = 0.0,
                            double offset = 0.0) {
    const double cb = std::cos(beta), sb = std::sin(beta);
    const double u = cb * dy + sb * dx;
    const double v = cb * dx - sb * dy;
    return amplitude * std::exp(-(u * u + v * v) / (2.0 * model.c * model.c)) + offset;
}

/// Peak amplitude (per pixel) of a PSF whose pixel sum equals `total`.
inline double amplitude_for_total(double total, const PsfModel& model, double pixel_size) {
    return total * pixel_size * pixel_size / (2.0 * std::numbers::pi * model.c * model.c);
}

// ---------------------------------------------------------------------------
// Documentation export
// ---------------------------------------------------------------------------

inline nlohmann::json site_table_json() {
    nlohmann::json out = nlohmann::json::array();
    const auto vec = [](const Vec3& v) { return nlohmann::json::array({v.x, v.y, v.z}); };
    for (int id = 1; id <= kSiteCount; ++id) {
        const auto s = site_axes(id);
        out.push_back({{"id", id}, {"x", vec(s.x_axis)}, {"y", vec(s.y_axis)}, {"z", vec(s.z_axis)}});
    }
    return out;
}

inline nlohmann::json selection_rules_json() {
    nlohmann::json out = nlohmann::json::object();
    for (int i = 1; i <= 4; ++i) {
        nlohmann::json row = nlohmann::json::object();
        for (int j = 1; j <= 4; ++j) {
            row[to_string(static_cast<Irrep>(j))] =
                std::string(to_string(transition_axis(static_cast<Irrep>(i), static_cast<Irrep>(j))));
        }
        out[to_string(static_cast<Irrep>(i))] = row;
    }
    return out;
}

}  // namespace ionimp::optics
