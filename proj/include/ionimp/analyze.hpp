#pragma once

// Inverse pipeline pieces: aperture photometry with annulus background,
// single-ion-unit quantification, PSF width estimation, integer-pixel scan
// registration, and before/after anneal difference reports.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ionimp/core.hpp"
#include "ionimp/gauss_fit.hpp"
#include "ionimp/optics.hpp"

namespace ionimp::analyze {

struct ApertureSpec {
    Vec2 center{};
    double r_crop = 345.0;         // nm
    double r_annulus_in = 460.0;   // nm
    double r_annulus_out = 690.0;  // nm

    void validate() const {
        if (!(r_crop > 0.0 && r_crop <= r_annulus_in && r_annulus_in < r_annulus_out)) {
            throw InvalidArgument("ApertureSpec: need 0 < r_crop <= r_annulus_in < r_annulus_out");
        }
    }
};

/// Default radii: crop 3c, annulus [4c, 6c].
inline ApertureSpec default_aperture(const Vec2& center, double c = 115.0) {
    return {center, 3.0 * c, 4.0 * c, 6.0 * c};
}

/// True when the outer annulus lies inside the image's pixel footprint.
inline bool aperture_fits(const ScanImage& img, const ApertureSpec& ap) {
    const double h = 0.5 * img.pixel_size();
    const Vec2 lo = img.origin() - Vec2{h, h};
    const Vec2 hi = img.pixel_center(img.height() - 1, img.width() - 1) + Vec2{h, h};
    return ap.center.x - ap.r_annulus_out >= lo.x && ap.center.x + ap.r_annulus_out <= hi.x &&
           ap.center.y - ap.r_annulus_out >= lo.y && ap.center.y + ap.r_annulus_out <= hi.y;
}

struct ApertureSums {
    double inner_sum = 0.0;
    std::size_t inner_pixels = 0;
    double annulus_mean = 0.0;
    std::size_t annulus_pixels = 0;

    double net() const { return inner_sum - annulus_mean * static_cast<double>(inner_pixels); }
};

inline ApertureSums aperture_sums(const ScanImage& img, const ApertureSpec& ap) {
    ap.validate();
    if (!aperture_fits(img, ap)) throw GeometryMismatch("aperture exceeds image bounds");
    ApertureSums s;
    double ann = 0.0;
    const PixelRect r = rect_around(img, ap.center, ap.r_annulus_out);
    const double rc2 = ap.r_crop * ap.r_crop;
    const double ri2 = ap.r_annulus_in * ap.r_annulus_in;
    const double ro2 = ap.r_annulus_out * ap.r_annulus_out;
    for (std::size_t i = r.row; i < r.row + r.rows; ++i)
        for (std::size_t j = r.col; j < r.col + r.cols; ++j) {
            const Vec2 d = img.pixel_center(i, j) - ap.center;
            const double d2 = d.x * d.x + d.y * d.y;
            if (d2 <= rc2) {
                s.inner_sum += img.at(i, j);
                ++s.inner_pixels;
            } else if (d2 >= ri2 && d2 <= ro2) {
                ann += img.at(i, j);
                ++s.annulus_pixels;
            }
        }
    if (s.inner_pixels == 0 || s.annulus_pixels == 0) throw GeometryMismatch("aperture covers no pixels");
    s.annulus_mean = ann / static_cast<double>(s.annulus_pixels);
    return s;
}

/// Summed counts inside r_crop minus the annulus mean per pixel times the
/// number of crop pixels.
inline double spot_net_counts(const ScanImage& img, const ApertureSpec& ap) { return aperture_sums(img, ap).net(); }

// ---------------------------------------------------------------------------
// Quantification
// ---------------------------------------------------------------------------

struct SpotQuant {
    int spot_id = 0;
    double net_counts = 0.0;
    double ions_fractional = 0.0;
    long ions_rounded = 0;
};

/// Nearest integer, halves away from zero, never below zero.
inline long round_ions(double fractional) { return std::max(0L, std::lround(fractional)); }

inline SpotQuant quantify_spot(double net, double unit, int spot_id = 0) {
    if (!(unit > 0.0)) throw InvalidArgument("quantify_spot: unit must be > 0");
    const double f = net / unit;
    return {spot_id, net, f, round_ions(f)};
}

/// Two-decimal rendering used in reports.
inline std::string format_units(double fractional) {
    char buf[32];
    // No "-0.00" for values that round to zero.
    std::snprintf(buf, sizeof buf, "%.2f", std::abs(fractional) < 0.005 ? 0.0 : fractional);
    return buf;
}

inline double calibrate_unit(std::span<const double> single_ion_nets) {
    if (single_ion_nets.empty()) throw InvalidArgument("calibrate_unit: no single-ion spots given");
    double s = 0.0;
    for (double v : single_ion_nets) s += v;
    return s / static_cast<double>(single_ion_nets.size());
}

// ---------------------------------------------------------------------------
// PSF width
// ---------------------------------------------------------------------------

struct RoiRef {
    const ScanImage* image = nullptr;
    PixelRect roi{};
};

struct PsfWidthEstimate {
    double c = 0.0;  // nm, mean over converged fits
    std::size_t used = 0;
    std::size_t failed = 0;
    std::vector<double> per_roi;  // NaN for failed rois
};

inline PsfWidthEstimate estimate_psf_width(std::span<const RoiRef> rois, double c_guess = 115.0) {
    if (rois.empty()) throw InvalidArgument("estimate_psf_width: no rois");
    PsfWidthEstimate out;
    double sum = 0.0;
    for (const auto& r : rois) {
        if (!r.image) throw InvalidArgument("estimate_psf_width: null image");
        const auto init = fit::initial_guess(*r.image, r.roi, c_guess);
        const auto f = fit::fit_gaussian2d(*r.image, r.roi, init);
        if (f.converged) {
            out.per_roi.push_back(f.c);
            sum += f.c;
            ++out.used;
        } else {
            out.per_roi.push_back(std::numeric_limits<double>::quiet_NaN());
            ++out.failed;
        }
    }
    if (out.used == 0) throw Error("estimate_psf_width: every fit failed");
    out.c = sum / static_cast<double>(out.used);
    return out;
}

// ---------------------------------------------------------------------------
// Registration
// ---------------------------------------------------------------------------

struct PixelShift {
    int rows = 0;
    int cols = 0;
    friend bool operator==(const PixelShift&, const PixelShift&) = default;
};

/// Integer shift s maximizing the Pearson correlation between ref(i, j) and
/// moving(i + s.rows, j + s.cols) over their overlap. Normalizing per overlap
/// keeps large shifts from winning just by cropping away flat borders. Ties
/// keep the smallest |shift|.
inline PixelShift estimate_shift(const ScanImage& reference, const ScanImage& moving, int max_shift) {
    if (!reference.same_geometry(moving)) throw GeometryMismatch("estimate_shift: geometry differs");
    if (max_shift < 0) throw InvalidArgument("estimate_shift: max_shift must be >= 0");
    const auto h = static_cast<int>(reference.height()), w = static_cast<int>(reference.width());
    PixelShift best{};
    double best_score = -std::numeric_limits<double>::infinity();
    int best_mag = std::numeric_limits<int>::max();
    for (int dr = -max_shift; dr <= max_shift; ++dr)
        for (int dc = -max_shift; dc <= max_shift; ++dc) {
            double sr = 0.0, sm = 0.0, srr = 0.0, smm = 0.0, srm = 0.0;
            std::size_t n = 0;
            for (int i = std::max(0, -dr); i < std::min(h, h - dr); ++i)
                for (int j = std::max(0, -dc); j < std::min(w, w - dc); ++j) {
                    const double r = reference.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
                    const double m = moving.at(static_cast<std::size_t>(i + dr), static_cast<std::size_t>(j + dc));
                    sr += r;
                    sm += m;
                    srr += r * r;
                    smm += m * m;
                    srm += r * m;
                    ++n;
                }
            if (n < 2) continue;
            const double inv = 1.0 / static_cast<double>(n);
            const double cov = srm - sr * sm * inv;
            // A (numerically) flat overlap carries no registration signal.
            const double vr = srr - sr * sr * inv, vm = smm - sm * sm * inv;
            const bool flat = !(vr > 1e-12 * srr) || !(vm > 1e-12 * smm);
            const double score = flat ? 0.0 : cov / std::sqrt(vr * vm);
            const int mag = std::abs(dr) + std::abs(dc);
            if (score > best_score || (score == best_score && mag < best_mag)) {
                best_score = score;
                best = {dr, dc};
                best_mag = mag;
            }
        }
    return best;
}

/// `moving` resampled onto `reference`'s pixel grid by an integer shift.
/// Pixels with no source take the reference value, so a difference image is
/// zero there.
inline ScanImage apply_shift(const ScanImage& reference, const ScanImage& moving, PixelShift s) {
    if (!reference.same_geometry(moving)) throw GeometryMismatch("apply_shift: geometry differs");
    ScanImage out(moving.width(), moving.height(), moving.pixel_size(), moving.dwell(), moving.origin());
    const auto h = static_cast<int>(moving.height()), w = static_cast<int>(moving.width());
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const int si = i + s.rows, sj = j + s.cols;
            const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
            out.at(ui, uj) = (si >= 0 && si < h && sj >= 0 && sj < w)
                                 ? moving.at(static_cast<std::size_t>(si), static_cast<std::size_t>(sj))
                                 : reference.at(ui, uj);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Anneal difference
// ---------------------------------------------------------------------------

enum class ChangeKind { unchanged, vanished, appeared };

inline const char* to_string(ChangeKind k) {
    switch (k) {
        case ChangeKind::unchanged: return "unchanged";
        case ChangeKind::vanished: return "vanished";
        case ChangeKind::appeared: return "appeared";
    }
    return "?";
}

struct SpotChange {
    int spot_id = 0;
    double delta_units = 0.0;  // (before - after) / C
    ChangeKind kind = ChangeKind::unchanged;
    long count = 0;  // |rounded delta|
};

struct OffSpotChange {
    Vec2 position{};
    double delta_units = 0.0;
    ChangeKind kind = ChangeKind::unchanged;
    long count = 0;
};

struct DiffReport {
    std::vector<SpotChange> spots;
    std::vector<OffSpotChange> off_spot;
};

struct DiffOptions {
    optics::PsfModel psf{};
    /// Off-spot search ignores pixels within this many c of a spot center.
    double spot_exclusion_widths = 4.0;
    /// Off-spot candidates need a peak of at least this fraction of a single
    /// ion's peak pixel.
    double peak_fraction = 0.5;
    std::size_t max_off_spot_events = 1000;
};

inline ChangeKind classify(double delta_units, long& count) {
    count = std::labs(std::lround(delta_units));
    if (count == 0) return ChangeKind::unchanged;
    return delta_units > 0 ? ChangeKind::vanished : ChangeKind::appeared;
}

/// Changes between two registered scans of the same area, in units of the
/// single-ion signal `unit`. Positive delta = fluorescence lost.
inline DiffReport anneal_diff_report(const ScanImage& before, const ScanImage& after,
                                     std::span<const Vec2> spot_centers, double unit, const DiffOptions& opt = {}) {
    if (!before.same_geometry(after)) throw GeometryMismatch("anneal_diff_report: geometry differs");
    if (!(unit > 0.0)) throw InvalidArgument("anneal_diff_report: unit must be > 0");
    const ScanImage diff = subtract_images(before, after);
    const double c = opt.psf.c;
    DiffReport rep;
    for (std::size_t k = 0; k < spot_centers.size(); ++k) {
        SpotChange ch;
        ch.spot_id = static_cast<int>(k + 1);
        ch.delta_units = spot_net_counts(diff, default_aperture(spot_centers[k], c)) / unit;
        ch.kind = classify(ch.delta_units, ch.count);
        rep.spots.push_back(ch);
    }

    // Off-spot: repeatedly take the strongest remaining |diff| pixel, measure
    // it with the standard aperture, and mask its neighbourhood.
    std::vector<char> masked(diff.size(), 0);
    const auto mask_disc = [&](const Vec2& center, double radius) {
        const PixelRect r = rect_around(diff, center, radius);
        for (std::size_t i = r.row; i < r.row + r.rows; ++i)
            for (std::size_t j = r.col; j < r.col + r.cols; ++j)
                if (norm(diff.pixel_center(i, j) - center) <= radius) masked[i * diff.width() + j] = 1;
    };
    for (const auto& sc : spot_centers) mask_disc(sc, opt.spot_exclusion_widths * c);
    const double threshold = opt.peak_fraction * optics::amplitude_for_total(unit, opt.psf, diff.pixel_size());
    for (std::size_t iter = 0; iter < opt.max_off_spot_events; ++iter) {
        std::size_t best = diff.size();
        double best_val = 0.0;
        for (std::size_t k = 0; k < diff.size(); ++k) {
            if (masked[k]) continue;
            const double v = std::abs(diff.data()[k]);
            if (v > best_val) {
                best_val = v;
                best = k;
            }
        }
        if (best == diff.size() || best_val < threshold) break;
        const Vec2 peak = diff.pixel_center(best / diff.width(), best % diff.width());
        // Refine with a signed-intensity centroid inside one PSF width.
        const double sign = diff.data()[best] > 0 ? 1.0 : -1.0;
        Vec2 acc{};
        double wsum = 0.0;
        const PixelRect r = rect_around(diff, peak, c);
        for (std::size_t i = r.row; i < r.row + r.rows; ++i)
            for (std::size_t j = r.col; j < r.col + r.cols; ++j) {
                const double v = sign * diff.at(i, j);
                if (v <= 0) continue;
                acc += v * diff.pixel_center(i, j);
                wsum += v;
            }
        const Vec2 center = wsum > 0 ? (1.0 / wsum) * acc : peak;
        mask_disc(center, opt.spot_exclusion_widths * c);
        const ApertureSpec ap = default_aperture(center, c);
        if (!aperture_fits(diff, ap)) continue;
        OffSpotChange ev;
        ev.position = center;
        ev.delta_units = spot_net_counts(diff, ap) / unit;
        ev.kind = classify(ev.delta_units, ev.count);
        if (ev.kind != ChangeKind::unchanged) rep.off_spot.push_back(ev);
    }
    return rep;
}

}  // namespace ionimp::analyze
