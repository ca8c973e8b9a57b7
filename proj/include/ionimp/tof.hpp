#pragma once

// Time-of-flight kinematics for species identification.
//
// Only the ideal field-free drift t = L * sqrt(m / (2 q U)) is modeled. The
// acceleration region inside the trap endcap is not, so absolute flight
// times come out shorter than measured ones (Pr+ at 5.9 kV over 0.428 m:
// 4.76 us ideal against 5.79 us observed). Ratios and orderings are exact.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ionimp/core.hpp"

namespace ionimp::tof {

inline constexpr double kAtomicMassUnit = 1.66053906660e-27;  // kg
inline constexpr double kElementaryCharge = 1.602176634e-19;  // C

struct TofEvent {
    double arrival_time = 0.0;  // s
    std::optional<std::string> label;
};

struct Species {
    std::string name;
    double mass_amu = 0.0;
    int charge = 1;
};

using SpeciesTable = std::vector<Species>;

/// 40Ca+ and 141Pr+ by mass number.
inline SpeciesTable default_species() { return {{"Ca", 40.0, 1}, {"Pr", 141.0, 1}}; }

/// Field-free drift time in seconds. `voltage_kv` is the accelerating
/// potential, so the kinetic energy is charge * voltage.
inline double drift_time(double mass_amu, double charge, double voltage_kv, double distance_m) {
    if (!(mass_amu > 0.0) || !(charge > 0.0) || !(voltage_kv > 0.0) || !(distance_m > 0.0)) {
        throw InvalidArgument("drift_time: all inputs must be > 0");
    }
    const double m = mass_amu * kAtomicMassUnit;
    const double qu = charge * kElementaryCharge * voltage_kv * 1e3;
    return distance_m * std::sqrt(m / (2.0 * qu));
}

/// Species whose predicted drift time is nearest to the event, if within
/// `tolerance`; nullopt means unknown. Equal distances resolve to the
/// earlier table entry.
inline std::optional<std::string> classify_species(const TofEvent& ev, const SpeciesTable& table, double voltage_kv,
                                                   double distance_m, double tolerance) {
    if (table.empty()) throw InvalidArgument("classify_species: empty species table");
    if (!(tolerance > 0.0)) throw InvalidArgument("classify_species: tolerance must be > 0");
    const Species* best = nullptr;
    double best_gap = tolerance;
    for (const auto& sp : table) {
        const double gap = std::abs(ev.arrival_time - drift_time(sp.mass_amu, sp.charge, voltage_kv, distance_m));
        if (gap <= best_gap && (!best || gap < best_gap)) {
            best = &sp;
            best_gap = gap;
        }
    }
    if (!best) return std::nullopt;
    return best->name;
}

struct HistogramBin {
    double center = 0.0;  // s
    std::size_t count = 0;
};

struct TofSummary {
    std::vector<HistogramBin> histogram;
    double mean = 0.0;  // s
    double fwhm = 0.0;  // s
};

/// Histogram with bins anchored at multiples of `bin_width`, the mean
/// arrival time, and the FWHM read off the histogram by linear
/// interpolation of the half-maximum crossings around the tallest bin.
inline TofSummary histogram_summary(std::span<const TofEvent> events, double bin_width) {
    if (events.empty()) throw InvalidArgument("histogram_summary: no events");
    if (!(bin_width > 0.0)) throw InvalidArgument("histogram_summary: bin_width must be > 0");
    double lo = events.front().arrival_time, hi = lo, sum = 0.0;
    for (const auto& e : events) {
        lo = std::min(lo, e.arrival_time);
        hi = std::max(hi, e.arrival_time);
        sum += e.arrival_time;
    }
    TofSummary out;
    out.mean = sum / static_cast<double>(events.size());

    const double start = std::floor(lo / bin_width);
    const auto nbins = static_cast<std::size_t>(std::floor(hi / bin_width) - start) + 1;
    out.histogram.resize(nbins);
    for (std::size_t b = 0; b < nbins; ++b) out.histogram[b].center = (start + static_cast<double>(b) + 0.5) * bin_width;
    for (const auto& e : events) {
        auto b = static_cast<std::size_t>(std::floor(e.arrival_time / bin_width) - start);
        out.histogram[std::min(b, nbins - 1)].count += 1;
    }
    if (hi == lo) return out;  // a single arrival time has no width

    std::size_t peak = 0;
    for (std::size_t b = 1; b < nbins; ++b)
        if (out.histogram[b].count > out.histogram[peak].count) peak = b;
    const double half = 0.5 * static_cast<double>(out.histogram[peak].count);
    const auto count = [&](long b) {
        return b < 0 || b >= static_cast<long>(nbins) ? 0.0 : static_cast<double>(out.histogram[static_cast<std::size_t>(b)].count);
    };
    const auto center = [&](long b) { return (start + static_cast<double>(b) + 0.5) * bin_width; };
    // Walk outward to the first bin at or below half maximum (bins past the
    // ends count as empty) and interpolate between it and its inner neighbour.
    long l = static_cast<long>(peak);
    while (count(l - 1) > half) --l;
    const double cl_in = count(l), cl_out = count(l - 1);
    const double left = center(l - 1) + (half - cl_out) / (cl_in - cl_out) * bin_width;
    long r = static_cast<long>(peak);
    while (count(r + 1) > half) ++r;
    const double cr_in = count(r), cr_out = count(r + 1);
    const double right = center(r + 1) - (half - cr_out) / (cr_in - cr_out) * bin_width;
    out.fwhm = right - left;
    return out;
}

}  // namespace ionimp::tof
