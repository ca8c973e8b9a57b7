#pragma once

// End-to-end glue: emitter-map files, the blind area analysis
// (register -> subtract -> photometry -> quantify -> fit -> metrics), and the
// CSV/JSON report writers used by the command-line tool.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ionimp/analyze.hpp"
#include "ionimp/config.hpp"
#include "ionimp/core.hpp"
#include "ionimp/gauss_fit.hpp"
#include "ionimp/image_io.hpp"
#include "ionimp/metrics.hpp"
#include "ionimp/optics.hpp"
#include "ionimp/profiler.hpp"
#include "ionimp/simulator.hpp"
#include "ionimp/tof.hpp"

namespace ionimp::pipeline {

using nlohmann::json;

// Bumped whenever a CSV column list below changes.
inline constexpr int kCsvSchemaVersion = 1;

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::string fmt(double v) { return format_double(v); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Emitter maps
// ---------------------------------------------------------------------------

inline constexpr const char* kEmitterColumns = "x_nm,y_nm,site,active,provenance";

/// "# {json}" header with the field of view, the column line, one row per
/// emitter. Provenance is "spot:<id>" or "native".
inline void write_emitters(std::ostream& os, const sim::EmitterMap& map) {
    const json h = {{"format", "ionimp-emitters"},
                    {"version", kCsvSchemaVersion},
                    {"fov_nm", {map.fov.min.x, map.fov.min.y, map.fov.max.x, map.fov.max.y}}};
    os << "# " << h.dump() << '\n' << kEmitterColumns << '\n';
    for (const auto& e : map.emitters) {
        os << detail::fmt(e.position.x) << ',' << detail::fmt(e.position.y) << ',' << e.site << ','
           << (e.active ? 1 : 0) << ',' << (e.native() ? std::string("native") : "spot:" + std::to_string(e.spot))
           << '\n';
    }
}

inline sim::EmitterMap read_emitters(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("# ", 0) != 0) throw FormatError("emitter map: missing header line");
    sim::EmitterMap map;
    try {
        const json h = json::parse(line.substr(2));
        if (h.at("format").get<std::string>() != "ionimp-emitters") throw FormatError("not an ionimp emitter map");
        const auto& f = h.at("fov_nm");
        map.fov = {{f.at(0).get<double>(), f.at(1).get<double>()}, {f.at(2).get<double>(), f.at(3).get<double>()}};
    } catch (const json::exception& e) {
        throw FormatError(std::string("emitter map header: ") + e.what());
    }
    if (!std::getline(is, line) || Config::trim(line) != kEmitterColumns) {
        throw FormatError("emitter map: expected columns '" + std::string(kEmitterColumns) + "'");
    }
    std::size_t lineno = 2;
    while (std::getline(is, line)) {
        ++lineno;
        if (Config::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(Config::trim(line));
        if (cells.size() != 5) throw FormatError("emitter map line " + std::to_string(lineno) + ": expected 5 fields");
        sim::Emitter e;
        e.position = {parse_double(cells[0]), parse_double(cells[1])};
        e.site = static_cast<int>(parse_double(cells[2]));
        e.active = parse_double(cells[3]) != 0.0;
        if (cells[4] == "native") {
            e.spot = sim::kNative;
        } else if (cells[4].rfind("spot:", 0) == 0) {
            e.spot = static_cast<int>(parse_double(cells[4].substr(5)));
            if (e.spot < 1) throw FormatError("emitter map line " + std::to_string(lineno) + ": bad spot id");
        } else {
            throw FormatError("emitter map line " + std::to_string(lineno) + ": bad provenance '" + cells[4] + "'");
        }
        try {
            map.add(e);
        } catch (const InvalidArgument& err) {
            throw FormatError("emitter map line " + std::to_string(lineno) + ": " + err.what());
        }
    }
    return map;
}

inline void save_emitters(const std::string& path, const sim::EmitterMap& map) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path);
    write_emitters(f, map);
}

inline sim::EmitterMap load_emitters(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot read " + path);
    return read_emitters(f);
}

// ---------------------------------------------------------------------------
// Area analysis
// ---------------------------------------------------------------------------

struct AreaConfig {
    std::vector<Vec2> spot_centers;  // nominal, spot id = index + 1
    double pitch = 2000.0;           // nm
    double unit = 334e3;             // counts per ion (C)
    optics::PsfModel psf{};
    bool register_scans = true;
    int max_shift = 8;  // pixels
    /// Re-center each aperture on a free-width Gaussian fit of the net image.
    bool refine_centers = true;
    double refine_max_offset_widths = 3.0;
    double refine_min_peak_fraction = 0.3;  // of a single ion's peak
    std::size_t max_ions_per_fit = 12;
    std::set<int> exclusions;
    metrics::RegistrationOptions registration{};
    metrics::DispersionOptions dispersion{};
};

struct SpotResult {
    int spot_id = 0;
    Vec2 nominal{};
    Vec2 center{};
    bool center_fitted = false;
    bool measured = false;
    analyze::SpotQuant quant;
    std::vector<Vec2> ion_positions;
    bool fit_converged = false;
    bool degenerate = false;
    std::string note;
};

struct AreaResult {
    analyze::PixelShift shift;
    ScanImage net;  // after - before, registered
    std::vector<SpotResult> spots;
    long total_ions = 0;
    std::optional<metrics::GridRegistration> grid;
    std::vector<int> grid_spot_ids;
    std::optional<metrics::DispersionReport> accuracy;
    std::optional<metrics::DispersionReport> precision;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::optional<Vec2> refine_center(const ScanImage& net, const Vec2& nominal, const AreaConfig& cfg) {
    const double c = cfg.psf.c;
    const PixelRect roi = rect_around(net, nominal, 4.0 * c);
    if (roi.rows < 5 || roi.cols < 5) return std::nullopt;
    const fit::GaussFit f = fit::fit_gaussian2d(net, roi, fit::initial_guess(net, roi, c));
    const double single_peak = optics::amplitude_for_total(cfg.unit, cfg.psf, net.pixel_size());
    const Vec2 p{f.x0, f.y0};
    if (!f.converged || !(f.A >= cfg.refine_min_peak_fraction * single_peak)) return std::nullopt;
    if (!(f.c > 0.5 * c && f.c < 3.0 * c)) return std::nullopt;
    if (!(norm(p - nominal) <= cfg.refine_max_offset_widths * c)) return std::nullopt;
    return p;
}

}  // namespace detail

/// Blind analysis of one implanted area from the pre-implantation scan and
/// the post-anneal scan. Per-spot failures are recorded and skipped.
inline AreaResult analyze_area(const ScanImage& before, const ScanImage& after, const AreaConfig& cfg) {
    if (cfg.spot_centers.empty()) throw InvalidArgument("analyze_area: no spot centers");
    if (!(cfg.unit > 0.0)) throw InvalidArgument("analyze_area: unit must be > 0");
    cfg.psf.validate();
    AreaResult res;
    res.shift = cfg.register_scans ? analyze::estimate_shift(before, after, cfg.max_shift) : analyze::PixelShift{};
    res.net = subtract_images(analyze::apply_shift(before, after, res.shift), before);
    const double c = cfg.psf.c;

    for (std::size_t k = 0; k < cfg.spot_centers.size(); ++k) {
        SpotResult s;
        s.spot_id = static_cast<int>(k + 1);
        s.nominal = s.center = cfg.spot_centers[k];
        s.quant.spot_id = s.spot_id;
        if (cfg.refine_centers) {
            if (auto p = detail::refine_center(res.net, s.nominal, cfg)) {
                s.center = *p;
                s.center_fitted = true;
            }
        }
        const auto ap = analyze::default_aperture(s.center, c);
        if (!analyze::aperture_fits(res.net, ap)) {
            s.note = "aperture exceeds image";
            res.warnings.push_back("spot " + std::to_string(s.spot_id) + ": " + s.note);
            res.spots.push_back(s);
            continue;
        }
        s.measured = true;
        s.quant = analyze::quantify_spot(analyze::spot_net_counts(res.net, ap), cfg.unit, s.spot_id);
        res.total_ions += s.quant.ions_rounded;

        const auto n = static_cast<std::size_t>(s.quant.ions_rounded);
        if (n == 0) {
            res.spots.push_back(s);
            continue;
        }
        if (n > cfg.max_ions_per_fit) {
            s.note = "too many ions to fit";
            res.warnings.push_back("spot " + std::to_string(s.spot_id) + ": " + s.note);
            res.spots.push_back(s);
            continue;
        }
        try {
            const fit::MultiFit mf = fit::fit_multi_gaussian(res.net, rect_around(res.net, s.center, 4.0 * c), n, c);
            s.fit_converged = mf.converged;
            s.degenerate = mf.converged && fit::multi_fit_degenerate(mf);
            if (mf.converged) {
                for (const auto& g : mf.components) s.ion_positions.push_back(g.position);
            } else {
                s.note = "multi-Gaussian fit failed: " + mf.message;
            }
        } catch (const Error& e) {
            s.note = std::string("multi-Gaussian fit rejected: ") + e.what();
        }
        if (!s.note.empty()) res.warnings.push_back("spot " + std::to_string(s.spot_id) + ": " + s.note);
        res.spots.push_back(s);
    }

    // Accuracy: fitted spot centers against a registered ideal grid. Excluded
    // spots take no part in the registration either.
    std::vector<Vec2> centers;
    for (const auto& s : res.spots) {
        if (!s.center_fitted || s.quant.ions_rounded < 1 || cfg.exclusions.contains(s.spot_id)) continue;
        centers.push_back(s.center);
        res.grid_spot_ids.push_back(s.spot_id);
    }
    if (centers.size() >= 3) {
        try {
            res.grid = metrics::register_grid(centers, cfg.pitch, cfg.registration);
            res.accuracy = metrics::accuracy_sigma(centers, res.grid->grid, {}, cfg.dispersion);
            for (int id : cfg.exclusions)
                if (id >= 1 && static_cast<std::size_t>(id) <= res.spots.size()) res.accuracy->excluded.push_back(id);
        } catch (const Error& e) {
            res.grid.reset();
            res.accuracy.reset();
            res.warnings.push_back(std::string("accuracy: ") + e.what());
        }
    } else {
        res.warnings.push_back("accuracy: fewer than 3 fitted spot centers");
    }

    // Precision: fitted ion positions about their spot centroid.
    std::vector<std::vector<Vec2>> per_spot;
    for (const auto& s : res.spots) per_spot.push_back(s.degenerate ? std::vector<Vec2>{} : s.ion_positions);
    try {
        res.precision = metrics::precision_sigma(per_spot, cfg.exclusions, cfg.dispersion);
    } catch (const Error& e) {
        res.warnings.push_back(std::string("precision: ") + e.what());
    }
    return res;
}

/// Fraction of spots whose rounded count equals the active implanted
/// emitters of that spot in `truth`.
inline double match_rate(const AreaResult& res, const sim::EmitterMap& truth) {
    if (res.spots.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& s : res.spots)
        if (s.measured && static_cast<std::size_t>(s.quant.ions_rounded) == truth.active_in_spot(s.spot_id)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(res.spots.size());
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Table-shaped quantification: spot, kcounts, units of C, rounded; closed by
/// a "sum" row carrying the rounded total.
inline void write_quantification_csv(std::ostream& os, const std::vector<analyze::SpotQuant>& rows) {
    os << "spot,kcounts,units_of_C,rounded\n";
    long sum = 0;
    for (const auto& q : rows) {
        os << q.spot_id << ',' << detail::fmt(q.net_counts / 1e3) << ',' << analyze::format_units(q.ions_fractional)
           << ',' << q.ions_rounded << '\n';
        sum += q.ions_rounded;
    }
    os << "sum,,," << sum << '\n';
}

inline void write_changes_csv(std::ostream& os, const analyze::DiffReport& rep) {
    os << "spot,delta_units,classification,x_nm,y_nm\n";
    const auto label = [](analyze::ChangeKind k, long n) {
        std::string s = analyze::to_string(k);
        if (k != analyze::ChangeKind::unchanged) s += "(" + std::to_string(n) + ")";
        return s;
    };
    for (const auto& s : rep.spots)
        os << s.spot_id << ',' << analyze::format_units(s.delta_units) << ',' << label(s.kind, s.count) << ",,\n";
    for (const auto& e : rep.off_spot)
        os << "off-spot," << analyze::format_units(e.delta_units) << ',' << label(e.kind, e.count) << ','
           << detail::fmt(e.position.x) << ',' << detail::fmt(e.position.y) << '\n';
}

/// Spot center minus its registered grid node, for every fitted spot.
inline void write_accuracy_residuals_csv(std::ostream& os, const AreaResult& res, const std::set<int>& exclusions) {
    os << "spot,residual_x_nm,residual_y_nm,included\n";
    if (!res.grid) return;
    for (const auto& s : res.spots) {
        if (!s.center_fitted || s.quant.ions_rounded < 1) continue;
        const auto [r, c] = res.grid->grid.nearest(s.center);
        const Vec2 d = s.center - res.grid->grid.node(r, c);
        os << s.spot_id << ',' << detail::fmt(d.x) << ',' << detail::fmt(d.y) << ','
           << (exclusions.contains(s.spot_id) ? 0 : 1) << '\n';
    }
}

/// Ion position minus its spot centroid, for spots with two or more ions.
inline void write_precision_residuals_csv(std::ostream& os, const AreaResult& res, const std::set<int>& exclusions) {
    os << "spot,residual_x_nm,residual_y_nm,included\n";
    for (const auto& s : res.spots) {
        if (s.ion_positions.size() < 2) continue;
        Vec2 m{};
        for (const auto& p : s.ion_positions) m += p;
        m = (1.0 / static_cast<double>(s.ion_positions.size())) * m;
        const bool inc = !exclusions.contains(s.spot_id) && !s.degenerate;
        for (const auto& p : s.ion_positions)
            os << s.spot_id << ',' << detail::fmt(p.x - m.x) << ',' << detail::fmt(p.y - m.y) << ',' << (inc ? 1 : 0)
               << '\n';
    }
}

inline json dispersion_json(const std::optional<metrics::DispersionReport>& r) {
    if (!r) return nullptr;
    return {{"sigma_nm", r->sigma}, {"n", r->n_points}, {"exclusions", r->excluded}};
}

inline json area_summary_json(const AreaResult& res) {
    json spots = json::array();
    for (const auto& s : res.spots) {
        json ions = json::array();
        for (const auto& p : s.ion_positions) ions.push_back({p.x, p.y});
        spots.push_back({{"spot", s.spot_id},
                         {"center_nm", {s.center.x, s.center.y}},
                         {"center_fitted", s.center_fitted},
                         {"measured", s.measured},
                         {"net_counts", s.quant.net_counts},
                         {"ions_fractional", s.quant.ions_fractional},
                         {"ions_rounded", s.quant.ions_rounded},
                         {"fit_converged", s.fit_converged},
                         {"degenerate", s.degenerate},
                         {"ion_positions_nm", ions},
                         {"note", s.note}});
    }
    json out = {{"shift_px", {res.shift.rows, res.shift.cols}},
                {"total_ions", res.total_ions},
                {"accuracy", dispersion_json(res.accuracy)},
                {"precision", dispersion_json(res.precision)},
                {"spots", spots},
                {"warnings", res.warnings}};
    if (res.grid) {
        const auto& g = res.grid->grid;
        out["grid"] = {{"origin_nm", {g.origin.x, g.origin.y}}, {"pitch_nm", g.pitch}, {"rotation_rad", g.rotation}};
    }
    return out;
}

inline void write_trace_csv(std::ostream& os, const std::vector<profiler::TraceRow>& trace) {
    os << "event_index,edge_pos_nm,detected,posterior_mean_sigma_nm,posterior_std_sigma_nm\n";
    for (const auto& r : trace)
        os << r.index << ',' << detail::fmt(r.event.edge_pos) << ',' << (r.event.detected ? 1 : 0) << ','
           << detail::fmt(r.sigma_mean) << ',' << detail::fmt(r.sigma_std) << '\n';
}

inline void write_edge_histogram_csv(std::ostream& os, const std::vector<profiler::EdgeHistogramBin>& bins) {
    os << "bin_lo_nm,bin_hi_nm,detected,blocked\n";
    for (const auto& b : bins)
        os << detail::fmt(b.lo) << ',' << detail::fmt(b.hi) << ',' << b.detected << ',' << b.blocked << '\n';
}

inline json estimate_json(const profiler::BeamEstimate& e) {
    const auto p = [](const profiler::ParamEstimate& q) { return json{{"mean", q.mean}, {"std", q.std}}; };
    return {{"x0_nm", p(e.x0)}, {"sigma_nm", p(e.sigma)}, {"a", p(e.a)}};
}

inline void write_tof_events_csv(std::ostream& os, const std::vector<tof::TofEvent>& events) {
    os << "time_s,label\n";
    for (const auto& e : events) os << detail::fmt(e.arrival_time) << ',' << e.label.value_or("unknown") << '\n';
}

inline void write_tof_histogram_csv(std::ostream& os, const tof::TofSummary& s) {
    os << "bin_center_s,count\n";
    for (const auto& b : s.histogram) os << detail::fmt(b.center) << ',' << b.count << '\n';
}

/// Reads "spot,kcounts" rows (extra columns ignored; a header line and a
/// "sum" row are skipped).
inline std::vector<std::pair<int, double>> read_spot_counts_csv(std::istream& is) {
    std::vector<std::pair<int, double>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = Config::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto cells = detail::split_csv_line(t);
        if (cells.size() < 2) throw FormatError("spot counts line " + std::to_string(lineno) + ": expected spot,kcounts");
        if (cells[0] == "spot" || cells[0] == "sum") continue;
        out.emplace_back(static_cast<int>(parse_double(cells[0])), parse_double(cells[1]));
    }
    return out;
}

}  // namespace ionimp::pipeline
