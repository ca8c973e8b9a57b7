// ionimp: simulate, profile, analyze, quantify, tof, tables.
//
// Every subcommand reads an optional key-value config (--config), applies
// --set key=value overrides and then its own flags, and writes into one run
// directory (--out): the artifacts, config.snapshot with every resolved key,
// and manifest.json with SHA-256 hashes and the CSV column lists.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "ionimp/ionimp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ionimp;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

// ---------------------------------------------------------------------------
// Configuration schema
// ---------------------------------------------------------------------------

struct KeyDef {
    std::string key;
    std::string fallback;  // empty: depends on plan.area
    std::string help;
};

const std::vector<KeyDef>& schema() {
    static const std::vector<KeyDef> keys = {
        {"seed", "1", "global seed"},

        {"profile.x0_nm", "0", "true beam center"},
        {"profile.sigma_nm", "11.3", "true beam 1-sigma radius"},
        {"profile.a", "0.9", "true detection efficiency"},
        {"profile.events", "308", "number of edge measurements (>= 1)"},
        {"profile.hist_bin_nm", "5", "edge histogram bin width"},
        {"profile.grid_x0_min_nm", "-200", "posterior grid"},
        {"profile.grid_x0_max_nm", "200", "posterior grid"},
        {"profile.grid_x0_points", "101", "posterior grid"},
        {"profile.grid_sigma_min_nm", "1", "posterior grid"},
        {"profile.grid_sigma_max_nm", "100", "posterior grid"},
        {"profile.grid_sigma_points", "101", "posterior grid"},
        {"profile.grid_a_min", "0.5", "posterior grid"},
        {"profile.grid_a_max", "1", "posterior grid"},
        {"profile.grid_a_points", "21", "posterior grid"},
        {"profile.candidate_quantile", "0.001", "x0 tail mass outside the candidate window"},
        {"profile.candidate_sigma_span", "2", "window padding in posterior-mean sigmas"},
        {"profile.prune_tolerance", "1e-12", "relative weight below which grid points are skipped when ranking"},

        {"plan.area", "B", "A (8 ions per spot) or B (4 per spot, spot 12 has 2)"},
        {"plan.origin_x_nm", "0", "center of spot 1"},
        {"plan.origin_y_nm", "0", "center of spot 1"},
        {"plan.pitch_nm", "2000", "grid pitch"},
        {"plan.rows", "3", "grid rows"},
        {"plan.cols", "4", "grid columns"},
        {"plan.ions_per_spot", "0", "override of the per-area count when > 0"},
        {"plan.short_last_spot", "true", "area B spot 12 receives 2 ions"},
        {"plan.fov_margin_nm", "1500", "scan margin around the grid"},

        {"implant.pointing_sigma_nm", "57", "spot-center scatter about the ideal grid"},
        {"implant.beam_sigma_nm", "30.7", "beam 1-sigma radius"},
        {"implant.straggle_sigma_nm", "3", "lateral straggle"},

        {"native.density_cm3", "6e11", "native emitter density"},
        {"native.depth_nm", "1000", "depth of field for native emitters"},

        {"anneal.yield", "0.5", "first anneal: activation probability"},
        {"anneal.migration_loss", "0", "first anneal: loss probability of active ions"},
        {"anneal.migration_sigma_nm", "0", "first anneal: displacement of active ions"},
        {"anneal.native_appear_rate", "0", "first anneal: natives appearing per 100 um^2"},
        {"anneal.native_vanish_rate", "0", "first anneal: natives vanishing per 100 um^2"},
        {"anneal2.yield", "0.09", "second anneal: activation probability of dark ions"},
        {"anneal2.migration_loss", "0.13", "second anneal: loss probability of active ions"},
        {"anneal2.migration_sigma_nm", "0", "second anneal: displacement of active ions"},
        {"anneal2.native_appear_rate", "1", "second anneal: natives appearing per 100 um^2"},
        {"anneal2.native_vanish_rate", "0", "second anneal: natives vanishing per 100 um^2"},

        {"render.brightness_kcounts", "", "counts per ion over the three polarizations (A 395, B 334)"},
        {"render.background", "1", "uniform background counts per pixel"},
        {"render.pixel_nm", "25", "pixel size"},
        {"render.dwell_s", "0.006", "pixel dwell"},
        {"render.psf_c_nm", "115", "PSF width"},
        {"render.brightness_model", "linear", "linear or quadratic"},
        {"render.noise", "true", "Poisson photon noise"},
        {"render.format", "bin", "scan file format: bin or csv"},

        {"analyze.unit_kcounts", "", "single-ion unit C (A 395, B 334)"},
        {"analyze.psf_c_nm", "115", "PSF width for apertures and fits"},
        {"analyze.register", "true", "estimate an integer-pixel shift between scans"},
        {"analyze.max_shift_px", "8", "registration search radius"},
        {"analyze.refine_centers", "true", "re-center apertures on a Gaussian fit"},
        {"analyze.exclusions", "", "spot ids left out of the metrics (A: 12, B: 1,7,9)"},
        {"analyze.fit_rotation", "true", "grid registration fits a rotation"},
        {"analyze.unbiased", "false", "dispersion divides by residual degrees of freedom"},

        {"tof.species", "Pr", "Pr or Ca"},
        {"tof.ca_fraction", "0", "fraction of events that are Ca+"},
        {"tof.voltage_kv", "5.9", "accelerating potential"},
        {"tof.distance_m", "0.428", "trap to detector"},
        {"tof.events", "50", "number of events"},
        {"tof.fwhm_ns", "2", "arrival-time jitter (FWHM)"},
        {"tof.bin_ns", "0.5", "histogram bin width"},
        {"tof.tolerance_us", "0.5", "species classification window"},
    };
    return keys;
}

std::set<std::string> known_keys() {
    std::set<std::string> k;
    for (const auto& d : schema()) k.insert(d.key);
    return k;
}

/// User settings over the schema defaults, with area-dependent defaults
/// resolved.
Config resolve(const Config& user) {
    user.require_known(known_keys());
    Config eff;
    for (const auto& d : schema()) eff.set(d.key, d.fallback);
    for (const auto& [k, v] : user.values()) eff.set(k, v);
    const std::string area = eff.get_string("plan.area", "B");
    if (area != "A" && area != "B") throw ConfigError("plan.area", "must be A or B");
    const auto area_default = [&](const std::string& key, const std::string& a, const std::string& b) {
        if (!user.has(key)) eff.set(key, area == "A" ? a : b);
    };
    area_default("render.brightness_kcounts", "395", "334");
    area_default("analyze.unit_kcounts", "395", "334");
    area_default("analyze.exclusions", "12", "1,7,9");
    return eff;
}

void require_positive(const Config& c, const std::string& key) {
    if (!(c.get_double(key, 0) > 0)) throw ConfigError(key, "must be > 0");
}

void require_nonneg(const Config& c, const std::string& key) {
    if (!(c.get_double(key, 0) >= 0)) throw ConfigError(key, "must be >= 0");
}

void require_probability(const Config& c, const std::string& key) {
    const double v = c.get_double(key, 0);
    if (!(v >= 0 && v <= 1)) throw ConfigError(key, "must lie in [0, 1]");
}

Seed seed_of(const Config& c) {
    const long s = c.get_long("seed", 1);
    if (s < 0) throw ConfigError("seed", "must be >= 0");
    return Seed{static_cast<std::uint64_t>(s)};
}

sim::ImplantPlan plan_of(const Config& c) {
    sim::PlanSpec spec;
    spec.area = c.get_string("plan.area", "B") == "A" ? sim::Area::A : sim::Area::B;
    spec.origin = {c.get_double("plan.origin_x_nm", 0), c.get_double("plan.origin_y_nm", 0)};
    require_positive(c, "plan.pitch_nm");
    spec.pitch = c.get_double("plan.pitch_nm", 2000);
    spec.rows = c.get_count("plan.rows", 3);
    spec.cols = c.get_count("plan.cols", 4);
    if (spec.rows == 0) throw ConfigError("plan.rows", "must be >= 1");
    if (spec.cols == 0) throw ConfigError("plan.cols", "must be >= 1");
    spec.ions_per_spot = c.get_count("plan.ions_per_spot", 0);
    spec.short_last_spot = c.get_bool("plan.short_last_spot", true);
    require_nonneg(c, "implant.pointing_sigma_nm");
    spec.pointing_sigma = c.get_double("implant.pointing_sigma_nm", 57);
    return sim::build_plan(spec);
}

sim::AnnealModel anneal_of(const Config& c, const std::string& p) {
    for (const auto* k : {".yield", ".migration_loss"}) require_probability(c, p + k);
    for (const auto* k : {".migration_sigma_nm", ".native_appear_rate", ".native_vanish_rate"}) require_nonneg(c, p + k);
    sim::AnnealModel m;
    m.activation_yield = c.get_double(p + ".yield", 0);
    m.migration_loss = c.get_double(p + ".migration_loss", 0);
    m.migration_sigma = c.get_double(p + ".migration_sigma_nm", 0);
    m.native_appear_rate = c.get_double(p + ".native_appear_rate", 0);
    m.native_vanish_rate = c.get_double(p + ".native_vanish_rate", 0);
    return m;
}

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 failed");
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

class RunDir {
public:
    RunDir(std::string command, const std::string& dir) : command_(std::move(command)), dir_(dir) {
        fs::create_directories(dir_);
    }

    void write(const std::string& name, const std::string& content) {
        std::ofstream f(dir_ / name, std::ios::binary);
        if (!f || !(f << content)) throw Error("cannot write " + (dir_ / name).string());
        files_[name] = content;
    }

    void write_scan(const std::string& name, const ScanImage& img) {
        std::ostringstream os(std::ios::binary);
        if (format_for_path(name) == ScanFormat::csv) {
            write_scan_csv(os, img);
        } else {
            write_scan_binary(os, img);
        }
        write(name, os.str());
    }

    void columns(const std::string& name, const std::string& cols) { columns_[name] = cols; }

    void finish(const Config& effective, const std::set<std::string>& prefixes) {
        std::ostringstream snap;
        snap << "# ionimp " << command_ << " resolved configuration\n";
        for (const auto& [k, v] : effective.values()) {
            const auto dot = k.find('.');
            const std::string group = dot == std::string::npos ? k : k.substr(0, dot);
            if (prefixes.contains(group)) snap << k << " = " << v << '\n';
        }
        write("config.snapshot", snap.str());

        json files = json::array();
        for (const auto& [name, content] : files_)
            files.push_back({{"name", name}, {"bytes", content.size()}, {"sha256", sha256_hex(content)}});
        const json manifest = {{"tool", "ionimp"},
                               {"command", command_},
                               {"csv_schema_version", pipeline::kCsvSchemaVersion},
                               {"csv_columns", columns_},
                               {"files", files}};
        std::ofstream f(dir_ / "manifest.json", std::ios::binary);
        f << manifest.dump(2) << '\n';
    }

private:
    std::string command_;
    fs::path dir_;
    std::map<std::string, std::string> files_;
    std::map<std::string, std::string> columns_;
};

template <class F>
std::string to_text(F&& f) {
    std::ostringstream os;
    f(os);
    return os.str();
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

void cmd_profile(const Config& c, const std::string& out) {
    const long events = c.get_long("profile.events", 308);
    if (events < 1) throw ConfigError("profile.events", "must be >= 1");
    profiler::BeamParams truth{c.get_double("profile.x0_nm", 0), c.get_double("profile.sigma_nm", 11.3),
                               c.get_double("profile.a", 0.9)};
    require_positive(c, "profile.sigma_nm");
    require_probability(c, "profile.a");
    require_positive(c, "profile.hist_bin_nm");
    profiler::SessionConfig sc;
    auto& g = sc.grid;
    g.x0_min = c.get_double("profile.grid_x0_min_nm", g.x0_min);
    g.x0_max = c.get_double("profile.grid_x0_max_nm", g.x0_max);
    g.x0_points = c.get_count("profile.grid_x0_points", g.x0_points);
    g.sigma_min = c.get_double("profile.grid_sigma_min_nm", g.sigma_min);
    g.sigma_max = c.get_double("profile.grid_sigma_max_nm", g.sigma_max);
    g.sigma_points = c.get_count("profile.grid_sigma_points", g.sigma_points);
    g.a_min = c.get_double("profile.grid_a_min", g.a_min);
    g.a_max = c.get_double("profile.grid_a_max", g.a_max);
    g.a_points = c.get_count("profile.grid_a_points", g.a_points);
    if (!(g.x0_max > g.x0_min)) throw ConfigError("profile.grid_x0_max_nm", "must exceed grid_x0_min_nm");
    if (!(g.sigma_min > 0)) throw ConfigError("profile.grid_sigma_min_nm", "must be > 0");
    if (!(g.sigma_max > g.sigma_min)) throw ConfigError("profile.grid_sigma_max_nm", "must exceed grid_sigma_min_nm");
    if (!(g.a_min >= 0 && g.a_max <= 1 && g.a_max > g.a_min)) throw ConfigError("profile.grid_a_max", "need 0 <= a_min < a_max <= 1");
    if (g.x0_points < 2) throw ConfigError("profile.grid_x0_points", "must be >= 2");
    if (g.sigma_points < 2) throw ConfigError("profile.grid_sigma_points", "must be >= 2");
    if (g.a_points < 2) throw ConfigError("profile.grid_a_points", "must be >= 2");
    sc.candidate_quantile = c.get_double("profile.candidate_quantile", sc.candidate_quantile);
    if (!(sc.candidate_quantile >= 0 && sc.candidate_quantile < 0.5)) throw ConfigError("profile.candidate_quantile", "must lie in [0, 0.5)");
    require_nonneg(c, "profile.candidate_sigma_span");
    sc.candidate_sigma_span = c.get_double("profile.candidate_sigma_span", sc.candidate_sigma_span);
    require_nonneg(c, "profile.prune_tolerance");
    sc.prune_tolerance = c.get_double("profile.prune_tolerance", sc.prune_tolerance);

    const auto res = profiler::run_session(truth, static_cast<std::size_t>(events), sc, seed_of(c));
    RunDir run("profile", out);
    run.write("trace.csv", to_text([&](std::ostream& os) { pipeline::write_trace_csv(os, res.trace); }));
    run.columns("trace.csv", "event_index,edge_pos_nm,detected,posterior_mean_sigma_nm,posterior_std_sigma_nm");
    const auto bins = profiler::edge_histogram(res.trace, c.get_double("profile.hist_bin_nm", 5));
    run.write("edge_histogram.csv", to_text([&](std::ostream& os) { pipeline::write_edge_histogram_csv(os, bins); }));
    run.columns("edge_histogram.csv", "bin_lo_nm,bin_hi_nm,detected,blocked");
    std::size_t detected = 0;
    for (const auto& r : res.trace) detected += r.event.detected ? 1 : 0;
    const json summary = {{"truth", {{"x0_nm", truth.x0}, {"sigma_nm", truth.sigma}, {"a", truth.a}}},
                          {"events", events},
                          {"detected", detected},
                          {"estimate", pipeline::estimate_json(res.estimate)}};
    run.write("posterior.json", summary.dump(2) + "\n");
    run.finish(c, {"seed", "profile"});
    std::cout << "sigma = " << res.estimate.sigma.mean << " +/- " << res.estimate.sigma.std << " nm after " << events
              << " events\n";
}

void cmd_simulate(const Config& c, const std::string& out) {
    const auto plan = plan_of(c);
    const Seed seed = seed_of(c);
    for (const auto* k : {"implant.beam_sigma_nm", "implant.straggle_sigma_nm", "native.density_cm3", "native.depth_nm",
                          "plan.fov_margin_nm", "render.background"})
        require_nonneg(c, k);
    for (const auto* k : {"render.brightness_kcounts", "render.pixel_nm", "render.psf_c_nm"}) require_positive(c, k);
    require_nonneg(c, "render.dwell_s");
    const double margin = c.get_double("plan.fov_margin_nm", 1500);
    const auto a1 = anneal_of(c, "anneal");
    const auto a2 = anneal_of(c, "anneal2");

    const sim::Rect fov = sim::plan_fov(plan, margin);
    const auto natives = sim::sample_native_background(fov, c.get_double("native.density_cm3", 6e11),
                                                       c.get_double("native.depth_nm", 1000), derive(seed, 1));
    const auto implanted = sim::implant(plan, c.get_double("implant.beam_sigma_nm", 30.7),
                                        c.get_double("implant.straggle_sigma_nm", 3), derive(seed, 2), margin);
    const auto map1 = sim::anneal(sim::merge(natives, implanted), a1, derive(seed, 3));
    const auto map2 = sim::anneal(map1, a2, derive(seed, 4));

    sim::ScanConfig sc = sim::scan_for_fov(fov, c.get_double("render.pixel_nm", 25));
    sc.dwell = c.get_double("render.dwell_s", 6e-3);
    sc.background = c.get_double("render.background", 1);
    sc.psf.c = c.get_double("render.psf_c_nm", 115);
    const std::string bm = c.get_string("render.brightness_model", "linear");
    if (bm == "linear") {
        sc.brightness_model = optics::BrightnessModel::linear;
    } else if (bm == "quadratic") {
        sc.brightness_model = optics::BrightnessModel::quadratic;
    } else {
        throw ConfigError("render.brightness_model", "must be linear or quadratic");
    }
    sc.noiseless = !c.get_bool("render.noise", true);
    const std::string fmt = c.get_string("render.format", "bin");
    if (fmt != "bin" && fmt != "csv") throw ConfigError("render.format", "must be bin or csv");
    const double brightness = 1e3 * c.get_double("render.brightness_kcounts", 334);

    RunDir run("simulate", out);
    run.write("emitters.csv", to_text([&](std::ostream& os) { pipeline::write_emitters(os, map1); }));
    run.write("emitters_anneal2.csv", to_text([&](std::ostream& os) { pipeline::write_emitters(os, map2); }));
    run.columns("emitters.csv", pipeline::kEmitterColumns);
    run.columns("emitters_anneal2.csv", pipeline::kEmitterColumns);
    run.write_scan("before." + fmt, sim::render_scan(natives, sc, brightness, derive(seed, 5)));
    run.write_scan("after_implant." + fmt, sim::render_scan(map1, sc, brightness, derive(seed, 6)));
    run.write_scan("after_anneal2." + fmt, sim::render_scan(map2, sc, brightness, derive(seed, 7)));

    json spots = json::array();
    for (std::size_t id = 1; id <= plan.spot_count(); ++id) {
        const int sid = static_cast<int>(id);
        spots.push_back({{"spot", sid},
                         {"planned", plan.ions[id - 1]},
                         {"active_after_implant", map1.active_in_spot(sid)},
                         {"active_after_anneal2", map2.active_in_spot(sid)}});
    }
    std::size_t implanted_in_map = 0;
    for (const auto& e : map1.emitters) implanted_in_map += e.native() ? 0u : 1u;
    const json truth = {{"planned_ions", plan.planned_ions()},
                        {"implanted_in_map", implanted_in_map},
                        {"native_before", natives.emitters.size()},
                        {"spots", spots}};
    run.write("truth.json", truth.dump(2) + "\n");
    run.finish(c, {"seed", "plan", "implant", "native", "anneal", "anneal2", "render"});
    std::cout << "planned " << plan.planned_ions() << " ions in " << plan.spot_count() << " spots; "
              << map1.active_count() - natives.active_count() << " active after the first anneal\n";
}

pipeline::AreaConfig area_config_of(const Config& c) {
    const auto plan = plan_of(c);
    pipeline::AreaConfig ac;
    ac.spot_centers = plan.spot_centers();
    ac.pitch = plan.pitch;
    require_positive(c, "analyze.unit_kcounts");
    require_positive(c, "analyze.psf_c_nm");
    ac.unit = 1e3 * c.get_double("analyze.unit_kcounts", 334);
    ac.psf.c = c.get_double("analyze.psf_c_nm", 115);
    ac.register_scans = c.get_bool("analyze.register", true);
    const long ms = c.get_long("analyze.max_shift_px", 8);
    if (ms < 0 || ms > 1000) throw ConfigError("analyze.max_shift_px", "must lie in [0, 1000]");
    ac.max_shift = static_cast<int>(ms);
    ac.refine_centers = c.get_bool("analyze.refine_centers", true);
    ac.exclusions = c.get_int_set("analyze.exclusions", {});
    ac.registration.fit_rotation = c.get_bool("analyze.fit_rotation", true);
    ac.dispersion.unbiased = c.get_bool("analyze.unbiased", false);
    return ac;
}

struct AnalyzeInputs {
    std::string before, after, anneal2, truth;
};

void cmd_analyze(const Config& c, const AnalyzeInputs& in, const std::string& out) {
    const auto ac = area_config_of(c);
    const ScanImage before = load_scan(in.before);
    const ScanImage after = load_scan(in.after);
    const auto res = pipeline::analyze_area(before, after, ac);

    RunDir run("analyze", out);
    std::vector<analyze::SpotQuant> rows;
    for (const auto& s : res.spots) rows.push_back(s.quant);
    run.write("quantification.csv", to_text([&](std::ostream& os) { pipeline::write_quantification_csv(os, rows); }));
    run.columns("quantification.csv", "spot,kcounts,units_of_C,rounded");
    run.write("accuracy_residuals.csv",
              to_text([&](std::ostream& os) { pipeline::write_accuracy_residuals_csv(os, res, ac.exclusions); }));
    run.columns("accuracy_residuals.csv", "spot,residual_x_nm,residual_y_nm,included");
    run.write("precision_residuals.csv",
              to_text([&](std::ostream& os) { pipeline::write_precision_residuals_csv(os, res, ac.exclusions); }));
    run.columns("precision_residuals.csv", "spot,residual_x_nm,residual_y_nm,included");
    run.write("metrics.json", json{{"accuracy", pipeline::dispersion_json(res.accuracy)},
                                   {"precision", pipeline::dispersion_json(res.precision)}}
                                      .dump(2) + "\n");

    json summary = pipeline::area_summary_json(res);
    if (!in.anneal2.empty()) {
        // Both post-anneal scans go into the pre-implantation frame, where the
        // (refined) spot centers live.
        const ScanImage later = load_scan(in.anneal2);
        const auto s2 = ac.register_scans ? analyze::estimate_shift(before, later, ac.max_shift) : analyze::PixelShift{};
        std::vector<Vec2> centers;
        for (const auto& s : res.spots) centers.push_back(s.center);
        analyze::DiffOptions dopt;
        dopt.psf = ac.psf;
        const auto rep = analyze::anneal_diff_report(analyze::apply_shift(before, after, res.shift),
                                                     analyze::apply_shift(before, later, s2), centers, ac.unit, dopt);
        run.write("changes.csv", to_text([&](std::ostream& os) { pipeline::write_changes_csv(os, rep); }));
        run.columns("changes.csv", "spot,delta_units,classification,x_nm,y_nm");
    }
    if (!in.truth.empty()) {
        const auto truth = pipeline::load_emitters(in.truth);
        summary["match_rate"] = pipeline::match_rate(res, truth);
        std::cout << "match rate vs truth: " << summary["match_rate"].get<double>() << '\n';
    }
    run.write("analysis.json", summary.dump(2) + "\n");
    run.finish(c, {"plan", "analyze"});
    std::cout << "total " << res.total_ions << " ions;";
    for (const auto& s : res.spots) std::cout << ' ' << s.quant.ions_rounded;
    std::cout << '\n';
    for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
}

void cmd_quantify(const Config& c, const std::string& input, const std::string& out) {
    require_positive(c, "analyze.unit_kcounts");
    const double unit = c.get_double("analyze.unit_kcounts", 334);
    std::ifstream f(input);
    if (!f) throw Error("cannot read " + input);
    std::vector<analyze::SpotQuant> rows;
    for (const auto& [id, kc] : pipeline::read_spot_counts_csv(f)) rows.push_back(analyze::quantify_spot(kc * 1e3, unit * 1e3, id));
    RunDir run("quantify", out);
    run.write("quantification.csv", to_text([&](std::ostream& os) { pipeline::write_quantification_csv(os, rows); }));
    run.columns("quantification.csv", "spot,kcounts,units_of_C,rounded");
    run.finish(c, {"analyze"});
    long sum = 0;
    for (const auto& q : rows) sum += q.ions_rounded;
    std::cout << rows.size() << " spots, " << sum << " ions\n";
}

void cmd_tof(const Config& c, const std::string& out) {
    for (const auto* k : {"tof.voltage_kv", "tof.distance_m", "tof.bin_ns", "tof.tolerance_us"}) require_positive(c, k);
    require_nonneg(c, "tof.fwhm_ns");
    require_probability(c, "tof.ca_fraction");
    const long n = c.get_long("tof.events", 50);
    if (n < 1) throw ConfigError("tof.events", "must be >= 1");
    const auto table = tof::default_species();
    const std::string main_name = c.get_string("tof.species", "Pr");
    const tof::Species* main = nullptr;
    const tof::Species* ca = nullptr;
    for (const auto& s : table) {
        if (s.name == main_name) main = &s;
        if (s.name == "Ca") ca = &s;
    }
    if (!main) throw ConfigError("tof.species", "unknown species '" + main_name + "'");
    const double kv = c.get_double("tof.voltage_kv", 5.9), L = c.get_double("tof.distance_m", 0.428);
    const double sigma = 1e-9 * c.get_double("tof.fwhm_ns", 2) / (2.0 * std::sqrt(2.0 * std::log(2.0)));
    const double ca_frac = c.get_double("tof.ca_fraction", 0);
    const double tol = 1e-6 * c.get_double("tof.tolerance_us", 0.5);

    Rng rng(derive(seed_of(c), 0x746f66ULL));
    std::normal_distribution<double> jitter(0.0, 1.0);
    std::vector<tof::TofEvent> events;
    for (long k = 0; k < n; ++k) {
        const tof::Species& sp = rng.uniform() < ca_frac ? *ca : *main;
        tof::TofEvent e{tof::drift_time(sp.mass_amu, sp.charge, kv, L) + sigma * jitter(rng), std::nullopt};
        e.label = tof::classify_species(e, table, kv, L, tol);
        events.push_back(e);
    }
    const auto summary = tof::histogram_summary(events, 1e-9 * c.get_double("tof.bin_ns", 0.5));

    RunDir run("tof", out);
    run.write("events.csv", to_text([&](std::ostream& os) { pipeline::write_tof_events_csv(os, events); }));
    run.columns("events.csv", "time_s,label");
    run.write("histogram.csv", to_text([&](std::ostream& os) { pipeline::write_tof_histogram_csv(os, summary); }));
    run.columns("histogram.csv", "bin_center_s,count");
    json predicted = json::object();
    for (const auto& s : table) predicted[s.name] = tof::drift_time(s.mass_amu, s.charge, kv, L);
    std::map<std::string, std::size_t> counts;
    for (const auto& e : events) counts[e.label.value_or("unknown")] += 1;
    const json js = {{"mean_s", summary.mean},
                     {"fwhm_s", summary.fwhm},
                     {"events", n},
                     {"label_counts", counts},
                     {"ideal_drift_s", predicted},
                     {"model", "field-free drift only; the extraction region is not modeled"}};
    run.write("tof.json", js.dump(2) + "\n");
    run.finish(c, {"seed", "tof"});
    std::cout << "mean " << summary.mean * 1e6 << " us, FWHM " << summary.fwhm * 1e9 << " ns\n";
}

void cmd_tables(const Config& c, const std::string& out) {
    RunDir run("tables", out);
    run.write("sites.json", optics::site_table_json().dump(2) + "\n");
    run.write("selection_rules.json", optics::selection_rules_json().dump(2) + "\n");
    std::ostringstream os;
    os << "site,polarization_deg,efficiency\n";
    const auto pols = optics::canonical_polarizations();
    for (int id = 1; id <= optics::kSiteCount; ++id)
        for (const auto& p : pols)
            os << id << ',' << format_double(std::round(p.angle * 180.0 / std::numbers::pi)) << ','
               << format_double(optics::excitation_efficiency(optics::site_axes(id), p)) << '\n';
    run.write("efficiencies.csv", os.str());
    run.columns("efficiencies.csv", "site,polarization_deg,efficiency");
    run.finish(c, {});
}

std::string describe_keys() {
    std::ostringstream os;
    for (const auto& d : schema())
        os << "  " << d.key << " = " << (d.fallback.empty() ? "<per area>" : d.fallback) << "  (" << d.help << ")\n";
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ionimp: single-ion implantation simulator and analysis toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Expand all help");

    std::string config_path, out_dir = "run";
    std::vector<std::string> overrides;
    bool list_keys = false;
    // Flag values land here and are applied on top of the config.
    std::map<std::string, std::string> flag_values;
    std::vector<std::pair<CLI::Option*, std::string>> flag_keys;

    const auto common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "key = value configuration file");
        sub->add_option("--set", overrides, "override, key=value (repeatable)");
        sub->add_option("-o,--out", out_dir, "output directory")->capture_default_str();
    };
    const auto keyed = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
        auto* opt = sub->add_option(flag, flag_values[key], help + " [" + key + "]");
        flag_keys.emplace_back(opt, key);
        return opt;
    };

    auto* keys = app.add_subcommand("keys", "List configuration keys and defaults");
    keys->callback([&] { list_keys = true; });

    auto* profile = app.add_subcommand("profile", "Adaptive knife-edge beam profiling session");
    common(profile);
    keyed(profile, "--x0", "profile.x0_nm", "true beam center, nm");
    keyed(profile, "--sigma", "profile.sigma_nm", "true beam radius, nm");
    keyed(profile, "--a", "profile.a", "true detection efficiency");
    keyed(profile, "--events", "profile.events", "edge measurements");
    keyed(profile, "--seed", "seed", "seed");

    auto* simulate = app.add_subcommand("simulate", "Implant, anneal and render the scan sequence");
    common(simulate);
    keyed(simulate, "--area", "plan.area", "A or B");
    keyed(simulate, "--yield", "anneal.yield", "first-anneal activation probability");
    keyed(simulate, "--seed", "seed", "seed");
    keyed(simulate, "--format", "render.format", "bin or csv");
    bool no_noise = false;
    simulate->add_flag("--no-noise", no_noise, "noiseless expected-count scans [render.noise=false]");

    AnalyzeInputs ain;
    auto* analyze_cmd = app.add_subcommand("analyze", "Quantify spots and placement metrics from two scans");
    common(analyze_cmd);
    analyze_cmd->add_option("--before", ain.before, "pre-implantation scan")->required()->check(CLI::ExistingFile);
    analyze_cmd->add_option("--after", ain.after, "post-anneal scan")->required()->check(CLI::ExistingFile);
    analyze_cmd->add_option("--anneal2", ain.anneal2, "scan after a second anneal (change report)")->check(CLI::ExistingFile);
    analyze_cmd->add_option("--truth", ain.truth, "emitter map for a match rate")->check(CLI::ExistingFile);
    keyed(analyze_cmd, "--area", "plan.area", "A or B");
    keyed(analyze_cmd, "--unit", "analyze.unit_kcounts", "single-ion unit, kcounts");
    keyed(analyze_cmd, "--exclude", "analyze.exclusions", "comma-separated spot ids");

    std::string quant_input;
    auto* quantify = app.add_subcommand("quantify", "Convert spot,kcounts rows into ion counts");
    common(quantify);
    quantify->add_option("input", quant_input, "CSV with spot,kcounts columns")->required()->check(CLI::ExistingFile);
    keyed(quantify, "--unit", "analyze.unit_kcounts", "single-ion unit, kcounts");
    keyed(quantify, "--area", "plan.area", "A or B (selects the default unit)");

    auto* tof_cmd = app.add_subcommand("tof", "Simulated time-of-flight events and histogram");
    common(tof_cmd);
    keyed(tof_cmd, "--species", "tof.species", "Pr or Ca");
    keyed(tof_cmd, "--events", "tof.events", "number of events");
    keyed(tof_cmd, "--seed", "seed", "seed");

    auto* tables = app.add_subcommand("tables", "Export site axes, selection rules and efficiencies");
    common(tables);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }
    if (list_keys) {
        std::cout << describe_keys();
        return 0;
    }

    try {
        Config user = config_path.empty() ? Config{} : Config::load(config_path);
        for (const auto& kv : overrides) user.set_assignment(kv);
        for (const auto& [opt, key] : flag_keys)
            if (opt->count() > 0) user.set(key, flag_values[key]);
        if (no_noise) user.set("render.noise", "false");
        const Config eff = resolve(user);

        if (profile->parsed()) cmd_profile(eff, out_dir);
        if (simulate->parsed()) cmd_simulate(eff, out_dir);
        if (analyze_cmd->parsed()) cmd_analyze(eff, ain, out_dir);
        if (quantify->parsed()) cmd_quantify(eff, quant_input, out_dir);
        if (tof_cmd->parsed()) cmd_tof(eff, out_dir);
        if (tables->parsed()) cmd_tables(eff, out_dir);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
