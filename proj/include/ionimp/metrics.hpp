#pragma once

// Placement statistics: rigid registration of an ideal pitch grid to spot
// centers, patterning accuracy (spot center vs grid node) and placement
// precision (ion position vs its spot centroid).
//
// Dispersion is the pooled per-axis standard deviation: the x and y residual
// components of n points are treated as 2n samples about zero.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ionimp/core.hpp"

namespace ionimp::metrics {

/// Two centers claim the same grid node.
class AmbiguousAssignment : public Error {
public:
    using Error::Error;
};

struct GridModel {
    Vec2 origin{};  // position of node (0, 0), nm
    double pitch = 2000.0;
    double rotation = 0.0;  // radians
    std::size_t rows = 0;
    std::size_t cols = 0;
    /// Parameters estimated from the data (2 for translation, 3 with rotation).
    std::size_t fitted_dof = 0;

    Vec2 node(long row, long col) const {
        const double u = pitch * static_cast<double>(col), v = pitch * static_cast<double>(row);
        const double cr = std::cos(rotation), sr = std::sin(rotation);
        return origin + Vec2{cr * u - sr * v, sr * u + cr * v};
    }

    /// Nearest node as (row, col); may fall outside [0, rows) x [0, cols).
    std::pair<long, long> nearest(const Vec2& p) const {
        const Vec2 d = p - origin;
        const double cr = std::cos(rotation), sr = std::sin(rotation);
        const double u = cr * d.x + sr * d.y, v = -sr * d.x + cr * d.y;
        return {std::lround(v / pitch), std::lround(u / pitch)};
    }
};

struct GridNode {
    long row = 0;
    long col = 0;
    friend auto operator<=>(const GridNode&, const GridNode&) = default;
};

struct GridRegistration {
    GridModel grid;
    std::vector<GridNode> nodes;  // per center
    std::vector<Vec2> residuals;  // center - node
};

struct RegistrationOptions {
    bool fit_rotation = true;
    std::size_t max_iterations = 20;
};

namespace detail {

inline void check_unique(const std::vector<GridNode>& nodes) {
    std::map<GridNode, std::size_t> seen;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        const auto [it, fresh] = seen.emplace(nodes[k], k);
        if (!fresh) {
            throw AmbiguousAssignment("centers " + std::to_string(it->second + 1) + " and " + std::to_string(k + 1) +
                                      " both map to grid node (" + std::to_string(nodes[k].row) + ", " +
                                      std::to_string(nodes[k].col) + ")");
        }
    }
}

}  // namespace detail

/// Least-squares translation (and rotation) of a fixed-pitch grid onto
/// `centers`, with each center assigned to its nearest node.
inline GridRegistration register_grid(std::span<const Vec2> centers, double pitch,
                                      const RegistrationOptions& opt = {}) {
    if (centers.size() < 3) throw InvalidArgument("register_grid: need at least 3 centers");
    if (!(pitch > 0.0)) throw InvalidArgument("register_grid: pitch must be > 0");

    GridModel g;
    g.pitch = pitch;
    g.origin = centers.front();
    g.fitted_dof = opt.fit_rotation ? 3 : 2;
    std::vector<GridNode> nodes(centers.size());
    const auto assign = [&] {
        for (std::size_t k = 0; k < centers.size(); ++k) {
            const auto [r, c] = g.nearest(centers[k]);
            nodes[k] = {r, c};
        }
        long r0 = nodes[0].row, c0 = nodes[0].col;
        for (const auto& n : nodes) {
            r0 = std::min(r0, n.row);
            c0 = std::min(c0, n.col);
        }
        for (auto& n : nodes) {
            n.row -= r0;
            n.col -= c0;
        }
        detail::check_unique(nodes);
    };

    assign();
    for (std::size_t it = 0; it < opt.max_iterations; ++it) {
        // Closed-form 2D Procrustes without scale.
        Vec2 pc{}, qc{};
        for (std::size_t k = 0; k < centers.size(); ++k) {
            pc += centers[k];
            qc += Vec2{pitch * static_cast<double>(nodes[k].col), pitch * static_cast<double>(nodes[k].row)};
        }
        const double inv_n = 1.0 / static_cast<double>(centers.size());
        pc = inv_n * pc;
        qc = inv_n * qc;
        double theta = 0.0;
        if (opt.fit_rotation) {
            double s_cross = 0.0, s_dot = 0.0;
            for (std::size_t k = 0; k < centers.size(); ++k) {
                const Vec2 p = centers[k] - pc;
                const Vec2 q = Vec2{pitch * static_cast<double>(nodes[k].col), pitch * static_cast<double>(nodes[k].row)} - qc;
                s_cross += q.x * p.y - q.y * p.x;
                s_dot += q.x * p.x + q.y * p.y;
            }
            theta = std::atan2(s_cross, s_dot);
        }
        const double cr = std::cos(theta), sr = std::sin(theta);
        g.rotation = theta;
        g.origin = pc - Vec2{cr * qc.x - sr * qc.y, sr * qc.x + cr * qc.y};
        const auto previous = nodes;
        assign();
        if (nodes == previous) break;
    }

    long max_r = 0, max_c = 0;
    for (const auto& n : nodes) {
        max_r = std::max(max_r, n.row);
        max_c = std::max(max_c, n.col);
    }
    g.rows = static_cast<std::size_t>(max_r + 1);
    g.cols = static_cast<std::size_t>(max_c + 1);

    GridRegistration out{g, nodes, {}};
    for (std::size_t k = 0; k < centers.size(); ++k) out.residuals.push_back(centers[k] - g.node(nodes[k].row, nodes[k].col));
    return out;
}

struct DispersionReport {
    double sigma = 0.0;  // nm
    std::size_t n_points = 0;
    std::vector<int> excluded;  // ids honored from the exclusion list
};

struct DispersionOptions {
    /// Divide by the residual degrees of freedom instead of the component
    /// count: 2n - grid.fitted_dof for accuracy, sum over spots of 2(n_s - 1)
    /// for precision. Off by default.
    bool unbiased = false;
};

/// Pooled per-axis spread of (center - nearest node). Ids are 1-based
/// positions in `centers`.
inline DispersionReport accuracy_sigma(std::span<const Vec2> centers, const GridModel& grid,
                                       const std::set<int>& exclusions, const DispersionOptions& opt = {}) {
    DispersionReport rep;
    double ss = 0.0;
    for (std::size_t k = 0; k < centers.size(); ++k) {
        const int id = static_cast<int>(k + 1);
        if (exclusions.contains(id)) {
            rep.excluded.push_back(id);
            continue;
        }
        const auto [r, c] = grid.nearest(centers[k]);
        const Vec2 d = centers[k] - grid.node(r, c);
        ss += d.x * d.x + d.y * d.y;
        ++rep.n_points;
    }
    if (rep.n_points < 2) throw InvalidArgument("accuracy_sigma: fewer than 2 included points");
    double dof = 2.0 * static_cast<double>(rep.n_points);
    if (opt.unbiased) dof -= static_cast<double>(grid.fitted_dof);
    if (!(dof > 0.0)) throw InvalidArgument("accuracy_sigma: no residual degrees of freedom");
    rep.sigma = std::sqrt(ss / dof);
    return rep;
}

/// Pooled per-axis spread of fitted ion positions about their spot
/// centroid. Spot ids are 1-based; spots with fewer than 2 positions carry
/// no spread and are skipped.
inline DispersionReport precision_sigma(std::span<const std::vector<Vec2>> per_spot, const std::set<int>& exclusions,
                                        const DispersionOptions& opt = {}) {
    DispersionReport rep;
    double ss = 0.0, dof = 0.0;
    for (std::size_t k = 0; k < per_spot.size(); ++k) {
        const int id = static_cast<int>(k + 1);
        if (exclusions.contains(id)) {
            rep.excluded.push_back(id);
            continue;
        }
        const auto& pts = per_spot[k];
        if (pts.size() < 2) continue;
        Vec2 m{};
        for (const auto& p : pts) m += p;
        m = (1.0 / static_cast<double>(pts.size())) * m;
        for (const auto& p : pts) {
            const Vec2 d = p - m;
            ss += d.x * d.x + d.y * d.y;
        }
        rep.n_points += pts.size();
        dof += opt.unbiased ? 2.0 * static_cast<double>(pts.size() - 1) : 2.0 * static_cast<double>(pts.size());
    }
    if (rep.n_points == 0) throw InvalidArgument("precision_sigma: no spot with two or more positions");
    rep.sigma = std::sqrt(ss / dof);
    return rep;
}

}  // namespace ionimp::metrics
