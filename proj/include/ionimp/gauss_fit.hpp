#pragma once

// Least-squares fits of isotropic 2D Gaussians to scan rasters.
//
// Model over a pixel rectangle:
//   f(x, y) = B + sum_k A_k exp(-((x - x_k)^2 + (y - y_k)^2) / (2 c^2))
// with c shared by all components and optionally held fixed. Minimized by
// damped Gauss-Newton (Levenberg-Marquardt) with an analytic Jacobian.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ionimp/core.hpp"

namespace ionimp::fit {

struct GaussComponent {
    double amplitude = 0.0;  // counts per pixel at the peak
    Vec2 position{};         // nm
};

struct FitOptions {
    std::size_t max_iterations = 200;
    double rel_cost_tol = 1e-10;
    double step_tol = 1e-6;  // nm, on the position/width part of the step
    double initial_lambda = 1e-3;
};

struct MultiFit {
    std::vector<GaussComponent> components;
    double c = 0.0;           // nm
    double background = 0.0;  // B
    bool c_fixed = false;
    bool converged = false;
    std::size_t iterations = 0;
    double residual_norm = 0.0;
    std::string message;
    /// Inverse Poisson Fisher information of the free parameters, ordered
    /// [B, (c), A_1, x_1, y_1, A_2, ...]. Empty when singular.
    Eigen::MatrixXd covariance;
};

/// Single-component result, parameter names follow the PSF formula.
struct GaussFit {
    double A = 0.0;
    double x0 = 0.0;
    double y0 = 0.0;
    double c = 115.0;
    double beta = 0.0;  // isotropic model: carried, never fitted
    double B = 0.0;
    double residual_norm = 0.0;
    bool converged = false;
    std::size_t iterations = 0;
    std::string message;
};

namespace detail {

struct Samples {
    std::vector<double> x, y, v;
};

inline Samples collect(const ScanImage& img, const PixelRect& roi) {
    Samples s;
    const std::size_t n = roi.rows * roi.cols;
    s.x.reserve(n);
    s.y.reserve(n);
    s.v.reserve(n);
    for (std::size_t i = roi.row; i < roi.row + roi.rows; ++i)
        for (std::size_t j = roi.col; j < roi.col + roi.cols; ++j) {
            const Vec2 p = img.pixel_center(i, j);
            s.x.push_back(p.x);
            s.y.push_back(p.y);
            s.v.push_back(img.at(i, j));
        }
    return s;
}

/// Parameter vector layout: [B, (c), A_1, x_1, y_1, ...].
class Model {
public:
    Model(std::size_t n, std::optional<double> fixed_c) : n_(n), fixed_c_(fixed_c) {}

    std::size_t n_params() const { return 1 + (fixed_c_ ? 0 : 1) + 3 * n_; }
    std::size_t comp_base() const { return fixed_c_ ? 1 : 2; }
    double c(const Eigen::VectorXd& p) const { return fixed_c_ ? *fixed_c_ : p[1]; }

    bool admissible(const Eigen::VectorXd& p) const {
        if (!p.allFinite()) return false;
        return c(p) > 0.0;
    }

    /// Model values and (optionally) the Jacobian at every sample.
    void evaluate(const Samples& s, const Eigen::VectorXd& p, Eigen::VectorXd& f, Eigen::MatrixXd* jac) const {
        const std::size_t m = s.v.size();
        const double cc = c(p);
        const double inv2c2 = 1.0 / (2.0 * cc * cc);
        f.setConstant(static_cast<Eigen::Index>(m), p[0]);
        if (jac) {
            jac->setZero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n_params()));
            jac->col(0).setOnes();
        }
        const std::size_t base = comp_base();
        for (std::size_t k = 0; k < n_; ++k) {
            const auto ia = static_cast<Eigen::Index>(base + 3 * k);
            const double a = p[ia], x0 = p[ia + 1], y0 = p[ia + 2];
            for (std::size_t r = 0; r < m; ++r) {
                const double dx = s.x[r] - x0, dy = s.y[r] - y0;
                const double r2 = dx * dx + dy * dy;
                const double g = std::exp(-r2 * inv2c2);
                const auto row = static_cast<Eigen::Index>(r);
                f[row] += a * g;
                if (jac) {
                    (*jac)(row, ia) = g;
                    (*jac)(row, ia + 1) = a * g * dx / (cc * cc);
                    (*jac)(row, ia + 2) = a * g * dy / (cc * cc);
                    if (!fixed_c_) (*jac)(row, 1) += a * g * r2 / (cc * cc * cc);
                }
            }
        }
    }

    /// Entries of the step that are lengths (c and positions).
    double geometric_step_norm(const Eigen::VectorXd& step) const {
        double s = 0.0;
        if (!fixed_c_) s += step[1] * step[1];
        for (std::size_t k = 0; k < n_; ++k) {
            const auto ia = static_cast<Eigen::Index>(comp_base() + 3 * k);
            s += step[ia + 1] * step[ia + 1] + step[ia + 2] * step[ia + 2];
        }
        return std::sqrt(s);
    }

private:
    std::size_t n_;
    std::optional<double> fixed_c_;
};

inline Eigen::VectorXd data_vector(const Samples& s) {
    return Eigen::Map<const Eigen::VectorXd>(s.v.data(), static_cast<Eigen::Index>(s.v.size()));
}

/// Inverse Fisher information under Poisson counting, variance = max(model, 1).
inline Eigen::MatrixXd poisson_covariance(const Model& model, const Samples& s, const Eigen::VectorXd& p) {
    Eigen::VectorXd f(static_cast<Eigen::Index>(s.v.size()));
    Eigen::MatrixXd jac;
    model.evaluate(s, p, f, &jac);
    const Eigen::VectorXd w = f.cwiseMax(1.0).cwiseInverse();
    const Eigen::MatrixXd fisher = jac.transpose() * w.asDiagonal() * jac;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(fisher);
    if (!lu.isInvertible()) return {};
    return lu.inverse();
}

struct LmResult {
    Eigen::VectorXd params;
    bool converged = false;
    std::size_t iterations = 0;
    double cost = 0.0;
    std::string message;
};

/// A few undamped Gauss-Newton steps from a converged point. The damped loop
/// stops on geometric/cost criteria that leave B and the amplitudes loose at
/// the 1e-4 level; near the optimum Gauss-Newton converges quadratically, so
/// fits started from different points end on the same optimum.
inline void polish(const Model& model, const Samples& s, const Eigen::VectorXd& y, Eigen::VectorXd& p,
                   Eigen::VectorXd& f, Eigen::MatrixXd& jac, double& cost) {
    const auto m = static_cast<Eigen::Index>(s.v.size());
    for (int it = 0; it < 8; ++it) {
        const Eigen::VectorXd step = (jac.transpose() * jac).ldlt().solve(jac.transpose() * (y - f));
        const Eigen::VectorXd trial = p + step;
        if (!step.allFinite() || !model.admissible(trial)) return;
        Eigen::VectorXd ft(m);
        model.evaluate(s, trial, ft, nullptr);
        const double trial_cost = (y - ft).squaredNorm();
        if (trial_cost > cost) return;
        const bool done = (step.array().abs() <= 1e-13 * (p.array().abs() + 1.0)).all();
        p = trial;
        cost = trial_cost;
        model.evaluate(s, p, f, &jac);
        if (done) return;
    }
}

inline LmResult levenberg_marquardt(const Model& model, const Samples& s, Eigen::VectorXd p, const FitOptions& opt) {
    const Eigen::VectorXd y = data_vector(s);
    const auto m = static_cast<Eigen::Index>(s.v.size());
    Eigen::VectorXd f(m);
    Eigen::MatrixXd jac;
    LmResult out;
    if (!model.admissible(p)) {
        out.params = p;
        out.message = "initial parameters not admissible";
        return out;
    }
    model.evaluate(s, p, f, &jac);
    double cost = (y - f).squaredNorm();
    double lambda = opt.initial_lambda;
    for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
        out.iterations = it;
        const Eigen::VectorXd g = jac.transpose() * (y - f);
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        bool accepted = false;
        for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
            Eigen::MatrixXd a = jtj;
            for (Eigen::Index d = 0; d < a.rows(); ++d) a(d, d) += lambda * std::max(jtj(d, d), 1e-12);
            const Eigen::VectorXd step = a.ldlt().solve(g);
            const Eigen::VectorXd trial = p + step;
            if (!step.allFinite() || !model.admissible(trial)) {
                lambda *= 10.0;
                continue;
            }
            Eigen::VectorXd ft(m);
            model.evaluate(s, trial, ft, nullptr);
            const double trial_cost = (y - ft).squaredNorm();
            if (trial_cost <= cost) {
                accepted = true;
                const double decrease = cost - trial_cost;
                const bool small_decrease = decrease <= opt.rel_cost_tol * std::max(cost, 1e-300);
                const bool small_step = model.geometric_step_norm(step) < opt.step_tol;
                p = trial;
                cost = trial_cost;
                lambda = std::max(lambda * 0.1, 1e-12);
                model.evaluate(s, p, f, &jac);
                if (small_decrease || small_step || cost == 0.0) {
                    polish(model, s, y, p, f, jac, cost);
                    out.params = p;
                    out.converged = true;
                    out.cost = cost;
                    out.message = "converged";
                    return out;
                }
            } else {
                lambda *= 10.0;
            }
        }
        if (!accepted) {
            // No downhill step at any damping: we are at a (numerical) minimum.
            polish(model, s, y, p, f, jac, cost);
            out.params = p;
            out.converged = true;
            out.cost = cost;
            out.message = "converged (no further descent)";
            return out;
        }
    }
    out.params = p;
    out.cost = cost;
    out.message = "iteration cap reached";
    return out;
}

inline void check_roi(const ScanImage& img, const PixelRect& roi) {
    check_rect(img, roi);
    if (roi.rows < 5 || roi.cols < 5) throw InvalidArgument("fit roi must be at least 5x5 pixels");
}

inline MultiFit unpack(const Model& model, std::size_t n, const LmResult& r, std::optional<double> fixed_c,
                       const Samples& s) {
    MultiFit out;
    out.background = r.params[0];
    out.c = model.c(r.params);
    out.c_fixed = fixed_c.has_value();
    for (std::size_t k = 0; k < n; ++k) {
        const auto ia = static_cast<Eigen::Index>(model.comp_base() + 3 * k);
        out.components.push_back({r.params[ia], {r.params[ia + 1], r.params[ia + 2]}});
    }
    out.converged = r.converged;
    out.iterations = r.iterations;
    out.residual_norm = std::sqrt(r.cost);
    out.message = r.message;
    if (r.params.allFinite()) out.covariance = poisson_covariance(model, s, r.params);
    return out;
}

}  // namespace detail

/// Fits one Gaussian. With `fixed_c` the width is held at that value.
/// Failures (iteration cap, vanishing amplitude) come back with
/// converged == false and a message; they do not throw.
inline GaussFit fit_gaussian2d(const ScanImage& img, const PixelRect& roi, const GaussFit& init,
                               std::optional<double> fixed_c = std::nullopt, const FitOptions& opt = {}) {
    detail::check_roi(img, roi);
    if (!std::isfinite(init.A) || !std::isfinite(init.x0) || !std::isfinite(init.y0) || !std::isfinite(init.c) ||
        !std::isfinite(init.B)) {
        throw InvalidArgument("fit_gaussian2d: initial guess must be finite");
    }
    if (fixed_c && !(*fixed_c > 0.0)) throw InvalidArgument("fit_gaussian2d: fixed c must be > 0");
    const auto s = detail::collect(img, roi);
    const detail::Model model(1, fixed_c);
    Eigen::VectorXd p(static_cast<Eigen::Index>(model.n_params()));
    p[0] = init.B;
    if (!fixed_c) p[1] = init.c;
    const auto b = static_cast<Eigen::Index>(model.comp_base());
    p[b] = init.A;
    p[b + 1] = init.x0;
    p[b + 2] = init.y0;
    const auto r = detail::levenberg_marquardt(model, s, p, opt);

    GaussFit out;
    out.B = r.params[0];
    out.c = model.c(r.params);
    out.A = r.params[b];
    out.x0 = r.params[b + 1];
    out.y0 = r.params[b + 2];
    out.residual_norm = std::sqrt(r.cost);
    out.iterations = r.iterations;
    out.converged = r.converged;
    out.message = r.message;
    const double scale = std::accumulate(s.v.begin(), s.v.end(), 0.0,
                                         [](double m, double v) { return std::max(m, std::abs(v)); });
    if (out.converged && !(out.A > 1e-6 * std::max(scale, 1.0))) {
        out.converged = false;
        out.message = "degenerate fit: amplitude collapsed to zero";
    }
    return out;
}

/// Starting point from the brightest pixel and the roi minimum.
inline GaussFit initial_guess(const ScanImage& img, const PixelRect& roi, double c_guess = 115.0) {
    check_rect(img, roi);
    double best = -std::numeric_limits<double>::infinity(), low = std::numeric_limits<double>::infinity();
    std::size_t bi = roi.row, bj = roi.col;
    for (std::size_t i = roi.row; i < roi.row + roi.rows; ++i)
        for (std::size_t j = roi.col; j < roi.col + roi.cols; ++j) {
            const double v = img.at(i, j);
            if (v > best) {
                best = v;
                bi = i;
                bj = j;
            }
            low = std::min(low, v);
        }
    const Vec2 p = img.pixel_center(bi, bj);
    GaussFit g;
    g.A = best - low;
    g.x0 = p.x;
    g.y0 = p.y;
    g.c = c_guess;
    g.B = low;
    return g;
}

struct MultiFitOptions {
    FitOptions lm{};
    /// Background used to seed the peeling; nullopt = 10th percentile of the roi.
    std::optional<double> background_guess;
};

/// Fits `n` equal-width components sharing a background. Initial positions
/// come from brightest-pixel peeling; the final component list is sorted by
/// x then y. `degenerate` (see multi_fit_degenerate) is left to the caller.
inline MultiFit fit_multi_gaussian(const ScanImage& img, const PixelRect& roi, std::size_t n, double fixed_c,
                                   const MultiFitOptions& opt = {}) {
    if (n < 1) throw InvalidArgument("fit_multi_gaussian: n must be >= 1");
    if (!(fixed_c > 0.0)) throw InvalidArgument("fit_multi_gaussian: c must be > 0");
    detail::check_roi(img, roi);
    const auto s = detail::collect(img, roi);

    double bg;
    if (opt.background_guess) {
        bg = *opt.background_guess;
    } else {
        std::vector<double> v = s.v;
        const auto q = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 10);
        std::nth_element(v.begin(), q, v.end());
        bg = *q;
    }

    // Peeling: each pass fits one component (c and B fixed) to what the
    // previous components left over, then removes it.
    detail::Samples residual = s;
    for (double& v : residual.v) v -= bg;
    const detail::Model single(1, fixed_c);
    const auto inv2c2 = 1.0 / (2.0 * fixed_c * fixed_c);
    std::vector<GaussComponent> seeds;
    for (std::size_t k = 0; k < n; ++k) {
        const auto it = std::max_element(residual.v.begin(), residual.v.end());
        const auto r = static_cast<std::size_t>(it - residual.v.begin());
        Eigen::VectorXd p(4);
        p << 0.0, std::max(*it, 1e-9), residual.x[r], residual.y[r];
        auto lm = detail::levenberg_marquardt(single, residual, p, opt.lm);
        GaussComponent g{lm.params[1], {lm.params[2], lm.params[3]}};
        if (!(g.amplitude > 0.0) || !lm.params.allFinite()) g = {std::max(*it, 1e-9), {residual.x[r], residual.y[r]}};
        seeds.push_back(g);
        for (std::size_t q = 0; q < residual.v.size(); ++q) {
            const double dx = residual.x[q] - g.position.x, dy = residual.y[q] - g.position.y;
            residual.v[q] -= g.amplitude * std::exp(-(dx * dx + dy * dy) * inv2c2);
        }
    }

    const detail::Model model(n, fixed_c);
    Eigen::VectorXd p(static_cast<Eigen::Index>(model.n_params()));
    p[0] = bg;
    for (std::size_t k = 0; k < n; ++k) {
        const auto ia = static_cast<Eigen::Index>(model.comp_base() + 3 * k);
        p[ia] = seeds[k].amplitude;
        p[ia + 1] = seeds[k].position.x;
        p[ia + 2] = seeds[k].position.y;
    }
    const auto lm = detail::levenberg_marquardt(model, s, p, opt.lm);
    MultiFit out = detail::unpack(model, n, lm, fixed_c, s);

    // Canonical order; permute the covariance to match.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& pa = out.components[a].position;
        const auto& pb = out.components[b].position;
        return pa.x < pb.x || (pa.x == pb.x && pa.y < pb.y);
    });
    std::vector<GaussComponent> sorted;
    for (auto k : order) sorted.push_back(out.components[k]);
    out.components = std::move(sorted);
    if (out.covariance.size() > 0) {
        const auto np = static_cast<Eigen::Index>(model.n_params());
        Eigen::Matrix<Eigen::Index, Eigen::Dynamic, 1> perm(np);
        perm[0] = 0;
        const auto base = static_cast<Eigen::Index>(model.comp_base());
        for (Eigen::Index d = 1; d < base; ++d) perm[d] = d;
        for (std::size_t k = 0; k < n; ++k)
            for (Eigen::Index d = 0; d < 3; ++d)
                perm[base + 3 * static_cast<Eigen::Index>(k) + d] = base + 3 * static_cast<Eigen::Index>(order[k]) + d;
        Eigen::MatrixXd c2(np, np);
        for (Eigen::Index r = 0; r < np; ++r)
            for (Eigen::Index q = 0; q < np; ++q) c2(r, q) = out.covariance(perm[r], perm[q]);
        out.covariance = std::move(c2);
    }
    if (out.converged) {
        const auto [xlo, xhi] = std::minmax_element(s.x.begin(), s.x.end());
        const auto [ylo, yhi] = std::minmax_element(s.y.begin(), s.y.end());
        for (const auto& g : out.components) {
            if (!(g.amplitude > 0.0)) {
                out.converged = false;
                out.message = "degenerate fit: non-positive component amplitude";
                break;
            }
            if (g.position.x < *xlo || g.position.x > *xhi || g.position.y < *ylo || g.position.y > *yhi) {
                out.converged = false;
                out.message = "degenerate fit: component left the roi";
                break;
            }
        }
    }
    return out;
}

/// Standard deviation of the distance between components `a` and `b`,
/// propagated from the fit covariance. Infinity when the covariance is
/// unavailable.
inline double separation_std(const MultiFit& f, std::size_t a, std::size_t b) {
    if (f.covariance.size() == 0) return std::numeric_limits<double>::infinity();
    const Eigen::Index base = f.c_fixed ? 1 : 2;
    const Vec2 d = f.components[a].position - f.components[b].position;
    const double dist = norm(d);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(f.covariance.rows());
    // Unit direction; for coincident components any direction will do.
    const double ux = dist > 0 ? d.x / dist : 1.0, uy = dist > 0 ? d.y / dist : 0.0;
    g[base + 3 * static_cast<Eigen::Index>(a) + 1] = ux;
    g[base + 3 * static_cast<Eigen::Index>(a) + 2] = uy;
    g[base + 3 * static_cast<Eigen::Index>(b) + 1] = -ux;
    g[base + 3 * static_cast<Eigen::Index>(b) + 2] = -uy;
    const double var = g.dot(f.covariance * g);
    return var > 0 ? std::sqrt(var) : 0.0;
}

/// True when some pair of components is closer than its own separation
/// uncertainty, i.e. the optics cannot tell them apart at this photon count.
inline bool multi_fit_degenerate(const MultiFit& f) {
    for (std::size_t a = 0; a < f.components.size(); ++a)
        for (std::size_t b = a + 1; b < f.components.size(); ++b)
            if (separation_std(f, a, b) > norm(f.components[a].position - f.components[b].position)) return true;
    return false;
}

}  // namespace ionimp::fit
