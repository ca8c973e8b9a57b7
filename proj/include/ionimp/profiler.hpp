#pragma once

// Sequential Bayesian knife-edge beam profiling.
//
// The beam is a 1D Gaussian of center x0 and width sigma, detected with
// efficiency a. A knife edge at position e occludes x < e, so a single ion is
// detected with probability a * (1 - Phi((e - x0) / sigma)). The posterior
// over (x0, sigma, a) lives on a dense regular grid in log space; after every
// extraction event the next edge position is the candidate that maximizes the
// mutual information between the binary outcome and the parameters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "ionimp/core.hpp"

namespace ionimp::profiler {

/// Posterior has no support left (every grid point has zero likelihood).
class DegeneratePosterior : public Error {
public:
    using Error::Error;
};

struct BeamParams {
    double x0 = 0.0;     // nm
    double sigma = 1.0;  // nm, 1-sigma radius
    double a = 1.0;      // detector efficiency

    void validate() const {
        if (!(sigma > 0.0)) throw InvalidArgument("BeamParams: sigma must be > 0");
        if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("BeamParams: a must lie in [0, 1]");
        if (!std::isfinite(x0)) throw InvalidArgument("BeamParams: x0 must be finite");
    }
};

struct EdgeEvent {
    double edge_pos = 0.0;  // nm
    bool detected = false;
};

/// Upper tail 1 - Phi(z), accurate for large z.
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double detect_probability(const BeamParams& p, double edge_pos) {
    if (edge_pos == -std::numeric_limits<double>::infinity()) return p.a;
    return p.a * normal_sf((edge_pos - p.x0) / p.sigma);
}

/// Binary entropy in bits.
inline double binary_entropy(double p) {
    if (p <= 0.0 || p >= 1.0) return 0.0;
    return -(p * std::log2(p) + (1.0 - p) * std::log2(1.0 - p));
}

/// Evenly spaced axis with `n` points spanning [lo, hi].
inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
    if (n == 0) return {};
    if (n == 1) return {lo};
    std::vector<double> v(n);
    const double step = (hi - lo) / static_cast<double>(n - 1);
    for (std::size_t k = 0; k < n; ++k) v[k] = lo + step * static_cast<double>(k);
    v.back() = hi;
    return v;
}

struct GridSpec {
    double x0_min = -200.0, x0_max = 200.0;
    std::size_t x0_points = 101;
    double sigma_min = 1.0, sigma_max = 100.0;
    std::size_t sigma_points = 101;
    double a_min = 0.5, a_max = 1.0;
    std::size_t a_points = 21;
};

/// Discrete posterior over (x0, sigma, a). Log weights are kept normalized
/// (log-sum-exp == 0); grid points with zero probability hold -inf.
class BeamPosterior {
public:
    /// Uniform prior over the given axes.
    BeamPosterior(std::vector<double> x0_axis, std::vector<double> sigma_axis, std::vector<double> a_axis)
        : x0_(std::move(x0_axis)), sigma_(std::move(sigma_axis)), a_(std::move(a_axis)) {
        check_axes();
        log_w_.assign(size(), -std::log(static_cast<double>(size())));
    }

    BeamPosterior(std::vector<double> x0_axis, std::vector<double> sigma_axis, std::vector<double> a_axis,
                  std::vector<double> log_weights)
        : x0_(std::move(x0_axis)), sigma_(std::move(sigma_axis)), a_(std::move(a_axis)),
          log_w_(std::move(log_weights)) {
        check_axes();
        if (log_w_.size() != size()) throw InvalidArgument("BeamPosterior: weight tensor size mismatch");
        normalize();
    }

    static BeamPosterior uniform(const GridSpec& g = {}) {
        return BeamPosterior(linspace(g.x0_min, g.x0_max, g.x0_points),
                             linspace(g.sigma_min, g.sigma_max, g.sigma_points),
                             linspace(g.a_min, g.a_max, g.a_points));
    }

    const std::vector<double>& x0_axis() const { return x0_; }
    const std::vector<double>& sigma_axis() const { return sigma_; }
    const std::vector<double>& a_axis() const { return a_; }
    const std::vector<double>& log_weights() const { return log_w_; }

    std::size_t size() const { return x0_.size() * sigma_.size() * a_.size(); }

    /// Flat index; the a axis varies fastest, then sigma, then x0.
    std::size_t index(std::size_t ix, std::size_t is, std::size_t ia) const {
        return (ix * sigma_.size() + is) * a_.size() + ia;
    }

    BeamParams params_at(std::size_t k) const {
        const std::size_t ia = k % a_.size();
        const std::size_t is = (k / a_.size()) % sigma_.size();
        const std::size_t ix = k / (a_.size() * sigma_.size());
        return {x0_[ix], sigma_[is], a_[ia]};
    }

    double weight(std::size_t k) const { return std::exp(log_w_[k]); }

    std::vector<double> weights() const {
        std::vector<double> w(log_w_.size());
        std::transform(log_w_.begin(), log_w_.end(), w.begin(), [](double l) { return std::exp(l); });
        return w;
    }

    /// Adds `log_likelihood` point-wise and renormalizes.
    void reweight(std::span<const double> log_likelihood) {
        if (log_likelihood.size() != size()) throw InvalidArgument("reweight: size mismatch");
        for (std::size_t k = 0; k < log_w_.size(); ++k) log_w_[k] += log_likelihood[k];
        normalize();
    }

private:
    friend class SessionEngine;

    void check_axes() const {
        const auto increasing = [](const std::vector<double>& v) {
            if (v.empty()) return false;
            for (std::size_t k = 1; k < v.size(); ++k)
                if (!(v[k] > v[k - 1])) return false;
            return std::all_of(v.begin(), v.end(), [](double d) { return std::isfinite(d); });
        };
        if (!increasing(x0_) || !increasing(sigma_) || !increasing(a_)) {
            throw InvalidArgument("BeamPosterior: axes must be non-empty and strictly increasing");
        }
        if (!(sigma_.front() > 0.0)) throw InvalidArgument("BeamPosterior: sigma axis must be > 0");
        if (!(a_.front() >= 0.0 && a_.back() <= 1.0)) throw InvalidArgument("BeamPosterior: a axis must lie in [0, 1]");
    }

    /// Renormalizes the log weights; when `w` is given it receives the
    /// exponentiated weights as a by-product.
    void normalize(std::vector<double>* w = nullptr) {
        constexpr double kNegInf = -std::numeric_limits<double>::infinity();
        double mx = kNegInf;
        for (double l : log_w_) {
            if (std::isnan(l) || l == std::numeric_limits<double>::infinity()) {
                throw InvalidArgument("BeamPosterior: log weights must be finite or -inf");
            }
            mx = std::max(mx, l);
        }
        if (mx == kNegInf) throw DegeneratePosterior("posterior has zero mass on every grid point");
        std::vector<double> scratch;
        std::vector<double>& e = w ? *w : scratch;
        e.resize(log_w_.size());
        double s = 0.0;
        for (std::size_t k = 0; k < log_w_.size(); ++k) {
            e[k] = std::exp(log_w_[k] - mx);
            s += e[k];
        }
        const double lse = mx + std::log(s);
        const double inv = 1.0 / s;
        // Anything below exp(-745) is zero in double precision; pin it so the
        // hot loops can skip it.
        const double floor = mx - lse - 745.0;
        for (std::size_t k = 0; k < log_w_.size(); ++k) {
            double& l = log_w_[k];
            l -= lse;
            if (l < floor) {
                l = kNegInf;
                e[k] = 0.0;
            } else {
                e[k] *= inv;
            }
        }
    }

    std::vector<double> x0_, sigma_, a_;
    std::vector<double> log_w_;
};

/// Log-likelihood of one event at every grid point.
inline std::vector<double> event_log_likelihood(const BeamPosterior& post, const EdgeEvent& ev) {
    const auto& xs = post.x0_axis();
    const auto& ss = post.sigma_axis();
    const auto& as = post.a_axis();
    std::vector<double> ll(post.size());
    const bool retracted = ev.edge_pos == -std::numeric_limits<double>::infinity();
    for (std::size_t ix = 0; ix < xs.size(); ++ix) {
        for (std::size_t is = 0; is < ss.size(); ++is) {
            const double z = (ev.edge_pos - xs[ix]) / ss[is];
            const double q = retracted ? 1.0 : normal_sf(z);    // transmitted fraction
            const double qc = retracted ? 0.0 : normal_cdf(z);  // blocked fraction
            for (std::size_t ia = 0; ia < as.size(); ++ia) {
                const double a = as[ia];
                const double p = ev.detected ? a * q : (1.0 - a) + a * qc;
                ll[post.index(ix, is, ia)] = p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
            }
        }
    }
    return ll;
}

inline BeamPosterior posterior_update(const BeamPosterior& post, const EdgeEvent& ev) {
    BeamPosterior next = post;
    next.reweight(event_log_likelihood(post, ev));
    return next;
}

/// Mutual information (bits) between the outcome at `edge_pos` and the beam
/// parameters under `post`.
inline double expected_information_gain(const BeamPosterior& post, double edge_pos) {
    double p_detect = 0.0;
    double cond_entropy = 0.0;
    for (std::size_t k = 0; k < post.size(); ++k) {
        const double w = post.weight(k);
        if (w == 0.0) continue;
        const double p = detect_probability(post.params_at(k), edge_pos);
        p_detect += w * p;
        cond_entropy += w * binary_entropy(p);
    }
    return std::clamp(binary_entropy(p_detect) - cond_entropy, 0.0, 1.0);
}

/// Candidate with the largest information gain; ties go to the smallest edge.
inline double choose_next_edge(const BeamPosterior& post, std::span<const double> candidates) {
    if (candidates.empty()) throw InvalidArgument("choose_next_edge: no candidates");
    std::optional<double> best_pos;
    double best_gain = -1.0;
    for (double c : candidates) {
        const double g = expected_information_gain(post, c);
        if (g > best_gain || (g == best_gain && c < *best_pos)) {
            best_gain = g;
            best_pos = c;
        }
    }
    return *best_pos;
}

struct ParamEstimate {
    double mean = 0.0;
    double std = 0.0;
};

struct BeamEstimate {
    ParamEstimate x0, sigma, a;
};

/// Posterior mean and standard deviation per parameter, given the
/// exponentiated weights of `post`.
inline BeamEstimate estimate(const BeamPosterior& post, std::span<const double> w) {
    double m[3] = {0, 0, 0}, m2[3] = {0, 0, 0};
    for (std::size_t k = 0; k < post.size(); ++k) {
        if (w[k] == 0.0) continue;
        const BeamParams p = post.params_at(k);
        const double v[3] = {p.x0, p.sigma, p.a};
        for (int d = 0; d < 3; ++d) {
            m[d] += w[k] * v[d];
            m2[d] += w[k] * v[d] * v[d];
        }
    }
    ParamEstimate out[3];
    for (int d = 0; d < 3; ++d) out[d] = {m[d], std::sqrt(std::max(0.0, m2[d] - m[d] * m[d]))};
    return {out[0], out[1], out[2]};
}

inline BeamEstimate estimate(const BeamPosterior& post) { return estimate(post, post.weights()); }

/// Weighted quantile of the x0 marginal.
inline double x0_quantile(const BeamPosterior& post, std::span<const double> w, double q) {
    const auto& xs = post.x0_axis();
    const std::size_t block = post.sigma_axis().size() * post.a_axis().size();
    double cum = 0.0;
    for (std::size_t ix = 0; ix < xs.size(); ++ix) {
        for (std::size_t k = ix * block; k < (ix + 1) * block; ++k) cum += w[k];
        if (cum >= q) return xs[ix];
    }
    return xs.back();
}

struct SessionConfig {
    GridSpec grid{};
    /// Candidate edges are the x0 grid points inside
    /// [x0 quantile(lo) - span * E[sigma], x0 quantile(hi) + span * E[sigma]].
    double candidate_quantile = 1e-3;
    double candidate_sigma_span = 2.0;
    /// Grid points whose weight is below prune_tolerance * max weight are
    /// skipped when ranking candidates. They stay in the posterior.
    double prune_tolerance = 1e-12;
};

namespace detail {

inline std::vector<double> candidates_in_window(const std::vector<double>& xs, std::span<const double> x0_marginal,
                                                double sigma_mean, const SessionConfig& cfg) {
    const auto quantile = [&](double q) {
        double cum = 0.0;
        for (std::size_t ix = 0; ix < xs.size(); ++ix) {
            cum += x0_marginal[ix];
            if (cum >= q) return xs[ix];
        }
        return xs.back();
    };
    const double span = cfg.candidate_sigma_span * sigma_mean;
    const double lo = quantile(cfg.candidate_quantile) - span;
    const double hi = quantile(1.0 - cfg.candidate_quantile) + span;
    std::vector<double> c;
    for (double x : xs)
        if (x >= lo && x <= hi) c.push_back(x);
    if (c.empty()) {
        const double mid = 0.5 * (lo + hi);
        c.push_back(*std::min_element(xs.begin(), xs.end(), [mid](double u, double v) {
            return std::abs(u - mid) < std::abs(v - mid);
        }));
    }
    return c;
}

inline std::vector<double> x0_marginal(const BeamPosterior& post, std::span<const double> w) {
    const std::size_t block = post.sigma_axis().size() * post.a_axis().size();
    std::vector<double> m(post.x0_axis().size(), 0.0);
    for (std::size_t ix = 0; ix < m.size(); ++ix)
        for (std::size_t k = ix * block; k < (ix + 1) * block; ++k) m[ix] += w[k];
    return m;
}

}  // namespace detail

/// Candidate edge positions for the next event under `post`.
inline std::vector<double> default_candidates(const BeamPosterior& post, const SessionConfig& cfg = {}) {
    const auto w = post.weights();
    return detail::candidates_in_window(post.x0_axis(), detail::x0_marginal(post, w), estimate(post, w).sigma.mean,
                                        cfg);
}

/// Closed-loop engine used by run_session. Candidates are restricted to x0
/// grid points, so on a uniform x0 axis every likelihood and entropy term
/// depends only on (edge index - x0 index, sigma index, a index) and can be
/// tabulated once per session.
class SessionEngine {
public:
    explicit SessionEngine(BeamPosterior prior, SessionConfig cfg = {})
        : post_(std::move(prior)), cfg_(cfg) {
        const auto& xs = post_.x0_axis();
        nx_ = xs.size();
        ns_ = post_.sigma_axis().size();
        na_ = post_.a_axis().size();
        const double step = nx_ > 1 ? (xs.back() - xs.front()) / static_cast<double>(nx_ - 1) : 1.0;
        for (std::size_t k = 1; k < nx_; ++k) {
            if (std::abs(xs[k] - xs[k - 1] - step) > 1e-9 * std::max(1.0, std::abs(step))) {
                throw InvalidArgument("SessionEngine: x0 axis must be uniform");
            }
        }
        const std::size_t nd = 2 * nx_ - 1;
        q_.resize(nd * ns_);
        log_det_.resize(nd * ns_ * na_);
        log_blk_.resize(nd * ns_ * na_);
        ent_.resize(nd * ns_ * na_);
        for (std::size_t d = 0; d < nd; ++d) {
            const double offset = (static_cast<double>(d) - static_cast<double>(nx_ - 1)) * step;
            for (std::size_t is = 0; is < ns_; ++is) {
                const double z = offset / post_.sigma_axis()[is];
                const double q = normal_sf(z);
                const double qc = normal_cdf(z);
                q_[d * ns_ + is] = q;
                for (std::size_t ia = 0; ia < na_; ++ia) {
                    const double a = post_.a_axis()[ia];
                    const double pd = a * q;
                    const double pb = (1.0 - a) + a * qc;
                    const std::size_t t = (d * ns_ + is) * na_ + ia;
                    log_det_[t] = pd > 0.0 ? std::log(pd) : -std::numeric_limits<double>::infinity();
                    log_blk_[t] = pb > 0.0 ? std::log(pb) : -std::numeric_limits<double>::infinity();
                    ent_[t] = binary_entropy(pd);
                }
            }
        }
        w_ = post_.weights();
        refresh_summary();
    }

    const BeamPosterior& posterior() const { return post_; }
    const std::vector<double>& weights() const { return w_; }
    const BeamEstimate& estimate() const { return est_; }

    /// Index into the x0 axis of the most informative candidate edge.
    std::size_t choose() const {
        const auto cands = detail::candidates_in_window(post_.x0_axis(), x0_marg_, est_.sigma.mean, cfg_);
        const auto& xs = post_.x0_axis();
        build_support();
        std::size_t best = 0;
        double best_gain = -1.0;
        for (double c : cands) {
            const auto ic = static_cast<std::size_t>(std::lower_bound(xs.begin(), xs.end(), c) - xs.begin());
            const double g = gain_at(ic);
            if (g > best_gain) {  // candidates ascend, so ties keep the smaller edge
                best_gain = g;
                best = ic;
            }
        }
        return best;
    }

    /// Information gain at x0-axis index `ic` (pruned per SessionConfig).
    double gain_at(std::size_t ic) const {
        if (support_dirty_) build_support();
        double p_detect = 0.0;
        double acc[4] = {0.0, 0.0, 0.0, 0.0};
        for (const auto& s : support_) {
            const std::size_t d = ic + (nx_ - 1) - s.ix;
            const std::size_t row = (d * ns_ + s.is) * na_;
            p_detect += q_[d * ns_ + s.is] * s.wa;
            const double* w = &weights_[s.offset];
            const double* e = &ent_[row];
            std::size_t ia = 0;
            for (; ia + 4 <= na_; ia += 4) {
                acc[0] += w[ia] * e[ia];
                acc[1] += w[ia + 1] * e[ia + 1];
                acc[2] += w[ia + 2] * e[ia + 2];
                acc[3] += w[ia + 3] * e[ia + 3];
            }
            for (; ia < na_; ++ia) acc[0] += w[ia] * e[ia];
        }
        const double cond = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        return std::clamp(binary_entropy(p_detect) - cond, 0.0, 1.0);
    }

    void update(std::size_t ic, bool detected) {
        constexpr double kNegInf = -std::numeric_limits<double>::infinity();
        const auto& table = detected ? log_det_ : log_blk_;
        auto& lw = post_.log_w_;
        double mx = kNegInf;
        for (std::size_t ix = 0; ix < nx_; ++ix) {
            const std::size_t d = ic + (nx_ - 1) - ix;
            for (std::size_t is = 0; is < ns_; ++is) {
                const double* t = &table[(d * ns_ + is) * na_];
                double* l = &lw[post_.index(ix, is, 0)];
                for (std::size_t ia = 0; ia < na_; ++ia) {
                    l[ia] += t[ia];
                    mx = std::max(mx, l[ia]);
                }
            }
        }
        if (mx == kNegInf) throw DegeneratePosterior("posterior has zero mass on every grid point");
        // Same result as BeamPosterior::normalize, except that cached weights
        // more than 60 e-folds below the peak are taken as zero (< 1e-26).
        double sum = 0.0;
        for (std::size_t k = 0; k < lw.size(); ++k) {
            const double dl = lw[k] - mx;
            w_[k] = dl > -60.0 ? std::exp(dl) : 0.0;
            sum += w_[k];
        }
        const double lse = mx + std::log(sum);
        const double inv = 1.0 / sum;
        const double floor = mx - lse - 745.0;
        for (std::size_t k = 0; k < lw.size(); ++k) {
            lw[k] -= lse;
            if (lw[k] < floor) lw[k] = kNegInf;
            w_[k] *= inv;
        }
        refresh_summary();
    }

private:
    struct SupportPair {
        std::size_t ix, is;
        std::size_t offset;  // into weights_
        double wa;           // sum_a w * a
    };

    /// Marginal moments and the x0 marginal in one pass over w_.
    void refresh_summary() {
        const auto& xs = post_.x0_axis();
        const auto& ss = post_.sigma_axis();
        const auto& as = post_.a_axis();
        x0_marg_.assign(nx_, 0.0);
        std::vector<double> s_marg(ns_, 0.0), a_marg(na_, 0.0);
        std::size_t k = 0;
        for (std::size_t ix = 0; ix < nx_; ++ix)
            for (std::size_t is = 0; is < ns_; ++is)
                for (std::size_t ia = 0; ia < na_; ++ia, ++k) {
                    const double w = w_[k];
                    x0_marg_[ix] += w;
                    s_marg[is] += w;
                    a_marg[ia] += w;
                }
        const auto moments = [](const std::vector<double>& axis, const std::vector<double>& m) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t i = 0; i < axis.size(); ++i) {
                m1 += m[i] * axis[i];
                m2 += m[i] * axis[i] * axis[i];
            }
            return ParamEstimate{m1, std::sqrt(std::max(0.0, m2 - m1 * m1))};
        };
        est_ = {moments(xs, x0_marg_), moments(ss, s_marg), moments(as, a_marg)};
        support_dirty_ = true;
    }

    void build_support() const {
        if (!support_dirty_) return;
        support_.clear();
        weights_.clear();
        const double cut = *std::max_element(w_.begin(), w_.end()) * cfg_.prune_tolerance;
        for (std::size_t ix = 0; ix < nx_; ++ix) {
            for (std::size_t is = 0; is < ns_; ++is) {
                const std::size_t base = post_.index(ix, is, 0);
                bool any = false;
                for (std::size_t ia = 0; ia < na_; ++ia) any = any || w_[base + ia] >= cut;
                if (!any) continue;
                SupportPair sp{ix, is, weights_.size(), 0.0};
                for (std::size_t ia = 0; ia < na_; ++ia) {
                    const double w = w_[base + ia] >= cut ? w_[base + ia] : 0.0;
                    weights_.push_back(w);
                    sp.wa += w * post_.a_axis()[ia];
                }
                support_.push_back(sp);
            }
        }
        support_dirty_ = false;
    }

    BeamPosterior post_;
    SessionConfig cfg_;
    std::size_t nx_ = 0, ns_ = 0, na_ = 0;
    std::vector<double> q_, log_det_, log_blk_, ent_;
    std::vector<double> w_;
    std::vector<double> x0_marg_;
    BeamEstimate est_{};
    mutable std::vector<SupportPair> support_;
    mutable std::vector<double> weights_;
    mutable bool support_dirty_ = true;
};

struct TraceRow {
    std::size_t index = 0;
    EdgeEvent event;
    double sigma_mean = 0.0;
    double sigma_std = 0.0;
};

struct SessionResult {
    std::vector<TraceRow> trace;
    BeamPosterior posterior;
    BeamEstimate estimate;
};

/// Simulated profiling session: choose edge, draw the outcome from the true
/// beam, update, repeat.
inline SessionResult run_session(const BeamParams& truth, std::size_t n_events, const SessionConfig& cfg,
                                 Seed seed) {
    truth.validate();
    if (n_events < 1) throw InvalidArgument("run_session: n_events must be >= 1");
    SessionEngine engine(BeamPosterior::uniform(cfg.grid), cfg);
    Rng rng(derive(seed, 0x70726f66ULL));
    std::vector<TraceRow> trace;
    trace.reserve(n_events);
    for (std::size_t k = 0; k < n_events; ++k) {
        const std::size_t ic = engine.choose();
        const double edge = engine.posterior().x0_axis()[ic];
        const bool detected = rng.uniform() < detect_probability(truth, edge);
        engine.update(ic, detected);
        const BeamEstimate est = engine.estimate();
        trace.push_back({k, {edge, detected}, est.sigma.mean, est.sigma.std});
    }
    BeamEstimate est = engine.estimate();
    return {std::move(trace), engine.posterior(), est};
}

struct EdgeHistogramBin {
    double lo = 0.0, hi = 0.0;  // nm
    std::size_t detected = 0;
    std::size_t blocked = 0;
};

/// Detected and blocked counts binned by edge position.
inline std::vector<EdgeHistogramBin> edge_histogram(std::span<const TraceRow> trace, double bin_width) {
    if (!(bin_width > 0.0)) throw InvalidArgument("edge_histogram: bin_width must be > 0");
    if (trace.empty()) return {};
    double lo = trace.front().event.edge_pos, hi = lo;
    for (const auto& r : trace) {
        lo = std::min(lo, r.event.edge_pos);
        hi = std::max(hi, r.event.edge_pos);
    }
    const double start = std::floor(lo / bin_width) * bin_width;
    const auto nbins = static_cast<std::size_t>(std::floor((hi - start) / bin_width)) + 1;
    std::vector<EdgeHistogramBin> bins(nbins);
    for (std::size_t b = 0; b < nbins; ++b) {
        bins[b].lo = start + bin_width * static_cast<double>(b);
        bins[b].hi = bins[b].lo + bin_width;
    }
    for (const auto& r : trace) {
        auto b = static_cast<std::size_t>(std::floor((r.event.edge_pos - start) / bin_width));
        b = std::min(b, nbins - 1);
        (r.event.detected ? bins[b].detected : bins[b].blocked) += 1;
    }
    return bins;
}

}  // namespace ionimp::profiler
