#pragma once

// Experiment harness: certainty-equivalent rates, turnover and frontiers with
// Monte Carlo standard errors, and the views / no-views / static benchmark
// comparison on common random numbers with per-path sampled views.

#include "baselines.hpp"

#include <iomanip>
#include <map>
#include <ostream>

namespace viewfactor {

/// Invalid experiment configuration; the message names the offending field.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A Monte Carlo statistic and its standard error.
struct Estimate {
    double value = 0.0;
    double se = 0.0;
};

// ---------------------------------------------------------------------------
// Statistics

namespace detail {
/// Shifted exponentials w_i = exp((1-gamma) ln(Z_i/z0) - shift) and the shift,
/// so E[(Z/z0)^{1-gamma}] = mean(w) e^{shift} without overflow.
inline std::pair<std::vector<double>, double> scaled_utilities(const std::vector<double>& z, double z0,
                                                               double gamma, const char* who) {
    if (z.empty()) throw std::invalid_argument(std::string(who) + ": no wealth observations");
    if (!(z0 > 0.0)) throw std::invalid_argument(std::string(who) + ": z0 must be positive");
    if (!(gamma > 1.0)) throw std::invalid_argument(std::string(who) + ": gamma must exceed 1");
    std::vector<double> e(z.size());
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (!(z[i] > 0.0)) throw std::invalid_argument(std::string(who) + ": nonpositive terminal wealth");
        e[i] = (1.0 - gamma) * std::log(z[i] / z0);
        shift = std::max(shift, e[i]);
    }
    for (double& v : e) v = std::exp(v - shift);
    return {std::move(e), shift};
}

inline double sample_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_cov(const std::vector<double>& a, const std::vector<double>& b) {
    const double ma = sample_mean(a), mb = sample_mean(b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
    return a.size() > 1 ? s / static_cast<double>(a.size() - 1) : 0.0;
}
}  // namespace detail

/// r_c = ln(E[(Z_T/z0)^{1-gamma}]) / ((1-gamma) T)
inline double cer(const std::vector<double>& terminal, double z0, double gamma, double T) {
    if (!(T > 0.0)) throw std::invalid_argument("cer: T must be positive");
    auto [w, shift] = detail::scaled_utilities(terminal, z0, gamma, "cer");
    return (std::log(detail::sample_mean(w)) + shift) / ((1.0 - gamma) * T);
}

/// CER with its delta-method standard error sd(W) / (sqrt(n) E[W] |1-gamma| T).
inline Estimate cer_estimate(const std::vector<double>& terminal, double z0, double gamma, double T) {
    auto [w, shift] = detail::scaled_utilities(terminal, z0, gamma, "cer");
    (void)shift;
    Estimate e;
    e.value = cer(terminal, z0, gamma, T);
    const double m = detail::sample_mean(w);
    e.se = std::sqrt(detail::sample_cov(w, w) / static_cast<double>(w.size())) / (m * (gamma - 1.0) * T);
    return e;
}

/// CER(a) - CER(b) on paired samples (common random numbers), with the
/// delta-method standard error that accounts for the pairing.
inline Estimate cer_difference(const std::vector<double>& a, const std::vector<double>& b, double z0, double gamma,
                               double T) {
    if (a.size() != b.size()) throw std::invalid_argument("cer_difference: samples must be paired");
    auto [wa, sa] = detail::scaled_utilities(a, z0, gamma, "cer_difference");
    auto [wb, sb] = detail::scaled_utilities(b, z0, gamma, "cer_difference");
    (void)sa;
    (void)sb;
    const double ma = detail::sample_mean(wa), mb = detail::sample_mean(wb);
    const double n = static_cast<double>(wa.size());
    const double var = detail::sample_cov(wa, wa) / (ma * ma) + detail::sample_cov(wb, wb) / (mb * mb) -
                       2.0 * detail::sample_cov(wa, wb) / (ma * mb);
    Estimate e;
    e.value = cer(a, z0, gamma, T) - cer(b, z0, gamma, T);
    e.se = std::sqrt(std::max(var, 0.0) / n) / ((gamma - 1.0) * T);
    return e;
}

/// Mean and standard deviation of a sample, each with a standard error
/// (the latter from the normal-theory sd / sqrt(2(n-1))).
struct SampleSummary {
    int n = 0;
    Estimate mean;
    Estimate sd;
};

inline SampleSummary summarize(const std::vector<double>& v) {
    if (v.size() < 2) throw std::invalid_argument("summarize: needs at least two observations");
    SampleSummary s;
    s.n = static_cast<int>(v.size());
    s.mean.value = detail::sample_mean(v);
    s.sd.value = std::sqrt(detail::sample_cov(v, v));
    s.mean.se = s.sd.value / std::sqrt(static_cast<double>(s.n));
    s.sd.se = s.sd.value / std::sqrt(2.0 * (s.n - 1));
    return s;
}

/// Per-path total absolute change in share holdings between consecutive
/// rebalance dates, summed over assets (holdings: N x rebalance count).
inline double path_turnover(const Mat& holdings) {
    double s = 0.0;
    for (Eigen::Index k = 1; k < holdings.cols(); ++k) s += (holdings.col(k) - holdings.col(k - 1)).cwiseAbs().sum();
    return s;
}

/// sum_i E[sum_t |n_i(t + dt) - n_i(t)|], averaged over paths, with its SE.
inline Estimate turnover_estimate(const std::vector<Mat>& holdings) {
    std::vector<double> per;
    per.reserve(holdings.size());
    for (const Mat& h : holdings) per.push_back(path_turnover(h));
    if (per.size() < 2) return {per.empty() ? 0.0 : per.front(), 0.0};
    SampleSummary s = summarize(per);
    return s.mean;
}

inline double turnover(const std::vector<Mat>& holdings) { return turnover_estimate(holdings).value; }

// ---------------------------------------------------------------------------
// Frontiers

/// One point of a mean / standard-deviation frontier of log-returns.
struct FrontierPoint {
    std::string strategy;
    double gamma = 0.0;
    Estimate mean;
    Estimate sd;
    Estimate turnover;
};

/// Comparison of frontier `upper` against `lower` at matched risk: for each
/// point of `lower` whose sd lies inside the sd range of `upper`, the mean
/// (and turnover) of `upper` is linearly interpolated at that sd.
struct MatchedRiskComparison {
    double sd = 0.0;
    double gamma_lower = 0.0;
    double mean_upper = 0.0, mean_lower = 0.0;
    double mean_se = 0.0;  // combined, treating the two frontiers as independent
    double turnover_upper = 0.0, turnover_lower = 0.0;
    double turnover_se = 0.0;
};

inline std::vector<MatchedRiskComparison> compare_at_matched_risk(std::vector<FrontierPoint> upper,
                                                                  const std::vector<FrontierPoint>& lower) {
    if (upper.size() < 2) throw std::invalid_argument("compare_at_matched_risk: needs at least two points");
    std::sort(upper.begin(), upper.end(),
              [](const FrontierPoint& a, const FrontierPoint& b) { return a.sd.value < b.sd.value; });
    std::vector<MatchedRiskComparison> out;
    for (const FrontierPoint& lo : lower) {
        const double s = lo.sd.value;
        if (s < upper.front().sd.value || s > upper.back().sd.value) continue;
        std::size_t j = 1;
        while (j + 1 < upper.size() && upper[j].sd.value < s) ++j;
        const FrontierPoint& a = upper[j - 1];
        const FrontierPoint& b = upper[j];
        const double w = b.sd.value > a.sd.value ? (s - a.sd.value) / (b.sd.value - a.sd.value) : 0.0;
        MatchedRiskComparison c;
        c.sd = s;
        c.gamma_lower = lo.gamma;
        c.mean_upper = (1 - w) * a.mean.value + w * b.mean.value;
        c.mean_lower = lo.mean.value;
        const double se_u = std::max(a.mean.se, b.mean.se);
        c.mean_se = std::sqrt(se_u * se_u + lo.mean.se * lo.mean.se);
        c.turnover_upper = (1 - w) * a.turnover.value + w * b.turnover.value;
        c.turnover_lower = lo.turnover.value;
        const double te_u = std::max(a.turnover.se, b.turnover.se);
        c.turnover_se = std::sqrt(te_u * te_u + lo.turnover.se * lo.turnover.se);
        out.push_back(c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Policies affine in the state and the view

/// Weights at each rebalance node k: pi = c_k + Mx_k x + My_k y.
struct AffinePolicy {
    std::vector<int> nodes;
    std::vector<Vec> c;
    std::vector<Mat> Mx, My;

    Vec weights(int node, const Vec& x, const Vec& y) const {
        const auto it = std::lower_bound(nodes.begin(), nodes.end(), node);
        if (it == nodes.end() || *it != node) throw std::invalid_argument("AffinePolicy: not a rebalance node");
        const auto r = static_cast<std::size_t>(it - nodes.begin());
        Vec w = c[r] + Mx[r] * x;
        if (My[r].cols() > 0) w += My[r] * y;
        return w;
    }
};

namespace detail {
inline std::vector<int> rebalance_nodes(const TimeGrid& grid, int every) {
    std::vector<int> out;
    for (int k = 0; k < grid.n_steps; k += every) out.push_back(k);
    return out;
}
}  // namespace detail

/// Optimal dynamic policy of the conditional problem (no view: the no-views
/// policy), with the value-function coefficients read from `path`.
inline AffinePolicy dynamic_policy(const ConditionalCoeffs& cc, const RiccatiPath& path, const Preferences& pref,
                                   const TimeGrid& grid, int rebalance_every) {
    const MarketModel& m = cc.model();
    const int K = cc.K();
    const double ig = 1.0 / pref.gamma, rf = m.assets.r_f;
    const Eigen::LLT<Mat> SS(m.sigma_s());
    if (SS.info() != Eigen::Success) throw NumericalError("dynamic_policy: Sigma^S is not positive definite");
    const Mat SSX = m.sigma_sx();
    AffinePolicy ap;
    ap.nodes = detail::rebalance_nodes(grid, rebalance_every);
    for (int k : ap.nodes) {
        const double t = grid.at(k);
        auto s = cc.at(t);
        const Mat A = path.A_at(t);
        auto [i, w] = path.bracket(t);
        Vec b0 = path.b0[i];
        Mat By = K ? path.By[i] : Mat(m.d(), 0);
        if (w != 0.0) {
            b0 = (1 - w) * b0 + w * path.b0[i + 1];
            if (K) By = (1 - w) * By + w * path.By[i + 1];
        }
        ap.c.push_back(ig * SS.solve(Vec(s->alpha0.array() - rf) + SSX * b0));
        ap.Mx.push_back(ig * SS.solve(Mat(s->beta + SSX * A)));
        ap.My.push_back(K ? Mat(ig * SS.solve(Mat(s->alpha_y + SSX * By))) : Mat(m.N(), 0));
    }
    return ap;
}

/// Static benchmark: myopic mean-variance weights on the conditional
/// horizon moments, re-evaluated at each rebalance date.
inline AffinePolicy static_bl_policy(const ConditionalCoeffs& cc, const Preferences& pref, const TimeGrid& grid,
                                     int rebalance_every, int intervals = kBLQuadratureIntervals) {
    pref.validate();
    const double rf = cc.model().assets.r_f;
    AffinePolicy ap;
    ap.nodes = detail::rebalance_nodes(grid, rebalance_every);
    const auto n = ap.nodes.size();
    ap.c.resize(n);
    ap.Mx.resize(n);
    ap.My.resize(n);
    std::vector<std::string> errors(n);
    parallel_for(static_cast<int>(n), [&](int r) {
        const BLAffine af = bl_affine(cc, grid.at(ap.nodes[r]), intervals);
        Eigen::LLT<Mat> llt(af.Sigma);
        if (llt.info() != Eigen::Success) {
            errors[r] = "static_bl_policy: Sigma_BL is not positive definite at t=" + std::to_string(af.s);
            return;
        }
        const double ig = 1.0 / pref.gamma;
        ap.c[r] = ig * llt.solve(Vec((af.a - af.a_y * af.y).array() - rf * (af.T - af.s)));
        ap.Mx[r] = ig * llt.solve(af.B);
        ap.My[r] = ig * llt.solve(af.a_y);
    });
    for (const auto& e : errors)
        if (!e.empty()) throw NumericalError(e);
    return ap;
}

// ---------------------------------------------------------------------------
// Experiments

enum class Strategy { DynamicViews, DynamicNoViews, StaticBL };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::DynamicViews: return "dynamic-views";
        case Strategy::DynamicNoViews: return "dynamic-no-views";
        case Strategy::StaticBL: return "static-bl";
    }
    return "?";
}

inline Strategy parse_strategy(const std::string& s) {
    if (s == "dynamic-views") return Strategy::DynamicViews;
    if (s == "dynamic-no-views") return Strategy::DynamicNoViews;
    if (s == "static-bl") return Strategy::StaticBL;
    throw ConfigError("strategies: unknown strategy '" + s + "'");
}

enum class YSource { Sampled, Fixed };
enum class SweepAxis { None, Tau, Rho };

inline const char* sweep_axis_name(SweepAxis a) {
    switch (a) {
        case SweepAxis::None: return "none";
        case SweepAxis::Tau: return "tau";
        case SweepAxis::Rho: return "rho";
    }
    return "?";
}

struct ExperimentConfig {
    MarketModel model;
    Mat P;                      // K x d view map
    double tau = 0.05;          // Omega = tau P Var[X(T)|X(0)] P^T unless omega is given
    std::optional<Mat> omega;   // explicit view noise covariance
    YSource y_source = YSource::Sampled;
    Vec y;                      // used when y_source is Fixed
    std::vector<double> gammas{5.0};
    double T = 1.0;
    int rebalances_per_year = 12;
    int steps_per_rebalance = 4;  // simulation sub-steps between trades
    int riccati_steps_per_year = 2400;
    int n_paths = 2000;
    std::uint64_t seed = 42;
    std::vector<Strategy> strategies{Strategy::DynamicViews, Strategy::DynamicNoViews, Strategy::StaticBL};
    SweepAxis sweep = SweepAxis::None;
    std::vector<double> sweep_values;
    double z0 = 1.0;
    std::optional<Vec> x0;  // default: the long-run mean
    bool keep_paths = false;

    int n_rebalances() const { return static_cast<int>(std::lround(T * rebalances_per_year)); }

    void validate() const {
        try {
            model.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("model: ") + e.what());
        }
        const int d = model.d();
        if (P.rows() < 1 || P.cols() != d) throw ConfigError("view.p: must be K x d with K >= 1");
        if (omega && (omega->rows() != P.rows() || omega->cols() != P.rows()))
            throw ConfigError("view.omega: must be K x K");
        if (!omega && !(tau > 0.0)) throw ConfigError("view.tau: must be positive");
        if (y_source == YSource::Fixed && y.size() != P.rows()) throw ConfigError("view.y: must have K entries");
        if (gammas.empty()) throw ConfigError("gammas: must be nonempty");
        for (double g : gammas)
            if (!(g > 1.0)) throw ConfigError("gammas: every gamma must exceed 1");
        if (!(T > 0.0)) throw ConfigError("horizon: must be positive");
        if (rebalances_per_year < 1) throw ConfigError("rebalances_per_year: must be >= 1");
        if (std::abs(T * rebalances_per_year - n_rebalances()) > 1e-9 || n_rebalances() < 1)
            throw ConfigError("rebalances_per_year: horizon must hold a whole number of rebalance periods");
        if (steps_per_rebalance < 1) throw ConfigError("steps_per_rebalance: must be >= 1");
        if (riccati_steps_per_year < 4) throw ConfigError("riccati_steps_per_year: must be >= 4");
        if (n_paths < 1) throw ConfigError("n_paths: must be >= 1");
        if (strategies.empty()) throw ConfigError("strategies: must be nonempty");
        if (!(z0 > 0.0)) throw ConfigError("z0: must be positive");
        if (x0 && x0->size() != d) throw ConfigError("x0: must have d entries");
        if (sweep != SweepAxis::None && sweep_values.empty()) throw ConfigError("sweep.values: must be nonempty");
        for (double v : sweep_values) {
            if (sweep == SweepAxis::Tau && !(v > 0.0)) throw ConfigError("sweep.values: tau must be positive");
            if (sweep == SweepAxis::Rho && !(v >= 0.0 && v <= 1.0))
                throw ConfigError("sweep.values: rho must lie in [0, 1]");
        }
        if (sweep == SweepAxis::Tau && omega) throw ConfigError("sweep: a tau sweep needs tau, not an explicit omega");
    }
};

/// Statistics of one strategy at one (sweep point, gamma).
struct StrategyRow {
    double sweep_value = std::numeric_limits<double>::quiet_NaN();
    std::string strategy;
    double gamma = 0.0;
    int n_paths = 0;
    int n_excluded = 0;
    Estimate mean_log_return;
    Estimate sd_log_return;
    Estimate cer;
    Estimate turnover;
};

/// Paired CER difference between two strategies at one (sweep point, gamma).
struct DeltaRow {
    double sweep_value = std::numeric_limits<double>::quiet_NaN();
    double gamma = 0.0;
    std::string contrast;
    int n_paired = 0;
    Estimate delta_cer;
};

/// Expected optimal value with sampled views against the no-views value, at
/// the initial state: E_y[V(0, z0, x0; y)] - V0(0, z0, x0).
struct ValueGainRow {
    double sweep_value = std::numeric_limits<double>::quiet_NaN();
    double gamma = 0.0;
    Estimate expected_value_views;
    double value_no_views = 0.0;
    Estimate gain;
};

struct ExperimentReport {
    std::string sweep_axis = "none";
    std::vector<StrategyRow> strategies;
    std::vector<DeltaRow> deltas;
    std::vector<ValueGainRow> value_gains;
    /// Terminal wealth per path keyed by "strategy|gamma|sweep" (keep_paths).
    std::map<std::string, std::vector<double>> terminal_wealth;

    const StrategyRow& row(const std::string& strategy, double gamma, double sweep_value) const {
        for (const auto& r : strategies)
            if (r.strategy == strategy && r.gamma == gamma &&
                (r.sweep_value == sweep_value || (std::isnan(r.sweep_value) && std::isnan(sweep_value))))
                return r;
        throw std::out_of_range("ExperimentReport: no row for " + strategy);
    }

    const DeltaRow& delta(const std::string& contrast, double gamma, double sweep_value) const {
        for (const auto& r : deltas)
            if (r.contrast == contrast && r.gamma == gamma &&
                (r.sweep_value == sweep_value || (std::isnan(r.sweep_value) && std::isnan(sweep_value))))
                return r;
        throw std::out_of_range("ExperimentReport: no delta row for " + contrast);
    }

    /// Frontier points of one strategy over the gamma grid at a sweep point.
    std::vector<FrontierPoint> frontier(const std::string& strategy, double sweep_value) const {
        std::vector<FrontierPoint> out;
        for (const auto& r : strategies)
            if (r.strategy == strategy &&
                (r.sweep_value == sweep_value || (std::isnan(r.sweep_value) && std::isnan(sweep_value))))
                out.push_back({r.strategy, r.gamma, r.mean_log_return, r.sd_log_return, r.turnover});
        return out;
    }
};

namespace detail {
inline void write_value(std::ostream& os, double v) {
    if (std::isnan(v))
        os << "";
    else
        os << v;
}
}  // namespace detail

/// CSV tables, each led by a schema comment line.
inline void write_strategy_csv(std::ostream& os, const ExperimentReport& r) {
    os << "# schema: sweep_axis,sweep_value,strategy,gamma,n_paths,n_excluded,mean_log_return,se_mean,"
          "sd_log_return,se_sd,cer,se_cer,turnover,se_turnover\n";
    os << "sweep_axis,sweep_value,strategy,gamma,n_paths,n_excluded,mean_log_return,se_mean,sd_log_return,se_sd,"
          "cer,se_cer,turnover,se_turnover\n";
    os << std::setprecision(10);
    for (const auto& x : r.strategies) {
        os << r.sweep_axis << ",";
        detail::write_value(os, x.sweep_value);
        os << "," << x.strategy << "," << x.gamma << "," << x.n_paths << "," << x.n_excluded << ","
           << x.mean_log_return.value << "," << x.mean_log_return.se << "," << x.sd_log_return.value << ","
           << x.sd_log_return.se << "," << x.cer.value << "," << x.cer.se << "," << x.turnover.value << ","
           << x.turnover.se << "\n";
    }
}

inline void write_delta_csv(std::ostream& os, const ExperimentReport& r) {
    os << "# schema: sweep_axis,sweep_value,gamma,contrast,n_paired,delta_cer,se_delta_cer\n";
    os << "sweep_axis,sweep_value,gamma,contrast,n_paired,delta_cer,se_delta_cer\n";
    os << std::setprecision(10);
    for (const auto& x : r.deltas) {
        os << r.sweep_axis << ",";
        detail::write_value(os, x.sweep_value);
        os << "," << x.gamma << "," << x.contrast << "," << x.n_paired << "," << x.delta_cer.value << ","
           << x.delta_cer.se << "\n";
    }
}

inline void write_value_gain_csv(std::ostream& os, const ExperimentReport& r) {
    os << "# schema: sweep_axis,sweep_value,gamma,expected_value_views,se_expected_value_views,value_no_views,"
          "gain,se_gain\n";
    os << "sweep_axis,sweep_value,gamma,expected_value_views,se_expected_value_views,value_no_views,gain,se_gain\n";
    os << std::setprecision(12);
    for (const auto& x : r.value_gains) {
        os << r.sweep_axis << ",";
        detail::write_value(os, x.sweep_value);
        os << "," << x.gamma << "," << x.expected_value_views.value << "," << x.expected_value_views.se << ","
           << x.value_no_views << "," << x.gain.value << "," << x.gain.se << "\n";
    }
}

inline void write_frontier_csv(std::ostream& os, const ExperimentReport& r) {
    os << "# schema: sweep_value,strategy,gamma,sd_log_return,se_sd,mean_log_return,se_mean,turnover,se_turnover\n";
    os << "sweep_value,strategy,gamma,sd_log_return,se_sd,mean_log_return,se_mean,turnover,se_turnover\n";
    os << std::setprecision(10);
    for (const auto& x : r.strategies) {
        detail::write_value(os, x.sweep_value);
        os << "," << x.strategy << "," << x.gamma << "," << x.sd_log_return.value << "," << x.sd_log_return.se
           << "," << x.mean_log_return.value << "," << x.mean_log_return.se << "," << x.turnover.value << ","
           << x.turnover.se << "\n";
    }
}

/// Stream index offset separating the view-noise draws from the path draws.
inline constexpr std::uint64_t kViewNoiseStream = 0x5f3759dfULL << 20;

/// Runs the configured experiment. Every sweep point and gamma reuses the
/// same market paths and the same standard-normal view noise (common random
/// numbers). With sampled views, y = P X(T) + eps is drawn per path from the
/// path's own terminal factors, so the paths follow the unconditional law
/// and each y its correct conditional law; with a fixed y the paths are
/// drawn from the conditional law given y. Every strategy trades on the same
/// rebalance dates.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentReport rep;
    rep.sweep_axis = sweep_axis_name(cfg.sweep);
    std::vector<double> points = cfg.sweep == SweepAxis::None
                                     ? std::vector<double>{std::numeric_limits<double>::quiet_NaN()}
                                     : cfg.sweep_values;
    const int n_reb = cfg.n_rebalances();
    const TimeGrid grid(0.0, cfg.T, n_reb * cfg.steps_per_rebalance);
    const int ric_steps =
        n_reb * std::max(1, static_cast<int>(std::ceil(cfg.riccati_steps_per_year * cfg.T / n_reb)));
    const TimeGrid rgrid(0.0, cfg.T, ric_steps);
    const int K = static_cast<int>(cfg.P.rows());
    const int np = cfg.n_paths;
    auto has = [&](Strategy s) { return std::find(cfg.strategies.begin(), cfg.strategies.end(), s) != cfg.strategies.end(); };

    // view noise standard normals, shared by every sweep point
    std::vector<Vec> noise(np);
    for (int p = 0; p < np; ++p) noise[p] = PathRng(cfg.seed, kViewNoiseStream + p).normals(K);

    for (double sv : points) {
        MarketModel m = cfg.model;
        if (cfg.sweep == SweepAxis::Rho) m.rho = sv;
        const double tau = cfg.sweep == SweepAxis::Tau ? sv : cfg.tau;
        const Vec x0 = cfg.x0 ? *cfg.x0 : m.factors.mu;

        ViewSpec v;
        v.P = cfg.P;
        v.T = cfg.T;
        v.Omega = cfg.omega ? *cfg.omega : omega_from_tau(m, cfg.P, tau, cfg.T);
        v.y = cfg.y_source == YSource::Fixed ? cfg.y : Vec(v.P * m.factors.mu);
        try {
            v.validate(m.d());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("view: ") + e.what());
        }

        PathSet ps = cfg.y_source == YSource::Fixed
                         ? simulate_conditional(m, v, x0, Vec::Ones(m.N()), grid, np, cfg.seed)
                         : simulate_joint(m, x0, Vec::Ones(m.N()), grid, np, cfg.seed);
        std::vector<Vec> ys(np);
        if (cfg.y_source == YSource::Fixed) {
            for (auto& y : ys) y = cfg.y;
        } else {
            const Mat LO = cholesky(v.Omega);
            for (int p = 0; p < np; ++p) ys[p] = v.P * ps.X[p].col(grid.n_steps) + LO * noise[p];
        }

        const ConditionalCoeffs cc_view(m, v);
        const ConditionalCoeffs cc_none(m);
        for (double gamma : cfg.gammas) {
            const Preferences pref{gamma};
            const RiccatiPath none = solve_no_views(m, pref, rgrid);
            std::optional<RiccatiPath> full;
            if (has(Strategy::DynamicViews)) full = solve_full(cc_view, pref, rgrid);

            std::map<Strategy, WealthResult> results;
            for (Strategy s : cfg.strategies) {
                AffinePolicy ap = s == Strategy::DynamicViews     ? dynamic_policy(cc_view, *full, pref, grid, cfg.steps_per_rebalance)
                                  : s == Strategy::DynamicNoViews ? dynamic_policy(cc_none, none, pref, grid, cfg.steps_per_rebalance)
                                                                  : static_bl_policy(cc_view, pref, grid, cfg.steps_per_rebalance);
                PolicyFn fn = [&ap, &ys](int p, int node, double, const Vec& x, const Vec&) {
                    return ap.weights(node, x, ys[p]);
                };
                WealthResult wr = wealth_on_paths(ps, fn, cfg.z0, m.assets.r_f, cfg.steps_per_rebalance);

                StrategyRow row;
                row.sweep_value = sv;
                row.strategy = strategy_name(s);
                row.gamma = gamma;
                row.n_paths = np;
                row.n_excluded = wr.n_excluded;
                std::vector<double> zt = wr.valid_terminal();
                std::vector<double> lr;
                std::vector<Mat> hv;
                for (int p = 0; p < np; ++p)
                    if (wr.valid[p]) {
                        lr.push_back(std::log(wr.terminal[p] / cfg.z0));
                        hv.push_back(wr.holdings[p]);
                    }
                if (zt.size() >= 2) {
                    SampleSummary su = summarize(lr);
                    row.mean_log_return = su.mean;
                    row.sd_log_return = su.sd;
                    row.cer = cer_estimate(zt, cfg.z0, gamma, cfg.T);
                    row.turnover = turnover_estimate(hv);
                } else {
                    const double nan = std::numeric_limits<double>::quiet_NaN();
                    row.mean_log_return = row.sd_log_return = row.cer = row.turnover = {nan, nan};
                }
                rep.strategies.push_back(row);
                if (cfg.keep_paths) {
                    std::ostringstream key;
                    key << row.strategy << "|" << gamma << "|" << sv;
                    rep.terminal_wealth[key.str()] = wr.terminal;
                }
                results.emplace(s, std::move(wr));
            }

            auto paired = [&](Strategy a, Strategy b) {
                if (!results.count(a) || !results.count(b)) return;
                const WealthResult& ra = results.at(a);
                const WealthResult& rb = results.at(b);
                std::vector<double> za, zb;
                for (int p = 0; p < np; ++p)
                    if (ra.valid[p] && rb.valid[p]) {
                        za.push_back(ra.terminal[p]);
                        zb.push_back(rb.terminal[p]);
                    }
                DeltaRow dr;
                dr.sweep_value = sv;
                dr.gamma = gamma;
                dr.contrast = std::string(strategy_name(a)) + " - " + strategy_name(b);
                dr.n_paired = static_cast<int>(za.size());
                if (za.size() >= 2)
                    dr.delta_cer = cer_difference(za, zb, cfg.z0, gamma, cfg.T);
                else
                    dr.delta_cer = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
                rep.deltas.push_back(dr);
            };
            paired(Strategy::DynamicViews, Strategy::DynamicNoViews);
            paired(Strategy::DynamicViews, Strategy::StaticBL);
            paired(Strategy::StaticBL, Strategy::DynamicNoViews);

            if (full) {
                ValueGainRow vg;
                vg.sweep_value = sv;
                vg.gamma = gamma;
                vg.value_no_views = value_function(none, pref, 0.0, cfg.z0, x0, Vec());
                std::vector<double> vals(np);
                for (int p = 0; p < np; ++p) vals[p] = value_function(*full, pref, 0.0, cfg.z0, x0, ys[p]);
                if (np >= 2) {
                    SampleSummary su = summarize(vals);
                    vg.expected_value_views = su.mean;
                } else {
                    vg.expected_value_views = {vals[0], 0.0};
                }
                vg.gain = {vg.expected_value_views.value - vg.value_no_views, vg.expected_value_views.se};
                rep.value_gains.push_back(vg);
            }
        }
    }
    return rep;
}

/// Tower-property check of the view-sampling protocol: with y = P X(T) + eps
/// drawn from simulated paths, the average over y of E[X(T) | y, X(0)] must
/// equal E[X(T) | X(0)]. Returns the per-factor difference and its standard
/// error.
struct TowerCheck {
    Vec unconditional_mean;
    Vec averaged_conditional_mean;
    Vec se;
};

inline TowerCheck view_sampling_tower_check(const MarketModel& m, const Mat& P, const Mat& Omega, double T,
                                            const Vec& x0, int n_paths, std::uint64_t seed, int steps = 12) {
    const int d = m.d(), K = static_cast<int>(P.rows());
    PathSet ps = simulate_joint(m, x0, Vec::Ones(m.N()), TimeGrid(0.0, T, steps), n_paths, seed);
    const Mat LO = cholesky(Omega);
    // conditional mean of X(T) given y is affine in y: m + G (y - P m)
    const Vec mT = cond_factor_mean(m.factors, 0.0, T, x0);
    const Mat VT = cond_factor_cov(m.factors, 0.0, T);
    const Mat G = VT * P.transpose() * (P * VT * P.transpose() + Omega).inverse();
    std::vector<std::vector<double>> cm(d, std::vector<double>(n_paths));
    for (int p = 0; p < n_paths; ++p) {
        const Vec y = P * ps.X[p].col(steps) + LO * PathRng(seed, kViewNoiseStream + p).normals(K);
        const Vec c = mT + G * (y - P * mT);
        for (int j = 0; j < d; ++j) cm[j][p] = c(j);
    }
    TowerCheck tc;
    tc.unconditional_mean = mT;
    tc.averaged_conditional_mean.resize(d);
    tc.se.resize(d);
    for (int j = 0; j < d; ++j) {
        SampleSummary s = summarize(cm[j]);
        tc.averaged_conditional_mean(j) = s.mean.value;
        tc.se(j) = s.mean.se;
    }
    return tc;
}

/// 64-bit FNV-1a hash, used to fingerprint configurations in manifests.
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

}  // namespace viewfactor
