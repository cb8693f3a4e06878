#pragma once

// CRRA portfolio choice under views: the backward Riccati/linear/scalar ODE
// system for g(t,x) = 1/2 x^T A x + x^T b + c, its decomposition into a
// no-views problem with view-dependent terminal data, optimal policies,
// value-function evaluation, an HJB residual and wealth simulation.

#include "views.hpp"

#include <optional>
#include <ostream>

namespace viewfactor {

struct Preferences {
    double gamma = 5.0;

    void validate() const {
        if (!(gamma > 1.0)) throw std::invalid_argument("Preferences: gamma must exceed 1");
    }
};

/// Coefficients of g on a grid. b and c are affine and quadratic in the view
/// realisation: b = b0 + By y, c = c0 + cy^T y + 1/2 y^T Cyy y, so one
/// backward pass serves every y. K = 0 for the no-views problem.
struct RiccatiPath {
    TimeGrid grid;
    int K = 0;
    Vec y;  // realisation used by the single-argument accessors
    std::vector<Mat> A;
    std::vector<Vec> b0;
    std::vector<Mat> By;
    std::vector<double> c0;
    std::vector<Vec> cy;
    std::vector<Mat> Cyy;

    int d() const { return A.empty() ? 0 : static_cast<int>(A.front().rows()); }

    Vec b(int i, const Vec& yv) const { return K ? Vec(b0[i] + By[i] * yv) : b0[i]; }
    Vec b(int i) const { return b(i, y); }
    double c(int i, const Vec& yv) const {
        return K ? c0[i] + cy[i].dot(yv) + 0.5 * yv.dot(Cyy[i] * yv) : c0[i];
    }
    double c(int i) const { return c(i, y); }

    /// Linear interpolation between the two nodes bracketing t.
    Mat A_at(double t) const {
        auto [i, w] = bracket(t);
        return w == 0.0 ? A[i] : Mat((1 - w) * A[i] + w * A[i + 1]);
    }
    Vec b_at(double t, const Vec& yv) const {
        auto [i, w] = bracket(t);
        return w == 0.0 ? b(i, yv) : Vec((1 - w) * b(i, yv) + w * b(i + 1, yv));
    }
    Vec b_at(double t) const { return b_at(t, y); }
    double c_at(double t, const Vec& yv) const {
        auto [i, w] = bracket(t);
        return w == 0.0 ? c(i, yv) : (1 - w) * c(i, yv) + w * c(i + 1, yv);
    }
    double c_at(double t) const { return c_at(t, y); }

    /// g(t, x) = 1/2 x^T A x + x^T b + c
    double g(double t, const Vec& x, const Vec& yv) const {
        return 0.5 * x.dot(A_at(t) * x) + x.dot(b_at(t, yv)) + c_at(t, yv);
    }

    /// One row per node: t, A row-major, b, c (at the stored realisation).
    void write_csv(std::ostream& os) const {
        const int dd = d();
        os << "# schema: t";
        for (int r = 0; r < dd; ++r)
            for (int q = 0; q < dd; ++q) os << ",A_" << r << "_" << q;
        for (int r = 0; r < dd; ++r) os << ",b_" << r;
        os << ",c\n";
        os << "t";
        for (int r = 0; r < dd; ++r)
            for (int q = 0; q < dd; ++q) os << ",A_" << r << "_" << q;
        for (int r = 0; r < dd; ++r) os << ",b_" << r;
        os << ",c\n";
        os.precision(17);
        for (int i = 0; i < grid.nodes(); ++i) {
            os << grid.at(i);
            for (int r = 0; r < dd; ++r)
                for (int q = 0; q < dd; ++q) os << "," << A[i](r, q);
            Vec bi = b(i);
            for (int r = 0; r < dd; ++r) os << "," << bi(r);
            os << "," << c(i) << "\n";
        }
    }

    /// Left node index and interpolation weight for t.
    std::pair<int, double> bracket(double t) const {
        int i = grid.left_index(t);
        if (i >= grid.n_steps) return {grid.n_steps, 0.0};
        double w = (t - grid.at(i)) / grid.h();
        return {i, std::clamp(w, 0.0, 1.0)};
    }
};

/// Drift data entering the ODE system at time t: Theta~, beta~, the factor
/// drift intercept m = m0 + My y (Theta~ mu~) and the excess-return
/// intercept lambda = lam0 + Lamy y (alpha~ - r_f 1). The state covariance
/// Sigma^X and the asset/state cross-covariance Sigma^{S,X} default to the
/// model's constants; a source may supply time-varying ones instead.
struct RiccatiCoeffs {
    Mat theta;
    Mat beta;
    Vec m0;
    Mat My;  // d x K
    Vec lam0;
    Mat Lamy;      // N x K
    Mat sigma_x;   // d x d, empty for the model's Sigma^X
    Mat sigma_sx;  // N x d, empty for the model's Sigma^{S,X}
};

using RiccatiCoeffSource = std::function<RiccatiCoeffs(double t)>;

struct RiccatiTerminal {
    Mat A;
    Vec b0;
    Mat By;  // d x K
    double c0 = 0.0;
    Vec cy;   // K
    Mat Cyy;  // K x K

    static RiccatiTerminal zero(int d, int K) {
        return {Mat::Zero(d, d), Vec::Zero(d), Mat::Zero(d, K), 0.0, Vec::Zero(K), Mat::Zero(K, K)};
    }
};

/// Coefficient source backed by ConditionalCoeffs, padded to K view columns
/// (the unconditional source has none of its own).
inline RiccatiCoeffSource coeff_source(const ConditionalCoeffs& cc, int K) {
    const double rf = cc.model().assets.r_f;
    return [&cc, K, rf](double t) {
        auto s = cc.at(t);
        RiccatiCoeffs r;
        r.theta = s->theta;
        r.beta = s->beta;
        r.m0 = s->thmu0;
        r.lam0 = s->alpha0.array() - rf;
        const auto d = s->theta.rows(), N = s->beta.rows();
        r.My = s->thmu_y.cols() == K ? s->thmu_y : Mat::Zero(d, K);
        r.Lamy = s->alpha_y.cols() == K ? s->alpha_y : Mat::Zero(N, K);
        return r;
    };
}

/// Backward RK4 integration of the coupled (A, b0, By, c0, cy, Cyy) system
/// from the terminal data at grid.t1. A and Cyy are re-symmetrised after
/// every step; ||A|| > 1e12 aborts with the blow-up time.
inline RiccatiPath solve_riccati(const MarketModel& m, const RiccatiCoeffSource& coeffs, int K,
                                 const RiccatiTerminal& term, const Preferences& pref, const TimeGrid& grid,
                                 const Vec& y = Vec()) {
    pref.validate();
    grid.validate();
    const int d = static_cast<int>(term.A.rows());
    const double gam = pref.gamma, cg = (1.0 - gam) / gam, rf = m.assets.r_f;
    const Mat S = spd_inverse(m.sigma_s());
    const Mat SXm = m.sigma_x();
    const Mat SSXm = m.sigma_sx();  // N x d
    if (term.A.cols() != d || term.b0.size() != d || term.By.rows() != d || term.By.cols() != K ||
        term.cy.size() != K || term.Cyy.rows() != K)
        throw std::invalid_argument("solve_riccati: terminal data has the wrong shape");

    const int nA = d * d, nB = d * K, nC = K * K;
    const int oA = 0, ob = oA + nA, oBy = ob + d, oc = oBy + nB, ocy = oc + 1, oCyy = ocy + K;
    const int total = oCyy + nC;

    Vec state(total);
    Eigen::Map<Mat>(state.data() + oA, d, d) = term.A;
    state.segment(ob, d) = term.b0;
    Eigen::Map<Mat>(state.data() + oBy, d, K) = term.By;
    state(oc) = term.c0;
    state.segment(ocy, K) = term.cy;
    Eigen::Map<Mat>(state.data() + oCyy, K, K) = term.Cyy;

    auto rhs = [&](double t, const Vec& s) -> Vec {
        const RiccatiCoeffs co = coeffs(t);
        const Mat& SX = co.sigma_x.size() ? co.sigma_x : SXm;
        const Mat& SSX = co.sigma_sx.size() ? co.sigma_sx : SSXm;
        if (co.theta.rows() != d || SX.rows() != d || SSX.cols() != d)
            throw std::invalid_argument("solve_riccati: coefficient dimensions do not match the terminal data");
        Eigen::Map<const Mat> A(s.data() + oA, d, d);
        const Vec b0 = s.segment(ob, d);
        Eigen::Map<const Mat> By(s.data() + oBy, d, K);
        const Mat Bt = co.beta + SSX * A;                  // N x d
        const Mat BtS = Bt.transpose() * S;                // d x N
        const Mat drift = A * SX - co.theta.transpose();   // d x d
        const Vec u0 = SSX * b0 + co.lam0;                 // N
        const Mat Uy = SSX * By + co.Lamy;                 // N x K
        const Vec Su0 = S * u0;
        const Mat SUy = S * Uy;

        Vec out(total);
        Mat dA = -(cg * BtS * Bt + A * SX * A - co.theta.transpose() * A - A * co.theta);
        Eigen::Map<Mat>(out.data() + oA, d, d) = detail::symmetrize(dA);
        out.segment(ob, d) = -(cg * BtS * u0 + drift * b0 + A * co.m0);
        Mat dBy = -(cg * BtS * Uy + drift * By + A * co.My);
        Eigen::Map<Mat>(out.data() + oBy, d, K) = dBy;
        out(oc) = -((1.0 - gam) * rf + 0.5 * (SX.cwiseProduct(A)).sum() + co.m0.dot(b0) + 0.5 * b0.dot(SX * b0) +
                    0.5 * cg * u0.dot(Su0));
        out.segment(ocy, K) =
            -(co.My.transpose() * b0 + By.transpose() * co.m0 + By.transpose() * (SX * b0) + cg * Uy.transpose() * Su0);
        Mat dC = -(co.My.transpose() * By + By.transpose() * co.My + By.transpose() * SX * By + cg * Uy.transpose() * SUy);
        Eigen::Map<Mat>(out.data() + oCyy, K, K) = detail::symmetrize(dC);
        return out;
    };
    StepHook hook = [&](double t, Vec& s) {
        Eigen::Map<Mat> A(s.data() + oA, d, d);
        A = detail::symmetrize(A);
        Eigen::Map<Mat> C(s.data() + oCyy, K, K);
        C = detail::symmetrize(C);
        if (!(A.norm() <= 1e12)) {
            std::ostringstream os;
            os << "solve_riccati: blow-up (||A|| > 1e12) at t=" << t;
            throw NumericalError(os.str());
        }
    };
    auto raw = integrate_backward(rhs, state, grid, hook);

    RiccatiPath path;
    path.grid = grid;
    path.K = K;
    path.y = y.size() == K ? y : Vec::Zero(K);
    const int n = grid.nodes();
    path.A.resize(n);
    path.b0.resize(n);
    path.By.resize(n);
    path.c0.resize(n);
    path.cy.resize(n);
    path.Cyy.resize(n);
    for (int i = 0; i < n; ++i) {
        const Vec& s = raw[i];
        path.A[i] = Eigen::Map<const Mat>(s.data() + oA, d, d);
        path.b0[i] = s.segment(ob, d);
        path.By[i] = Eigen::Map<const Mat>(s.data() + oBy, d, K);
        path.c0[i] = s(oc);
        path.cy[i] = s.segment(ocy, K);
        path.Cyy[i] = Eigen::Map<const Mat>(s.data() + oCyy, K, K);
    }
    return path;
}

namespace detail {
/// dg/dt at node i for fixed (x, y): fourth-order five-node finite
/// difference, shifted inwards near the ends of the grid.
inline double g_time_derivative(const RiccatiPath& path, int i, const Vec& x, const Vec& y) {
    if (path.grid.n_steps < 4) throw std::invalid_argument("hjb_residual: grid needs at least 4 steps");
    auto gnode = [&](int k) { return 0.5 * x.dot(path.A[k] * x) + x.dot(path.b(k, y)) + path.c(k, y); };
    const int n = path.grid.n_steps;
    const int lo = std::clamp(i - 2, 0, std::max(0, n - 4));
    Eigen::Matrix<double, 5, 5> V;
    Eigen::Matrix<double, 5, 1> rhs = Eigen::Matrix<double, 5, 1>::Zero();
    rhs(1) = 1.0;
    for (int j = 0; j < 5; ++j) {
        const double o = lo + j - i;
        for (int k = 0; k < 5; ++k) V(k, j) = std::pow(o, k);
    }
    const Eigen::Matrix<double, 5, 1> w = V.fullPivLu().solve(rhs);
    double g_t = 0.0;
    for (int j = 0; j < 5; ++j) g_t += w(j) * gnode(lo + j);
    return g_t / path.grid.h();
}

inline void require_grid_to_horizon(const TimeGrid& grid, double T, const char* who) {
    if (std::abs(grid.t1 - T) > 1e-12 * std::max(1.0, T) || grid.t0 < 0.0)
        throw std::invalid_argument(std::string(who) + ": grid must lie in [0, T] and end at the view horizon");
}
}  // namespace detail

/// Value-function coefficients of the conditional problem (zero terminal data).
inline RiccatiPath solve_full(const ConditionalCoeffs& cc, const Preferences& pref, const TimeGrid& grid) {
    if (cc.has_view()) detail::require_grid_to_horizon(grid, cc.horizon(), "solve_full");
    const int K = cc.K();
    return solve_riccati(cc.model(), coeff_source(cc, K), K, RiccatiTerminal::zero(cc.model().d(), K), pref, grid,
                         cc.y());
}

inline RiccatiPath solve_full(const MarketModel& m, const ViewSpec& v, const Preferences& pref,
                              const TimeGrid& grid) {
    ConditionalCoeffs cc(m, v);
    return solve_full(cc, pref, grid);
}

/// No-views problem: the unconditional coefficients with zero terminal data.
inline RiccatiPath solve_no_views(const MarketModel& m, const Preferences& pref, const TimeGrid& grid) {
    ConditionalCoeffs cc(m);
    return solve_full(cc, pref, grid);
}

/// The views enter only through terminal data of the no-views system
/// (A1, b1, c1), plus closed-form corrections Ahat, bhat, chat equal to
/// minus the log-density of y given X(t) = x.
struct DecomposedPath {
    TimeGrid grid;
    RiccatiPath one;   // A1, b1 = b0 + By y, c1: view terminal data
    RiccatiPath zero;  // A0, b0, c0: zero terminal data
    MarketModel model;
    ViewSpec view;

    const Vec& y() const { return view.y; }
    Mat Q(int i) const { return one.A[i] - zero.A[i]; }
    Vec q(int i, const Vec& yv) const { return one.b(i, yv) - zero.b(i); }

    struct Correction {
        Mat A;
        Vec b;
        double c;
    };
    /// Ahat = (P E)^T Mv^{-1} P E, bhat = (P E)^T Mv^{-1} (P (I - E) mu - y),
    /// chat = 1/2 (y - P(I-E)mu)^T Mv^{-1} (y - P(I-E)mu) + 1/2 log det(2 pi Mv),
    /// E = e^{-Theta (T - t)}, Mv = P Var[X(T) | X(t)] P^T + Omega.
    Correction correction(double t, const Vec& yv) const {
        const auto& f = model.factors;
        const Mat& P = view.P;
        Mat E = mat_exp(-f.Theta, view.T - t);
        Mat Mv = detail::symmetrize(P * cond_factor_cov(f, t, view.T) * P.transpose() + view.Omega);
        Eigen::LLT<Mat> llt(Mv);
        if (llt.info() != Eigen::Success) throw NumericalError("DecomposedPath: view predictive covariance not PD");
        Mat PE = P * E;
        Vec w = yv - P * (f.mu - E * f.mu);
        Correction r;
        r.A = detail::symmetrize(PE.transpose() * llt.solve(PE));
        r.b = -PE.transpose() * llt.solve(w);
        const double logdet = 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
        r.c = 0.5 * w.dot(llt.solve(w)) + 0.5 * (logdet + P.rows() * std::log(2.0 * M_PI));
        return r;
    }
};

inline DecomposedPath solve_decomposed(const MarketModel& m, const ViewSpec& v, const Preferences& pref,
                                       const TimeGrid& grid) {
    v.validate(m.d());
    detail::require_grid_to_horizon(grid, v.T, "solve_decomposed");
    const int d = m.d(), K = v.K();
    ConditionalCoeffs uncond(m);
    Eigen::LLT<Mat> llt(v.Omega);
    const Mat OmInv = llt.solve(Mat::Identity(K, K));
    RiccatiTerminal term;
    term.A = -detail::symmetrize(v.P.transpose() * OmInv * v.P);
    term.b0 = Vec::Zero(d);
    term.By = v.P.transpose() * OmInv;
    const double logdet = 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
    term.c0 = -0.5 * (logdet + K * std::log(2.0 * M_PI));
    term.cy = Vec::Zero(K);
    term.Cyy = -detail::symmetrize(OmInv);
    DecomposedPath dp;
    dp.grid = grid;
    dp.model = m;
    dp.view = v;
    dp.one = solve_riccati(m, coeff_source(uncond, K), K, term, pref, grid, v.y);
    dp.zero = solve_full(uncond, pref, grid);
    return dp;
}

struct PolicyEvaluation {
    double t = 0.0;
    Vec x;
    Vec weights;     // fractions of wealth in each asset
    Vec mv;          // mean-variance part
    Vec hedge;       // intertemporal hedging part
    Vec pi0;         // no-views policy at (t, x)
    Vec adjustment;  // H = weights - pi0
};

/// Full form: pi* = (1/gamma) S^{-1}(alpha~ + beta~ x - r_f 1) +
/// (1/gamma) S^{-1} Sigma^{S,X} (A x + b), with pi0 from the no-views path.
inline PolicyEvaluation policy(const ConditionalCoeffs& cc, const Preferences& pref, const RiccatiPath& full,
                               const RiccatiPath& none, double t, const Vec& x, const Vec& y) {
    const MarketModel& m = cc.model();
    const double ig = 1.0 / pref.gamma, rf = m.assets.r_f;
    const Eigen::LLT<Mat> SS(m.sigma_s());
    const Mat SSX = m.sigma_sx();
    auto s = cc.at(t);
    PolicyEvaluation pe;
    pe.t = t;
    pe.x = x;
    pe.mv = ig * SS.solve(Vec((s->alpha(y) + s->beta * x).array() - rf));
    pe.hedge = ig * SS.solve(SSX * (full.A_at(t) * x + full.b_at(t, y)));
    pe.weights = pe.mv + pe.hedge;
    pe.pi0 = ig * SS.solve(Vec((m.assets.alpha + m.assets.beta * x).array() - rf) +
                           SSX * (none.A_at(t) * x + none.b_at(t, Vec())));
    pe.adjustment = pe.weights - pe.pi0;
    return pe;
}

/// Decomposed form: myopic part from the unconditional coefficients, hedge
/// through (A1, b1), and H = (1/gamma) S^{-1} Sigma^{S,X} (Q x + q).
inline PolicyEvaluation policy(const DecomposedPath& dp, const Preferences& pref, double t, const Vec& x,
                               const Vec& y) {
    const MarketModel& m = dp.model;
    const double ig = 1.0 / pref.gamma, rf = m.assets.r_f;
    const Eigen::LLT<Mat> SS(m.sigma_s());
    const Mat SSX = m.sigma_sx();
    PolicyEvaluation pe;
    pe.t = t;
    pe.x = x;
    pe.mv = ig * SS.solve(Vec((m.assets.alpha + m.assets.beta * x).array() - rf));
    pe.hedge = ig * SS.solve(SSX * (dp.one.A_at(t) * x + dp.one.b_at(t, y)));
    pe.weights = pe.mv + pe.hedge;
    pe.pi0 = pe.mv + ig * SS.solve(SSX * (dp.zero.A_at(t) * x + dp.zero.b_at(t, Vec())));
    pe.adjustment = ig * SS.solve(SSX * ((dp.one.A_at(t) - dp.zero.A_at(t)) * x + dp.one.b_at(t, y) -
                                         dp.zero.b_at(t, Vec())));
    return pe;
}

/// V(t, z, x) = z^{1-gamma} / (1-gamma) e^{g(t,x)}
inline double value_function(const RiccatiPath& path, const Preferences& pref, double t, double z, const Vec& x,
                             const Vec& y) {
    if (!(z > 0.0)) throw std::invalid_argument("value_function: wealth must be positive");
    const double g1 = 1.0 - pref.gamma;
    return std::pow(z, g1) / g1 * std::exp(path.g(t, x, y));
}

inline double value_function(const RiccatiPath& path, const Preferences& pref, double t, double z, const Vec& x) {
    return value_function(path, pref, t, z, x, path.y);
}

/// HJB operator divided by V at an interior node i for the conditional
/// problem, with the policy pi plugged in explicitly:
/// g_t + (1-gamma)(r_f + pi^T lambda + pi^T Sigma^{S,X} g_x) - 1/2 gamma (1-gamma) pi^T Sigma^S pi
///     + (Theta~ mu~ - Theta~ x)^T g_x + 1/2 tr(Sigma^X (g_xx + g_x g_x^T)).
/// g_t is a fourth-order five-node finite difference (shifted inwards near
/// the ends of the grid); g_x and g_xx are exact for the quadratic ansatz.
/// Multiply by V for the raw residual.
inline double hjb_residual_over_v(const ConditionalCoeffs& cc, const Preferences& pref, const RiccatiPath& path,
                                  int i, const Vec& x, const Vec& y, const Vec& pi) {
    if (i <= 0 || i >= path.grid.n_steps) throw std::invalid_argument("hjb_residual: node must be interior");
    if (path.grid.n_steps < 4) throw std::invalid_argument("hjb_residual: grid needs at least 4 steps");
    const MarketModel& m = cc.model();
    const double gam = pref.gamma, rf = m.assets.r_f, t = path.grid.at(i);
    const double g_t = detail::g_time_derivative(path, i, x, y);
    const Vec gx = path.A[i] * x + path.b(i, y);
    const Mat& gxx = path.A[i];
    auto s = cc.at(t);
    const Vec lam = (s->alpha(y) + s->beta * x).array() - rf;
    const Mat SX = m.sigma_x();
    return g_t + (1.0 - gam) * (rf + pi.dot(lam) + pi.dot(m.sigma_sx() * gx)) -
           0.5 * gam * (1.0 - gam) * pi.dot(m.sigma_s() * pi) + (s->theta_mu(y) - s->theta * x).dot(gx) +
           0.5 * (SX.cwiseProduct(gxx + gx * gx.transpose())).sum();
}

// ---------------------------------------------------------------------------
// Wealth simulation

/// Policy callback: weights for path p at grid node k (time t) given the
/// current factor and price vectors.
using PolicyFn = std::function<Vec(int path, int node, double t, const Vec& x, const Vec& S)>;

struct WealthResult {
    std::vector<double> terminal;  // Z(T) per path (NaN when excluded)
    std::vector<char> valid;
    int n_excluded = 0;
    std::vector<double> rebalance_times;
    std::vector<Mat> holdings;  // per path, N x rebalance count: shares held after each trade

    std::vector<double> valid_terminal() const {
        std::vector<double> out;
        for (std::size_t p = 0; p < terminal.size(); ++p)
            if (valid[p]) out.push_back(terminal[p]);
        return out;
    }
};

/// Self-financing wealth on given paths: at every rebalance node the
/// portfolio is reset to n_i = pi_i Z / S_i shares with Z (1 - sum pi) in
/// cash; between trades shares are held and cash accrues at r_f. A path
/// whose wealth reaches zero or below at any node is excluded and counted.
inline WealthResult wealth_on_paths(const PathSet& ps, const PolicyFn& policy, double z0, double r_f,
                                    int rebalance_every) {
    if (!(z0 > 0.0)) throw std::invalid_argument("simulate_wealth: z0 must be positive");
    if (rebalance_every < 1) throw std::invalid_argument("simulate_wealth: rebalance_every must be >= 1");
    const TimeGrid& grid = ps.grid;
    const int n = grid.n_steps, np = ps.n_paths();
    const double growth = std::exp(r_f * grid.h());
    std::vector<int> rnodes;
    for (int k = 0; k < n; k += rebalance_every) rnodes.push_back(k);

    WealthResult res;
    res.terminal.assign(np, std::numeric_limits<double>::quiet_NaN());
    res.valid.assign(np, 0);
    res.holdings.resize(np);
    for (int k : rnodes) res.rebalance_times.push_back(grid.at(k));

    parallel_for(np, [&](int p) {
        const Mat& X = ps.X[p];
        const Mat& S = ps.S[p];
        const auto N = S.rows();
        Mat hold = Mat::Zero(N, static_cast<Eigen::Index>(rnodes.size()));
        Vec shares = Vec::Zero(N);
        double cash = z0, z = z0;
        std::size_t r = 0;
        bool ok = true;
        for (int k = 0; k <= n && ok; ++k) {
            if (k > 0) {
                cash *= growth;
                z = cash + shares.dot(S.col(k));
                if (!(z > 0.0)) {
                    ok = false;
                    break;
                }
            }
            if (r < rnodes.size() && rnodes[r] == k) {
                Vec pi = policy(p, k, grid.at(k), X.col(k), S.col(k));
                shares = (pi.array() * z / S.col(k).array()).matrix();
                cash = z * (1.0 - pi.sum());
                hold.col(static_cast<Eigen::Index>(r)) = shares;
                ++r;
            }
        }
        res.holdings[p] = std::move(hold);
        if (ok) {
            res.terminal[p] = z;
            res.valid[p] = 1;
        }
    });
    for (char v : res.valid) res.n_excluded += v ? 0 : 1;
    return res;
}

/// Draws market paths (under the conditional law when a view is supplied,
/// otherwise the unconditional law, s0 = 1) and runs wealth_on_paths.
inline WealthResult simulate_wealth(const MarketModel& m, const std::optional<ViewSpec>& v, const PolicyFn& policy,
                                    const Vec& x0, double z0, const TimeGrid& grid, int n_paths, int rebalance_every,
                                    std::uint64_t seed) {
    const Vec s0 = Vec::Ones(m.N());
    PathSet ps = v ? simulate_conditional(m, *v, x0, s0, grid, n_paths, seed)
                   : simulate_joint(m, x0, s0, grid, n_paths, seed);
    return wealth_on_paths(ps, policy, z0, m.assets.r_f, rebalance_every);
}

}  // namespace viewfactor
