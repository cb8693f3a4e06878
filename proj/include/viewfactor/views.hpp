#pragma once

// Conditioning the factor model on a noisy view Y = P X(T) + eps: the kernel
// eta(t), the conditional coefficient set, the drift adjustment k(t, x),
// conditional moments and simulation under the conditional law.

#include "market.hpp"

#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <unordered_map>

namespace viewfactor {

/// Y(0,T) = P X(T) + eps,  eps ~ N(0, Omega)
struct ViewSpec {
    Mat P;      // K x d
    Mat Omega;  // K x K
    Vec y;      // K
    double T = 1.0;

    int K() const { return static_cast<int>(P.rows()); }

    void validate(int d) const {
        if (P.rows() < 1 || P.cols() != d)
            throw std::invalid_argument("ViewSpec: P must be K x d with K >= 1, got " + detail::dims(P));
        if (Omega.rows() != P.rows() || Omega.cols() != P.rows())
            throw std::invalid_argument("ViewSpec: Omega must be K x K, got " + detail::dims(Omega));
        if (y.size() != P.rows()) throw std::invalid_argument("ViewSpec: y must have K entries");
        if (!(T > 0.0)) throw std::invalid_argument("ViewSpec: horizon must be positive");
        if ((Omega - Omega.transpose()).norm() > 1e-10 * std::max(Omega.norm(), 1e-300))
            throw std::invalid_argument("ViewSpec: Omega must be symmetric");
        try {
            (void)cholesky(Omega);
        } catch (const NumericalError& e) {
            throw std::invalid_argument(std::string("ViewSpec: Omega must be positive definite: ") + e.what());
        }
    }
};

/// Omega = tau * P Var[X(T) | X(0)] P^T
inline Mat omega_from_tau(const MarketModel& m, const Mat& P, double tau, double T) {
    if (!(tau > 0.0)) throw std::invalid_argument("omega_from_tau: tau must be positive");
    if (P.cols() != m.d()) throw std::invalid_argument("omega_from_tau: P must have d columns");
    Mat Om = detail::symmetrize(tau * P * cond_factor_cov(m.factors, 0.0, T) * P.transpose());
    try {
        (void)cholesky(Om);
    } catch (const NumericalError& e) {
        throw NumericalError(std::string("omega_from_tau: resulting Omega is not positive definite "
                                         "(are the rows of P dependent?): ") + e.what());
    }
    return Om;
}

/// All conditional coefficients at one instant. Quantities that depend on the
/// view realisation are stored in affine form c0 + Cy * y so that a single
/// evaluation serves every y.
struct CoeffSnapshot {
    double t = 0.0;
    Mat E;        // e^{-Theta (T - t)}
    Mat eta;      // N' x K
    Mat theta;    // Theta~(t), d x d
    Mat beta;     // beta~(t), N x d
    Vec thmu0;    // Theta~ mu~ = thmu0 + thmu_y y
    Mat thmu_y;   // d x K
    Vec alpha0;   // alpha~ = alpha0 + alpha_y y
    Mat alpha_y;  // N x K

    Vec theta_mu(const Vec& y) const { return thmu0 + thmu_y * y; }
    Vec alpha(const Vec& y) const { return alpha0 + alpha_y * y; }
};

/// Evaluators for eta(t), Theta~(t), mu~(t,y), alpha~(t,y), beta~(t) and the
/// drift adjustment k(t,x). Constructed without a view it reproduces the
/// unconditional coefficients (K = 0). Snapshots are memoised by time since
/// ODE right-hand sides revisit the same nodes.
class ConditionalCoeffs {
public:
    explicit ConditionalCoeffs(const MarketModel& m) : m_(m), has_view_(false) {
        m_.validate();
        init_common();
    }

    ConditionalCoeffs(const MarketModel& m, const ViewSpec& v) : m_(m), v_(v), has_view_(true) {
        m_.validate();
        v_.validate(m_.d());
        init_common();
    }

    const MarketModel& model() const { return m_; }
    bool has_view() const { return has_view_; }
    const ViewSpec& view() const { return v_; }
    int K() const { return has_view_ ? v_.K() : 0; }
    double horizon() const { return has_view_ ? v_.T : std::numeric_limits<double>::infinity(); }
    const Mat& long_run() const { return Sigma_; }
    Vec y() const { return has_view_ ? v_.y : Vec(); }

    std::shared_ptr<const CoeffSnapshot> at(double t) const {
        {
            std::lock_guard<std::mutex> lock(memo_->mutex);
            auto it = memo_->map.find(t);
            if (it != memo_->map.end()) return it->second;
        }
        auto snap = std::make_shared<const CoeffSnapshot>(compute(t));
        std::lock_guard<std::mutex> lock(memo_->mutex);
        if (memo_->map.size() >= kMemoCapacity) memo_->map.clear();
        memo_->map.emplace(t, snap);
        return snap;
    }

    Mat eta(double t) const { return at(t)->eta; }
    Mat theta_tilde(double t) const { return at(t)->theta; }
    Mat beta_tilde(double t) const { return at(t)->beta; }
    Vec theta_mu_tilde(double t) const { return at(t)->theta_mu(y()); }
    Vec alpha_tilde(double t) const { return at(t)->alpha(y()); }
    Vec lambda_tilde(double t) const { return alpha_tilde(t) - m_.assets.alpha; }

    /// mu~(t,y) = Theta~(t)^{-1} (Theta~ mu~); Theta~ is not assumed
    /// invertible, so the solve is guarded.
    Vec mu_tilde(double t) const {
        auto s = at(t);
        Eigen::FullPivLU<Mat> lu(s->theta);
        if (!lu.isInvertible() || lu.rcond() < 1e-14) {
            std::ostringstream os;
            os << "mu_tilde: Theta~(t) is numerically singular at t=" << t;
            throw NumericalError(os.str());
        }
        return lu.solve(s->theta_mu(y()));
    }

    /// k(t,x) = eta(t) (y - P E[X(T) | X(t) = x])
    Vec drift_adjustment(double t, const Vec& x) const {
        if (!has_view_) return Vec::Zero(m_.n_drivers());
        auto s = at(t);
        const Vec& mu = m_.factors.mu;
        Vec prior = mu + s->E * (x - mu);
        return s->eta * (v_.y - v_.P * prior);
    }

private:
    static constexpr std::size_t kMemoCapacity = 1 << 16;

    void init_common() {
        Sigma_ = long_run_cov(m_.factors);
        SigmaX_ = m_.sigma_x();
    }

    CoeffSnapshot compute(double t) const {
        const int d = m_.d(), N = m_.N();
        const Mat& Theta = m_.factors.Theta;
        const Vec& mu = m_.factors.mu;
        const Mat& LX = m_.factors.L_X;
        const Mat& LS = m_.assets.L_S;
        CoeffSnapshot s;
        s.t = t;
        if (!has_view_) {
            s.E = Mat::Zero(d, d);
            s.eta = Mat::Zero(m_.n_drivers(), 0);
            s.theta = Theta;
            s.beta = m_.assets.beta;
            s.thmu0 = Theta * mu;
            s.thmu_y = Mat::Zero(d, 0);
            s.alpha0 = m_.assets.alpha;
            s.alpha_y = Mat::Zero(N, 0);
            return s;
        }
        if (t < 0.0 || t > v_.T) throw std::invalid_argument("ConditionalCoeffs: requires 0 <= t <= T");
        const Mat& P = v_.P;
        s.E = mat_exp(-Theta, v_.T - t);
        Mat PE = P * s.E;
        Mat Mv = P * (Sigma_ - s.E * Sigma_ * s.E.transpose()) * P.transpose() + v_.Omega;
        Eigen::LLT<Mat> llt(detail::symmetrize(Mv));
        if (llt.info() != Eigen::Success) {
            std::ostringstream os;
            os << "eta: inner K x K matrix is not positive definite at t=" << t;
            throw NumericalError(os.str());
        }
        s.eta = llt.solve(PE * LX).transpose();  // N' x K
        Mat LXeta = LX * s.eta;                  // d x K
        Mat LSeta = m_.rho * LS * s.eta;         // N x K
        s.theta = Theta + LXeta * PE;
        s.beta = m_.assets.beta - LSeta * PE;
        s.thmu_y = LXeta;
        s.thmu0 = s.theta * mu - LXeta * (P * mu);
        s.alpha_y = LSeta;
        s.alpha0 = m_.assets.alpha - LSeta * (P * (mu - s.E * mu));
        return s;
    }

    MarketModel m_;
    ViewSpec v_;
    bool has_view_;
    Mat Sigma_, SigmaX_;
    struct Memo {
        std::mutex mutex;
        std::unordered_map<double, std::shared_ptr<const CoeffSnapshot>> map;
    };
    std::shared_ptr<Memo> memo_ = std::make_shared<Memo>();
};

inline Mat eta(const MarketModel& m, const ViewSpec& v, double t) { return ConditionalCoeffs(m, v).eta(t); }

inline ConditionalCoeffs conditional_coeffs(const MarketModel& m, const ViewSpec& v) {
    return ConditionalCoeffs(m, v);
}

inline Vec drift_adjustment(const ConditionalCoeffs& c, double t, const Vec& x) {
    return c.drift_adjustment(t, x);
}

struct GaussianMoments {
    Vec mean;
    Mat cov;
};

/// Mean and covariance of X^y on every node of grid, obtained by integrating
/// m' = Theta~ mu~ - Theta~ m and V' = -Theta~ V - V Theta~^T + Sigma^X
/// forward from (x0, 0) at grid.t0.
inline std::vector<GaussianMoments> conditional_moments_path(const ConditionalCoeffs& c, const Vec& x0,
                                                             const TimeGrid& grid) {
    const int d = c.model().d();
    const Mat SX = c.model().sigma_x();
    const Vec y = c.y();
    Vec s0 = Vec::Zero(d + d * d);
    s0.head(d) = x0;
    auto rhs = [&](double t, const Vec& s) -> Vec {
        auto cs = c.at(t);
        Eigen::Map<const Mat> V(s.data() + d, d, d);
        Vec out(d + d * d);
        out.head(d) = cs->theta_mu(y) - cs->theta * s.head(d);
        Mat dV = -cs->theta * V - V * cs->theta.transpose() + SX;
        out.tail(d * d) = Eigen::Map<const Vec>(dV.data(), d * d);
        return out;
    };
    auto path = integrate_forward(rhs, s0, grid);
    std::vector<GaussianMoments> res(path.size());
    for (std::size_t i = 0; i < path.size(); ++i) {
        res[i].mean = path[i].head(d);
        res[i].cov = detail::symmetrize(Eigen::Map<const Mat>(path[i].data() + d, d, d));
    }
    return res;
}

/// Mean and covariance of X^y(t) given X^y(0) = x0; steps_per_year sets the
/// RK4 resolution.
inline GaussianMoments conditional_moments(const MarketModel& m, const ViewSpec& v, double t, const Vec& x0,
                                           int steps_per_year = 10000) {
    if (t < 0.0 || t > v.T) throw std::invalid_argument("conditional_moments: requires 0 <= t <= T");
    const int d = m.d();
    if (t == 0.0) return {x0, Mat::Zero(d, d)};
    ConditionalCoeffs c(m, v);
    int n = std::max(1, static_cast<int>(std::ceil(t * steps_per_year)));
    return conditional_moments_path(c, x0, TimeGrid(0.0, t, n)).back();
}

/// Simulation of (X^y, S^y) on grid. Each factor step is drawn from the exact
/// conditional transition law, obtained by Gaussian conditioning of the
/// unconditional step on the view; this stays well conditioned as Omega -> 0,
/// where the coefficient ODEs become stiff. Log-prices advance by Euler with
/// drift alpha~ + beta~ x, and their shocks are drawn jointly with the factor
/// shocks from the same conditional law.
inline PathSet simulate_conditional(const MarketModel& m, const ViewSpec& v, const Vec& x0, const Vec& s0,
                                    const TimeGrid& grid, int n_paths, std::uint64_t seed) {
    m.validate();
    v.validate(m.d());
    grid.validate();
    if (grid.t0 < 0.0 || grid.t1 > v.T + 1e-12)
        throw std::invalid_argument("simulate_conditional: grid must lie inside [0, T]");
    if (x0.size() != m.d() || s0.size() != m.N())
        throw std::invalid_argument("simulate_conditional: x0/s0 dimension mismatch");
    if ((s0.array() <= 0.0).any()) throw std::invalid_argument("simulate_conditional: s0 must be positive");

    const int d = m.d(), N = m.N(), n = grid.n_steps;
    const double h = grid.h();
    ConditionalCoeffs c(m, v);
    const Mat& Theta = m.factors.Theta;
    const Vec& mu = m.factors.mu;
    const Mat& Sig = c.long_run();
    const Mat& P = v.P;

    const Mat Phi = mat_exp(-Theta, h);
    const Mat Qh = detail::symmetrize(Sig - Phi * Sig * Phi.transpose());
    const Mat crossXS = integrated_decay(Theta, h) * m.sigma_sx().transpose();  // d x N
    Mat C0(d + N, d + N);
    C0 << Qh, crossXS, crossXS.transpose(), m.sigma_s() * h;

    struct Step {
        Mat PEa;    // P e^{-Theta (T - t_k)}
        Mat gain;   // (d+N) x K
        Mat chol;   // factor of conditional joint shock covariance
        Mat beta;   // beta~(t_k)
        Vec alpha;  // alpha~(t_k, y)
    };
    std::vector<Step> steps(n);
    for (int k = 0; k < n; ++k) {
        const double tk = grid.at(k), tk1 = grid.at(k + 1);
        Mat Ea = mat_exp(-Theta, v.T - tk), Eb = mat_exp(-Theta, v.T - tk1);
        Mat Sy = P * (Sig - Ea * Sig * Ea.transpose()) * P.transpose() + v.Omega;
        Mat cov_eY(d + N, P.rows());
        cov_eY.topRows(d) = Qh * Eb.transpose() * P.transpose();
        cov_eY.bottomRows(N) = (Eb * crossXS).transpose() * P.transpose();
        Eigen::LLT<Mat> llt(detail::symmetrize(Sy));
        Step st;
        st.PEa = P * Ea;
        st.gain = llt.solve(cov_eY.transpose()).transpose();
        st.chol = cholesky_psd(C0 - st.gain * cov_eY.transpose());
        auto cs = c.at(tk);
        st.beta = cs->beta;
        st.alpha = cs->alpha(v.y);
        steps[k] = std::move(st);
    }
    const Vec half_var = 0.5 * m.sigma_s().diagonal();

    PathSet ps;
    ps.grid = grid;
    ps.seed = seed;
    ps.X.resize(n_paths);
    ps.S.resize(n_paths);
    parallel_for(n_paths, [&](int p) {
        PathRng rng(seed, static_cast<std::uint64_t>(p));
        Mat X(d, n + 1), S(N, n + 1);
        X.col(0) = x0;
        S.col(0) = s0;
        Vec x = x0;
        Vec logs = s0.array().log().matrix();
        for (int k = 0; k < n; ++k) {
            const Step& st = steps[k];
            Vec innov = v.y - P * mu - st.PEa * (x - mu);
            Vec shift = st.gain * innov;
            Vec e = st.chol * rng.normals(d + N);
            logs += (st.alpha + st.beta * x - half_var) * h + e.tail(N);
            x = mu + Phi * (x - mu) + shift.head(d) + e.head(d);
            X.col(k + 1) = x;
            S.col(k + 1) = logs.array().exp().matrix();
        }
        ps.X[p] = std::move(X);
        ps.S[p] = std::move(S);
    });
    return ps;
}

}  // namespace viewfactor
