#pragma once

// Online learning of an unknown drift intercept alpha: closed-form posterior
// covariance, the Kalman-Bucy filter driven by return and factor
// innovations, and the control problem on the augmented state
// M = (x, alpha_hat) with factor and estimation-risk hedging.
//
// Augmented state ordering is fixed as (x then alpha_hat) everywhere: rows
// and columns [0, d) belong to the factors and [d, d + N) to the estimate.

#include "control.hpp"

#include <ostream>

namespace viewfactor {

/// Normal prior alpha ~ N(alpha0, Gamma0). Gamma0 = 0 is accepted and
/// describes a dogmatic prior (no learning).
struct DriftPrior {
    Vec alpha0;
    Mat Gamma0;

    void validate(int N) const {
        if (alpha0.size() != N || Gamma0.rows() != N || Gamma0.cols() != N)
            throw std::invalid_argument("DriftPrior: alpha0 must have N entries and Gamma0 must be N x N");
        if ((Gamma0 - Gamma0.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, Gamma0.cwiseAbs().maxCoeff()))
            throw std::invalid_argument("DriftPrior: Gamma0 must be symmetric");
        Eigen::SelfAdjointEigenSolver<Mat> es(Gamma0, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -1e-14 * std::max(1.0, Gamma0.norm()))
            throw std::invalid_argument("DriftPrior: Gamma0 must be positive semi-definite");
    }
};

/// Rate of precision accumulation (Sigma^S - Sigma^{S,X} (Sigma^X)^{-1} Sigma^{X,S})^{-1}.
inline Mat learning_rate(const MarketModel& m) {
    const Mat SSX = m.sigma_sx();
    Eigen::LLT<Mat> lx(m.sigma_x());
    if (lx.info() != Eigen::Success) throw std::invalid_argument("learning: Sigma^X is not positive definite");
    const Mat schur = detail::symmetrize(m.sigma_s() - SSX * lx.solve(SSX.transpose()));
    Eigen::LLT<Mat> ls(schur);
    if (ls.info() != Eigen::Success)
        throw std::invalid_argument(
            "learning: Sigma^S - Sigma^{S,X} (Sigma^X)^{-1} Sigma^{X,S} is not positive definite; returns and factors "
            "must not be perfectly dependent");
    return detail::symmetrize(ls.solve(Mat::Identity(m.N(), m.N())));
}

/// Gamma(t) = (Gamma0^{-1} + t R)^{-1}, evaluated as (I + t Gamma0 R)^{-1} Gamma0
/// so that a singular Gamma0 is handled without inversion.
inline Mat gamma_t(const DriftPrior& prior, const Mat& rate, double t) {
    if (!(t >= 0.0)) throw std::invalid_argument("gamma_t: requires t >= 0");
    const auto N = prior.Gamma0.rows();
    if (t == 0.0) return prior.Gamma0;
    Mat lhs = Mat::Identity(N, N) + t * prior.Gamma0 * rate;
    return detail::symmetrize(lhs.partialPivLu().solve(prior.Gamma0));
}

inline Mat gamma_t(const DriftPrior& prior, const MarketModel& m, double t) {
    prior.validate(m.N());
    return gamma_t(prior, learning_rate(m), t);
}

/// Precision rate split into what asset returns alone teach, (Sigma^S)^{-1},
/// and the extra precision from observing correlated factor moves.
struct PrecisionSplit {
    Mat asset;
    Mat factor;
};

inline PrecisionSplit precision_split(const MarketModel& m) {
    const Mat SS = m.sigma_s(), SX = m.sigma_x(), SSX = m.sigma_sx();
    const Mat Sinv = spd_inverse(SS);
    const Mat inner = detail::symmetrize(SX - SSX.transpose() * Sinv * SSX);
    Eigen::LLT<Mat> llt(inner);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("precision_split: factor Schur complement is not positive definite");
    PrecisionSplit ps;
    ps.asset = Sinv;
    const Mat W = Sinv * SSX;  // N x d
    ps.factor = detail::symmetrize(W * llt.solve(W.transpose()));
    return ps;
}

/// Market model conditioned on an optional view, with alpha unknown under a
/// normal prior. Provides the augmented-state coefficients of the control
/// problem. The asset shocks are rho L_S dW + sqrt(1 - rho^2) L_S dW', so the
/// joint observation loading over the 2N' drivers (W, W') is
/// G = [[rho L_S, sqrt(1 - rho^2) L_S], [L_X, 0]].
class AugmentedModel {
public:
    AugmentedModel(const MarketModel& m, const DriftPrior& prior) : cc_(m), prior_(prior) { init(); }
    AugmentedModel(const MarketModel& m, const ViewSpec& v, const DriftPrior& prior) : cc_(m, v), prior_(prior) {
        init();
    }

    const MarketModel& model() const { return cc_.model(); }
    const ConditionalCoeffs& coeffs() const { return cc_; }
    const DriftPrior& prior() const { return prior_; }
    int d() const { return model().d(); }
    int N() const { return model().N(); }
    int dim() const { return d() + N(); }
    int K() const { return cc_.K(); }
    Vec y() const { return cc_.y(); }
    const Mat& rate() const { return rate_; }
    const Mat& G() const { return G_; }
    const Mat& GGt() const { return GGt_; }

    Mat gamma(double t) const { return gamma_t(prior_, rate_, t); }

    /// K(t) = Gamma(t) H^T (G G^T)^{-1}, N x (N + d)
    Mat gain(double t) const { return gamma(t) * GGt_inv_.topRows(N()); }

    /// Theta~^M = diag-block(Theta~(t), 0)
    Mat theta_m(double t) const {
        Mat out = Mat::Zero(dim(), dim());
        out.topLeftCorner(d(), d()) = cc_.at(t)->theta;
        return out;
    }

    /// Theta~^M mu~^M = (Theta~ mu~, 0)
    Vec theta_mu_m(double t, const Vec& y) const {
        Vec out = Vec::Zero(dim());
        out.head(d()) = cc_.at(t)->theta_mu(y);
        return out;
    }

    /// beta~^M = [beta~(t) | I_N]
    Mat beta_m(double t) const {
        Mat out(N(), dim());
        out.leftCols(d()) = cc_.at(t)->beta;
        out.rightCols(N()) = Mat::Identity(N(), N());
        return out;
    }

    /// lambda~(t, y) = alpha~(t, y) - alpha; independent of alpha.
    Vec lambda_tilde(double t, const Vec& y) const { return cc_.at(t)->alpha(y) - model().assets.alpha; }

    /// L^M_t = [[L_X, 0], K(t) G] over the 2N' drivers.
    Mat L_m(double t) const {
        const int Np = model().n_drivers();
        Mat out = Mat::Zero(dim(), 2 * Np);
        out.topLeftCorner(d(), Np) = model().factors.L_X;
        out.bottomRows(N()) = gain(t) * G_;
        return out;
    }

    /// Sigma^M_t = L^M (L^M)^T
    Mat sigma_m(double t) const {
        Mat L = L_m(t);
        return detail::symmetrize(L * L.transpose());
    }

    /// Sigma^{S,M}_t = L_S^eff (L^M)^T, N x (d + N)
    Mat sigma_sm(double t) const { return G_.topRows(N()) * L_m(t).transpose(); }

    /// Coefficients for the backward solve, using the reduced forms
    /// Sigma^M = diag-block(Sigma^X, Gamma R Gamma) and Sigma^{S,M} = [Sigma^{S,X} | Gamma].
    RiccatiCoeffs riccati_coeffs(double t) const {
        auto s = cc_.at(t);
        const int dd = d(), NN = N(), D = dim(), k = K();
        const double rf = model().assets.r_f;
        const Mat Gam = gamma(t);
        RiccatiCoeffs r;
        r.theta = Mat::Zero(D, D);
        r.theta.topLeftCorner(dd, dd) = s->theta;
        r.beta.resize(NN, D);
        r.beta.leftCols(dd) = s->beta;
        r.beta.rightCols(NN) = Mat::Identity(NN, NN);
        r.m0 = Vec::Zero(D);
        r.m0.head(dd) = s->thmu0;
        r.My = Mat::Zero(D, k);
        if (k) r.My.topRows(dd) = s->thmu_y;
        r.lam0 = (s->alpha0 - model().assets.alpha).array() - rf;
        r.Lamy = k ? s->alpha_y : Mat::Zero(NN, 0);
        r.sigma_x = Mat::Zero(D, D);
        r.sigma_x.topLeftCorner(dd, dd) = sigma_x_;
        r.sigma_x.bottomRightCorner(NN, NN) = detail::symmetrize(Gam * rate_ * Gam);
        r.sigma_sx.resize(NN, D);
        r.sigma_sx.leftCols(dd) = sigma_sx_;
        r.sigma_sx.rightCols(NN) = Gam;
        return r;
    }

private:
    void init() {
        const MarketModel& m = cc_.model();
        prior_.validate(m.N());
        rate_ = learning_rate(m);
        const int dd = m.d(), NN = m.N(), Np = m.n_drivers();
        const double rho = m.rho;
        G_ = Mat::Zero(NN + dd, 2 * Np);
        G_.topLeftCorner(NN, Np) = rho * m.assets.L_S;
        G_.topRightCorner(NN, Np) = std::sqrt(std::max(0.0, 1.0 - rho * rho)) * m.assets.L_S;
        G_.bottomLeftCorner(dd, Np) = m.factors.L_X;
        GGt_ = detail::symmetrize(G_ * G_.transpose());
        Eigen::LLT<Mat> llt(GGt_);
        if (llt.info() != Eigen::Success)
            throw std::invalid_argument("AugmentedModel: joint return/factor covariance is not positive definite");
        GGt_inv_ = detail::symmetrize(llt.solve(Mat::Identity(NN + dd, NN + dd)));
        sigma_x_ = m.sigma_x();
        sigma_sx_ = m.sigma_sx();
    }

    ConditionalCoeffs cc_;
    DriftPrior prior_;
    Mat rate_, G_, GGt_, GGt_inv_, sigma_x_, sigma_sx_;
};

// ---------------------------------------------------------------------------
// Filtering

struct FilterState {
    double t = 0.0;
    Vec alpha_hat;
    Mat Gamma;
};

/// Filter output along one path. innovations holds the per-step increments
/// dN - H alpha_hat h, one column per step (N + d rows).
struct FilterTrace {
    std::vector<FilterState> states;
    Mat innovations;

    /// One row per node: t, alpha_hat entries, diagonal of Gamma.
    void write_csv(std::ostream& os) const {
        const int N = states.empty() ? 0 : static_cast<int>(states.front().alpha_hat.size());
        std::ostringstream head;
        head << "t";
        for (int i = 0; i < N; ++i) head << ",alpha_hat_" << i;
        for (int i = 0; i < N; ++i) head << ",Gamma_" << i << "_" << i;
        os << "# schema: " << head.str() << "\n" << head.str() << "\n";
        os.precision(17);
        for (const auto& s : states) {
            os << s.t;
            for (int i = 0; i < N; ++i) os << "," << s.alpha_hat(i);
            for (int i = 0; i < N; ++i) os << "," << s.Gamma(i, i);
            os << "\n";
        }
    }
};

namespace detail {
/// Per-node filter coefficients, shared by all paths on a grid.
struct FilterNodes {
    std::vector<Mat> gain, gamma, beta, theta;
    std::vector<Vec> lam, thmu;
    Vec half_var;

    FilterNodes(const AugmentedModel& am, const TimeGrid& grid) {
        grid.validate();
        if (std::abs(grid.t0) > 0.0)
            throw std::invalid_argument("filter_path: the filter starts from the prior at t = 0; grid.t0 must be 0");
        if (am.coeffs().has_view() && grid.t1 > am.coeffs().horizon() * (1.0 + 1e-12))
            throw std::invalid_argument("filter_path: grid extends beyond the view horizon");
        const int n = grid.nodes();
        const Vec y = am.y();
        gain.resize(n);
        gamma.resize(n);
        beta.resize(n);
        theta.resize(n);
        lam.resize(n);
        thmu.resize(n);
        for (int k = 0; k < n; ++k) {
            const double t = grid.at(k);
            auto s = am.coeffs().at(t);
            gamma[k] = am.gamma(t);
            gain[k] = am.gain(t);
            beta[k] = s->beta;
            theta[k] = s->theta;
            lam[k] = am.lambda_tilde(t, y);
            thmu[k] = s->theta_mu(y);
        }
        half_var = 0.5 * am.model().sigma_s().diagonal();
    }
};

inline FilterTrace run_filter(const AugmentedModel& am, const FilterNodes& fn, const TimeGrid& grid, const Mat& X,
                              const Mat& S) {
    const int n = grid.n_steps, d = am.d(), N = am.N();
    if (X.rows() != d || S.rows() != N || X.cols() != n + 1 || S.cols() != n + 1)
        throw std::invalid_argument("filter_path: observation paths do not match the filter grid");
    if ((S.array() <= 0.0).any()) throw std::invalid_argument("filter_path: prices must be positive");
    const double h = grid.h();
    FilterTrace tr;
    tr.states.resize(n + 1);
    tr.innovations.resize(N + d, n);
    Vec a = am.prior().alpha0;
    tr.states[0] = {grid.at(0), a, fn.gamma[0]};
    Vec dN(N + d);
    for (int k = 0; k < n; ++k) {
        const Vec x = X.col(k);
        dN.head(N) = (S.col(k + 1).array().log() - S.col(k).array().log()).matrix() -
                     (fn.lam[k] + fn.beta[k] * x - fn.half_var) * h;
        dN.tail(d) = X.col(k + 1) - x - (fn.thmu[k] - fn.theta[k] * x) * h;
        Vec innov = dN;
        innov.head(N) -= a * h;
        tr.innovations.col(k) = innov;
        a += fn.gain[k] * innov;
        tr.states[k + 1] = {grid.at(k + 1), a, fn.gamma[k + 1]};
    }
    return tr;
}
}  // namespace detail

/// Euler discretisation of d alpha_hat = K(t)(dN - H alpha_hat dt) from the
/// prior mean at t = 0, with dN built from the path's own log-price and
/// factor increments.
inline FilterTrace filter_path(const AugmentedModel& am, const TimeGrid& grid, const Mat& X, const Mat& S) {
    detail::FilterNodes fn(am, grid);
    return detail::run_filter(am, fn, grid, X, S);
}

inline std::vector<FilterTrace> filter_paths(const AugmentedModel& am, const PathSet& ps) {
    detail::FilterNodes fn(am, ps.grid);
    std::vector<FilterTrace> out(ps.n_paths());
    parallel_for(ps.n_paths(), [&](int p) { out[p] = detail::run_filter(am, fn, ps.grid, ps.X[p], ps.S[p]); });
    return out;
}

// ---------------------------------------------------------------------------
// Control under drift uncertainty

/// Backward solve of the augmented system with A(T) = 0, b(T) = 0, c(T) = 0.
/// The returned path is over the (d + N)-dimensional state (x, alpha_hat).
inline RiccatiPath solve_augmented(const AugmentedModel& am, const Preferences& pref, const TimeGrid& grid) {
    if (am.coeffs().has_view()) detail::require_grid_to_horizon(grid, am.coeffs().horizon(), "solve_augmented");
    const int K = am.K();
    RiccatiCoeffSource src = [&am](double t) { return am.riccati_coeffs(t); };
    return solve_riccati(am.model(), src, K, RiccatiTerminal::zero(am.dim(), K), pref, grid, am.y());
}

/// Blocks of the augmented coefficients at one time.
struct AugmentedBlocks {
    Mat Ax, Aalpha, Axalpha;
    Vec bx, balpha;
    double c = 0.0;
};

inline AugmentedBlocks augmented_blocks(const RiccatiPath& path, int d, double t, const Vec& y) {
    const Mat A = path.A_at(t);
    const Vec b = path.b_at(t, y);
    const int D = static_cast<int>(A.rows()), N = D - d;
    AugmentedBlocks r;
    r.Ax = A.topLeftCorner(d, d);
    r.Aalpha = A.bottomRightCorner(N, N);
    r.Axalpha = A.topRightCorner(d, N);
    r.bx = b.head(d);
    r.balpha = b.tail(N);
    r.c = path.c_at(t, y);
    return r;
}

struct LearningPolicy {
    double t = 0.0;
    Vec x;
    Vec alpha_hat;
    Vec mv;           // (1/gamma) S^{-1}(alpha_hat + lambda~ + beta~ x - r_f 1)
    Vec hedge_x;      // factor hedging
    Vec hedge_alpha;  // estimation-risk hedging
    Vec weights;      // sum of the three
};

/// pi* = MV + H^x + H^alpha with
/// H^x = (1/gamma) S^{-1} Sigma^{S,X} (A^x x + b^x + A^{x,alpha} alpha_hat) and
/// H^alpha = (1/gamma) S^{-1} Gamma(t) (A^alpha alpha_hat + b^alpha + (A^{x,alpha})^T x).
inline LearningPolicy augmented_policy(const AugmentedModel& am, const RiccatiPath& path, const Preferences& pref,
                                       double t, const Vec& x, const Vec& alpha_hat) {
    const MarketModel& m = am.model();
    const double ig = 1.0 / pref.gamma, rf = m.assets.r_f;
    const Eigen::LLT<Mat> SS(m.sigma_s());
    const Vec y = am.y();
    const AugmentedBlocks bl = augmented_blocks(path, am.d(), t, y);
    auto s = am.coeffs().at(t);
    LearningPolicy lp;
    lp.t = t;
    lp.x = x;
    lp.alpha_hat = alpha_hat;
    lp.mv = ig * SS.solve(Vec((alpha_hat + am.lambda_tilde(t, y) + s->beta * x).array() - rf));
    lp.hedge_x = ig * SS.solve(m.sigma_sx() * (bl.Ax * x + bl.bx + bl.Axalpha * alpha_hat));
    lp.hedge_alpha = ig * SS.solve(am.gamma(t) * (bl.Aalpha * alpha_hat + bl.balpha + bl.Axalpha.transpose() * x));
    lp.weights = lp.mv + lp.hedge_x + lp.hedge_alpha;
    return lp;
}

/// HJB operator of the augmented problem divided by V at interior node i and
/// augmented state mstate = (x, alpha_hat), with policy pi plugged in. The
/// diffusion terms use Sigma^M and Sigma^{S,M} built from L^M_t.
inline double augmented_hjb_residual_over_v(const AugmentedModel& am, const Preferences& pref,
                                            const RiccatiPath& path, int i, const Vec& mstate, const Vec& pi) {
    if (i <= 0 || i >= path.grid.n_steps) throw std::invalid_argument("hjb_residual: node must be interior");
    const MarketModel& m = am.model();
    const double gam = pref.gamma, rf = m.assets.r_f, t = path.grid.at(i);
    const Vec y = am.y();
    const double g_t = detail::g_time_derivative(path, i, mstate, y);
    const Vec gm = path.A[i] * mstate + path.b(i, y);
    const Mat& gmm = path.A[i];
    const Vec lam = (am.lambda_tilde(t, y) + am.beta_m(t) * mstate).array() - rf;
    const Mat SM = am.sigma_m(t);
    return g_t + (1.0 - gam) * (rf + pi.dot(lam) + pi.dot(am.sigma_sm(t) * gm)) -
           0.5 * gam * (1.0 - gam) * pi.dot(m.sigma_s() * pi) + (am.theta_mu_m(t, y) - am.theta_m(t) * mstate).dot(gm) +
           0.5 * (SM.cwiseProduct(gmm + gm * gm.transpose())).sum();
}

}  // namespace viewfactor
