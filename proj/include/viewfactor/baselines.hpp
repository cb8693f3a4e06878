#pragma once

// Static Black-Litterman-style benchmark: the conditional mean and covariance
// of the log-return over the remaining horizon given the view and the state at
// the evaluation time, and myopic mean-variance weights rebalanced
// periodically.

#include "control.hpp"

namespace viewfactor {

/// Conditional moments of R(T) = log S(T)/S(0) given the view and the state
/// (R(s), X(s)).
struct BLMoments {
    double s = 0.0;
    double T = 0.0;
    Vec R_s;       // log-return already realised at s
    Vec mu_BL;     // E[R(T) | F_s], including R_s
    Mat sigma_BL;  // Var[R(T) | F_s]

    /// Expected log-return over the remaining horizon [s, T].
    Vec remaining_mean() const { return mu_BL - R_s; }
};

/// Moments at time s as an affine function of the state:
/// E[R(T) - R(s) | F_s] = a + B X(s), Var[R(T) | F_s] = Sigma.
struct BLAffine {
    double s = 0.0;
    double T = 0.0;
    Vec a;      // N, at the view realisation of the coefficient source
    Mat a_y;    // N x K, a is affine in the realisation: a(y') = a + a_y (y' - y)
    Vec y;      // realisation a was computed at
    Mat B;      // N x d
    Mat Sigma;  // N x N
    Mat cross;  // Cov(drift integral, price shock integral), N x N; Sigma includes it and its transpose

    /// Intercept for another view realisation.
    Vec a_at(const Vec& yv) const { return a + a_y * (yv - y); }

    BLMoments at(const Vec& R_s, const Vec& x) const { return at(R_s, x, y); }

    BLMoments at(const Vec& R_s, const Vec& x, const Vec& yv) const {
        BLMoments mo;
        mo.s = s;
        mo.T = T;
        mo.R_s = R_s;
        mo.mu_BL = R_s + a_at(yv) + B * x;
        mo.sigma_BL = Sigma;
        return mo;
    }
};

inline constexpr int kBLQuadratureIntervals = 256;

/// Forward march over [s, T] on `intervals` uniform sub-intervals of:
///   Phi' = -Theta~ Phi, Phi(s) = I                 (transition phi(s, u))
///   g'   = Theta~ mu~ - Theta~ g, g(s) = 0         (mean of X from a zero start)
///   a'   = alpha~ - 1/2 diag Sigma^S + beta~ g     (drift integral, intercept)
///   B'   = beta~ Phi                               (drift integral, state loading)
///   Pxx' = -Theta~ Pxx - Pxx Theta~^T + Sigma^X     (Var X(u))
///   Pjx' = beta~ Pxx - Pjx Theta~^T                 (Cov(J(u), X(u)))
///   Pjj' = beta~ Pjx^T + Pjx beta~^T                (Var J(u))
///   Qxm' = -Theta~ Qxm + Sigma^{X,S}                (Cov(X(u), M(u)))
///   Qjm' = beta~ Qxm                                (Cov(J(u), M(u)))
///   g_y' = Theta~mu~_y - Theta~ g_y, a_y' = alpha~_y + beta~ g_y (view loadings)
/// where J is the drift integral and M the integrated price shock. The pure
/// integrals (a, B, Pjj, Qjm) are Simpson's rule in RK4 form. Pjj is the
/// double integral of beta~(u) C_s(u, v) beta~(v)^T over [s, T]^2, evaluated
/// through the nested march rather than by tabulating the kernel C_s.
/// Var[R(T) | F_s] = (T - s) Sigma^S + Pjj + Qjm + Qjm^T.
inline BLAffine bl_affine(const ConditionalCoeffs& cc, double s, int intervals = kBLQuadratureIntervals) {
    if (!cc.has_view()) throw std::invalid_argument("bl_moments: a view is required");
    const double T = cc.horizon();
    if (!(s >= 0.0 && s < T)) throw std::invalid_argument("bl_moments: requires 0 <= s < T");
    if (intervals < 2) throw std::invalid_argument("bl_moments: requires at least 2 sub-intervals");
    const MarketModel& m = cc.model();
    const int d = m.d(), N = m.N(), K = cc.K();
    const Vec y = cc.y();
    const Mat SX = m.sigma_x(), SS = m.sigma_s(), SXS = m.sigma_sx().transpose();
    const Vec half = 0.5 * SS.diagonal();

    // state layout
    const int oPhi = 0, og = oPhi + d * d, oa = og + d, oB = oa + N, oPxx = oB + N * d, oPjx = oPxx + d * d,
              oPjj = oPjx + N * d, oQxm = oPjj + N * N, oQjm = oQxm + d * N, ogy = oQjm + N * N,
              oay = ogy + d * K, total = oay + N * K;
    Vec st = Vec::Zero(total);
    Eigen::Map<Mat>(st.data() + oPhi, d, d) = Mat::Identity(d, d);

    auto rhs = [&](double u, const Vec& z) -> Vec {
        auto c = cc.at(std::min(u, T));
        const Mat& Th = c->theta;
        const Mat& be = c->beta;
        Eigen::Map<const Mat> Phi(z.data() + oPhi, d, d);
        const Vec g = z.segment(og, d);
        Eigen::Map<const Mat> Pxx(z.data() + oPxx, d, d);
        Eigen::Map<const Mat> Pjx(z.data() + oPjx, N, d);
        Eigen::Map<const Mat> Qxm(z.data() + oQxm, d, N);
        Vec out(total);
        Eigen::Map<Mat>(out.data() + oPhi, d, d) = -Th * Phi;
        out.segment(og, d) = c->theta_mu(y) - Th * g;
        out.segment(oa, N) = c->alpha(y) - half + be * g;
        Eigen::Map<Mat>(out.data() + oB, N, d) = be * Phi;
        Eigen::Map<Mat>(out.data() + oPxx, d, d) = -Th * Pxx - Pxx * Th.transpose() + SX;
        Eigen::Map<Mat>(out.data() + oPjx, N, d) = be * Pxx - Pjx * Th.transpose();
        Mat bp = be * Pjx.transpose();
        Eigen::Map<Mat>(out.data() + oPjj, N, N) = bp + bp.transpose();
        Eigen::Map<Mat>(out.data() + oQxm, d, N) = -Th * Qxm + SXS;
        Eigen::Map<Mat>(out.data() + oQjm, N, N) = be * Qxm;
        Eigen::Map<const Mat> gy(z.data() + ogy, d, K);
        Eigen::Map<Mat>(out.data() + ogy, d, K) = c->thmu_y - Th * gy;
        Eigen::Map<Mat>(out.data() + oay, N, K) = c->alpha_y + be * gy;
        return out;
    };
    auto path = integrate_forward(rhs, st, TimeGrid(s, T, intervals));
    const Vec& z = path.back();
    BLAffine af;
    af.s = s;
    af.T = T;
    af.a = z.segment(oa, N);
    af.a_y = Eigen::Map<const Mat>(z.data() + oay, N, K);
    af.y = y;
    af.B = Eigen::Map<const Mat>(z.data() + oB, N, d);
    Mat Qjm = Eigen::Map<const Mat>(z.data() + oQjm, N, N);
    Mat Pjj = Eigen::Map<const Mat>(z.data() + oPjj, N, N);
    af.cross = Qjm;
    af.Sigma = detail::symmetrize((T - s) * SS + Pjj + Qjm + Qjm.transpose());
    return af;
}

inline BLMoments bl_moments(const ConditionalCoeffs& cc, double s, const Vec& R_s, const Vec& x,
                            int intervals = kBLQuadratureIntervals) {
    return bl_affine(cc, s, intervals).at(R_s, x);
}

inline BLMoments bl_moments(const MarketModel& m, const ViewSpec& v, double s, const Vec& R_s, const Vec& x,
                            int intervals = kBLQuadratureIntervals) {
    ConditionalCoeffs cc(m, v);
    return bl_moments(cc, s, R_s, x, intervals);
}

/// pi = (1/gamma) Sigma_BL^{-1} (E[R(T) - R(s) | F_s] - r_f (T - s) 1): the
/// excess is measured against the risk-free log-return over the same horizon.
inline Vec bl_policy(const BLMoments& mo, const Preferences& pref, double r_f) {
    pref.validate();
    Eigen::LLT<Mat> llt(mo.sigma_BL);
    if (llt.info() != Eigen::Success) throw NumericalError("bl_policy: Sigma_BL is not positive definite");
    const Vec excess = mo.remaining_mean().array() - r_f * (mo.T - mo.s);
    return llt.solve(excess) / pref.gamma;
}

/// Affine maps precomputed at every rebalance date of a grid, so the policy
/// costs one matrix-vector product per path and date.
class BLStrategy {
public:
    BLStrategy(const ConditionalCoeffs& cc, const Preferences& pref, const TimeGrid& grid, int rebalance_every,
               int intervals = kBLQuadratureIntervals)
        : rf_(cc.model().assets.r_f), pref_(pref) {
        pref.validate();
        if (rebalance_every < 1) throw std::invalid_argument("BLStrategy: rebalance_every must be >= 1");
        for (int k = 0; k < grid.n_steps; k += rebalance_every) nodes_.push_back(k);
        maps_.resize(nodes_.size());
        parallel_for(static_cast<int>(nodes_.size()),
                     [&](int r) { maps_[r] = bl_affine(cc, grid.at(nodes_[r]), intervals); });
    }

    /// Weights at rebalance node k given the factor state x.
    Vec weights(int node, const Vec& x) const {
        const auto it = std::lower_bound(nodes_.begin(), nodes_.end(), node);
        if (it == nodes_.end() || *it != node) throw std::invalid_argument("BLStrategy: not a rebalance node");
        const BLAffine& af = maps_[static_cast<std::size_t>(it - nodes_.begin())];
        return bl_policy(af.at(Vec::Zero(af.a.size()), x), pref_, rf_);
    }

    PolicyFn policy_fn() const {
        return [this](int, int node, double, const Vec& x, const Vec&) { return weights(node, x); };
    }

    const std::vector<BLAffine>& maps() const { return maps_; }

private:
    double rf_;
    Preferences pref_;
    std::vector<int> nodes_;
    std::vector<BLAffine> maps_;
};

}  // namespace viewfactor
