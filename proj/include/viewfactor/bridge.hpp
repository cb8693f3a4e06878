#pragma once

// Mean-reverting bridges: the one-dimensional OU bridge, its noisy-view time
// extension, the multi-dimensional precision-gain operator, the alignment
// test and the moments of multi-dimensional bridges.

#include "views.hpp"

#include <map>

namespace viewfactor {

/// Zero-mean, unit-volatility OU dX = -theta X dt + dW started at a and
/// conditioned on X(T_hit) = y_target.
struct Bridge1D {
    double a = 0.0;
    double y_target = 0.0;
    double theta = 0.5;
    double T_hit = 1.0;

    void validate() const {
        if (!(theta > 0.0)) throw std::invalid_argument("Bridge1D: theta must be positive");
        if (!(T_hit > 0.0)) throw std::invalid_argument("Bridge1D: hitting time must be positive");
    }
};

struct BridgeCoeffs {
    double theta_t;  // theta coth(theta (T - t))
    double mu_t;     // sech(theta (T - t)) y
};

/// SDE coefficients of the bridge. Both are written through e^{-2u} and
/// expm1 so that small theta (T - t) keeps full relative accuracy.
inline BridgeCoeffs mrb_sde_coeffs(const Bridge1D& b, double t) {
    b.validate();
    if (!(t < b.T_hit)) throw std::invalid_argument("mrb_sde_coeffs: requires t < T_hit");
    const double u = b.theta * (b.T_hit - t);
    const double em = std::expm1(-2.0 * u);  // e^{-2u} - 1
    BridgeCoeffs c;
    c.theta_t = b.theta * (2.0 + em) / (-em);
    c.mu_t = 2.0 * std::exp(-u) / (2.0 + em) * b.y_target;
    return c;
}

struct BridgeMoments {
    double mean;  // E[B(t)]
    double cov;   // Cov(B(t), B(s))
};

/// Mean at t and covariance between times s <= t of the bridge.
inline BridgeMoments mrb_moments(const Bridge1D& b, double s, double t) {
    b.validate();
    if (!(0.0 <= s && s <= t && t <= b.T_hit))
        throw std::invalid_argument("mrb_moments: requires 0 <= s <= t <= T_hit");
    const double th = b.theta, T = b.T_hit;
    const double den = -std::expm1(-2.0 * th * T);  // 1 - e^{-2 theta T}
    const double w = (std::exp(-th * (T - t)) - std::exp(-th * (T + t))) / den;
    BridgeMoments r;
    r.mean = std::exp(-th * t) * b.a + w * (b.y_target - std::exp(-th * T) * b.a);
    // Cov(X(t), X(s)) of the free process started at a point
    const double cov_free = std::exp(-th * (t - s)) * (-std::expm1(-2.0 * th * s)) / (2.0 * th);
    r.cov = (-std::expm1(-2.0 * th * (T - t))) / den * cov_free;
    return r;
}

/// Conditional law of an OU factor with mean mu and volatility sigma given a
/// noisy view of X(T): a bridge of the standardised process
/// B = (X - (1 - e^{-theta t}) mu) / sigma that hits y_tilde at T + delta.
struct NoisyBridge1D {
    Bridge1D bridge;  // standardised bridge (a / sigma, y_tilde, theta, T + delta)
    double delta = 0.0;
    double T_obs = 1.0;
    double mu = 0.0;
    double sigma = 1.0;

    /// E[X^y(t)] through the shift map X = (1 - e^{-theta t}) mu + sigma B.
    double mean(double t) const { return -std::expm1(-bridge.theta * t) * mu + sigma * mrb_moments(bridge, t, t).mean; }
    double cov(double s, double t) const {
        if (s > t) std::swap(s, t);
        return sigma * sigma * mrb_moments(bridge, s, t).cov;
    }
};

/// Builds the noisy bridge for a view Y = X(T) + eps with Var(eps) =
/// omega2 / (2 theta); omega2 is the noise parameter of the view, sigma2 the
/// factor's instantaneous variance. omega2 = 0 is the noise-free bridge and
/// omega2 = +inf the unconditional process.
inline NoisyBridge1D noisy_extension(double theta, double omega2, double sigma2, double T, double y, double mu,
                                     double a) {
    if (!(theta > 0.0)) throw std::invalid_argument("noisy_extension: theta must be positive");
    if (!(sigma2 > 0.0)) throw std::invalid_argument("noisy_extension: sigma2 must be positive");
    if (!(omega2 >= 0.0)) throw std::invalid_argument("noisy_extension: omega2 must be non-negative");
    NoisyBridge1D nb;
    nb.delta = std::log1p(omega2 / sigma2) / (2.0 * theta);
    nb.T_obs = T;
    nb.mu = mu;
    nb.sigma = std::sqrt(sigma2);
    nb.bridge.theta = theta;
    nb.bridge.a = a / nb.sigma;
    nb.bridge.T_hit = T + nb.delta;
    nb.bridge.y_target = std::exp(-theta * nb.delta) * (y + std::expm1(-theta * T) * mu) / nb.sigma;
    if (!std::isfinite(nb.bridge.y_target)) nb.bridge.y_target = 0.0;
    return nb;
}

/// Exponential-Euler simulation of the bridge SDE on grid (which must end
/// before T_hit): coefficients are frozen at the start of each step and the
/// frozen OU step is drawn exactly, which stays stable as theta_t grows.
inline std::vector<std::vector<double>> simulate_mrb(const Bridge1D& b, const TimeGrid& grid, int n_paths,
                                                     std::uint64_t seed) {
    b.validate();
    grid.validate();
    if (!(grid.t1 < b.T_hit)) throw std::invalid_argument("simulate_mrb: grid must end before T_hit");
    const double h = grid.h();
    struct StepCoeffs {
        double mu_t, decay, sd;
    };
    std::vector<StepCoeffs> coeffs(grid.n_steps);
    for (int k = 0; k < grid.n_steps; ++k) {
        auto c = mrb_sde_coeffs(b, grid.at(k));
        coeffs[k] = {c.mu_t, std::exp(-c.theta_t * h), std::sqrt(-std::expm1(-2.0 * c.theta_t * h) / (2.0 * c.theta_t))};
    }
    std::vector<std::vector<double>> out(n_paths, std::vector<double>(grid.nodes()));
    parallel_for(n_paths, [&](int p) {
        PathRng rng(seed, static_cast<std::uint64_t>(p));
        double x = b.a;
        out[p][0] = x;
        for (int k = 0; k < grid.n_steps; ++k) {
            const auto& c = coeffs[k];
            x = c.mu_t + (x - c.mu_t) * c.decay + c.sd * rng.normal();
            out[p][k + 1] = x;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Multi-dimensional bridges

/// V(m) = integral_0^m e^{-Theta (m-u)} Sigma^X e^{-Theta^T (m-u)} du by
/// composite Simpson with `panels` panels. Powers of the one-step propagator
/// are accumulated so only one matrix exponential is needed.
inline Mat ou_variance_quad(const Mat& Theta, const Mat& SigmaX, double m, int panels = 2048) {
    const auto d = Theta.rows();
    if (m <= 0.0) return Mat::Zero(d, d);
    const int n = 2 * panels;
    const double h = m / n;
    const Mat F = mat_exp(-Theta, h);
    Mat E = Mat::Identity(d, d);  // e^{-Theta (m - u_k)} for u_k = m - j h, j = 0..n
    Mat acc = Mat::Zero(d, d);
    for (int j = 0; j <= n; ++j) {
        const double w = (j == 0 || j == n) ? 1.0 : ((j % 2) ? 4.0 : 2.0);
        acc += w * (E * SigmaX * E.transpose());
        E = F * E;
    }
    return detail::symmetrize(acc * (h / 3.0));
}

/// Building blocks of the precision gain: row i of M is e_i^T e^{-Theta delta_i}
/// and C_ij = Cov of the noises in X_i(T + delta_i), X_j(T + delta_j) given X(T).
struct PrecisionGainParts {
    Mat M;
    Mat C;
};

inline PrecisionGainParts precision_gain_parts(const Vec& delta, const Mat& Theta, const Mat& SigmaX,
                                               int panels = 2048) {
    detail::require_square(Theta, "precision_gain");
    const auto d = Theta.rows();
    if (delta.size() != d || SigmaX.rows() != d || SigmaX.cols() != d)
        throw std::invalid_argument("precision_gain: dimension mismatch");
    if ((delta.array() <= 0.0).any()) throw std::invalid_argument("precision_gain: delta entries must be positive");
    PrecisionGainParts parts;
    parts.M.resize(d, d);
    std::vector<Mat> Ed(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        Ed[i] = mat_exp(-Theta, delta(i));
        parts.M.row(i) = Ed[i].row(i);
    }
    // C_ij = e_i^T e^{-Theta (d_i - m)} V(m) e^{-Theta^T (d_j - m)} e_j, m = min(d_i, d_j)
    std::map<double, Mat> Vcache;
    parts.C.resize(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = i; j < d; ++j) {
            const double m = std::min(delta(i), delta(j));
            auto it = Vcache.find(m);
            if (it == Vcache.end()) it = Vcache.emplace(m, ou_variance_quad(Theta, SigmaX, m, panels)).first;
            Vec li = mat_exp(-Theta, delta(i) - m).row(i).transpose();
            Vec lj = mat_exp(-Theta, delta(j) - m).row(j).transpose();
            parts.C(i, j) = parts.C(j, i) = li.dot(it->second * lj);
        }
    return parts;
}

/// Precision added to X(T) by observing X_i(T + delta_i) exactly for every i:
/// M^T C^{-1} M, i.e. Var[X(T) | X(T~)]^{-1} - Var[X(T)]^{-1}.
inline Mat precision_gain(const Vec& delta, const Mat& Theta, const Mat& SigmaX, int panels = 2048) {
    auto parts = precision_gain_parts(delta, Theta, SigmaX, panels);
    Eigen::LLT<Mat> llt(parts.C);
    if (llt.info() != Eigen::Success) throw NumericalError("precision_gain: C(delta) is numerically singular");
    return detail::symmetrize(parts.M.transpose() * llt.solve(parts.M));
}

struct AlignmentReport {
    bool aligned = false;
    Vec delta;              // extension vector (best iterate when not aligned)
    double residual = 0.0;  // ||P^T Omega^{-1} P - P(delta)||_F / ||P^T Omega^{-1} P||_F
    int iterations = 0;
    std::string message;
};

/// Searches for delta with P^T Omega^{-1} P = P(delta; Theta, Sigma^X). One
/// factor: closed form. Several: damped Gauss-Newton on the upper triangle
/// of the difference, started at the decoupled one-factor guesses.
inline AlignmentReport check_alignment(const MarketModel& m, const ViewSpec& v, double tol = 1e-8,
                                       int max_iter = 100) {
    v.validate(m.d());
    const int d = m.d();
    const Mat& Th = m.factors.Theta;
    const Mat SX = m.sigma_x();
    const Mat G = detail::symmetrize(v.P.transpose() * v.Omega.ldlt().solve(v.P));
    const double gnorm = G.norm();
    AlignmentReport rep;
    rep.delta = Vec::Zero(d);

    auto rel_residual = [&](const Vec& dl) { return (G - precision_gain(dl, Th, SX)).norm() / gnorm; };

    if (d == 1) {
        const double th = Th(0, 0), s2 = SX(0, 0);
        rep.delta(0) = std::log1p(2.0 * th / (s2 * G(0, 0))) / (2.0 * th);
        rep.residual = rel_residual(rep.delta);
        rep.aligned = rep.residual < tol;
        rep.message = rep.aligned ? "aligned (closed form)" : "closed-form extension does not match";
        return rep;
    }

    for (int i = 0; i < d; ++i) {
        if (!(G(i, i) > 0.0)) {
            rep.message = "no alignment: factor " + std::to_string(i) + " is not observed by the views";
            rep.residual = 1.0;
            return rep;
        }
        const double th = Th(i, i), s2 = SX(i, i);
        if (!(th > 0.0)) {
            rep.message = "no alignment: non-positive diagonal reversion for factor " + std::to_string(i);
            rep.residual = 1.0;
            return rep;
        }
        rep.delta(i) = std::log1p(2.0 * th / (s2 * G(i, i))) / (2.0 * th);
    }

    const int ne = d * (d + 1) / 2;
    auto resid_vec = [&](const Vec& dl) {
        Mat D = precision_gain(dl, Th, SX) - G;
        Vec r(ne);
        int k = 0;
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) r(k++) = D(i, j) / gnorm;
        return r;
    };

    Vec dl = rep.delta;
    Vec r = resid_vec(dl);
    int it = 0;
    for (; it < max_iter && r.norm() > 1e-14; ++it) {
        Mat J(ne, d);
        for (int j = 0; j < d; ++j) {
            const double hs = 1e-6 * dl(j);
            Vec p = dl, q = dl;
            p(j) += hs;
            q(j) -= hs;
            J.col(j) = (resid_vec(p) - resid_vec(q)) / (2.0 * hs);
        }
        Vec step = J.completeOrthogonalDecomposition().solve(-r);
        double lam = 1.0;
        bool improved = false;
        for (int k = 0; k < 40; ++k, lam *= 0.5) {
            Vec cand = dl + lam * step;
            if ((cand.array() <= 0.0).any()) continue;
            Vec rc = resid_vec(cand);
            if (rc.norm() < r.norm()) {
                dl = cand;
                r = rc;
                improved = true;
                break;
            }
        }
        if (!improved) break;
    }
    rep.delta = dl;
    rep.iterations = it;
    rep.residual = (G - precision_gain(dl, Th, SX)).norm() / gnorm;
    rep.aligned = rep.residual < tol;
    rep.message = rep.aligned ? "aligned" : "no alignment: best residual " + std::to_string(rep.residual);
    return rep;
}

/// Target of the m-MrB equivalent to the view: the value z of
/// (X_i(T + delta_i))_i carrying the same information about X(T) as y,
/// z = c + C M^{-T} P^T Omega^{-1} y with c_i = e_i^T (I - e^{-Theta delta_i}) mu.
inline Vec mmrb_target(const Vec& delta, const ViewSpec& v, const Mat& Theta, const Mat& SigmaX,
                       const Vec& mu = Vec()) {
    const auto d = Theta.rows();
    v.validate(static_cast<int>(d));
    Eigen::FullPivLU<Mat> plu(v.P);
    if (plu.rank() < d) throw std::invalid_argument("mmrb_target: P must have full column rank");
    auto parts = precision_gain_parts(delta, Theta, SigmaX);
    Vec info = v.P.transpose() * v.Omega.ldlt().solve(v.y);
    Vec z = parts.C * parts.M.transpose().fullPivLu().solve(info);
    if (mu.size() == d) {
        for (Eigen::Index i = 0; i < d; ++i) z(i) += mu(i) - parts.M.row(i).dot(mu);
    }
    return z;
}

struct MmrbMoments {
    Vec mean;  // E[B(t)]
    Mat cov;   // Cov(B(t), B(s))
};

/// Moments of the d-dimensional bridge started at a with components pinned at
/// B_i(T_hit_i) = y_i, for s <= t <= min(T_hit). With mu given, the OU mean
/// is mu instead of zero.
inline MmrbMoments mmrb_moments(const Vec& a, const Vec& y, const Vec& T_hit, const Mat& Theta, const Mat& SigmaX,
                                double t, double s, const Vec& mu = Vec(), int panels = 2048) {
    const auto d = Theta.rows();
    if (a.size() != d || y.size() != d || T_hit.size() != d)
        throw std::invalid_argument("mmrb_moments: dimension mismatch");
    if (!(0.0 <= s && s <= t && t <= T_hit.minCoeff() + 1e-15))
        throw std::invalid_argument("mmrb_moments: requires 0 <= s <= t <= min(T_hit)");
    const Vec m0 = mu.size() == d ? mu : Vec::Zero(d);
    const Vec ac = a - m0, yc = y - m0;

    std::map<double, Mat> Vc;
    auto V = [&](double x) -> const Mat& {
        auto it = Vc.find(x);
        if (it == Vc.end()) it = Vc.emplace(x, ou_variance_quad(Theta, SigmaX, x, panels)).first;
        return it->second;
    };
    Mat VT(d, d), Mrow(d, d), Gt(d, d), Gs(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        Mrow.row(i) = mat_exp(-Theta, T_hit(i)).row(i);
        Gt.col(i) = mat_exp(-Theta.transpose(), T_hit(i) - t).col(i);
        Gs.col(i) = mat_exp(-Theta.transpose(), T_hit(i) - s).col(i);
        for (Eigen::Index j = i; j < d; ++j) {
            const double mn = std::min(T_hit(i), T_hit(j));
            Vec li = mat_exp(-Theta, T_hit(i) - mn).row(i).transpose();
            Vec lj = mat_exp(-Theta, T_hit(j) - mn).row(j).transpose();
            VT(i, j) = VT(j, i) = li.dot(V(mn) * lj);
        }
    }
    Eigen::LDLT<Mat> ldlt(VT);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all())
        throw NumericalError("mmrb_moments: V(T~) is numerically singular");
    const Mat& Vt = V(t);
    const Mat& Vs = V(s);
    Mat cross_t = Vt * Gt;  // Cov(X(t), X(T~))
    Mat cross_s = Vs * Gs;
    MmrbMoments r;
    r.mean = m0 + mat_exp(-Theta, t) * ac + cross_t * ldlt.solve(yc - Mrow * ac);
    r.cov = mat_exp(-Theta, t - s) * Vs - cross_t * ldlt.solve(cross_s.transpose());
    return r;
}

}  // namespace viewfactor
