#pragma once

// Unconditional factor/asset model, its exact Gaussian factor moments and
// joint path simulation of factors and prices.

#include "numerics.hpp"

#include <cstdint>
#include <random>

namespace viewfactor {

/// dX = Theta (mu - X) dt + L_X dW
struct FactorDynamics {
    Mat Theta;  // d x d, 1/years
    Vec mu;     // d
    Mat L_X;    // d x N'

    int d() const { return static_cast<int>(mu.size()); }
    Mat sigma_x() const { return L_X * L_X.transpose(); }

    void validate() const {
        validate_structure();
        Eigen::FullPivLU<Mat> lu(L_X);
        if (lu.rank() < mu.size()) throw std::invalid_argument("FactorDynamics: L_X must have full row rank");
    }

    void validate_structure() const {
        const auto d = mu.size();
        if (d == 0) throw std::invalid_argument("FactorDynamics: empty mu");
        if (Theta.rows() != d || Theta.cols() != d)
            throw std::invalid_argument("FactorDynamics: Theta must be d x d, got " + detail::dims(Theta));
        if (L_X.rows() != d)
            throw std::invalid_argument("FactorDynamics: L_X must have d rows, got " + detail::dims(L_X));
        Eigen::EigenSolver<Mat> es(Theta, false);
        for (Eigen::Index i = 0; i < d; ++i)
            if (!(es.eigenvalues()(i).real() > 0.0))
                throw std::invalid_argument("FactorDynamics: Theta eigenvalues must have positive real part");
    }
};

/// dS/S = (alpha + beta X) dt + L_S dW
struct AssetDynamics {
    Vec alpha;  // N
    Mat beta;   // N x d
    Mat L_S;    // N x N'
    double r_f = 0.02;

    int N() const { return static_cast<int>(alpha.size()); }
    Mat sigma_s() const { return L_S * L_S.transpose(); }
};

struct MarketModel {
    FactorDynamics factors;
    AssetDynamics assets;
    double rho = 1.0;

    int d() const { return factors.d(); }
    int N() const { return assets.N(); }
    int n_drivers() const { return static_cast<int>(factors.L_X.cols()); }

    Mat sigma_x() const { return factors.sigma_x(); }
    Mat sigma_s() const { return assets.sigma_s(); }
    /// Sigma^{S,X} = rho L_S L_X^T  (N x d)
    Mat sigma_sx() const { return rho * assets.L_S * factors.L_X.transpose(); }

    /// Full invariant check: structure plus full-row-rank loadings.
    void validate() const {
        validate_structure();
        Eigen::FullPivLU<Mat> lux(factors.L_X);
        if (lux.rank() < factors.mu.size()) throw std::invalid_argument("FactorDynamics: L_X must have full row rank");
        Eigen::FullPivLU<Mat> lu(assets.L_S);
        if (lu.rank() < assets.alpha.size()) throw std::invalid_argument("MarketModel: L_S must have full row rank");
    }

    /// Dimensions, stability, r_f and rho only; degenerate (even zero)
    /// loadings are accepted, which simulation tolerates.
    void validate_structure() const {
        factors.validate_structure();
        const auto d = factors.mu.size();
        const auto N = assets.alpha.size();
        if (N == 0) throw std::invalid_argument("MarketModel: empty alpha");
        if (assets.beta.rows() != N || assets.beta.cols() != d)
            throw std::invalid_argument("MarketModel: beta must be N x d, got " + detail::dims(assets.beta));
        if (assets.L_S.rows() != N || assets.L_S.cols() != factors.L_X.cols())
            throw std::invalid_argument("MarketModel: L_S must be N x N' with the same N' as L_X, got " +
                                        detail::dims(assets.L_S));
        if (factors.L_X.cols() < std::max(N, d))
            throw std::invalid_argument("MarketModel: driver dimension N' must be >= max(N, d)");
        if (!(assets.r_f > 0.0)) throw std::invalid_argument("MarketModel: r_f must be positive");
        if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("MarketModel: rho must lie in [0, 1]");
    }
};

/// Long-run covariance Sigma solving Theta Sigma + Sigma Theta^T = Sigma^X.
inline Mat long_run_cov(const FactorDynamics& f) { return solve_lyapunov(f.Theta, f.sigma_x()); }

/// E[X(T) | X(t) = x] = (I - e^{-Theta(T-t)}) mu + e^{-Theta(T-t)} x
inline Vec cond_factor_mean(const FactorDynamics& f, double t, double T, const Vec& x) {
    if (t > T) throw std::invalid_argument("cond_factor_mean: requires t <= T");
    Mat E = mat_exp(-f.Theta, T - t);
    return f.mu + E * (x - f.mu);
}

/// Var[X(T) | X(t)] = Sigma - e^{-Theta tau} Sigma e^{-Theta^T tau}
inline Mat cond_factor_cov(const FactorDynamics& f, double t, double T) {
    if (t > T) throw std::invalid_argument("cond_factor_cov: requires t <= T");
    const int d = f.d();
    if (t == T) return Mat::Zero(d, d);
    Mat S = long_run_cov(f);
    Mat E = mat_exp(-f.Theta, T - t);
    return detail::symmetrize(S - E * S * E.transpose());
}

/// Integral_0^h e^{-Theta (h-u)} du computed through a block exponential, so
/// no inverse of Theta is required.
inline Mat integrated_decay(const Mat& Theta, double h) {
    const auto d = Theta.rows();
    Mat B = Mat::Zero(2 * d, 2 * d);
    B.topLeftCorner(d, d) = -Theta;
    B.topRightCorner(d, d) = Mat::Identity(d, d);
    return mat_exp(B, h).topRightCorner(d, d);
}

/// Simulated factor and price paths. Path p stores a d x nodes matrix of
/// factors and an N x nodes matrix of prices.
struct PathSet {
    TimeGrid grid;
    std::uint64_t seed = 0;
    std::vector<Mat> X;
    std::vector<Mat> S;

    int n_paths() const { return static_cast<int>(X.size()); }
};

/// Independent, reproducible random stream for one path: the engine state
/// depends only on (seed, stream index), never on how many paths are drawn or
/// on thread scheduling.
class PathRng {
public:
    PathRng(std::uint64_t seed, std::uint64_t stream) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                          0x9e3779b9u};
        engine_.seed(seq);
    }
    double normal() { return dist_(engine_); }
    Vec normals(Eigen::Index n) {
        Vec z(n);
        for (Eigen::Index i = 0; i < n; ++i) z(i) = normal();
        return z;
    }
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> dist_{0.0, 1.0};
};

/// One-step Gaussian transition of (X, log S) under the unconditional law on a
/// step of length h: X' = mu + Phi (X - mu) + e_X, with (e_X, e_S) jointly
/// Gaussian; chol is a factor of their joint covariance.
struct JointStep {
    Mat Phi;
    Mat chol;  // (d+N) x (d+N)
};

inline JointStep joint_step(const MarketModel& m, double h) {
    const int d = m.d(), N = m.N();
    const Mat& Theta = m.factors.Theta;
    JointStep js;
    js.Phi = mat_exp(-Theta, h);
    Mat S = long_run_cov(m.factors);
    Mat Qx = detail::symmetrize(S - js.Phi * S * js.Phi.transpose());
    Mat cross = integrated_decay(Theta, h) * m.sigma_sx().transpose();  // d x N
    Mat C(d + N, d + N);
    C.topLeftCorner(d, d) = Qx;
    C.topRightCorner(d, N) = cross;
    C.bottomLeftCorner(N, d) = cross.transpose();
    C.bottomRightCorner(N, N) = m.sigma_s() * h;
    js.chol = cholesky_psd(C);
    return js;
}

/// Joint simulation of factors (exact OU transition) and prices (log-Euler).
/// The price shocks over a step are drawn jointly with the factor shocks so
/// that their instantaneous cross-covariance is rho L_S L_X^T; with rho < 1
/// this is the same law as mixing an independent driver into the price shocks.
inline PathSet simulate_joint(const MarketModel& m, const Vec& x0, const Vec& s0, const TimeGrid& grid,
                              int n_paths, std::uint64_t seed) {
    m.validate_structure();
    grid.validate();
    if (x0.size() != m.d() || s0.size() != m.N())
        throw std::invalid_argument("simulate_joint: x0/s0 dimension mismatch");
    if ((s0.array() <= 0.0).any()) throw std::invalid_argument("simulate_joint: s0 must be positive");
    if (n_paths < 1) throw std::invalid_argument("simulate_joint: n_paths must be >= 1");

    const int d = m.d(), N = m.N(), n = grid.n_steps;
    const double h = grid.h();
    const JointStep js = joint_step(m, h);
    const Vec drift_c = m.assets.alpha - 0.5 * m.sigma_s().diagonal();

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
            Vec e = js.chol * rng.normals(d + N);
            logs += (drift_c + m.assets.beta * x) * h + e.tail(N);
            x = m.factors.mu + js.Phi * (x - m.factors.mu) + e.head(d);
            X.col(k + 1) = x;
            S.col(k + 1) = logs.array().exp().matrix();
        }
        ps.X[p] = std::move(X);
        ps.S[p] = std::move(S);
    });
    return ps;
}

}  // namespace viewfactor
