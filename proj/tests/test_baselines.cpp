#include <gtest/gtest.h>

#include "viewfactor/baselines.hpp"
#include "test_support.hpp"

using namespace viewfactor;
namespace ts = testing_support;

namespace {

struct Setup {
    MarketModel m;
    ViewSpec v;
};

Setup small_setup(std::uint64_t seed, double rho = 1.0) {
    std::mt19937_64 gen(seed);
    Setup s;
    s.m = ts::random_model(gen, 2, 2, rho);
    s.v.P = Mat(1, 2);
    s.v.P << 1.0, -0.5;
    s.v.T = 1.0;
    s.v.Omega = omega_from_tau(s.m, s.v.P, 0.2, 1.0);
    s.v.y = s.v.P * s.m.factors.mu + Vec::Constant(1, 0.05);
    return s;
}

/// Exact conditional moments of R(T) - R(s) given X(s) = x and the view, from
/// the constant-coefficient joint law of (X, R) over [s, T] (block matrix
/// exponentials) followed by Gaussian conditioning on P X(T) + eps = y.
std::pair<Vec, Mat> exact_moments(const MarketModel& m, const ViewSpec& v, double s, const Vec& x) {
    const int d = m.d(), N = m.N(), D = d + N;
    const double tau = v.T - s;
    Mat F = Mat::Zero(D, D);
    F.topLeftCorner(d, d) = -m.factors.Theta;
    F.bottomLeftCorner(N, d) = m.assets.beta;
    Vec c(D);
    c << m.factors.Theta * m.factors.mu, m.assets.alpha - 0.5 * m.sigma_s().diagonal();
    Mat W(D, D);
    W << m.sigma_x(), m.sigma_sx().transpose(), m.sigma_sx(), m.sigma_s();
    Mat Fa = Mat::Zero(D + 1, D + 1);
    Fa.topLeftCorner(D, D) = F;
    Fa.topRightCorner(D, 1) = c;
    Vec z0 = Vec::Zero(D + 1);
    z0.head(d) = x;
    z0(D) = 1.0;
    Vec mean = (Mat((Fa * tau).exp()) * z0).head(D);
    Mat VL = Mat::Zero(2 * D, 2 * D);
    VL.topLeftCorner(D, D) = -F;
    VL.topRightCorner(D, D) = W;
    VL.bottomRightCorner(D, D) = F.transpose();
    Mat E = (VL * tau).exp();
    Mat Phi = E.bottomRightCorner(D, D).transpose();
    Mat Q = Phi * E.topRightCorner(D, D);
    Q = 0.5 * (Q + Q.transpose());
    Mat CRX = Q.bottomLeftCorner(N, d) * v.P.transpose();
    Mat SY = v.P * Q.topLeftCorner(d, d) * v.P.transpose() + v.Omega;
    Mat gain = CRX * SY.inverse();
    Vec mR = mean.tail(N) + gain * (v.y - v.P * mean.head(d));
    Mat CR = Q.bottomRightCorner(N, N) - gain * CRX.transpose();
    return {mR, CR};
}

}  // namespace

TEST(BLMoments, MatchesExactGaussianConditioning) {
    for (std::uint64_t seed : {1, 2, 3}) {
        auto st = small_setup(seed, seed == 2 ? 0.6 : 1.0);
        ConditionalCoeffs cc(st.m, st.v);
        for (double s : {0.0, 0.3, 0.8}) {
            Vec x = st.m.factors.mu + Vec::Constant(2, 0.02 * (s - 0.4));
            Vec Rs = Vec::Constant(2, 0.1);
            auto mo = bl_moments(cc, s, Rs, x);
            auto [mR, CR] = exact_moments(st.m, st.v, s, x);
            EXPECT_LT((mo.mu_BL - Rs - mR).cwiseAbs().maxCoeff(), 1e-9) << "seed " << seed << " s=" << s;
            EXPECT_LT((mo.sigma_BL - CR).cwiseAbs().maxCoeff(), 1e-8 * CR.cwiseAbs().maxCoeff())
                << "seed " << seed << " s=" << s;
        }
    }
}

TEST(BLMoments, MatchesMonteCarlo) {
    auto st = small_setup(4);
    ConditionalCoeffs cc(st.m, st.v);
    const int n_paths = 20000, chunk = 5000, steps = 400;
    for (double s : {0.0, 0.5}) {
        const Vec x = st.m.factors.mu + Vec::Constant(2, 0.03);
        auto mo = bl_moments(cc, s, Vec::Zero(2), x);
        std::vector<Vec> R;
        R.reserve(n_paths);
        for (int c = 0; c < n_paths / chunk; ++c) {
            auto ps = simulate_conditional(st.m, st.v, x, Vec::Ones(2), TimeGrid(s, 1.0, steps), chunk, 100 + c);
            for (int p = 0; p < chunk; ++p) R.push_back(ps.S[p].col(steps).array().log());
        }
        Vec mean = Vec::Zero(2);
        for (const auto& r : R) mean += r;
        mean /= n_paths;
        Mat cov = Mat::Zero(2, 2);
        for (const auto& r : R) cov += (r - mean) * (r - mean).transpose();
        cov /= n_paths - 1;
        const Mat& S = mo.sigma_BL;
        for (int i = 0; i < 2; ++i) {
            EXPECT_LT(std::abs(mean(i) - mo.mu_BL(i)), 3 * std::sqrt(S(i, i) / n_paths)) << "s=" << s << " i=" << i;
            for (int j = 0; j < 2; ++j) {
                const double se = std::sqrt((S(i, i) * S(j, j) + S(i, j) * S(i, j)) / n_paths);
                EXPECT_LT(std::abs(cov(i, j) - S(i, j)), 3 * se) << "s=" << s << " " << i << "," << j;
            }
        }
    }
}

TEST(BLMoments, QuadratureRefinementIsStable) {
    auto m = ts::published();
    auto v = ts::published_view(m, 0.05, 1.0, m.factors.mu);
    ConditionalCoeffs cc(m, v);
    for (double s : {0.0, 0.5, 11.0 / 12.0}) {
        auto a = bl_affine(cc, s, 256), b = bl_affine(cc, s, 512);
        Vec x = m.factors.mu;
        Vec ma = a.a + a.B * x, mb = b.a + b.B * x;
        EXPECT_LT((ma - mb).norm() / mb.norm(), 1e-6) << "s=" << s;
        EXPECT_LT((a.Sigma - b.Sigma).norm() / b.Sigma.norm(), 1e-6) << "s=" << s;
    }
}

TEST(BLMoments, NoFactorLoadingLeavesDiffusionOnly) {
    auto st = small_setup(5, 0.0);
    st.m.assets.beta.setZero();
    ConditionalCoeffs cc(st.m, st.v);
    for (double s : {0.0, 0.6}) {
        auto mo = bl_moments(cc, s, Vec::Zero(2), st.m.factors.mu);
        EXPECT_EQ(mo.sigma_BL, detail::symmetrize((1.0 - s) * st.m.sigma_s()));
    }
}

TEST(BLMoments, CrossTermVanishesWithoutCorrelation) {
    auto st = small_setup(6, 0.0);
    ConditionalCoeffs cc(st.m, st.v);
    auto af = bl_affine(cc, 0.2);
    EXPECT_EQ(af.cross.cwiseAbs().maxCoeff(), 0.0);
    auto st1 = small_setup(6, 1.0);
    ConditionalCoeffs cc1(st1.m, st1.v);
    EXPECT_GT(bl_affine(cc1, 0.2).cross.cwiseAbs().maxCoeff(), 0.0);
}

TEST(BLMoments, CovarianceVanishesAtHorizon) {
    auto st = small_setup(7);
    ConditionalCoeffs cc(st.m, st.v);
    double prev = 1e9;
    for (double s : {0.9, 0.99, 0.999}) {
        double nrm = bl_affine(cc, s).Sigma.norm();
        EXPECT_LT(nrm, prev);
        prev = nrm;
    }
    // only the (T - s) Sigma^S diffusion term survives to first order
    EXPECT_LT(prev, 1.1e-3 * st.m.sigma_s().norm());
    EXPECT_THROW(bl_affine(cc, 1.0), std::invalid_argument);
    EXPECT_THROW(bl_affine(ConditionalCoeffs(st.m), 0.0), std::invalid_argument);
}

TEST(BLPolicy, ZeroExcessGivesZeroWeights) {
    BLMoments mo;
    mo.s = 0.25;
    mo.T = 1.0;
    mo.R_s = Vec::Constant(2, 0.3);
    mo.mu_BL = mo.R_s.array() + 0.02 * 0.75;
    mo.sigma_BL = Mat::Identity(2, 2) * 0.04;
    EXPECT_LT(bl_policy(mo, Preferences{3.0}, 0.02).norm(), 1e-15);
}

TEST(BLPolicy, ScalarMertonRatio) {
    BLMoments mo;
    mo.s = 0.0;
    mo.T = 0.5;
    mo.R_s = Vec::Zero(1);
    mo.mu_BL = Vec::Constant(1, 0.05);
    mo.sigma_BL = Mat::Constant(1, 1, 0.02);
    EXPECT_NEAR(bl_policy(mo, Preferences{4.0}, 0.02)(0), (0.05 - 0.01) / (4.0 * 0.02), 1e-15);
}

TEST(BLPolicy, LinearInInverseRiskAversion) {
    auto st = small_setup(8);
    auto mo = bl_moments(st.m, st.v, 0.1, Vec::Zero(2), st.m.factors.mu);
    Vec w3 = bl_policy(mo, Preferences{3.0}, 0.02), w6 = bl_policy(mo, Preferences{6.0}, 0.02);
    EXPECT_LT((w3 - 2.0 * w6).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(BLPolicy, RejectsSingularCovariance) {
    BLMoments mo;
    mo.T = 1.0;
    mo.R_s = Vec::Zero(2);
    mo.mu_BL = Vec::Constant(2, 0.05);
    mo.sigma_BL = Mat::Ones(2, 2);
    EXPECT_THROW(bl_policy(mo, Preferences{3.0}, 0.02), NumericalError);
}

TEST(BLStrategy, WeightsMatchDirectEvaluation) {
    auto st = small_setup(9);
    ConditionalCoeffs cc(st.m, st.v);
    Preferences pref{5.0};
    TimeGrid grid(0.0, 1.0, 120);
    BLStrategy strat(cc, pref, grid, 10);
    Vec x = st.m.factors.mu + Vec::Constant(2, -0.01);
    for (int k = 0; k < 120; k += 10) {
        Vec direct = bl_policy(bl_moments(cc, grid.at(k), Vec::Constant(2, 0.7), x), pref, st.m.assets.r_f);
        EXPECT_LT((strat.weights(k, x) - direct).cwiseAbs().maxCoeff(), 1e-12);
    }
    EXPECT_THROW(strat.weights(5, x), std::invalid_argument);
    EXPECT_THROW(strat.weights(120, x), std::invalid_argument);
}

TEST(BLAffine, ViewLoadingMatchesRecomputationAtAnotherRealisation) {
    auto s = small_setup(41);
    ConditionalCoeffs cc(s.m, s.v);
    BLAffine af = bl_affine(cc, 0.3);
    ViewSpec v2 = s.v;
    v2.y = s.v.y + Vec::Constant(1, -0.12);
    BLAffine af2 = bl_affine(ConditionalCoeffs(s.m, v2), 0.3);
    EXPECT_LT((af.a_at(v2.y) - af2.a).norm(), 1e-12 * (1.0 + af2.a.norm()));
    EXPECT_LT((af.B - af2.B).norm(), 1e-14);
    EXPECT_LT((af.Sigma - af2.Sigma).norm(), 1e-14);
    Vec x = Vec::Constant(2, 0.01);
    BLMoments mo = af.at(Vec::Zero(2), x, v2.y);
    EXPECT_LT((mo.mu_BL - af2.at(Vec::Zero(2), x).mu_BL).norm(), 1e-12);
}
