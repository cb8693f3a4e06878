#pragma once

// Published five-asset, five-factor calibration (monthly data, dividend-yield
// factors) and the three relative/absolute views used in the experiments.

#include "market.hpp"

namespace viewfactor::presets {

/// Risk-free rate used with the published parameters. The calibration tables
/// do not report one; 2% per year is assumed.
inline constexpr double kDefaultRiskFree = 0.02;

inline MarketModel published_model(double r_f = kDefaultRiskFree, double rho = 1.0) {
    MarketModel m;
    const int d = 5, N = 5, Np = 10;
    m.factors.Theta = Mat::Zero(d, d);
    m.factors.Theta.diagonal() << 0.7412, 0.6080, 0.0677, 0.7872, 0.1751;
    m.factors.mu.resize(d);
    m.factors.mu << 0.0200, 0.0068, 0.0265, 0.0429, 0.0235;
    m.factors.L_X = Mat::Zero(d, Np);
    m.factors.L_X.row(0).head(1) << 1.05e-2;
    m.factors.L_X.row(1).head(2) << 8.52e-3, 2.92e-2;
    m.factors.L_X.row(2).head(3) << 1.07e-2, 1.73e-2, 2.39e-2;
    m.factors.L_X.row(3).head(4) << 4.08e-2, 1.29e-2, 4.94e-3, 2.64e-2;
    m.factors.L_X.row(4).head(5) << 8.31e-4, 1.63e-2, 2.36e-2, 3.63e-3, 7.60e-3;

    m.assets.alpha.resize(N);
    m.assets.alpha << -0.2044, -0.0320, -0.0589, -0.1824, -0.1501;
    m.assets.beta = Mat::Zero(N, d);
    m.assets.beta.diagonal() << 14.1731, 3.9467, 1.7666, 5.2718, 5.6344;
    m.assets.L_S = Mat::Zero(N, Np);
    m.assets.L_S.row(0) << 9.31e-3, -2.65e-2, -1.38e-2, 7.39e-3, -2.03e-3, 1.41e-1, 0, 0, 0, 0;
    m.assets.L_S.row(1) << 2.99e-3, 8.44e-3, -2.70e-3, 1.74e-2, -2.90e-2, 1.04e-1, 1.56e-1, 0, 0, 0;
    m.assets.L_S.row(2) << 4.22e-3, -9.62e-4, 3.47e-3, 1.47e-3, -4.55e-3, 2.13e-2, -5.13e-3, 6.80e-2, 0, 0;
    m.assets.L_S.row(3) << 3.30e-3, -4.49e-2, 1.12e-2, 2.55e-2, -6.98e-3, 1.65e-1, -1.32e-2, 4.91e-2,
        1.51e-1, 0;
    m.assets.L_S.row(4) << -2.07e-2, 4.26e-3, 1.49e-2, 4.06e-4, 4.21e-3, -3.69e-2, -2.62e-2, 8.03e-2,
        1.84e-2, 8.83e-2;
    m.assets.r_f = r_f;
    m.rho = rho;
    return m;
}

/// View map with rows (1,-1,0,0,0), (0,0,1,0,0), (0,1,0,0,-1).
inline Mat experiment_view_map() {
    Mat P = Mat::Zero(3, 5);
    P(0, 0) = 1;
    P(0, 1) = -1;
    P(1, 2) = 1;
    P(2, 1) = 1;
    P(2, 4) = -1;
    return P;
}

}  // namespace viewfactor::presets
