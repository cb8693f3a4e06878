#pragma once

// Calibration of the factor/asset model from a monthly panel of prices and
// dividend yields: per-factor AR(1) fits for (Theta, mu), per-asset OLS for
// (alpha, beta) with the Ito correction, and the joint diffusion from the
// covariance of the one-step innovations, split by Cholesky into (L_X, L_S).

#include "market.hpp"

#include <fstream>
#include <iomanip>
#include <istream>
#include <sstream>

namespace viewfactor {

/// Rejected calibration input or fit (non-stationary factor, degenerate
/// regressor, indefinite covariance, malformed panel).
class CalibrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Aligned monthly observations. Row r holds prices (N) and yields (d) at
/// dates[r]; rows with any missing value are dropped at load time, and
/// `follows_previous[r]` is false when row r does not directly follow row
/// r - 1 in the source file, so one-step transitions never span a gap.
struct MonthlyPanel {
    std::vector<std::string> dates;
    std::vector<std::string> tickers;
    Mat prices;  // rows x N
    Mat yields;  // rows x d
    std::vector<char> follows_previous;
    int dropped_rows = 0;
    double dt = 1.0 / 12.0;

    int rows() const { return static_cast<int>(prices.rows()); }
    int N() const { return static_cast<int>(prices.cols()); }
    int d() const { return static_cast<int>(yields.cols()); }

    /// Row indices r such that (r, r + 1) is a one-step transition.
    std::vector<int> transitions() const {
        std::vector<int> out;
        for (int r = 0; r + 1 < rows(); ++r)
            if (follows_previous[r + 1]) out.push_back(r);
        return out;
    }
};

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        std::size_t b = cell.find_first_not_of(' ');
        out.push_back(b == std::string::npos ? std::string() : cell.substr(b));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline bool parse_number(const std::string& s, double& v) {
    if (s.empty()) return false;
    std::istringstream is(s);
    is >> v;
    return !is.fail() && is.eof() && std::isfinite(v);
}
}  // namespace detail

/// Reads `date, price_<ticker>..., yield_<ticker>...`. Every priced ticker
/// needs a yield column of the same ticker (diagonal factor loadings pair
/// asset i with factor i); yield columns are reordered to the price order.
/// Empty or non-numeric cells mark a row as incomplete and it is dropped.
inline MonthlyPanel read_panel_csv(std::istream& in, double dt = 1.0 / 12.0) {
    if (!(dt > 0.0)) throw CalibrationError("read_panel_csv: dt must be positive");
    std::string line;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        header = detail::split_csv_line(line);
        break;
    }
    if (header.empty() || header[0] != "date")
        throw CalibrationError("read_panel_csv: header must start with a 'date' column");
    std::vector<std::string> price_t, yield_t;
    std::vector<int> price_c, yield_c;
    for (std::size_t c = 1; c < header.size(); ++c) {
        const std::string& h = header[c];
        if (h.rfind("price_", 0) == 0) {
            price_t.push_back(h.substr(6));
            price_c.push_back(static_cast<int>(c));
        } else if (h.rfind("yield_", 0) == 0) {
            yield_t.push_back(h.substr(6));
            yield_c.push_back(static_cast<int>(c));
        } else {
            throw CalibrationError("read_panel_csv: unexpected column '" + h + "'");
        }
    }
    if (price_t.empty()) throw CalibrationError("read_panel_csv: no price_<ticker> columns");
    if (yield_t.size() != price_t.size())
        throw CalibrationError("read_panel_csv: every asset needs exactly one yield column");
    std::vector<int> yield_for(price_t.size());
    for (std::size_t i = 0; i < price_t.size(); ++i) {
        auto it = std::find(yield_t.begin(), yield_t.end(), price_t[i]);
        if (it == yield_t.end()) throw CalibrationError("read_panel_csv: no yield column for ticker " + price_t[i]);
        yield_for[i] = yield_c[static_cast<std::size_t>(it - yield_t.begin())];
    }

    const int N = static_cast<int>(price_t.size());
    std::vector<std::string> dates;
    std::vector<Vec> pr, yl;
    std::vector<char> follows;
    int dropped = 0;
    bool prev_kept = false;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) {
            std::ostringstream os;
            os << "read_panel_csv: line " << line_no << " has " << cells.size() << " cells, expected "
               << header.size();
            throw CalibrationError(os.str());
        }
        Vec p(N), y(N);
        bool ok = !cells[0].empty();
        for (int i = 0; i < N && ok; ++i) {
            ok = detail::parse_number(cells[price_c[i]], p(i)) && p(i) > 0.0 &&
                 detail::parse_number(cells[yield_for[i]], y(i));
        }
        if (!ok) {
            ++dropped;
            prev_kept = false;
            continue;
        }
        dates.push_back(cells[0]);
        pr.push_back(p);
        yl.push_back(y);
        follows.push_back(prev_kept ? 1 : 0);
        prev_kept = true;
    }
    MonthlyPanel panel;
    panel.dt = dt;
    panel.tickers = price_t;
    panel.dates = std::move(dates);
    panel.follows_previous = std::move(follows);
    panel.dropped_rows = dropped;
    const int R = static_cast<int>(pr.size());
    panel.prices.resize(R, N);
    panel.yields.resize(R, N);
    for (int r = 0; r < R; ++r) {
        panel.prices.row(r) = pr[r].transpose();
        panel.yields.row(r) = yl[r].transpose();
    }
    return panel;
}

inline MonthlyPanel load_panel_csv(const std::string& path, double dt = 1.0 / 12.0) {
    std::ifstream in(path);
    if (!in) throw CalibrationError("load_panel_csv: cannot open " + path);
    return read_panel_csv(in, dt);
}

// ---------------------------------------------------------------------------
// Single-series fits

/// Ordinary least squares y = c + b x with the usual standard errors.
struct SimpleOls {
    double c = 0.0, b = 0.0;
    double se_c = 0.0, se_b = 0.0;
    double resid_var = 0.0;  // unbiased, n - 2 degrees of freedom
    double r2 = 0.0;
    Vec resid;
};

inline SimpleOls simple_ols(const Vec& x, const Vec& y, const char* who) {
    const auto n = x.size();
    if (y.size() != n) throw CalibrationError(std::string(who) + ": series lengths differ");
    if (n < 3) throw CalibrationError(std::string(who) + ": too few observations");
    const double mx = x.mean(), my = y.mean();
    const Vec xc = x.array() - mx, yc = y.array() - my;
    const double sxx = xc.squaredNorm();
    if (!(sxx > 1e-14 * std::max(1.0, x.squaredNorm())))
        throw CalibrationError(std::string(who) + ": regressor has zero variance (collinear with the intercept)");
    SimpleOls r;
    r.b = xc.dot(yc) / sxx;
    r.c = my - r.b * mx;
    r.resid = y.array() - r.c - r.b * x.array();
    const double sse = r.resid.squaredNorm();
    r.resid_var = sse / static_cast<double>(n - 2);
    r.se_b = std::sqrt(r.resid_var / sxx);
    r.se_c = std::sqrt(r.resid_var * (1.0 / n + mx * mx / sxx));
    const double syy = yc.squaredNorm();
    r.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
    return r;
}

/// OU parameters from the AR(1) regression X_{k+1} = a + b X_k + e.
struct OUFit {
    double theta = 0.0;
    double mu = 0.0;
    double a = 0.0, b = 0.0;
    double se_theta = 0.0;  // delta method on b
    double se_mu = 0.0;     // long-run standard error of the sample mean
    double df_tstat = 0.0;  // (b - 1)/se(b), the Dickey-Fuller statistic
    double resid_var = 0.0;
    Vec resid;
};

inline constexpr int kMinCalibrationLength = 24;

/// Asymptotic 5% critical value of the Dickey-Fuller t statistic for a
/// regression with intercept; used for a report diagnostic only.
inline constexpr double kDickeyFuller5pct = -2.86;

/// Theta = -ln(b)/dt, mu = a/(1 - b), fitted on the given transition pairs
/// (x_now[k], x_next[k]).
inline OUFit fit_factor_ou(const Vec& x_now, const Vec& x_next, double dt) {
    if (!(dt > 0.0)) throw CalibrationError("fit_factor_ou: dt must be positive");
    if (x_now.size() + 1 < kMinCalibrationLength)
        throw CalibrationError("fit_factor_ou: series must have at least 24 observations");
    if ((x_now.array() == x_now(0)).all() && (x_next.array() == x_now(0)).all())
        throw CalibrationError("fit_factor_ou: constant series, the AR(1) slope is undefined");
    SimpleOls o = simple_ols(x_now, x_next, "fit_factor_ou");
    if (!(o.b < 1.0)) {
        std::ostringstream os;
        os << "fit_factor_ou: AR(1) slope b = " << o.b << " >= 1, the series is not mean-reverting";
        throw CalibrationError(os.str());
    }
    if (!(o.b > 0.0)) {
        std::ostringstream os;
        os << "fit_factor_ou: AR(1) slope b = " << o.b << " <= 0 has no continuous-time OU counterpart";
        throw CalibrationError(os.str());
    }
    OUFit f;
    f.a = o.c;
    f.b = o.b;
    f.theta = -std::log(o.b) / dt;
    f.mu = o.c / (1.0 - o.b);
    f.se_theta = o.se_b / (o.b * dt);
    f.se_mu = std::sqrt(o.resid_var / static_cast<double>(x_now.size())) / (1.0 - o.b);
    f.df_tstat = (o.b - 1.0) / o.se_b;
    f.resid_var = o.resid_var;
    f.resid = std::move(o.resid);
    return f;
}

/// Convenience overload on a contiguous series.
inline OUFit fit_factor_ou(const Vec& series, double dt) {
    const auto n = series.size();
    if (n < kMinCalibrationLength) throw CalibrationError("fit_factor_ou: series must have at least 24 observations");
    if ((series.array() == series(0)).all())
        throw CalibrationError("fit_factor_ou: constant series, the AR(1) slope is undefined");
    return fit_factor_ou(Vec(series.head(n - 1)), Vec(series.tail(n - 1)), dt);
}

/// Asset drift from log R_{k+1} = c + b X_k + e: beta = b/dt and
/// alpha = c/dt + 1/2 Sigma^S_ii with the annualised return variance supplied.
struct AssetFit {
    double alpha = 0.0;
    double beta = 0.0;
    double c = 0.0, b = 0.0;
    double se_alpha = 0.0, se_beta = 0.0;
    double r2 = 0.0;
    Vec resid;
};

inline AssetFit fit_asset(const Vec& log_returns, const Vec& factor_lagged, double dt,
                          double sample_var_annualized) {
    if (!(dt > 0.0)) throw CalibrationError("fit_asset: dt must be positive");
    if (log_returns.size() + 1 < kMinCalibrationLength)
        throw CalibrationError("fit_asset: series must have at least 24 observations");
    if (!(sample_var_annualized >= 0.0)) throw CalibrationError("fit_asset: variance must be non-negative");
    SimpleOls o = simple_ols(factor_lagged, log_returns, "fit_asset");
    AssetFit f;
    f.c = o.c;
    f.b = o.b;
    f.beta = o.b / dt;
    f.alpha = o.c / dt + 0.5 * sample_var_annualized;
    f.se_beta = o.se_b / dt;
    f.se_alpha = o.se_c / dt;
    f.r2 = o.r2;
    f.resid = std::move(o.resid);
    return f;
}

// ---------------------------------------------------------------------------
// Joint diffusion

struct JointDiffusion {
    Mat Sigma;  // annualised joint covariance, factors first
    Mat L;      // lower Cholesky factor of Sigma
    Mat L_X;    // first d rows
    Mat L_S;    // last N rows
};

/// Cholesky split of an annualised joint covariance [[S^X, S^{XS}], [S^{SX}, S^S]].
inline JointDiffusion joint_diffusion_from_cov(const Mat& Sigma, int d) {
    detail::require_square(Sigma, "joint_diffusion");
    JointDiffusion jd;
    jd.Sigma = detail::symmetrize(Sigma);
    try {
        jd.L = cholesky(jd.Sigma);
    } catch (const NumericalError& e) {
        throw CalibrationError(std::string("joint_diffusion: joint innovation covariance is not positive definite: ") +
                               e.what());
    }
    jd.L_X = jd.L.topRows(d);
    jd.L_S = jd.L.bottomRows(jd.L.rows() - d);
    return jd;
}

/// Annualised diffusion covariance from one-step innovations. Factor
/// innovations of an OU process with diagonal Theta over a step dt have
/// covariance Sigma^X_ij (1 - e^{-(th_i + th_j) dt})/(th_i + th_j), and their
/// covariance with the price shocks is Sigma^{XS}_ik (1 - e^{-th_i dt})/th_i;
/// these exact factors replace the plain division by dt. Price innovations
/// are divided by dt.
inline Mat innovation_covariance(const Mat& factor_resid, const Mat& asset_resid, const Vec& theta, double dt) {
    const auto n = factor_resid.rows();
    if (asset_resid.rows() != n) throw CalibrationError("joint_diffusion: residual series lengths differ");
    const auto d = factor_resid.cols(), N = asset_resid.cols();
    Mat E(n, d + N);
    E << factor_resid, asset_resid;
    const Mat C = E.rowwise() - E.colwise().mean();
    Mat S = (C.transpose() * C) / static_cast<double>(n - 1);
    auto decay = [dt](double k) { return k * dt < 1e-8 ? dt : -std::expm1(-k * dt) / k; };
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) S(i, j) /= decay(theta(i) + theta(j));
        for (Eigen::Index k = 0; k < N; ++k) {
            S(i, d + k) /= decay(theta(i));
            S(d + k, i) /= decay(theta(i));
        }
    }
    S.bottomRightCorner(N, N) /= dt;
    return detail::symmetrize(S);
}

// ---------------------------------------------------------------------------
// Full calibration

struct CalibrationResult {
    MarketModel model;
    std::vector<OUFit> factors;
    std::vector<AssetFit> assets;
    JointDiffusion diffusion;
    std::vector<std::string> tickers;
    int rows_used = 0;
    int transitions = 0;
    int dropped_rows = 0;

    /// Human-readable summary of the fits.
    std::string report() const {
        std::ostringstream os;
        os.setf(std::ios::fixed);
        os << "Calibration report\n";
        os << "  observations used: " << rows_used << " (" << transitions << " one-step transitions)\n";
        os << "  rows dropped for missing values: " << dropped_rows << "\n";
        os << "  driver dimension N' = " << model.n_drivers() << "\n\n";
        os << "Factors (AR(1) on yields)\n";
        os << "  ticker        theta     se(theta)      mu        se(mu)        b       DF t\n";
        bool unit_root_warning = false;
        for (std::size_t j = 0; j < factors.size(); ++j) {
            const OUFit& f = factors[j];
            os << "  " << std::left << std::setw(10) << tickers[j] << std::right << std::setprecision(4)
               << std::setw(10) << f.theta << std::setw(12) << f.se_theta << std::setw(12) << f.mu << std::setw(12)
               << f.se_mu << std::setw(11) << std::setprecision(6) << f.b << std::setw(9) << std::setprecision(2)
               << f.df_tstat << (f.df_tstat > kDickeyFuller5pct ? " *" : "") << "\n";
            unit_root_warning = unit_root_warning || f.df_tstat > kDickeyFuller5pct;
        }
        if (unit_root_warning)
            os << "  * a unit root is not rejected at the 5% level (DF t > " << kDickeyFuller5pct
               << "); theta and mu of that factor are weakly identified\n";
        os << "\nAssets (log-return on own lagged yield)\n";
        os << "  ticker        alpha     se(alpha)    beta      se(beta)     R^2\n";
        for (std::size_t i = 0; i < assets.size(); ++i) {
            os << "  " << std::left << std::setw(10) << tickers[i] << std::right << std::setprecision(4)
               << std::setw(10) << assets[i].alpha << std::setw(12) << assets[i].se_alpha << std::setw(10)
               << assets[i].beta << std::setw(12) << assets[i].se_beta << std::setw(9) << assets[i].r2 << "\n";
        }
        Eigen::SelfAdjointEigenSolver<Mat> es(diffusion.Sigma, Eigen::EigenvaluesOnly);
        os << "\nJoint diffusion covariance: min eigenvalue " << std::scientific << std::setprecision(3)
           << es.eigenvalues().minCoeff() << ", condition number "
           << es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff() << "\n";
        return os.str();
    }
};

/// Full pipeline on a panel. The Ito correction in alpha uses the calibrated
/// diffusion variance Sigma^S_ii, so the fitted model reproduces the mean
/// log-return regression exactly. The result always passes
/// MarketModel::validate(); anything else is rejected with a CalibrationError.
inline CalibrationResult calibrate(const MonthlyPanel& panel, double r_f = 0.02) {
    const int d = panel.d(), N = panel.N();
    if (d != N) throw CalibrationError("calibrate: diagonal loadings need one yield per asset");
    const std::vector<int> tr = panel.transitions();
    const int n = static_cast<int>(tr.size());
    if (n + 1 < kMinCalibrationLength)
        throw CalibrationError("calibrate: fewer than 24 usable consecutive observations");
    const double dt = panel.dt;

    Mat Xnow(n, d), Xnext(n, d), R(n, N);
    for (int k = 0; k < n; ++k) {
        const int r = tr[k];
        Xnow.row(k) = panel.yields.row(r);
        Xnext.row(k) = panel.yields.row(r + 1);
        R.row(k) = (panel.prices.row(r + 1).array() / panel.prices.row(r).array()).log();
    }

    CalibrationResult res;
    res.tickers = panel.tickers;
    res.rows_used = panel.rows();
    res.transitions = n;
    res.dropped_rows = panel.dropped_rows;
    Mat fres(n, d), ares(n, N);
    Vec theta(d), mu(d);
    for (int j = 0; j < d; ++j) {
        try {
            res.factors.push_back(fit_factor_ou(Vec(Xnow.col(j)), Vec(Xnext.col(j)), dt));
        } catch (const CalibrationError& e) {
            throw CalibrationError("factor " + panel.tickers[j] + ": " + e.what());
        }
        theta(j) = res.factors[j].theta;
        mu(j) = res.factors[j].mu;
        fres.col(j) = res.factors[j].resid;
    }
    // the OLS residuals do not depend on the variance used in the Ito term
    for (int i = 0; i < N; ++i) {
        try {
            res.assets.push_back(fit_asset(Vec(R.col(i)), Vec(Xnow.col(i)), dt, 0.0));
        } catch (const CalibrationError& e) {
            throw CalibrationError("asset " + panel.tickers[i] + ": " + e.what());
        }
        ares.col(i) = res.assets[i].resid;
    }
    // a series fitted without error has no diffusion of its own
    for (int j = 0; j < d; ++j)
        if (fres.col(j).cwiseAbs().maxCoeff() <= 1e-10 * Xnow.col(j).cwiseAbs().maxCoeff())
            throw CalibrationError("factor " + panel.tickers[j] + ": AR(1) innovations vanish, the diffusion would be rank-deficient");
    for (int i = 0; i < N; ++i)
        if (ares.col(i).cwiseAbs().maxCoeff() <= 1e-10 * R.col(i).cwiseAbs().maxCoeff())
            throw CalibrationError("asset " + panel.tickers[i] + ": return innovations vanish, the diffusion would be rank-deficient");
    res.diffusion = joint_diffusion_from_cov(innovation_covariance(fres, ares, theta, dt), d);
    const Mat SS = res.diffusion.L_S * res.diffusion.L_S.transpose();
    for (int i = 0; i < N; ++i) res.assets[i].alpha += 0.5 * SS(i, i);

    MarketModel& m = res.model;
    m.factors.Theta = theta.asDiagonal();
    m.factors.mu = mu;
    m.factors.L_X = res.diffusion.L_X;
    m.assets.alpha.resize(N);
    m.assets.beta = Mat::Zero(N, d);
    for (int i = 0; i < N; ++i) {
        m.assets.alpha(i) = res.assets[i].alpha;
        m.assets.beta(i, i) = res.assets[i].beta;
    }
    m.assets.L_S = res.diffusion.L_S;
    m.assets.r_f = r_f;
    m.rho = 1.0;
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw CalibrationError(std::string("calibrate: fitted model rejected: ") + e.what());
    }
    return res;
}

/// Joint diffusion of a panel: the Cholesky split of the annualised
/// covariance of the factor and asset regression innovations.
inline JointDiffusion joint_diffusion(const MonthlyPanel& panel) { return calibrate(panel).diffusion; }

/// Writes a panel in the CSV schema read by read_panel_csv (dates are
/// synthetic month labels when none are stored).
inline void write_panel_csv(std::ostream& os, const MonthlyPanel& panel) {
    os << "date";
    for (const auto& t : panel.tickers) os << ",price_" << t;
    for (const auto& t : panel.tickers) os << ",yield_" << t;
    os << "\n";
    os.precision(17);
    for (int r = 0; r < panel.rows(); ++r) {
        os << panel.dates[r];
        for (int i = 0; i < panel.N(); ++i) os << "," << panel.prices(r, i);
        for (int i = 0; i < panel.d(); ++i) os << "," << panel.yields(r, i);
        os << "\n";
    }
}

/// Panel from one simulated path (one row per grid node), with ISO month
/// labels counting from January 2000.
inline MonthlyPanel panel_from_path(const PathSet& ps, int path, const std::vector<std::string>& tickers) {
    const Mat& X = ps.X[path];
    const Mat& S = ps.S[path];
    if (X.rows() != S.rows() || static_cast<int>(tickers.size()) != S.rows())
        throw std::invalid_argument("panel_from_path: needs one yield per asset and one ticker per asset");
    MonthlyPanel p;
    p.dt = ps.grid.h();
    p.tickers = tickers;
    p.prices = S.transpose();
    p.yields = X.transpose();
    const int R = static_cast<int>(S.cols());
    p.follows_previous.assign(R, 1);
    p.follows_previous[0] = 0;
    for (int r = 0; r < R; ++r) {
        std::ostringstream os;
        os << (2000 + r / 12) << "-" << std::setw(2) << std::setfill('0') << (r % 12 + 1) << "-01";
        p.dates.push_back(os.str());
    }
    return p;
}

}  // namespace viewfactor
