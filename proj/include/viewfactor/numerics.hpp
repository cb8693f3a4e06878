#pragma once

// Dense-matrix kernels shared by every module: matrix exponential, Lyapunov
// solve, Cholesky, fixed-step RK4 marching and Simpson quadrature.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace viewfactor {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Raised when a numerical routine cannot produce a trustworthy result
/// (indefinite matrix, non-finite ODE state, blow-up, ...).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Uniform grid on [t0, t1] with n_steps intervals (n_steps + 1 nodes).
struct TimeGrid {
    double t0 = 0.0;
    double t1 = 1.0;
    int n_steps = 1;

    TimeGrid() = default;
    TimeGrid(double a, double b, int n) : t0(a), t1(b), n_steps(n) { validate(); }

    void validate() const {
        if (!(t0 < t1)) throw std::invalid_argument("TimeGrid: requires t0 < t1");
        if (n_steps < 1) throw std::invalid_argument("TimeGrid: requires n_steps >= 1");
    }
    double h() const { return (t1 - t0) / n_steps; }
    double at(int i) const { return i == n_steps ? t1 : t0 + i * h(); }
    int nodes() const { return n_steps + 1; }

    /// Index of the node at or immediately left of t (clamped to the grid).
    int left_index(double t) const {
        if (t <= t0) return 0;
        if (t >= t1) return n_steps;
        int i = static_cast<int>(std::floor((t - t0) / h()));
        return std::clamp(i, 0, n_steps);
    }
};

namespace detail {

inline std::string dims(const Mat& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_square(const Mat& m, const char* who) {
    if (m.rows() != m.cols() || m.rows() == 0)
        throw std::invalid_argument(std::string(who) + ": expected a non-empty square matrix, got " +
                                    dims(m));
}

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

}  // namespace detail

/// e^{A t} by scaling-and-squaring with Pade approximants.
inline Mat mat_exp(const Mat& A, double t = 1.0) {
    detail::require_square(A, "mat_exp");
    if (t == 0.0) return Mat::Identity(A.rows(), A.cols());
    Mat At = A * t;
    return At.exp();
}

/// Solves Theta*S + S*Theta^T = Q for symmetric S via the vectorised
/// (Kronecker) linear system. Intended for small dimensions.
inline Mat solve_lyapunov(const Mat& Theta, const Mat& Q) {
    detail::require_square(Theta, "solve_lyapunov");
    if (Q.rows() != Theta.rows() || Q.cols() != Theta.cols())
        throw std::invalid_argument("solve_lyapunov: Q must match Theta, got " + detail::dims(Q));
    const double qn = std::max(Q.norm(), 1e-300);
    if ((Q - Q.transpose()).norm() > 1e-10 * qn)
        throw std::invalid_argument("solve_lyapunov: Q is not symmetric");

    Eigen::EigenSolver<Mat> es(Theta, false);
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        if (!(es.eigenvalues()(i).real() > 0.0)) {
            std::ostringstream os;
            os << "solve_lyapunov: Theta has eigenvalue " << es.eigenvalues()(i)
               << " without strictly positive real part";
            throw NumericalError(os.str());
        }
    }

    const Eigen::Index n = Theta.rows();
    const Mat I = Mat::Identity(n, n);
    Mat K = Mat::Zero(n * n, n * n);
    // vec(Theta S) = (I kron Theta) vec(S); vec(S Theta^T) = (Theta kron I) vec(S).
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            K.block(i * n, j * n, n, n) += I(i, j) * Theta;
            K.block(i * n, j * n, n, n) += Theta(i, j) * I;
        }
    Vec q = Eigen::Map<const Vec>(Q.data(), n * n);
    Vec s = K.partialPivLu().solve(q);
    Mat S = Eigen::Map<Mat>(s.data(), n, n);
    return detail::symmetrize(S);
}

/// Lower Cholesky factor of a symmetric positive-definite matrix. The input is
/// symmetrised first; a pivot at or below 1e-12*||S|| is reported by index.
inline Mat cholesky(const Mat& S_in) {
    detail::require_square(S_in, "cholesky");
    const Mat S = detail::symmetrize(S_in);
    const Eigen::Index n = S.rows();
    const double tol = 1e-12 * std::max(S.norm(), 1e-300);
    Mat L = Mat::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double d = S(j, j) - L.row(j).head(j).squaredNorm();
        if (!(d > tol)) {
            std::ostringstream os;
            os << "cholesky: matrix is not positive definite (pivot " << j << " = " << d << ")";
            throw NumericalError(os.str());
        }
        L(j, j) = std::sqrt(d);
        for (Eigen::Index i = j + 1; i < n; ++i)
            L(i, j) = (S(i, j) - L.row(i).head(j).dot(L.row(j).head(j))) / L(j, j);
    }
    return L;
}

/// Cholesky-like factor for positive semi-definite matrices: pivots below the
/// tolerance are treated as exact zeros so that L L^T reproduces S up to that
/// tolerance. Used for sampling Gaussians whose covariance may be singular.
inline Mat cholesky_psd(const Mat& S_in) {
    detail::require_square(S_in, "cholesky_psd");
    const Mat S = detail::symmetrize(S_in);
    const Eigen::Index n = S.rows();
    const double tol = 1e-13 * std::max(S.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    Mat L = Mat::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double d = S(j, j) - L.row(j).head(j).squaredNorm();
        if (d < -1e-8 * std::max(std::abs(S(j, j)), tol)) {
            std::ostringstream os;
            os << "cholesky_psd: matrix is indefinite (pivot " << j << " = " << d << ")";
            throw NumericalError(os.str());
        }
        if (d <= tol) continue;
        L(j, j) = std::sqrt(d);
        for (Eigen::Index i = j + 1; i < n; ++i)
            L(i, j) = (S(i, j) - L.row(i).head(j).dot(L.row(j).head(j))) / L(j, j);
    }
    return L;
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky factor.
inline Mat spd_inverse(const Mat& S) {
    Mat L = cholesky(S);
    Mat Linv = L.triangularView<Eigen::Lower>().solve(Mat::Identity(S.rows(), S.cols()));
    return Linv.transpose() * Linv;
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

/// Optional hook applied to the state after every completed step (for
/// example re-symmetrising a matrix block). Throwing from it aborts the march.
using StepHook = std::function<void(double t, Vec& state)>;

namespace detail {

template <class Rhs>
std::vector<Vec> rk4_march(Rhs&& rhs, const Vec& start, const TimeGrid& grid, bool backward,
                           const StepHook& hook) {
    grid.validate();
    const int n = grid.n_steps;
    std::vector<Vec> path(grid.nodes());
    int idx = backward ? n : 0;
    path[idx] = start;
    Vec x = start;

    auto checked = [&](double t, const Vec& s) -> Vec {
        Vec k = rhs(t, s);
        for (Eigen::Index c = 0; c < k.size(); ++c) {
            if (!std::isfinite(k(c))) {
                std::ostringstream os;
                os << "integrate: non-finite derivative at t=" << t << " in component " << c;
                throw NumericalError(os.str());
            }
        }
        return k;
    };

    for (int step = 0; step < n; ++step) {
        const double t = grid.at(idx);
        const int next = backward ? idx - 1 : idx + 1;
        const double tn = grid.at(next);
        const double hm = 0.5 * (tn - t);
        Vec k1 = checked(t, x);
        Vec k2 = checked(t + hm, x + hm * k1);
        Vec k3 = checked(t + hm, x + hm * k2);
        Vec k4 = checked(tn, x + (tn - t) * k3);
        x += ((tn - t) / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (hook) hook(tn, x);
        idx = next;
        path[idx] = x;
    }
    return path;
}

}  // namespace detail

/// Classical fourth-order Runge-Kutta from grid.t1 down to grid.t0.
/// rhs(t, x) returns dx/dt. The result holds the state at every node, indexed
/// like the grid (element 0 is the state at t0).
template <class Rhs>
std::vector<Vec> integrate_backward(Rhs&& rhs, const Vec& terminal, const TimeGrid& grid,
                                    const StepHook& hook = {}) {
    return detail::rk4_march(std::forward<Rhs>(rhs), terminal, grid, true, hook);
}

/// Forward counterpart of integrate_backward, marching from t0 to t1.
template <class Rhs>
std::vector<Vec> integrate_forward(Rhs&& rhs, const Vec& initial, const TimeGrid& grid,
                                   const StepHook& hook = {}) {
    return detail::rk4_march(std::forward<Rhs>(rhs), initial, grid, false, hook);
}

/// Composite Simpson rule for a matrix-valued integrand over [a, b] using n
/// panels (2n subintervals, so any n >= 1 is admissible).
template <class F>
Mat quad_matrix(F&& f, double a, double b, int n) {
    if (!(a <= b)) throw std::invalid_argument("quad_matrix: requires a <= b");
    if (n < 1) throw std::invalid_argument("quad_matrix: requires n >= 1");
    Mat fa = f(a);
    if (a == b) return Mat::Zero(fa.rows(), fa.cols());
    const int m = 2 * n;
    const double h = (b - a) / m;
    Mat acc = fa + Mat(f(b));
    for (int i = 1; i < m; ++i) acc += ((i % 2) ? 4.0 : 2.0) * Mat(f(a + i * h));
    acc *= h / 3.0;
    if (!acc.allFinite()) throw NumericalError("quad_matrix: non-finite integrand");
    return acc;
}

/// Composite Simpson over tabulated values on a uniform grid with an even
/// number of intervals; falls back to the trapezoid rule on the last interval
/// when the count is odd.
template <class T>
T simpson_nodes(const std::vector<T>& f, double h) {
    const int m = static_cast<int>(f.size()) - 1;
    if (m < 1) throw std::invalid_argument("simpson_nodes: need at least two nodes");
    const int even = m - (m % 2);
    T acc = f[0] * 0.0;
    if (even >= 2) {
        acc = f[0] + f[even];
        for (int i = 1; i < even; ++i) acc = acc + f[i] * ((i % 2) ? 4.0 : 2.0);
        acc = acc * (h / 3.0);
    }
    if (m % 2) acc = acc + (f[m - 1] + f[m]) * (0.5 * h);
    return acc;
}

/// Runs body(i) for i in [0, n) on a small pool of threads. Work is split in
/// contiguous blocks; callers must make body(i) independent of scheduling.
template <class Body>
void parallel_for(int n, Body&& body, unsigned max_threads = 0) {
    unsigned hw = max_threads ? max_threads : std::max(1u, std::thread::hardware_concurrency());
    unsigned workers = std::min<unsigned>(hw, static_cast<unsigned>(std::max(n, 1)));
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const int chunk = (n + static_cast<int>(workers) - 1) / static_cast<int>(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                int lo = static_cast<int>(w) * chunk, hi = std::min(n, lo + chunk);
                for (int i = lo; i < hi; ++i) body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace viewfactor
