// Kernel-weighted local-linear M-estimation of (g(t), g'(t)).
//
// At each evaluation point t the fit minimizes
//
//     sum_i w_i L(Y_i - a - s (T_i - t)) K((T_i - t) / h)
//
// over (a, s), where w_i are balancing weights (possibly times bootstrap
// multipliers) and K is the standard normal density. Squared loss is solved
// from the 2x2 normal equations; quantile loss by iteratively reweighted
// least squares started from the squared-loss fit.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "unidrf/balancing_weights.hpp"
#include "unidrf/stats.hpp"
#include "unidrf/types.hpp"

namespace unidrf {

inline double kernel_weight(double u) {
    return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
}

struct LossSpec {
    enum class Kind { squared, quantile };
    Kind kind = Kind::squared;
    double q = 0.5;

    static LossSpec squared() { return {}; }
    static LossSpec quantile(double q) {
        if (!(q > 0.0 && q < 1.0)) throw ConfigError("quantile level must lie in (0, 1)");
        return {Kind::quantile, q};
    }

    bool is_quantile() const { return kind == Kind::quantile; }
    std::string describe() const {
        return is_quantile() ? "quantile:" + std::to_string(q) : std::string("squared");
    }
};

inline double loss_eval(const LossSpec& loss, double v) {
    if (!loss.is_quantile()) return v * v;
    return v * (loss.q - (v <= 0.0 ? 1.0 : 0.0));
}

/// Squared: 2v. Quantile: q - 1{v <= 0}, so the kink uses q - 1.
inline double loss_derivative(const LossSpec& loss, double v) {
    if (!loss.is_quantile()) return 2.0 * v;
    return loss.q - (v <= 0.0 ? 1.0 : 0.0);
}

struct KernelConfig {
    double h = 0.1;
};

struct FitOptions {
    /// Minimum effective number of points: the kernel mass must reach
    /// mass_floor_points * K(0) * mean|w|, the mass of that many average-weight
    /// observations sitting at t.
    double mass_floor_points = 5.0;
    double irls_floor = 1e-6;        ///< |residual| floor in IRLS multipliers
    double tolerance = 1e-8;         ///< parameter change for convergence
    int max_iterations = 100;
    int max_pivots = 50;             ///< rotations in the exact vertex step
    bool record_objective = false;
};

struct LocalFit {
    double theta1 = 0.0;  ///< level g(t)
    double theta2 = 0.0;  ///< slope g'(t)
    double effective_mass = 0.0;
    int iterations = 0;
    bool converged = true;
    std::vector<double> objective_trace;  ///< filled when FitOptions::record_objective
};

/// Offsets T_i - t and kernel values K((T_i - t)/h) for one evaluation
/// point. Reused across every weight vector fitted at that point.
struct KernelColumn {
    double t = 0.0;
    double h = 0.0;
    Eigen::VectorXd offset;
    Eigen::VectorXd kernel;
};

inline KernelColumn make_kernel_column(const Eigen::VectorXd& treatment, double t, double h) {
    if (!(h > 0.0)) throw ConfigError("bandwidth must be positive");
    KernelColumn col;
    col.t = t;
    col.h = h;
    col.offset = treatment.array() - t;
    col.kernel = col.offset.unaryExpr([h](double d) { return kernel_weight(d / h); });
    return col;
}

namespace detail {

// argmin sum_i c_i (y_i - a - s d_i)^2
inline bool weighted_line(const Eigen::VectorXd& c, const Eigen::VectorXd& d, const Eigen::VectorXd& y,
                          double& a, double& s) {
    const double s0 = c.sum();
    const double s1 = c.dot(d);
    const double s2 = c.dot(d.cwiseProduct(d));
    const double r0 = c.dot(y);
    const double r1 = c.dot(d.cwiseProduct(y));
    const double det = s0 * s2 - s1 * s1;
    const double scale = std::abs(s0 * s2) + s1 * s1;
    if (!(std::abs(det) > 1e-13 * scale) || !std::isfinite(det)) return false;
    a = (s2 * r0 - s1 * r1) / det;
    s = (s0 * r1 - s1 * r0) / det;
    return std::isfinite(a) && std::isfinite(s);
}

inline double local_objective(const LossSpec& loss, const Eigen::VectorXd& c, const Eigen::VectorXd& d,
                              const Eigen::VectorXd& y, double a, double s) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) total += c(i) * loss_eval(loss, y(i) - a - s * d(i));
    return total;
}

// Subgradient optimality of the line through observations i and j: the
// remaining residuals contribute c_k (q - 1{r_k < 0}) (1, d_k); the two
// interpolated points must absorb the rest with multipliers in [q - 1, q].
inline bool vertex_optimal(const Eigen::VectorXd& c, const Eigen::VectorXd& d, const Eigen::VectorXd& y, double q,
                           Eigen::Index i, Eigen::Index j, double a, double s) {
    if (!(c(i) > 0.0) || !(c(j) > 0.0)) return false;
    double g0 = 0.0, g1 = 0.0;
    for (Eigen::Index k = 0; k < y.size(); ++k) {
        if (k == i || k == j || c(k) == 0.0) continue;
        const double r = y(k) - a - s * d(k);
        const double psi = r < 0.0 ? q - 1.0 : q;
        g0 += c(k) * psi;
        g1 += c(k) * psi * d(k);
    }
    // c_i u_i (1, d_i) + c_j u_j (1, d_j) = -(g0, g1)
    const double det = d(j) - d(i);
    if (det == 0.0) return false;
    const double vi = (-g0 * d(j) + g1) / det;
    const double vj = (g0 * d(i) - g1) / det;
    const double ui = vi / c(i), uj = vj / c(j);
    constexpr double slack = 1e-9;
    return ui >= q - 1.0 - slack && ui <= q + slack && uj >= q - 1.0 - slack && uj <= q + slack;
}

// Lines through anchor observation i: with z_k = (y_k - y_i) / (d_k - d_i)
// each term is |d_k - d_i| times a check function at z_k (level q, or 1 - q
// when d_k < d_i), so the best slope is a breakpoint found by one sweep.
// Returns the index of the second observation on the optimal line, or -1.
inline Eigen::Index best_slope_through(const Eigen::VectorXd& c, const Eigen::VectorXd& d, const Eigen::VectorXd& y,
                                       double q, Eigen::Index i, double& slope) {
    struct Knot {
        double z, w, level;
        Eigen::Index k;
    };
    std::vector<Knot> knots;
    double slope_at_minus_inf = 0.0;
    for (Eigen::Index k = 0; k < y.size(); ++k) {
        const double delta = d(k) - d(i);
        if (k == i || c(k) == 0.0 || delta == 0.0) continue;
        const double level = delta > 0.0 ? q : 1.0 - q;
        const double w = c(k) * std::abs(delta);
        knots.push_back({(y(k) - y(i)) / delta, w, level, k});
        slope_at_minus_inf -= w * level;
    }
    if (knots.empty()) return -1;
    std::sort(knots.begin(), knots.end(),
              [](const Knot& u, const Knot& v) { return u.z < v.z || (u.z == v.z && u.k < v.k); });
    // f(z_0) directly, then walk the knots using the piecewise slope.
    double f = 0.0;
    for (const Knot& kn : knots) {
        const double r = kn.z - knots.front().z;
        f += kn.w * (r > 0.0 ? kn.level * r : (kn.level - 1.0) * r);
    }
    double best = f, derivative = slope_at_minus_inf;
    std::size_t best_m = 0;
    for (std::size_t m = 0; m + 1 < knots.size(); ++m) {
        derivative += knots[m].w;
        f += derivative * (knots[m + 1].z - knots[m].z);
        if (f < best) {
            best = f;
            best_m = m + 1;
        }
    }
    slope = knots[best_m].z;
    return knots[best_m].k;
}

// Exact finish for the quantile fit: a vertex descent that rotates the line
// about one observation at a time, starting at the smallest residual of
// (a, s). The result replaces (a, s) when it does not raise the objective.
// Returns true when the final line passes the optimality check.
inline bool polish_vertex(const Eigen::VectorXd& c, const Eigen::VectorXd& d, const Eigen::VectorXd& y, double q,
                          int max_pivots, double& a, double& s, double& obj) {
    Eigen::Index anchor = -1;
    double smallest = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < y.size(); ++k) {
        const double r = std::abs(y(k) - a - s * d(k));
        if (c(k) != 0.0 && r < smallest) {
            smallest = r;
            anchor = k;
        }
    }
    if (anchor < 0) return false;
    const LossSpec loss = LossSpec::quantile(q);
    double best = obj, ba = a, bs = s;
    Eigen::Index bi = -1, bj = -1;
    for (int p = 0; p < max_pivots; ++p) {
        double slope = 0.0;
        const Eigen::Index partner = best_slope_through(c, d, y, q, anchor, slope);
        if (partner < 0) break;
        const double intercept = y(anchor) - slope * d(anchor);
        const double o = local_objective(loss, c, d, y, intercept, slope);
        const bool improved = o < best - 1e-14 * std::abs(best);
        if (improved || (bi < 0 && o <= best)) {
            best = o;
            ba = intercept;
            bs = slope;
            bi = anchor;
            bj = partner;
        }
        if (!improved && p > 0) break;
        anchor = partner;
    }
    if (bi < 0) return false;
    a = ba;
    s = bs;
    obj = best;
    return vertex_optimal(c, d, y, q, bi, bj, a, s);
}

}  // namespace detail

/// Fits one evaluation point. `weights` multiply the kernel (pi_i, or
/// xi_i * pi_i for a bootstrap replicate).
inline LocalFit fit_local_linear(const KernelColumn& col, const Eigen::VectorXd& y, const Eigen::VectorXd& weights,
                                 const LossSpec& loss, const FitOptions& opts = {}) {
    if (y.size() != col.kernel.size() || weights.size() != col.kernel.size())
        throw DimensionError("local fit inputs have mismatched lengths");

    const Eigen::VectorXd base = weights.cwiseProduct(col.kernel);
    LocalFit fit;
    fit.effective_mass = base.sum();
    const double floor = opts.mass_floor_points * kernel_weight(0.0) * weights.cwiseAbs().mean();
    if (!(fit.effective_mass > 0.0) || fit.effective_mass < floor)
        throw InsufficientDataError(col.t, fit.effective_mass, floor);

    double a = 0.0, s = 0.0;
    if (!detail::weighted_line(base, col.offset, y, a, s))
        throw NumericError("singular local design at t=" + std::to_string(col.t));
    fit.theta1 = a;
    fit.theta2 = s;
    if (!loss.is_quantile()) return fit;

    const double q = loss.q;
    const auto n = y.size();
    Eigen::VectorXd c(n);
    double best_obj = detail::local_objective(loss, base, col.offset, y, a, s);
    double best_a = a, best_s = s;
    if (opts.record_objective) fit.objective_trace.push_back(best_obj);
    fit.converged = false;
    for (int it = 1; it <= opts.max_iterations; ++it) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double r = y(i) - a - s * col.offset(i);
            const double m = r > 0.0 ? q / std::max(r, opts.irls_floor) : (1.0 - q) / std::max(-r, opts.irls_floor);
            c(i) = base(i) * m;
        }
        double na = 0.0, ns = 0.0;
        if (!detail::weighted_line(c, col.offset, y, na, ns)) break;
        const double change = std::max(std::abs(na - a), std::abs(ns - s));
        a = na;
        s = ns;
        fit.iterations = it;
        const double obj = detail::local_objective(loss, base, col.offset, y, a, s);
        if (opts.record_objective) fit.objective_trace.push_back(obj);
        if (obj <= best_obj) {
            best_obj = obj;
            best_a = a;
            best_s = s;
        }
        if (change < opts.tolerance) {
            fit.converged = true;
            break;
        }
    }
    if (fit.converged) {
        best_a = a;
        best_s = s;
        best_obj = detail::local_objective(loss, base, col.offset, y, a, s);
    }
    if (detail::polish_vertex(base, col.offset, y, q, opts.max_pivots, best_a, best_s, best_obj))
        fit.converged = true;
    fit.theta1 = best_a;
    fit.theta2 = best_s;
    return fit;
}

inline LocalFit local_linear_fit(const Dataset& ds, const WeightSet& w, const LossSpec& loss, double t,
                                 const KernelConfig& k, const FitOptions& opts = {}) {
    if (w.size() != ds.size()) throw DimensionError("weights do not match the dataset");
    return fit_local_linear(make_kernel_column(ds.t(), t, k.h), ds.y(), w.values, loss, opts);
}

struct CurveEstimate {
    Eigen::VectorXd grid;
    Eigen::VectorXd g;
    Eigen::VectorXd gprime;
    double h = 0.0;
    LossSpec loss;
    WeightSource weights_source = WeightSource::estimated;
    bool all_converged = true;
    int max_iterations = 0;

    std::size_t size() const { return static_cast<std::size_t>(grid.size()); }
};

/// Equispaced grid between the 5% and 95% sample quantiles of T.
inline Eigen::VectorXd default_grid(const Eigen::VectorXd& treatment, int points = 25) {
    if (points < 1) throw ConfigError("grid needs at least one point");
    std::vector<double> t(treatment.data(), treatment.data() + treatment.size());
    const double lo = empirical_quantile(t, 0.05);
    const double hi = empirical_quantile(t, 0.95);
    if (points == 1) return Eigen::VectorXd::Constant(1, 0.5 * (lo + hi));
    return Eigen::VectorXd::LinSpaced(points, lo, hi);
}

inline void validate_grid(const Eigen::VectorXd& grid) {
    if (grid.size() == 0) throw ConfigError("evaluation grid is empty");
    if (!grid.allFinite()) throw ConfigError("evaluation grid has non-finite points");
    for (Eigen::Index i = 1; i < grid.size(); ++i)
        if (!(grid(i) > grid(i - 1))) throw ConfigError("evaluation grid must be strictly increasing");
}

/// Precomputed kernel columns for a grid at one bandwidth.
inline std::vector<KernelColumn> kernel_columns(const Eigen::VectorXd& treatment, const Eigen::VectorXd& grid,
                                                double h) {
    std::vector<KernelColumn> cols;
    cols.reserve(static_cast<std::size_t>(grid.size()));
    for (Eigen::Index j = 0; j < grid.size(); ++j) cols.push_back(make_kernel_column(treatment, grid(j), h));
    return cols;
}

inline CurveEstimate fit_curve(const std::vector<KernelColumn>& cols, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& weights, const LossSpec& loss, const FitOptions& opts = {}) {
    CurveEstimate c;
    const auto G = static_cast<Eigen::Index>(cols.size());
    c.grid.resize(G);
    c.g.resize(G);
    c.gprime.resize(G);
    c.loss = loss;
    c.h = cols.empty() ? 0.0 : cols.front().h;
    for (Eigen::Index j = 0; j < G; ++j) {
        const KernelColumn& col = cols[static_cast<std::size_t>(j)];
        const LocalFit fit = fit_local_linear(col, y, weights, loss, opts);
        c.grid(j) = col.t;
        c.g(j) = fit.theta1;
        c.gprime(j) = fit.theta2;
        c.all_converged = c.all_converged && fit.converged;
        c.max_iterations = std::max(c.max_iterations, fit.iterations);
    }
    return c;
}

inline CurveEstimate estimate_curve(const Dataset& ds, const WeightSet& w, const LossSpec& loss,
                                    const Eigen::VectorXd& grid, const KernelConfig& k,
                                    const FitOptions& opts = {}) {
    validate_grid(grid);
    if (w.size() != ds.size()) throw DimensionError("weights do not match the dataset");
    CurveEstimate c = fit_curve(kernel_columns(ds.t(), grid, k.h), ds.y(), w.values, loss, opts);
    c.weights_source = w.source;
    return c;
}

/// tau(t1, t0) = g(t1) - g(t0); entry (i, j) holds tau(grid_i, grid_j).
struct GcteEstimate {
    Eigen::VectorXd grid;
    Eigen::MatrixXd tau;
};

inline GcteEstimate estimate_gcte(const CurveEstimate& curve) {
    GcteEstimate out;
    out.grid = curve.grid;
    const auto G = curve.g.size();
    out.tau.resize(G, G);
    for (Eigen::Index i = 0; i < G; ++i)
        for (Eigen::Index j = 0; j < G; ++j) out.tau(i, j) = curve.g(i) - curve.g(j);
    return out;
}

}  // namespace unidrf
