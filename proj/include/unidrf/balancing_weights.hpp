// Minimum-variance balancing weights.
//
// The weights solve
//
//     min  sum_i (pi_i - 1)^2 / 2
//     s.t. (1/N) sum_i pi_i u_K(T_i, X_i) = b,
//
// where b averages the sieve over all mixed pairs (T_i, X_j), i != j. The
// dual gives pi_i = 1 - gamma' u_K(T_i, X_i) with gamma = G^{-1}(ubar - b),
// G the sample Gram matrix and ubar the sample mean of the sieve. The
// multiplier-bootstrap version replaces G and ubar by their xi-weighted
// counterparts and keeps b fixed.

#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "unidrf/rng.hpp"
#include "unidrf/sieve.hpp"
#include "unidrf/types.hpp"

namespace unidrf {

/// Mixed-pair sieve average b.
struct MomentTarget {
    Eigen::VectorXd b;
};

enum class WeightSource { estimated, bootstrap, naive, oracle };

inline const char* to_string(WeightSource s) {
    switch (s) {
        case WeightSource::estimated: return "estimated";
        case WeightSource::bootstrap: return "bootstrap";
        case WeightSource::naive: return "naive";
        case WeightSource::oracle: return "oracle";
    }
    return "unknown";
}

struct WeightSet {
    Eigen::VectorXd values;  ///< pi_i per observation
    Eigen::VectorXd gamma;   ///< dual coefficients, pi = 1 - gamma' u
    WeightSource source = WeightSource::estimated;
    std::size_t replicate = 0;          ///< bootstrap index when source == bootstrap
    bool degraded_conditioning = false; ///< ridge fallback was applied

    std::size_t size() const { return static_cast<std::size_t>(values.size()); }
};

inline WeightSet naive_weights(std::size_t n) {
    WeightSet w;
    w.values = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
    w.source = WeightSource::naive;
    return w;
}

/// O(nK) via the Kronecker factorization:
/// b = [sum_i w(T_i)] (x) [sum_j w(X_j)] - sum_i w(T_i) (x) w(X_i), over N(N-1).
inline MomentTarget target_moments(const Basis& basis) {
    const double n = static_cast<double>(basis.n());
    const Eigen::VectorXd ts = basis.treatment.colwise().sum().transpose();
    const Eigen::VectorXd xs = basis.covariate.colwise().sum().transpose();
    MomentTarget m;
    m.b = (Basis::kron(ts, xs) - basis.u.rowwise().sum()) / (n * (n - 1.0));
    return m;
}

inline MomentTarget target_moments(const Dataset& ds, const SieveConfig& cfg) {
    return target_moments(build_basis(ds, cfg));
}

namespace detail {

struct GramSolve {
    Eigen::VectorXd solution;
    bool ridged = false;
};

// Solves G x = r for symmetric G. Falls back to G + eps I with
// eps = 1e-10 trace(G) / K when G is numerically singular.
inline GramSolve solve_gram(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs) {
    constexpr double kMinRcond = 1e-14;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > kMinRcond)
        return {ldlt.solve(rhs), false};

    const auto K = gram.rows();
    const double eps = 1e-10 * gram.trace() / static_cast<double>(K);
    const Eigen::MatrixXd ridged = gram + eps * Eigen::MatrixXd::Identity(K, K);
    Eigen::LDLT<Eigen::MatrixXd> ldlt2(ridged);
    if (!(eps > 0.0) || ldlt2.info() != Eigen::Success || !ldlt2.isPositive() || !(ldlt2.rcond() > 0.0))
        throw NumericError("sieve Gram matrix is singular even after ridge regularization");
    return {ldlt2.solve(rhs), true};
}

}  // namespace detail

inline WeightSet min_variance_weights(const Basis& basis, const MomentTarget& target) {
    const double n = static_cast<double>(basis.n());
    const Eigen::MatrixXd gram = basis.u * basis.u.transpose() / n;
    const Eigen::VectorXd ubar = basis.u.rowwise().sum() / n;
    auto solved = detail::solve_gram(gram, ubar - target.b);
    WeightSet w;
    w.gamma = std::move(solved.solution);
    w.values = Eigen::VectorXd::Ones(basis.u.cols()) - basis.u.transpose() * w.gamma;
    w.source = WeightSource::estimated;
    w.degraded_conditioning = solved.ridged;
    return w;
}

inline WeightSet min_variance_weights(const Basis& basis) {
    return min_variance_weights(basis, target_moments(basis));
}

inline WeightSet min_variance_weights(const Dataset& ds, const SieveConfig& cfg) {
    return min_variance_weights(build_basis(ds, cfg));
}

inline WeightSet bootstrap_weights(const Basis& basis, const MomentTarget& target,
                                   const MultiplierDraw& draw, std::size_t replicate = 0) {
    const auto n = basis.u.cols();
    if (draw.xi.size() != n) throw DimensionError("multiplier length does not match sample size");
    const double nn = static_cast<double>(n);
    const Eigen::MatrixXd uxi = basis.u * draw.xi.asDiagonal();
    const Eigen::MatrixXd gram = uxi * basis.u.transpose() / nn;
    const Eigen::VectorXd ubar = uxi.rowwise().sum() / nn;
    auto solved = detail::solve_gram(gram, ubar - target.b);
    WeightSet w;
    w.gamma = std::move(solved.solution);
    w.values = Eigen::VectorXd::Ones(n) - basis.u.transpose() * w.gamma;
    w.source = WeightSource::bootstrap;
    w.replicate = replicate;
    w.degraded_conditioning = solved.ridged;
    return w;
}

inline WeightSet bootstrap_weights(const Dataset& ds, const SieveConfig& cfg, const MultiplierDraw& draw) {
    const Basis basis = build_basis(ds, cfg);
    return bootstrap_weights(basis, target_moments(basis), draw);
}

/// Test oracle: solves the primal problem through its (n + K) x (n + K) KKT
/// system
///
///     [ I      A' ] [pi    ]   [ 1 ]
///     [ A      0  ] [lambda] = [ b ],     A = U / N,
///
/// without touching the closed form.
inline WeightSet qp_oracle_weights(const Basis& basis, const MomentTarget& target) {
    const auto n = basis.u.cols();
    const auto K = basis.u.rows();
    const Eigen::MatrixXd A = basis.u / static_cast<double>(n);
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + K, n + K);
    kkt.topLeftCorner(n, n).setIdentity();
    kkt.topRightCorner(n, K) = A.transpose();
    kkt.bottomLeftCorner(K, n) = A;
    Eigen::VectorXd rhs(n + K);
    rhs.head(n).setOnes();
    rhs.tail(K) = target.b;

    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (lu.rank() < n + K) throw NumericError("KKT system is rank deficient");
    const Eigen::VectorXd sol = lu.solve(rhs);
    WeightSet w;
    w.values = sol.head(n);
    // Stationarity pi - 1 + A' lambda = 0 gives gamma = lambda / N.
    w.gamma = sol.tail(K) / static_cast<double>(n);
    w.source = WeightSource::oracle;
    return w;
}

inline WeightSet qp_oracle_weights(const Dataset& ds, const SieveConfig& cfg) {
    const Basis basis = build_basis(ds, cfg);
    return qp_oracle_weights(basis, target_moments(basis));
}

/// Everything needed to produce the center weights and any bootstrap
/// replicate's weights for one dataset. The naive model uses pi = 1
/// throughout.
class WeightModel {
public:
    static WeightModel proposed(const Dataset& ds, const SieveConfig& cfg) {
        WeightModel m;
        m.basis_ = build_basis(ds, cfg);
        m.target_ = target_moments(m.basis_);
        m.center_ = min_variance_weights(m.basis_, m.target_);
        m.naive_ = false;
        return m;
    }

    static WeightModel naive(std::size_t n) {
        WeightModel m;
        m.center_ = naive_weights(n);
        m.naive_ = true;
        return m;
    }

    bool is_naive() const { return naive_; }
    const WeightSet& center() const { return center_; }
    const Basis& basis() const { return basis_; }
    const MomentTarget& target() const { return target_; }
    std::size_t size() const { return center_.size(); }

    WeightSet replicate(const MultiplierDraw& draw, std::size_t b) const {
        if (naive_) {
            WeightSet w = naive_weights(center_.size());
            w.replicate = b;
            return w;
        }
        return bootstrap_weights(basis_, target_, draw, b);
    }

private:
    Basis basis_;
    MomentTarget target_;
    WeightSet center_;
    bool naive_ = true;
};

struct WeightSummary {
    double mean = 0.0, min = 0.0, max = 0.0, var = 0.0;
    bool condition_flag = false;
    bool has_negative = false;
};

inline WeightSummary summarize(const WeightSet& w) {
    WeightSummary s;
    const double n = static_cast<double>(w.values.size());
    s.mean = w.values.mean();
    s.min = w.values.minCoeff();
    s.max = w.values.maxCoeff();
    s.var = n > 1 ? (w.values.array() - s.mean).square().sum() / (n - 1.0) : 0.0;
    s.condition_flag = w.degraded_conditioning;
    s.has_negative = s.min < 0.0;
    return s;
}

}  // namespace unidrf
