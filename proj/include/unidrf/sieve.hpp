// Product power-series sieve u_K(t, x) = w_{k1}(t) (x) w_{k2}(x).

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "unidrf/types.hpp"

namespace unidrf {

struct SieveConfig {
    int k1 = 2;  ///< treatment polynomial degree
    int k2 = 1;  ///< per-covariate polynomial degree
    /// Min-max scale each covariate to [0, 1] before expansion.
    bool normalize_covariates = true;

    /// Basis dimension for `d` covariates: (k1 + 1) * (k2 * d + 1).
    std::size_t dimension(std::size_t d) const {
        return static_cast<std::size_t>(k1 + 1) * (static_cast<std::size_t>(k2) * d + 1);
    }
};

/// (1, v_1, ..., v_1^p, ..., v_r, ..., v_r^p).
inline Eigen::VectorXd power_features(std::span<const double> v, int p) {
    if (p < 0) throw ConfigError("power degree must be nonnegative");
    const auto r = static_cast<Eigen::Index>(v.size());
    Eigen::VectorXd out(p * r + 1);
    out(0) = 1.0;
    Eigen::Index k = 1;
    for (Eigen::Index j = 0; j < r; ++j) {
        double pw = 1.0;
        for (int e = 1; e <= p; ++e) {
            pw *= v[static_cast<std::size_t>(j)];
            out(k++) = pw;
        }
    }
    return out;
}

inline Eigen::VectorXd power_features(double v, int p) {
    return power_features(std::span<const double>(&v, 1), p);
}

/// Feature factors of the product basis. Keeping the two factors separate
/// lets mixed pairs (t_i, x_j) be formed without rebuilding anything.
struct Basis {
    SieveConfig config;
    Eigen::MatrixXd treatment;  ///< n x (k1 + 1), row i = w_{k1}(t_i)
    Eigen::MatrixXd covariate;  ///< n x (k2 d + 1), row j = w_{k2}(x_j) on the working scale
    Eigen::MatrixXd u;          ///< K x n, column i = u_K(t_i, x_i)
    Eigen::VectorXd x_min;      ///< covariate scaling used (zeros when raw)
    Eigen::VectorXd x_span;     ///< covariate scaling used (ones when raw)

    std::size_t n() const { return static_cast<std::size_t>(u.cols()); }
    std::size_t dim() const { return static_cast<std::size_t>(u.rows()); }

    /// u_K(t_i, x_j) via the Kronecker order (a, b) -> a * m + b.
    Eigen::VectorXd mixed(std::size_t i, std::size_t j) const {
        return kron(treatment.row(static_cast<Eigen::Index>(i)).transpose(),
                    covariate.row(static_cast<Eigen::Index>(j)).transpose());
    }

    static Eigen::VectorXd kron(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
        Eigen::VectorXd out(a.size() * b.size());
        for (Eigen::Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
        return out;
    }
};

inline Basis build_basis(const Dataset& ds, const SieveConfig& cfg) {
    if (cfg.k1 < 0 || cfg.k2 < 0) throw ConfigError("sieve degrees must be nonnegative");
    const std::size_t n = ds.size();
    const std::size_t d = ds.covariate_dim();
    const std::size_t K = cfg.dimension(d);
    if (K >= n)
        throw DimensionError("sieve dimension K=" + std::to_string(K) +
                             " must be smaller than the sample size n=" + std::to_string(n));

    Basis basis;
    basis.config = cfg;
    const auto dd = static_cast<Eigen::Index>(d);
    basis.x_min = Eigen::VectorXd::Zero(dd);
    basis.x_span = Eigen::VectorXd::Ones(dd);
    Eigen::MatrixXd xs = ds.x();
    if (cfg.normalize_covariates && cfg.k2 > 0) {
        for (Eigen::Index k = 0; k < dd; ++k) {
            const double lo = xs.col(k).minCoeff();
            const double hi = xs.col(k).maxCoeff();
            if (!(hi > lo))
                throw InputError("covariate " + std::to_string(k) +
                                 " is constant and cannot be min-max normalized");
            basis.x_min(k) = lo;
            basis.x_span(k) = hi - lo;
            xs.col(k) = (xs.col(k).array() - lo) / (hi - lo);
        }
    }

    const auto nn = static_cast<Eigen::Index>(n);
    const int m = cfg.k2 * static_cast<int>(d) + 1;
    basis.treatment.resize(nn, cfg.k1 + 1);
    basis.covariate.resize(nn, m);
    std::vector<double> row(d);
    for (Eigen::Index i = 0; i < nn; ++i) {
        basis.treatment.row(i) = power_features(ds.t()(i), cfg.k1).transpose();
        for (std::size_t k = 0; k < d; ++k) row[k] = xs(i, static_cast<Eigen::Index>(k));
        basis.covariate.row(i) = power_features(row, cfg.k2).transpose();
    }

    basis.u.resize(static_cast<Eigen::Index>(K), nn);
    for (Eigen::Index i = 0; i < nn; ++i)
        basis.u.col(i) = Basis::kron(basis.treatment.row(i).transpose(), basis.covariate.row(i).transpose());
    if (!basis.u.allFinite()) throw InputError("sieve basis has non-finite entries");
    return basis;
}

struct BasisDiagnostics {
    Eigen::VectorXd eigenvalues;  ///< ascending eigenvalues of (1/n) U U^T
    double min_eigenvalue = 0.0;
    double max_eigenvalue = 0.0;
    double condition_number = 0.0;  ///< +inf when the Gram matrix is singular
    bool ill_conditioned = false;
};

inline BasisDiagnostics diagnose_basis(const Basis& basis, double threshold = 1e10) {
    const double n = static_cast<double>(basis.n());
    const Eigen::MatrixXd gram = basis.u * basis.u.transpose() / n;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
    BasisDiagnostics out;
    out.eigenvalues = es.eigenvalues();
    out.max_eigenvalue = out.eigenvalues.maxCoeff();
    // Roundoff can push a zero eigenvalue slightly negative.
    const double tiny = 1e-14 * std::max(1.0, out.max_eigenvalue);
    out.min_eigenvalue = out.eigenvalues.minCoeff();
    if (std::abs(out.min_eigenvalue) < tiny) out.min_eigenvalue = 0.0;
    out.condition_number = out.min_eigenvalue > 0.0 ? out.max_eigenvalue / out.min_eigenvalue
                                                    : std::numeric_limits<double>::infinity();
    out.ill_conditioned = !(out.condition_number <= threshold);
    return out;
}

}  // namespace unidrf
