// Multiplier-bootstrap uniform confidence bands.
//
// Center curve: weighted local-linear fit with the estimated weights.
// Replicate b: the same fit with weights xi_i^(b) * pi^(b)_i, where pi^(b)
// are the bootstrap balancing weights built from the same multipliers.
// The band is center +- C_alpha * sigma(t) with sigma the bootstrap scale
// and C_alpha the (1 - alpha) order statistic of sup_t |dev_b(t) / sigma(t)|.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "unidrf/balancing_weights.hpp"
#include "unidrf/local_mreg.hpp"
#include "unidrf/parallel.hpp"
#include "unidrf/rng.hpp"
#include "unidrf/stats.hpp"

namespace unidrf {

enum class Target { g, gprime };
enum class ScaleMethod { bootstrap_sd, normalized_iqr };

inline const char* to_string(Target t) { return t == Target::g ? "g" : "gprime"; }
inline const char* to_string(ScaleMethod m) {
    return m == ScaleMethod::bootstrap_sd ? "bootstrap_sd" : "normalized_iqr";
}

struct BootstrapOptions {
    FitOptions fit;
    /// Replace every multiplier by 1. Replicates then reproduce the center.
    bool unit_multipliers = false;
    /// Fraction of replicates allowed to fail before the ensemble errors.
    double max_drop_fraction = 0.02;
    std::size_t threads = 1;
};

struct BootstrapEnsemble {
    std::size_t B = 0;  ///< requested replicates
    CurveEstimate center;
    std::vector<CurveEstimate> replicates;  ///< surviving replicates, in b order
    std::vector<std::size_t> dropped;       ///< replicate indices that failed
    std::uint64_t seed = 0;
};

/// Ensembles at several bandwidths sharing multipliers and bootstrap
/// weights. A replicate that fails at any bandwidth is dropped from all of
/// them, so the ensembles stay aligned replicate by replicate.
inline std::vector<BootstrapEnsemble> bootstrap_curves_multi(const Dataset& ds, const WeightModel& model,
                                                             const LossSpec& loss, const Eigen::VectorXd& grid,
                                                             std::span<const double> bandwidths, std::size_t B,
                                                             std::uint64_t seed, const BootstrapOptions& opts = {}) {
    if (B < 2) throw ConfigError("bootstrap needs B >= 2");
    validate_grid(grid);
    if (model.size() != ds.size()) throw DimensionError("weight model does not match the dataset");
    const std::size_t H = bandwidths.size();

    std::vector<std::vector<KernelColumn>> columns;
    std::vector<BootstrapEnsemble> out(H);
    for (std::size_t k = 0; k < H; ++k) {
        columns.push_back(kernel_columns(ds.t(), grid, bandwidths[k]));
        out[k].B = B;
        out[k].seed = seed;
        out[k].center = fit_curve(columns[k], ds.y(), model.center().values, loss, opts.fit);
        out[k].center.weights_source = model.center().source;
    }

    // Local data sufficiency is checked on the center fits; a replicate only
    // fails on a singular local design or non-convergence.
    FitOptions replicate_fit = opts.fit;
    replicate_fit.mass_floor_points = 0.0;

    // slots[b][k] is empty when replicate b failed.
    std::vector<std::vector<CurveEstimate>> slots(B);
    parallel_for(B, opts.threads, [&](std::size_t b) {
        MultiplierDraw draw = opts.unit_multipliers ? MultiplierDraw{Eigen::VectorXd::Ones(ds.t().size())}
                                                    : draw_multiplier(ds.size(), seed, b);
        const WeightSet wb = model.replicate(draw, b);
        const Eigen::VectorXd combined = draw.xi.cwiseProduct(wb.values);
        std::vector<CurveEstimate> curves;
        curves.reserve(H);
        try {
            for (std::size_t k = 0; k < H; ++k) {
                CurveEstimate c = fit_curve(columns[k], ds.y(), combined, loss, replicate_fit);
                if (!c.all_converged) return;
                c.weights_source = WeightSource::bootstrap;
                curves.push_back(std::move(c));
            }
        } catch (const NumericError&) {
            return;
        }
        slots[b] = std::move(curves);
    });

    std::vector<std::size_t> dropped;
    for (std::size_t b = 0; b < B; ++b)
        if (slots[b].empty()) dropped.push_back(b);
    if (static_cast<double>(dropped.size()) > opts.max_drop_fraction * static_cast<double>(B) ||
        B - dropped.size() < 2)
        throw NumericError(std::to_string(dropped.size()) + " of " + std::to_string(B) +
                           " bootstrap replicates failed (limit " +
                           std::to_string(opts.max_drop_fraction * 100.0) + "%)");
    for (std::size_t k = 0; k < H; ++k) {
        out[k].dropped = dropped;
        out[k].replicates.reserve(B - dropped.size());
        for (std::size_t b = 0; b < B; ++b)
            if (!slots[b].empty()) out[k].replicates.push_back(std::move(slots[b][k]));
    }
    return out;
}

inline BootstrapEnsemble bootstrap_curves(const Dataset& ds, const WeightModel& model, const LossSpec& loss,
                                          const Eigen::VectorXd& grid, const KernelConfig& k, std::size_t B,
                                          std::uint64_t seed, const BootstrapOptions& opts = {}) {
    const double h = k.h;
    return std::move(bootstrap_curves_multi(ds, model, loss, grid, std::span<const double>(&h, 1), B, seed, opts)
                         .front());
}

inline BootstrapEnsemble bootstrap_curves(const Dataset& ds, const SieveConfig& cfg, const LossSpec& loss,
                                          const Eigen::VectorXd& grid, const KernelConfig& k, std::size_t B,
                                          std::uint64_t seed, const BootstrapOptions& opts = {}) {
    return bootstrap_curves(ds, WeightModel::proposed(ds, cfg), loss, grid, k, B, seed, opts);
}

inline const Eigen::VectorXd& curve_values(const CurveEstimate& c, Target target) {
    return target == Target::g ? c.g : c.gprime;
}

/// Replicate-minus-center deviations, one row per surviving replicate.
inline Eigen::MatrixXd deviations(const BootstrapEnsemble& ens, Target target) {
    const Eigen::VectorXd& center = curve_values(ens.center, target);
    Eigen::MatrixXd dev(static_cast<Eigen::Index>(ens.replicates.size()), center.size());
    for (std::size_t b = 0; b < ens.replicates.size(); ++b)
        dev.row(static_cast<Eigen::Index>(b)) = (curve_values(ens.replicates[b], target) - center).transpose();
    return dev;
}

struct ScaleEstimate {
    Eigen::VectorXd sigma;
    ScaleMethod method = ScaleMethod::bootstrap_sd;
};

/// Column-wise sample SD (divisor B - 1).
inline ScaleEstimate scale_sd(const Eigen::MatrixXd& dev) {
    const auto B = dev.rows();
    if (B < 2) throw ConfigError("bootstrap SD needs at least 2 replicates");
    ScaleEstimate s;
    s.method = ScaleMethod::bootstrap_sd;
    s.sigma.resize(dev.cols());
    for (Eigen::Index j = 0; j < dev.cols(); ++j) {
        const double mean = dev.col(j).mean();
        s.sigma(j) = std::sqrt((dev.col(j).array() - mean).square().sum() / static_cast<double>(B - 1));
        if (!(s.sigma(j) > 0.0))
            throw NumericError("degenerate bootstrap scale (zero spread) at grid index " + std::to_string(j));
    }
    return s;
}

/// Column-wise (q75 - q25) / (z75 - z25).
inline ScaleEstimate scale_normalized_iqr(const Eigen::MatrixXd& dev) {
    if (dev.rows() < 4) throw ConfigError("normalized IQR needs at least 4 replicates");
    ScaleEstimate s;
    s.method = ScaleMethod::normalized_iqr;
    s.sigma.resize(dev.cols());
    for (Eigen::Index j = 0; j < dev.cols(); ++j) {
        std::vector<double> v(static_cast<std::size_t>(dev.rows()));
        for (Eigen::Index b = 0; b < dev.rows(); ++b) v[static_cast<std::size_t>(b)] = dev(b, j);
        s.sigma(j) = (empirical_quantile(v, 0.75) - empirical_quantile(v, 0.25)) / kNormalIqr;
        if (!(s.sigma(j) > 0.0))
            throw NumericError("degenerate bootstrap scale (zero IQR) at grid index " + std::to_string(j));
    }
    return s;
}

inline ScaleEstimate scale_from_deviations(const Eigen::MatrixXd& dev, ScaleMethod method) {
    return method == ScaleMethod::bootstrap_sd ? scale_sd(dev) : scale_normalized_iqr(dev);
}

inline ScaleEstimate scale_bootstrap_sd(const BootstrapEnsemble& ens, Target target) {
    return scale_sd(deviations(ens, target));
}

inline ScaleEstimate scale_iqr(const BootstrapEnsemble& ens, Target target) {
    return scale_normalized_iqr(deviations(ens, target));
}

/// M_b = max over columns of |dev(b, j) / sigma(j)|.
inline std::vector<double> sup_statistics(const Eigen::MatrixXd& dev, const Eigen::VectorXd& sigma) {
    if (sigma.size() != dev.cols()) throw DimensionError("scale does not match the grid");
    std::vector<double> m(static_cast<std::size_t>(dev.rows()));
    for (Eigen::Index b = 0; b < dev.rows(); ++b)
        m[static_cast<std::size_t>(b)] = (dev.row(b).transpose().array() / sigma.array()).abs().maxCoeff();
    return m;
}

inline void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
}

/// ceil((1 - alpha) B)-th order statistic of the sup statistics.
inline double critical_value(const Eigen::MatrixXd& dev, const Eigen::VectorXd& sigma, double alpha) {
    check_alpha(alpha);
    if ((sigma.array() <= 0.0).any()) throw ConfigError("scale must be positive");
    return upper_order_statistic(sup_statistics(dev, sigma), 1.0 - alpha);
}

inline double critical_value(const BootstrapEnsemble& ens, const ScaleEstimate& sigma, double alpha,
                             Target target = Target::g) {
    return critical_value(deviations(ens, target), sigma.sigma, alpha);
}

struct BandEstimate {
    Eigen::VectorXd grid;  ///< t, or t1 for pair bands
    Eigen::VectorXd grid0; ///< t0 for pair bands, empty otherwise
    Eigen::VectorXd center;
    Eigen::VectorXd sigma;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    double c_alpha = 0.0;
    double alpha = 0.05;
    std::size_t B = 0;
    ScaleMethod scale_method = ScaleMethod::bootstrap_sd;

    bool is_pair_band() const { return grid0.size() > 0; }
    double mean_width() const { return (upper - lower).mean(); }
};

inline BandEstimate build_band(const Eigen::VectorXd& grid, const Eigen::VectorXd& center,
                               const ScaleEstimate& sigma, double c_alpha, double alpha, std::size_t B = 0) {
    check_alpha(alpha);
    if (center.size() != grid.size() || sigma.sigma.size() != grid.size())
        throw DimensionError("band inputs are not aligned on the grid");
    if (c_alpha < 0.0) throw ConfigError("critical value must be nonnegative");
    BandEstimate band;
    band.grid = grid;
    band.center = center;
    band.sigma = sigma.sigma;
    band.c_alpha = c_alpha;
    band.alpha = alpha;
    band.B = B;
    band.scale_method = sigma.method;
    band.lower = center - c_alpha * sigma.sigma;
    band.upper = center + c_alpha * sigma.sigma;
    return band;
}

/// Full band pipeline for g or g' from an ensemble.
inline BandEstimate uniform_band(const BootstrapEnsemble& ens, Target target, double alpha,
                                 ScaleMethod method = ScaleMethod::bootstrap_sd) {
    const Eigen::MatrixXd dev = deviations(ens, target);
    const ScaleEstimate sigma = scale_from_deviations(dev, method);
    const double c = critical_value(dev, sigma.sigma, alpha);
    return build_band(ens.center.grid, curve_values(ens.center, target), sigma, c, alpha, ens.B);
}

/// Off-diagonal grid pairs (t1 = grid[i], t0 = grid[j]), i != j, row-major.
inline std::vector<std::pair<Eigen::Index, Eigen::Index>> all_pairs(Eigen::Index G) {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
    for (Eigen::Index i = 0; i < G; ++i)
        for (Eigen::Index j = 0; j < G; ++j)
            if (i != j) pairs.emplace_back(i, j);
    return pairs;
}

/// Band for tau(t1, t0) = g(t1) - g(t0) over the given pairs (default: all
/// off-diagonal pairs). Diagonal pairs have zero deviation and are rejected.
inline BandEstimate band_for_tau(const BootstrapEnsemble& ens, double alpha,
                                 ScaleMethod method = ScaleMethod::bootstrap_sd,
                                 std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs = {}) {
    const Eigen::Index G = ens.center.g.size();
    if (pairs.empty()) pairs = all_pairs(G);
    const Eigen::MatrixXd gdev = deviations(ens, Target::g);
    const auto P = static_cast<Eigen::Index>(pairs.size());
    Eigen::MatrixXd dev(gdev.rows(), P);
    Eigen::VectorXd t1(P), t0(P), center(P);
    for (Eigen::Index p = 0; p < P; ++p) {
        const auto [i, j] = pairs[static_cast<std::size_t>(p)];
        if (i == j) throw ConfigError("tau band excludes diagonal pairs (t, t)");
        if (i < 0 || j < 0 || i >= G || j >= G) throw DimensionError("tau pair index outside the grid");
        dev.col(p) = gdev.col(i) - gdev.col(j);
        t1(p) = ens.center.grid(i);
        t0(p) = ens.center.grid(j);
        center(p) = ens.center.g(i) - ens.center.g(j);
    }
    const ScaleEstimate sigma = scale_from_deviations(dev, method);
    const double c = critical_value(dev, sigma.sigma, alpha);
    BandEstimate band = build_band(t1, center, sigma, c, alpha, ens.B);
    band.grid0 = t0;
    return band;
}

struct NullTestResult {
    bool reject = false;
    std::vector<std::size_t> violations;  ///< band indices where the null leaves [lower, upper]
};

inline NullTestResult test_uniform_null(const BandEstimate& band, const Eigen::VectorXd& null_values) {
    if (null_values.size() != band.center.size())
        throw DimensionError("null values (" + std::to_string(null_values.size()) +
                             ") are not aligned with the band (" + std::to_string(band.center.size()) + ")");
    NullTestResult r;
    for (Eigen::Index j = 0; j < null_values.size(); ++j)
        if (null_values(j) < band.lower(j) || null_values(j) > band.upper(j))
            r.violations.push_back(static_cast<std::size_t>(j));
    r.reject = !r.violations.empty();
    return r;
}

}  // namespace unidrf
