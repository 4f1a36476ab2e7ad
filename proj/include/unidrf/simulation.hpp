// Monte Carlo harness: the three synthetic designs, Monte Carlo ground
// truth, and coverage / rejection / bias-variance experiments comparing the
// balancing-weight estimator with the unweighted (naive) one.
//
// Design (U_w, U_t, U_y standard normal, independent):
//   Z ~ Uniform(-0.65, 0.65), W = 0.5 Z + 0.5 U_w, T = 0.1 W + 0.1 Z + 0.4 U_t
//   DGP0:   Y*(t) = exp(0.2 Z - 0.5 W) + 0.1 U_y
//   DGP1L:  Y*(t) = 0.6 t + 0.7 Z - 2 W + 0.1 U_y
//   DGP1NL: Y*(t) = 0.75 exp(t) + 0.6 Z^3 - 3 W + 0.1 U_y

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "unidrf/balancing_weights.hpp"
#include "unidrf/local_mreg.hpp"
#include "unidrf/parallel.hpp"
#include "unidrf/rng.hpp"
#include "unidrf/stats.hpp"
#include "unidrf/tuning.hpp"
#include "unidrf/uniform_bands.hpp"

namespace unidrf {

enum class DgpKind { dgp0, dgp1l, dgp1nl };

inline const char* to_string(DgpKind k) {
    switch (k) {
        case DgpKind::dgp0: return "DGP0";
        case DgpKind::dgp1l: return "DGP1L";
        case DgpKind::dgp1nl: return "DGP1NL";
    }
    return "?";
}

inline DgpKind parse_dgp(const std::string& s) {
    std::string u = s;
    std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return std::toupper(c); });
    if (u == "DGP0") return DgpKind::dgp0;
    if (u == "DGP1L") return DgpKind::dgp1l;
    if (u == "DGP1NL") return DgpKind::dgp1nl;
    throw ConfigError("unknown design '" + s + "' (expected DGP0, DGP1L or DGP1NL)");
}

struct DgpSpec {
    DgpKind kind = DgpKind::dgp0;
    std::size_t n = 400;
    std::uint64_t seed = 1;
};

/// Covariates and noise of one unit; everything except the treatment dose.
struct DgpNoise {
    double z = 0.0, uw = 0.0, ut = 0.0, uy = 0.0;
};

inline double dgp_w(const DgpNoise& e) { return 0.5 * e.z + 0.5 * e.uw; }
inline double dgp_t(const DgpNoise& e) { return 0.1 * dgp_w(e) + 0.1 * e.z + 0.4 * e.ut; }

/// Potential outcome Y*(t) of a unit.
inline double dgp_potential(DgpKind kind, double t, const DgpNoise& e) {
    const double w = dgp_w(e);
    switch (kind) {
        case DgpKind::dgp0: return std::exp(0.2 * e.z - 0.5 * w) + 0.1 * e.uy;
        case DgpKind::dgp1l: return 0.6 * t + 0.7 * e.z - 2.0 * w + 0.1 * e.uy;
        case DgpKind::dgp1nl: return 0.75 * std::exp(t) + 0.6 * e.z * e.z * e.z - 3.0 * w + 0.1 * e.uy;
    }
    return 0.0;
}

inline DgpNoise draw_noise(Engine& eng) {
    std::uniform_real_distribution<double> unif(-0.65, 0.65);
    std::normal_distribution<double> norm(0.0, 1.0);
    DgpNoise e;
    e.z = unif(eng);
    e.uw = norm(eng);
    e.ut = norm(eng);
    e.uy = norm(eng);
    return e;
}

/// Observed data from explicit unit noise (Y = Y*(T)).
inline Dataset dataset_from_noise(DgpKind kind, const std::vector<DgpNoise>& units) {
    const auto n = static_cast<Eigen::Index>(units.size());
    Eigen::VectorXd t(n), y(n);
    Eigen::MatrixXd x(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        const DgpNoise& e = units[static_cast<std::size_t>(i)];
        t(i) = dgp_t(e);
        x(i, 0) = e.z;
        x(i, 1) = dgp_w(e);
        y(i) = dgp_potential(kind, t(i), e);
    }
    return Dataset(std::move(t), std::move(x), std::move(y));
}

inline Dataset sample_dgp(const DgpSpec& spec) {
    if (spec.n < 50) throw ConfigError("simulation designs need n >= 50");
    Engine eng = make_engine(spec.seed, {stream::data});
    std::vector<DgpNoise> units(spec.n);
    for (auto& u : units) u = draw_noise(eng);
    return dataset_from_noise(spec.kind, units);
}

struct TruthCurve {
    Eigen::VectorXd grid;
    Eigen::VectorXd g;
    Eigen::VectorXd gprime;
    Eigen::VectorXd g_se;  ///< Monte Carlo standard error of g
    LossSpec loss;
    std::size_t oracle_draws = 0;
};

inline double analytic_gprime(DgpKind kind, double t) {
    switch (kind) {
        case DgpKind::dgp0: return 0.0;
        case DgpKind::dgp1l: return 0.6;
        case DgpKind::dgp1nl: return 0.75 * std::exp(t);
    }
    return 0.0;
}

/// Monte Carlo oracle: the same draws of (Z, W, U_y) are reused at every
/// grid point, so t enters only through Y*(t).
inline TruthCurve true_curve(DgpKind kind, const LossSpec& loss, const Eigen::VectorXd& grid,
                             std::size_t oracle_draws = 200000, std::uint64_t oracle_seed = 20240601) {
    if (oracle_draws < 100000) throw ConfigError("oracle needs at least 1e5 draws");
    Engine eng = make_engine(oracle_seed, {stream::oracle});
    std::vector<DgpNoise> units(oracle_draws);
    for (auto& u : units) u = draw_noise(eng);

    TruthCurve tc;
    tc.grid = grid;
    tc.loss = loss;
    tc.oracle_draws = oracle_draws;
    const auto G = grid.size();
    tc.g.resize(G);
    tc.gprime.resize(G);
    tc.g_se.resize(G);
    std::vector<double> ys(oracle_draws);
    const double M = static_cast<double>(oracle_draws);
    for (Eigen::Index j = 0; j < G; ++j) {
        for (std::size_t i = 0; i < oracle_draws; ++i) ys[i] = dgp_potential(kind, grid(j), units[i]);
        if (!loss.is_quantile()) {
            double mean = 0.0;
            for (double v : ys) mean += v;
            mean /= M;
            double ss = 0.0;
            for (double v : ys) ss += (v - mean) * (v - mean);
            tc.g(j) = mean;
            tc.g_se(j) = std::sqrt(ss / (M - 1.0) / M);
        } else {
            tc.g(j) = empirical_quantile(ys, loss.q);
            // Binomial-order-statistic SE: half-width of the q +- sqrt(q(1-q)/M) quantile interval.
            const double dq = std::sqrt(loss.q * (1.0 - loss.q) / M);
            tc.g_se(j) = 0.5 * (empirical_quantile(ys, std::min(loss.q + dq, 1.0)) -
                                empirical_quantile(ys, std::max(loss.q - dq, 0.0)));
        }
        tc.gprime(j) = analytic_gprime(kind, grid(j));
    }
    return tc;
}

// ---------------------------------------------------------------------------
// Experiments

enum class BandMethod { undersmooth, lepski };

inline const char* to_string(BandMethod m) { return m == BandMethod::undersmooth ? "undersmooth" : "lepski"; }

struct ExperimentCell {
    DgpKind dgp = DgpKind::dgp0;
    std::size_t n = 400;
    LossSpec loss;
};

struct ExperimentConfig {
    std::vector<ExperimentCell> cells;
    std::size_t reps = 200;
    std::size_t B = 200;
    std::uint64_t seed = 1;
    BandMethod band_method = BandMethod::undersmooth;
    std::vector<double> levels{0.99, 0.95, 0.90};
    SieveConfig sieve;  ///< (k1, k2) = (2, 1)
    int grid_points = 25;
    std::size_t folds = 5;
    int cv_bandwidth_count = 16;
    UndersmoothConfig undersmooth{20, 18};
    std::size_t oracle_draws = 200000;
    std::uint64_t oracle_seed = 20240601;
    std::size_t threads = 1;
    double max_failure_fraction = 0.05;
    bool run_naive = true;
    FitOptions fit;
    /// Progress callback (cell index, replications done); optional.
    std::function<void(std::size_t, std::size_t)> progress;
};

struct ReportRow {
    std::string dgp;
    std::size_t n = 0;
    std::string loss;
    std::string method;       ///< proposed | naive
    std::string band_method;  ///< undersmooth | lepski
    std::string measure;      ///< coverage | rejection | bias_variance_g | bias_variance_gprime
    double level = 0.0;       ///< nominal confidence level (0 for bias/variance rows)
    double rate = 0.0;        ///< coverage or rejection rate
    double mean_width = 0.0;
    double sq_bias_x1000 = 0.0;
    double variance_x1000 = 0.0;
    std::size_t replications = 0;  ///< successful replications
    std::size_t failures = 0;
    std::uint64_t seed = 0;
};

struct ExperimentReport {
    std::vector<ReportRow> rows;
    std::vector<std::string> log;

    const ReportRow* find(const std::string& dgp, std::size_t n, const std::string& method,
                          const std::string& measure, double level = 0.0) const {
        for (const auto& r : rows)
            if (r.dgp == dgp && r.n == n && r.method == method && r.measure == measure &&
                std::abs(r.level - level) < 1e-9)
                return &r;
        return nullptr;
    }
};

namespace detail {

struct Estimator {
    bool naive = false;
};

// Per-replication outcome for one estimator.
struct RepOutcome {
    bool ok = false;
    std::string error;
    std::vector<bool> covered;       // per level
    std::vector<double> width;       // per level
    Eigen::VectorXd g, gprime;       // point estimates for bias/variance
};

inline double pilot_bandwidth(const Dataset& ds, const WeightModel& model, const LossSpec& loss,
                              const Eigen::VectorXd& grid, const ExperimentConfig& cfg, std::uint64_t seed) {
    const Folds folds = make_folds(ds.size(), cfg.folds, seed);
    const std::vector<double> hs = default_cv_bandwidths(ds.t(), cfg.cv_bandwidth_count);
    CvOptions cv;
    cv.fit = cfg.fit;
    cv.eval_range = std::make_pair(grid(0), grid(grid.size() - 1));
    const std::size_t K = model.is_naive() ? 0 : model.basis().dim();
    double best_h = 0.0, best = std::numeric_limits<double>::infinity();
    for (double h : hs) {
        try {
            const double s = cv_score(ds, model.center().values, K, folds, h, loss, cv);
            if (s < best) {
                best = s;
                best_h = h;
            }
        } catch (const NumericError&) {
        }
    }
    if (!(best_h > 0.0)) throw NumericError("cross-validation failed for every bandwidth");
    return best_h;
}

/// Band(s) at every level for one estimator on one dataset.
inline RepOutcome run_band(const Dataset& ds, const WeightModel& model, const LossSpec& loss,
                           const Eigen::VectorXd& grid, Target target, const ExperimentConfig& cfg,
                           std::uint64_t rep_seed, const std::function<bool(const BandEstimate&)>& covered) {
    RepOutcome out;
    try {
        const double h_tilde = pilot_bandwidth(ds, model, loss, grid, cfg, derive_seed(rep_seed, {stream::folds}));
        const std::uint64_t boot_seed = derive_seed(rep_seed, {stream::bootstrap});
        BootstrapOptions bo;
        bo.fit = cfg.fit;
        if (cfg.band_method == BandMethod::undersmooth) {
            const UndersmoothResult us =
                undersmooth_bandwidth(ds, model.center().values, loss, grid, h_tilde, target, cfg.undersmooth, cfg.fit);
            const BootstrapEnsemble ens = bootstrap_curves(ds, model, loss, grid, KernelConfig{us.h_u}, cfg.B, boot_seed, bo);
            const Eigen::MatrixXd dev = deviations(ens, target);
            const ScaleEstimate sigma = scale_sd(dev);
            for (double level : cfg.levels) {
                const double alpha = 1.0 - level;
                const BandEstimate band =
                    build_band(grid, curve_values(ens.center, target), sigma, critical_value(dev, sigma.sigma, alpha), alpha, cfg.B);
                out.covered.push_back(covered(band));
                out.width.push_back(band.mean_width());
            }
            out.g = ens.center.g;
            out.gprime = ens.center.gprime;
        } else {
            const LepskiConfig lc = lepski_candidates(ds.size(), h_tilde, target);
            const LepskiInputs in = lepski_inputs(ds, model, loss, grid, lc, cfg.B, boot_seed, target, bo);
            const LepskiSelection sel = lepski_select(in, lc);
            for (double level : cfg.levels) {
                const LepskiBand lb = lepski_band(in, lc, 1.0 - level, &sel);
                out.covered.push_back(covered(lb.band));
                out.width.push_back(lb.band.mean_width());
            }
            out.g = in.centers[sel.index];
        }
        out.ok = true;
    } catch (const Error& e) {
        out.ok = false;
        out.error = e.what();
    }
    return out;
}

/// Point estimates only (no bootstrap) for the bias/variance table.
inline RepOutcome run_point(const Dataset& ds, const WeightModel& model, const LossSpec& loss,
                            const Eigen::VectorXd& grid, const ExperimentConfig& cfg, std::uint64_t rep_seed) {
    RepOutcome out;
    try {
        const double h_tilde = pilot_bandwidth(ds, model, loss, grid, cfg, derive_seed(rep_seed, {stream::folds}));
        for (Target target : {Target::g, Target::gprime}) {
            double h = 0.0;
            if (cfg.band_method == BandMethod::undersmooth) {
                h = undersmooth_bandwidth(ds, model.center().values, loss, grid, h_tilde, target, cfg.undersmooth,
                                          cfg.fit)
                        .h_u;
                const CurveEstimate c = fit_curve(kernel_columns(ds.t(), grid, h), ds.y(), model.center().values, loss, cfg.fit);
                (target == Target::g ? out.g : out.gprime) = curve_values(c, target);
            } else {
                BootstrapOptions bo;
                bo.fit = cfg.fit;
                const LepskiConfig lc = lepski_candidates(ds.size(), h_tilde, target);
                const LepskiInputs in =
                    lepski_inputs(ds, model, loss, grid, lc, cfg.B, derive_seed(rep_seed, {stream::bootstrap}), target, bo);
                const LepskiSelection sel = lepski_select(in, lc);
                (target == Target::g ? out.g : out.gprime) = in.centers[sel.index];
            }
        }
        out.ok = true;
    } catch (const Error& e) {
        out.ok = false;
        out.error = e.what();
    }
    return out;
}

enum class Measure { coverage, rejection, bias_variance };

inline ExperimentReport run_experiment(const ExperimentConfig& cfg, Measure measure) {
    if (cfg.reps < 1) throw ConfigError("experiments need reps >= 1");
    if (cfg.cells.empty()) throw ConfigError("experiment has no cells");
    ExperimentReport report;
    const std::vector<bool> methods = cfg.run_naive ? std::vector<bool>{false, true} : std::vector<bool>{false};

    for (std::size_t ci = 0; ci < cfg.cells.size(); ++ci) {
        const ExperimentCell& cell = cfg.cells[ci];
        // Fixed evaluation grid per cell: 5%-95% quantiles of T from a large
        // reference sample, shared by every replication and the truth.
        const Dataset ref = sample_dgp({cell.dgp, 200000, derive_seed(cfg.seed, {stream::oracle, ci})});
        const Eigen::VectorXd grid = default_grid(ref.t(), cfg.grid_points);
        const TruthCurve truth = true_curve(cell.dgp, cell.loss, grid, cfg.oracle_draws, cfg.oracle_seed);

        // outcomes[method][rep]
        std::vector<std::vector<RepOutcome>> outcomes(methods.size(), std::vector<RepOutcome>(cfg.reps));
        std::atomic<std::size_t> done{0};
        parallel_for(cfg.reps, cfg.threads, [&](std::size_t r) {
            const std::uint64_t rep_seed = derive_seed(cfg.seed, {ci, r});
            const Dataset ds = sample_dgp({cell.dgp, cell.n, rep_seed});
            for (std::size_t m = 0; m < methods.size(); ++m) {
                std::optional<WeightModel> model;
                try {
                    model = methods[m] ? WeightModel::naive(ds.size()) : WeightModel::proposed(ds, cfg.sieve);
                } catch (const Error& e) {
                    outcomes[m][r].error = e.what();
                    continue;
                }
                switch (measure) {
                    case Measure::coverage:
                        outcomes[m][r] = run_band(ds, *model, cell.loss, grid, Target::g, cfg, rep_seed,
                                                  [&](const BandEstimate& b) {
                                                      return test_uniform_null(b, truth.g).violations.empty();
                                                  });
                        break;
                    case Measure::rejection:
                        outcomes[m][r] = run_band(ds, *model, cell.loss, grid, Target::gprime, cfg, rep_seed,
                                                  [&](const BandEstimate& b) {
                                                      return test_uniform_null(b, Eigen::VectorXd::Zero(grid.size())).reject;
                                                  });
                        break;
                    case Measure::bias_variance:
                        outcomes[m][r] = run_point(ds, *model, cell.loss, grid, cfg, rep_seed);
                        break;
                }
            }
            const std::size_t k = ++done;
            if (cfg.progress) cfg.progress(ci, k);
        });

        for (std::size_t m = 0; m < methods.size(); ++m) {
            const auto& outs = outcomes[m];
            std::size_t failures = 0;
            for (std::size_t r = 0; r < outs.size(); ++r)
                if (!outs[r].ok) {
                    ++failures;
                    report.log.push_back(std::string(to_string(cell.dgp)) + " n=" + std::to_string(cell.n) +
                                         (methods[m] ? " naive" : " proposed") + " rep " + std::to_string(r) +
                                         " failed: " + outs[r].error);
                }
            if (static_cast<double>(failures) > cfg.max_failure_fraction * static_cast<double>(cfg.reps))
                throw NumericError(std::string("cell ") + to_string(cell.dgp) + " n=" + std::to_string(cell.n) +
                                   ": " + std::to_string(failures) + " of " + std::to_string(cfg.reps) +
                                   " replications failed");
            const std::size_t ok = cfg.reps - failures;
            if (ok == 0) throw NumericError("no successful replication: " + outs.front().error);

            ReportRow base;
            base.dgp = to_string(cell.dgp);
            base.n = cell.n;
            base.loss = cell.loss.is_quantile() ? "q=" + std::to_string(cell.loss.q).substr(0, 4) : "average";
            base.method = methods[m] ? "naive" : "proposed";
            base.band_method = to_string(cfg.band_method);
            base.replications = ok;
            base.failures = failures;
            base.seed = cfg.seed;

            if (measure == Measure::bias_variance) {
                for (Target target : {Target::g, Target::gprime}) {
                    const Eigen::VectorXd& truth_v = target == Target::g ? truth.g : truth.gprime;
                    const auto G = grid.size();
                    Eigen::VectorXd mean = Eigen::VectorXd::Zero(G), sq = Eigen::VectorXd::Zero(G);
                    for (const auto& o : outs)
                        if (o.ok) mean += target == Target::g ? o.g : o.gprime;
                    mean /= static_cast<double>(ok);
                    for (const auto& o : outs)
                        if (o.ok) sq += ((target == Target::g ? o.g : o.gprime) - mean).array().square().matrix();
                    const double denom = ok > 1 ? static_cast<double>(ok - 1) : 1.0;
                    ReportRow row = base;
                    row.measure = target == Target::g ? "bias_variance_g" : "bias_variance_gprime";
                    row.sq_bias_x1000 = 1000.0 * (mean - truth_v).array().square().mean();
                    row.variance_x1000 = 1000.0 * (sq / denom).mean();
                    report.rows.push_back(row);
                }
                continue;
            }
            for (std::size_t li = 0; li < cfg.levels.size(); ++li) {
                ReportRow row = base;
                row.measure = measure == Measure::coverage ? "coverage" : "rejection";
                row.level = cfg.levels[li];
                double hits = 0.0, width = 0.0;
                for (const auto& o : outs)
                    if (o.ok) {
                        hits += o.covered[li] ? 1.0 : 0.0;
                        width += o.width[li];
                    }
                row.rate = hits / static_cast<double>(ok);
                row.mean_width = width / static_cast<double>(ok);
                report.rows.push_back(row);
            }
        }
    }
    return report;
}

}  // namespace detail

/// Fraction of replications whose band contains the true g at every grid point.
inline ExperimentReport run_coverage_experiment(const ExperimentConfig& cfg) {
    return detail::run_experiment(cfg, detail::Measure::coverage);
}

/// Fraction of replications whose g' band excludes zero somewhere.
inline ExperimentReport run_rejection_experiment(const ExperimentConfig& cfg) {
    return detail::run_experiment(cfg, detail::Measure::rejection);
}

/// 1000 x grid-averaged squared bias and variance of g and g'.
inline ExperimentReport bias_variance_table(const ExperimentConfig& cfg) {
    return detail::run_experiment(cfg, detail::Measure::bias_variance);
}

}  // namespace unidrf
