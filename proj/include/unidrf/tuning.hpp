// Data-driven tuning: adjusted F-fold cross-validation for the pilot
// parameters, the turning-point undersmoothing bandwidth, and the
// Lepski-type bandwidth with its bias-inflated band.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "unidrf/balancing_weights.hpp"
#include "unidrf/local_mreg.hpp"
#include "unidrf/rng.hpp"
#include "unidrf/stats.hpp"
#include "unidrf/uniform_bands.hpp"

namespace unidrf {

// ---------------------------------------------------------------------------
// Cross-validation

using Folds = std::vector<std::vector<std::size_t>>;

/// Seeded uniform shuffle, then a contiguous split into F parts whose sizes
/// differ by at most one.
inline Folds make_folds(std::size_t n, std::size_t F, std::uint64_t seed) {
    if (F < 2) throw ConfigError("cross-validation needs at least 2 folds");
    if (F > n) throw ConfigError("more folds than observations");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Engine eng = make_engine(seed, {stream::folds});
    std::shuffle(idx.begin(), idx.end(), eng);
    Folds folds(F);
    std::size_t pos = 0;
    for (std::size_t j = 0; j < F; ++j) {
        const std::size_t len = n / F + (j < n % F ? 1 : 0);
        folds[j].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                        idx.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    }
    return folds;
}

struct CvOptions {
    FitOptions fit;
    /// Only held-out points with T inside [lo, hi] enter the criterion. By
    /// default the range of the evaluation grid; extreme treatment values
    /// have too little neighbouring data for small bandwidths.
    std::optional<std::pair<double, double>> eval_range;
};

/// Adjusted F-fold criterion
///   sum_j (1/|S_j|) sum_{k in S_j} pi_k L(Y_k - g^{(-j)}(T_k)) / (1 - K/N)^2,
/// with pi fitted on the full sample and g^{(-j)} fitted without fold j.
/// `sieve_dim` is K (0 for the naive estimator, which has no sieve).
inline double cv_score(const Dataset& ds, const Eigen::VectorXd& weights, std::size_t sieve_dim, const Folds& folds,
                       double h, const LossSpec& loss, const CvOptions& opts = {}) {
    const std::size_t n = ds.size();
    if (sieve_dim >= n) throw DimensionError("sieve dimension must be smaller than the sample size");
    if (!(h > 0.0)) throw ConfigError("bandwidth must be positive");
    std::vector<char> in_fold(n, 0);
    double total = 0.0;
    for (const auto& fold : folds) {
        std::fill(in_fold.begin(), in_fold.end(), 0);
        for (std::size_t k : fold) in_fold[k] = 1;
        std::vector<std::size_t> train;
        train.reserve(n - fold.size());
        for (std::size_t i = 0; i < n; ++i)
            if (!in_fold[i]) train.push_back(i);
        if (train.size() < 2 || fold.empty()) throw NumericError("cross-validation fold too small for fitting");

        const auto m = static_cast<Eigen::Index>(train.size());
        Eigen::VectorXd tt(m), yy(m), ww(m);
        for (Eigen::Index r = 0; r < m; ++r) {
            const auto i = static_cast<Eigen::Index>(train[static_cast<std::size_t>(r)]);
            tt(r) = ds.t()(i);
            yy(r) = ds.y()(i);
            ww(r) = weights(i);
        }
        double fold_sum = 0.0;
        std::size_t used = 0;
        for (std::size_t k : fold) {
            const auto kk = static_cast<Eigen::Index>(k);
            const double tk = ds.t()(kk);
            if (opts.eval_range && (tk < opts.eval_range->first || tk > opts.eval_range->second)) continue;
            const LocalFit fit = fit_local_linear(make_kernel_column(tt, tk, h), yy, ww, loss, opts.fit);
            fold_sum += weights(kk) * loss_eval(loss, ds.y()(kk) - fit.theta1);
            ++used;
        }
        if (used == 0) throw NumericError("cross-validation fold has no evaluable points");
        total += fold_sum / static_cast<double>(used);
    }
    const double shrink = 1.0 - static_cast<double>(sieve_dim) / static_cast<double>(n);
    return total / (shrink * shrink);
}

/// Convenience form: proposed weights at (k1, k2), folds from `seed`.
inline double cv_score(const Dataset& ds, int k1, int k2, double h, std::size_t F, const LossSpec& loss,
                       std::uint64_t seed, const CvOptions& opts = {}) {
    SieveConfig cfg;
    cfg.k1 = k1;
    cfg.k2 = k2;
    const WeightModel model = WeightModel::proposed(ds, cfg);
    return cv_score(ds, model.center().values, model.basis().dim(), make_folds(ds.size(), F, seed), h, loss, opts);
}

/// Log-spaced bandwidths between lo_factor and hi_factor times the sample
/// SD of T.
inline std::vector<double> default_cv_bandwidths(const Eigen::VectorXd& treatment, int count = 16,
                                                 double lo_factor = 0.05, double hi_factor = 1.0) {
    const double mean = treatment.mean();
    const double sd = std::sqrt((treatment.array() - mean).square().sum() / static_cast<double>(treatment.size() - 1));
    std::vector<double> hs(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const double f = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
        hs[static_cast<std::size_t>(i)] = sd * lo_factor * std::pow(hi_factor / lo_factor, f);
    }
    return hs;
}

struct CvGrid {
    std::vector<std::pair<int, int>> degrees{{2, 1}};
    std::vector<double> bandwidths;
    std::size_t folds = 5;
    bool naive = false;  ///< use pi = 1 (the naive estimator's criterion)
};

struct CvEntry {
    int k1 = 0, k2 = 0;
    double h = 0.0;
    double score = std::numeric_limits<double>::quiet_NaN();  ///< NaN when the candidate failed
};

struct PilotSelection {
    int k1 = 0, k2 = 0;
    double h_tilde = 0.0;
    double score = 0.0;
    std::vector<CvEntry> table;
};

/// Argmin of the criterion over the grid; ties go to smaller K, then
/// smaller h. Candidates whose fits fail are skipped.
inline PilotSelection select_pilot(const Dataset& ds, const CvGrid& grid, const LossSpec& loss, std::uint64_t seed,
                                   const CvOptions& opts = {}) {
    if (grid.degrees.empty() || grid.bandwidths.empty()) throw ConfigError("cross-validation grid is empty");
    const Folds folds = make_folds(ds.size(), grid.folds, seed);
    PilotSelection best;
    bool found = false;
    std::size_t best_K = 0;
    SieveConfig cfg;
    for (const auto& [k1, k2] : grid.degrees) {
        std::optional<WeightModel> model;
        std::size_t K = 0;
        try {
            if (grid.naive) {
                model = WeightModel::naive(ds.size());
            } else {
                cfg.k1 = k1;
                cfg.k2 = k2;
                model = WeightModel::proposed(ds, cfg);
                K = model->basis().dim();
            }
        } catch (const Error&) {
            for (double h : grid.bandwidths) best.table.push_back({k1, k2, h});
            continue;
        }
        for (double h : grid.bandwidths) {
            CvEntry e{k1, k2, h};
            try {
                e.score = cv_score(ds, model->center().values, K, folds, h, loss, opts);
            } catch (const NumericError&) {
            }
            best.table.push_back(e);
            if (!std::isfinite(e.score)) continue;
            const bool better = !found || e.score < best.score ||
                                (e.score == best.score && (K < best_K || (K == best_K && h < best.h_tilde)));
            if (better) {
                found = true;
                best.k1 = k1;
                best.k2 = k2;
                best.h_tilde = h;
                best.score = e.score;
                best_K = K;
            }
        }
    }
    if (!found) throw NumericError("every cross-validation candidate failed");
    return best;
}

// ---------------------------------------------------------------------------
// Undersmoothing (turning point of successive sup-distances)

struct UndersmoothConfig {
    int J = 20;
    std::optional<int> j_override;
    double gamma = 1.1;       ///< pilot factor for g
    double deriv_factor = 4.0; ///< pilot factor for g': h0 = factor * h * N^{1/5} * N^{-1/7}
};

struct UndersmoothResult {
    double h0 = 0.0;
    double h_u = 0.0;
    int j = 0;
    std::vector<double> ladder;   ///< h_j for the rungs that could be fitted
    std::vector<double> profile;  ///< d_j, j = 1..ladder.size()-1 (profile[j-1])
    bool truncated = false;
    std::string warning;
};

inline double undersmooth_pilot(double h_tilde, std::size_t n, Target target, const UndersmoothConfig& cfg) {
    if (target == Target::g) return cfg.gamma * h_tilde;
    const double N = static_cast<double>(n);
    return cfg.deriv_factor * h_tilde * std::pow(N, 1.0 / 5.0) * std::pow(N, -1.0 / 7.0);
}

/// First j >= 3 maximizing the second difference of log d_j. `profile[j-1]`
/// holds d_j. Profiles shorter than three entries return their last index.
inline int detect_turning_point(const std::vector<double>& profile) {
    const int m = static_cast<int>(profile.size());
    if (m == 0) throw NumericError("empty distance profile");
    if (m < 3) return m;
    auto lg = [&](int j) { return std::log(std::max(profile[static_cast<std::size_t>(j - 1)], 1e-300)); };
    int best_j = 3;
    double best = -std::numeric_limits<double>::infinity();
    for (int j = 3; j <= m; ++j) {
        const double s = lg(j) - 2.0 * lg(j - 1) + lg(j - 2);
        if (s > best) {
            best = s;
            best_j = j;
        }
    }
    return best_j;
}

inline UndersmoothResult undersmooth_bandwidth(const Dataset& ds, const Eigen::VectorXd& weights,
                                               const LossSpec& loss, const Eigen::VectorXd& grid, double h_tilde,
                                               Target target, const UndersmoothConfig& cfg = {},
                                               const FitOptions& fit = {}) {
    if (cfg.J < 3) throw ConfigError("undersmoothing ladder needs J >= 3");
    if (!(h_tilde > 0.0)) throw ConfigError("pilot bandwidth must be positive");
    if (cfg.j_override && (*cfg.j_override < 1 || *cfg.j_override >= cfg.J))
        throw ConfigError("j override must lie in [1, J-1]");
    validate_grid(grid);
    UndersmoothResult r;
    r.h0 = undersmooth_pilot(h_tilde, ds.size(), target, cfg);

    Eigen::VectorXd prev;
    for (int j = 0; j < cfg.J; ++j) {
        const double hj = static_cast<double>(cfg.J - j) / cfg.J * r.h0;
        CurveEstimate c;
        try {
            c = fit_curve(kernel_columns(ds.t(), grid, hj), ds.y(), weights, loss, fit);
        } catch (const NumericError& e) {
            if (j == 0) throw;
            r.truncated = true;
            r.warning = "ladder truncated at j=" + std::to_string(j) + ": " + e.what();
            break;
        }
        const Eigen::VectorXd& cur = curve_values(c, target);
        if (j > 0) r.profile.push_back((cur - prev).cwiseAbs().maxCoeff());
        r.ladder.push_back(hj);
        prev = cur;
    }
    if (r.profile.empty()) throw NumericError("undersmoothing ladder has fewer than two feasible rungs");

    const int last = static_cast<int>(r.profile.size());
    if (cfg.j_override) {
        r.j = *cfg.j_override;
        if (r.j > last) {
            r.warning += (r.warning.empty() ? "" : "; ") + std::string("override j=") +
                         std::to_string(r.j) + " beyond feasible ladder, using j=" + std::to_string(last);
            r.j = last;
        }
    } else {
        r.j = detect_turning_point(r.profile);
    }
    r.h_u = static_cast<double>(cfg.J - r.j) / cfg.J * r.h0;
    return r;
}

// ---------------------------------------------------------------------------
// Lepski-type bandwidth and band

struct LepskiConfig {
    int j_min = 0, j_max = 0;
    std::vector<double> bandwidths;  ///< 2^{-l}, l = j_min..j_max (descending h)
    double h_seed = 0.0;             ///< the h_tilde_0 used in the formulas
    double gamma_n = 0.5;
    double v = 1.1;
    double u_n = 0.5;
    double c_sigma = 0.25;
};

/// Candidate set from the CV bandwidth. Natural log except where base 2 is
/// explicit; for g' the seed is 3 * h * N^{1/5} * N^{-1/7}.
inline LepskiConfig lepski_candidates(std::size_t n, double h_tilde, Target target) {
    if (n < 8) throw ConfigError("Lepski candidates need N >= 8");
    if (!(h_tilde > 0.0)) throw ConfigError("pilot bandwidth must be positive");
    const double N = static_cast<double>(n);
    LepskiConfig c;
    c.h_seed = target == Target::g ? h_tilde : 3.0 * h_tilde * std::pow(N, 0.2) * std::pow(N, -1.0 / 7.0);
    const double logN = std::log(N);
    const double j_tilde = std::log2(10.0 * N * c.h_seed / std::pow(logN, 4.0));
    c.j_max = static_cast<int>(std::ceil(std::max(j_tilde, -std::log2(c.h_seed / 10.0))));
    const double log_jmax = c.j_max >= 1 ? std::log(static_cast<double>(c.j_max))
                                         : -std::numeric_limits<double>::infinity();
    c.j_min = static_cast<int>(std::ceil(std::max(log_jmax, -std::log2(c.h_seed * std::pow(logN, 0.2) / 3.0))));
    if (c.j_min > c.j_max)
        throw ConfigError("empty Lepski candidate set (J_min=" + std::to_string(c.j_min) +
                          " > J_max=" + std::to_string(c.j_max) + ")");
    for (int l = c.j_min; l <= c.j_max; ++l) c.bandwidths.push_back(std::ldexp(1.0, -l));
    c.gamma_n = c.j_max >= 2 ? std::min(0.5, std::sqrt(log_jmax / c.j_max)) : 0.5;
    return c;
}

/// Bootstrap material at every candidate bandwidth, largest first. Rows of
/// every deviation matrix refer to the same replicates.
struct LepskiInputs {
    std::vector<double> bandwidths;
    std::vector<Eigen::VectorXd> centers;     ///< per candidate, over the grid
    std::vector<Eigen::MatrixXd> deviations;  ///< per candidate, B x G
    Eigen::VectorXd grid;
};

struct LepskiPairStat {
    std::size_t larger = 0, smaller = 0;  ///< candidate indices (h_larger > h_smaller)
    double sup_stat = 0.0;                ///< sup_t |g_h - g_h2| / sigma(t, h, h2)
    Eigen::VectorXd pair_sigma;           ///< truncated pair scale over the grid
    Eigen::VectorXd raw_sigma;            ///< untruncated bootstrap SD of the pair deviation
};

struct LepskiSelection {
    double h_hat = 0.0;
    std::size_t index = 0;
    double c_tilde = 0.0;
    std::vector<ScaleEstimate> sigma;  ///< per-candidate sigma(t, h)
    std::vector<LepskiPairStat> pairs;
    std::vector<bool> accepted;
    std::string warning;
};

inline LepskiSelection lepski_select(const LepskiInputs& in, const LepskiConfig& cfg) {
    const std::size_t H = in.bandwidths.size();
    if (H == 0) throw ConfigError("empty Lepski candidate set");
    if (in.centers.size() != H || in.deviations.size() != H) throw DimensionError("Lepski inputs misaligned");
    for (std::size_t k = 1; k < H; ++k)
        if (!(in.bandwidths[k] < in.bandwidths[k - 1]))
            throw ConfigError("Lepski candidates must be strictly decreasing");

    LepskiSelection sel;
    for (const auto& d : in.deviations) sel.sigma.push_back(scale_sd(d));

    const Eigen::Index B = in.deviations.front().rows();
    std::vector<double> sup_z(static_cast<std::size_t>(B), 0.0);
    for (std::size_t k = 0; k < H; ++k) {
        for (std::size_t l = k + 1; l < H; ++l) {
            LepskiPairStat p;
            p.larger = k;
            p.smaller = l;
            const Eigen::MatrixXd dev = in.deviations[k] - in.deviations[l];
            const Eigen::VectorXd floor = cfg.c_sigma * sel.sigma[l].sigma;
            p.raw_sigma.resize(dev.cols());
            for (Eigen::Index j = 0; j < dev.cols(); ++j) {
                const double mean = dev.col(j).mean();
                p.raw_sigma(j) = std::sqrt((dev.col(j).array() - mean).square().sum() / static_cast<double>(B - 1));
            }
            p.pair_sigma = p.raw_sigma.cwiseMax(floor);
            const std::vector<double> m = sup_statistics(dev, p.pair_sigma);
            for (std::size_t b = 0; b < m.size(); ++b) sup_z[b] = std::max(sup_z[b], m[b]);
            p.sup_stat = ((in.centers[k] - in.centers[l]).array() / p.pair_sigma.array()).abs().maxCoeff();
            sel.pairs.push_back(std::move(p));
        }
    }
    sel.c_tilde = H > 1 ? upper_order_statistic(sup_z, 1.0 - cfg.gamma_n) : 0.0;

    sel.accepted.assign(H, false);
    const double threshold = cfg.v * sel.c_tilde;
    for (std::size_t k = 0; k < H; ++k) {
        bool ok = true;
        for (const auto& p : sel.pairs)
            if (p.larger == k && p.sup_stat > threshold) ok = false;
        sel.accepted[k] = ok;
    }
    const auto it = std::find(sel.accepted.begin(), sel.accepted.end(), true);
    if (it == sel.accepted.end()) {
        sel.index = H - 1;
        sel.warning = "no Lepski candidate passed; using the smallest bandwidth";
    } else {
        sel.index = static_cast<std::size_t>(it - sel.accepted.begin());
    }
    sel.h_hat = in.bandwidths[sel.index];
    return sel;
}

struct LepskiBand {
    BandEstimate band;
    LepskiSelection selection;
    double c_hat = 0.0;  ///< multi-bandwidth critical value at alpha
};

/// g_hhat(t) +- {c_hat(alpha) + u_N c_tilde} sigma(t, hhat), with c_hat the
/// (1 - alpha) order statistic of sup over (t, h) of the normalized
/// deviations.
inline LepskiBand lepski_band(const LepskiInputs& in, const LepskiConfig& cfg, double alpha,
                              const LepskiSelection* precomputed = nullptr) {
    check_alpha(alpha);
    LepskiBand out;
    out.selection = precomputed ? *precomputed : lepski_select(in, cfg);
    const auto& sel = out.selection;
    const Eigen::Index B = in.deviations.front().rows();
    std::vector<double> sup_all(static_cast<std::size_t>(B), 0.0);
    for (std::size_t k = 0; k < in.bandwidths.size(); ++k) {
        const std::vector<double> m = sup_statistics(in.deviations[k], sel.sigma[k].sigma);
        for (std::size_t b = 0; b < m.size(); ++b) sup_all[b] = std::max(sup_all[b], m[b]);
    }
    out.c_hat = upper_order_statistic(sup_all, 1.0 - alpha);
    const double c = out.c_hat + cfg.u_n * sel.c_tilde;
    out.band = build_band(in.grid, in.centers[sel.index], sel.sigma[sel.index], c, alpha,
                          static_cast<std::size_t>(B));
    return out;
}

/// Fits the bootstrap ensembles over the candidate set. Candidates whose
/// center fit is infeasible are dropped. When none is feasible the dyadic
/// window moves to coarser levels (l - 1, l - 2, ..., never above h = 1)
/// until one is. If the replicates fail too often, the smallest remaining
/// candidate is dropped and the ensemble refitted.
inline LepskiInputs lepski_inputs(const Dataset& ds, const WeightModel& model, const LossSpec& loss,
                                  const Eigen::VectorXd& grid, const LepskiConfig& cfg, std::size_t B,
                                  std::uint64_t seed, Target target, const BootstrapOptions& opts = {},
                                  std::vector<std::string>* warnings = nullptr) {
    std::vector<double> hs;
    for (int shift = 0; hs.empty() && cfg.j_min - shift >= 0; ++shift) {
        if (shift > 0 && warnings)
            warnings->push_back("no feasible Lepski candidate; shifting the dyadic window by " +
                                std::to_string(shift) + " level(s)");
        for (int l = cfg.j_min - shift; l <= cfg.j_max - shift; ++l) {
            const double h = std::ldexp(1.0, -l);
            try {
                fit_curve(kernel_columns(ds.t(), grid, h), ds.y(), model.center().values, loss, opts.fit);
                hs.push_back(h);
            } catch (const NumericError& e) {
                if (warnings) warnings->push_back("dropped Lepski candidate h=" + std::to_string(h) + ": " + e.what());
            }
        }
    }
    while (!hs.empty()) {
        try {
            auto ens = bootstrap_curves_multi(ds, model, loss, grid, hs, B, seed, opts);
            LepskiInputs in;
            in.bandwidths = hs;
            in.grid = grid;
            for (const auto& e : ens) {
                in.centers.push_back(curve_values(e.center, target));
                in.deviations.push_back(deviations(e, target));
            }
            return in;
        } catch (const NumericError& e) {
            if (hs.size() == 1) throw;
            if (warnings)
                warnings->push_back("dropped Lepski candidate h=" + std::to_string(hs.back()) + ": " + e.what());
            hs.pop_back();
        }
    }
    throw NumericError("no feasible Lepski candidate bandwidth");
}

inline LepskiSelection lepski_select(const Dataset& ds, const WeightModel& model, const LossSpec& loss,
                                     const Eigen::VectorXd& grid, const LepskiConfig& cfg, std::size_t B,
                                     std::uint64_t seed, Target target, const BootstrapOptions& opts = {}) {
    return lepski_select(lepski_inputs(ds, model, loss, grid, cfg, B, seed, target, opts), cfg);
}

inline LepskiBand lepski_band(const Dataset& ds, const WeightModel& model, const LossSpec& loss,
                              const Eigen::VectorXd& grid, const LepskiConfig& cfg, double alpha, std::size_t B,
                              std::uint64_t seed, Target target, const BootstrapOptions& opts = {}) {
    return lepski_band(lepski_inputs(ds, model, loss, grid, cfg, B, seed, target, opts), cfg, alpha);
}

}  // namespace unidrf
