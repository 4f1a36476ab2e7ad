// unidrf: command-line front end for dose-response estimation, uniform
// bands, tests, tuning reports, Monte Carlo experiments and weight
// diagnostics.
//
// Exit codes: 0 ok, 1 numeric failure, 2 input error, 3 config error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "table_io.hpp"
#include "unidrf/unidrf.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace unidrf::cli {

enum ExitCode { kOk = 0, kNumeric = 1, kInput = 2, kConfig = 3 };

struct RunConfig {
    std::string input;
    std::string t_column = "t";
    std::string y_column = "y";
    std::vector<std::string> x_columns;  ///< empty: every other column
    std::string loss = "squared";
    std::string target = "g";
    std::vector<double> levels{0.95};
    std::size_t bootstrap = 500;
    std::uint64_t seed = 1;
    std::string tuning = "undersmooth";
    std::string grid;  ///< "min:max:count"; empty: 25 points on [q05, q95] of T
    std::size_t threads = 0;
    std::string out = ".";
    bool normalize_covariates = true;
    std::string y_transform = "none";
    std::string t_transform = "none";
    bool naive = false;
    int k1 = 2, k2 = 1;
    double bandwidth = 0.0;  ///< for tuning=fixed
    int ladder_j = 20;
    int j_override = 0;  ///< 0: detect the turning point
    std::size_t folds = 5;
    int cv_count = 16;
    double cv_lo = 0.05, cv_hi = 1.0;
    std::string scale = "sd";
    std::string null_spec = "zero";
    // simulate
    std::string preset;
    std::vector<std::string> dgps{"DGP0"};
    std::vector<std::size_t> sizes{400};
    std::vector<double> quantiles;  ///< extra quantile-loss cells
    std::size_t reps = 200;
    std::string measure = "coverage";
    bool sim_naive = true;
    std::string export_path;  ///< write one simulated sample instead of running an experiment
};

inline json to_json(const RunConfig& c) {
    json j;
    j["input"] = c.input;
    j["t_column"] = c.t_column;
    j["y_column"] = c.y_column;
    j["x_columns"] = c.x_columns;
    j["loss"] = c.loss;
    j["target"] = c.target;
    j["levels"] = c.levels;
    j["bootstrap"] = c.bootstrap;
    j["seed"] = c.seed;
    j["tuning"] = c.tuning;
    j["grid"] = c.grid;
    j["normalize_covariates"] = c.normalize_covariates;
    j["y_transform"] = c.y_transform;
    j["t_transform"] = c.t_transform;
    j["naive"] = c.naive;
    j["k1"] = c.k1;
    j["k2"] = c.k2;
    j["bandwidth"] = c.bandwidth;
    j["ladder_j"] = c.ladder_j;
    j["j_override"] = c.j_override;
    j["folds"] = c.folds;
    j["cv_count"] = c.cv_count;
    j["cv_lo"] = c.cv_lo;
    j["cv_hi"] = c.cv_hi;
    j["scale"] = c.scale;
    j["null"] = c.null_spec;
    j["preset"] = c.preset;
    j["dgps"] = c.dgps;
    j["sizes"] = c.sizes;
    j["quantiles"] = c.quantiles;
    j["reps"] = c.reps;
    j["measure"] = c.measure;
    j["sim_naive"] = c.sim_naive;
    return j;
}

// ---------------------------------------------------------------------------
// Option registration and config-file merge

struct Bindings {
    std::map<std::string, CLI::Option*> options;  // config key -> option
};

template <class T>
CLI::Option* bind_option(CLI::App* app, Bindings& b, const std::string& key, const std::string& flag, T& field,
                  const std::string& help) {
    return b.options[key] = app->add_option(flag, field, help);
}

inline void add_shared(CLI::App* app, RunConfig& c, Bindings& b, std::string& config_path) {
    app->add_option("--config", config_path, "JSON config file; command-line flags take precedence");
    bind_option(app, b, "input", "--input,-i", c.input, "headered CSV input");
    bind_option(app, b, "t_column", "--t-col", c.t_column, "treatment column");
    bind_option(app, b, "y_column", "--y-col", c.y_column, "outcome column");
    bind_option(app, b, "x_columns", "--x-cols", c.x_columns, "covariate columns (default: all others)")->delimiter(',');
    bind_option(app, b, "loss", "--loss", c.loss, "squared | quantile:q");
    bind_option(app, b, "target", "--target", c.target, "g | gprime | tau");
    bind_option(app, b, "levels", "--levels", c.levels, "confidence levels, e.g. 0.95,0.99")->delimiter(',');
    bind_option(app, b, "bootstrap", "--bootstrap,-B", c.bootstrap, "bootstrap replications");
    bind_option(app, b, "seed", "--seed", c.seed, "random seed");
    bind_option(app, b, "tuning", "--tuning", c.tuning, "fixed | cv | undersmooth | lepski");
    bind_option(app, b, "grid", "--grid", c.grid, "evaluation grid min:max:count");
    bind_option(app, b, "threads", "--threads", c.threads, "worker threads (default: available parallelism)");
    bind_option(app, b, "out", "--out,-o", c.out, "output directory");
    bind_option(app, b, "y_transform", "--y-transform", c.y_transform, "none | log[:shift] | boxcox:lambda[,shift]");
    bind_option(app, b, "t_transform", "--t-transform", c.t_transform, "none | log[:shift] | boxcox:lambda[,shift]");
    bind_option(app, b, "k1", "--k1", c.k1, "sieve degree in the treatment");
    bind_option(app, b, "k2", "--k2", c.k2, "sieve degree in the covariates");
    bind_option(app, b, "bandwidth", "--bandwidth", c.bandwidth, "bandwidth for --tuning fixed");
    bind_option(app, b, "ladder_j", "--ladder", c.ladder_j, "undersmoothing ladder length J");
    bind_option(app, b, "j_override", "--j", c.j_override, "undersmoothing step j (0: detect turning point)");
    bind_option(app, b, "folds", "--folds", c.folds, "cross-validation folds");
    bind_option(app, b, "cv_count", "--cv-count", c.cv_count, "number of cross-validation bandwidths");
    bind_option(app, b, "cv_lo", "--cv-lo", c.cv_lo, "smallest CV bandwidth as a multiple of sd(T)");
    bind_option(app, b, "cv_hi", "--cv-hi", c.cv_hi, "largest CV bandwidth as a multiple of sd(T)");
    bind_option(app, b, "scale", "--scale", c.scale, "sd | iqr");
    b.options["naive"] = app->add_flag("--naive", c.naive, "use unit weights instead of balancing weights");
    b.options["normalize_covariates"] =
        app->add_flag("--no-normalize{false}", c.normalize_covariates, "skip min-max normalization of covariates");
}

template <class T>
void merge_key(const json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

inline void apply_json(const json& j, RunConfig& c) {
    merge_key(j, "input", c.input);
    merge_key(j, "t_column", c.t_column);
    merge_key(j, "y_column", c.y_column);
    merge_key(j, "x_columns", c.x_columns);
    merge_key(j, "loss", c.loss);
    merge_key(j, "target", c.target);
    merge_key(j, "levels", c.levels);
    merge_key(j, "bootstrap", c.bootstrap);
    merge_key(j, "seed", c.seed);
    merge_key(j, "tuning", c.tuning);
    merge_key(j, "grid", c.grid);
    merge_key(j, "threads", c.threads);
    merge_key(j, "out", c.out);
    merge_key(j, "normalize_covariates", c.normalize_covariates);
    merge_key(j, "y_transform", c.y_transform);
    merge_key(j, "t_transform", c.t_transform);
    merge_key(j, "naive", c.naive);
    merge_key(j, "k1", c.k1);
    merge_key(j, "k2", c.k2);
    merge_key(j, "bandwidth", c.bandwidth);
    merge_key(j, "ladder_j", c.ladder_j);
    merge_key(j, "j_override", c.j_override);
    merge_key(j, "folds", c.folds);
    merge_key(j, "cv_count", c.cv_count);
    merge_key(j, "cv_lo", c.cv_lo);
    merge_key(j, "cv_hi", c.cv_hi);
    merge_key(j, "scale", c.scale);
    merge_key(j, "null", c.null_spec);
    merge_key(j, "preset", c.preset);
    merge_key(j, "dgps", c.dgps);
    merge_key(j, "sizes", c.sizes);
    merge_key(j, "quantiles", c.quantiles);
    merge_key(j, "reps", c.reps);
    merge_key(j, "measure", c.measure);
    merge_key(j, "sim_naive", c.sim_naive);
}

/// Values from the config file fill every field whose flag was not given.
inline void merge_config(const std::string& path, RunConfig& c, const Bindings& b) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json file;
    try {
        file = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config file '" + path + "' must hold a JSON object");
    json given = to_json(c);
    given["threads"] = c.threads;
    given["out"] = c.out;
    for (const auto& [key, opt] : b.options)
        if (opt->count() > 0) file[key] = given.at(key);
    try {
        apply_json(file, c);
    } catch (const json::exception& e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Validation and parsing of individual settings

inline LossSpec parse_loss(const std::string& s) {
    if (s == "squared" || s == "average" || s == "mean") return LossSpec::squared();
    if (s.rfind("quantile:", 0) == 0) {
        try {
            std::size_t used = 0;
            const std::string num = s.substr(9);
            const double q = std::stod(num, &used);
            if (used != num.size()) throw std::invalid_argument("trailing characters");
            return LossSpec::quantile(q);
        } catch (const std::logic_error&) {
            throw ConfigError("bad quantile level in loss '" + s + "'");
        }
    }
    throw ConfigError("unknown loss '" + s + "' (expected squared or quantile:q)");
}

enum class TargetKind { g, gprime, tau };

inline TargetKind parse_target(const std::string& s) {
    if (s == "g") return TargetKind::g;
    if (s == "gprime") return TargetKind::gprime;
    if (s == "tau") return TargetKind::tau;
    throw ConfigError("unknown target '" + s + "' (expected g, gprime or tau)");
}

inline ScaleMethod parse_scale(const std::string& s) {
    if (s == "sd") return ScaleMethod::bootstrap_sd;
    if (s == "iqr") return ScaleMethod::normalized_iqr;
    throw ConfigError("unknown scale '" + s + "' (expected sd or iqr)");
}

inline void validate(const RunConfig& c) {
    static const std::vector<std::string> modes{"fixed", "cv", "undersmooth", "lepski"};
    if (std::find(modes.begin(), modes.end(), c.tuning) == modes.end())
        throw ConfigError("unknown tuning mode '" + c.tuning + "'");
    if (c.levels.empty()) throw ConfigError("at least one confidence level is required");
    for (double l : c.levels)
        if (!(l > 0.0 && l < 1.0)) throw ConfigError("confidence levels must lie in (0, 1)");
    if (c.tuning == "fixed" && !(c.bandwidth > 0.0)) throw ConfigError("--tuning fixed needs --bandwidth > 0");
    if (c.folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
    if (c.cv_count < 1 || !(c.cv_lo > 0.0) || !(c.cv_hi >= c.cv_lo))
        throw ConfigError("cross-validation bandwidth range is invalid");
    parse_loss(c.loss);
    parse_target(c.target);
    parse_scale(c.scale);
}

inline Eigen::VectorXd parse_grid(const std::string& spec, const Eigen::VectorXd& t) {
    if (spec.empty()) return default_grid(t, 25);
    std::vector<double> parts;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ':')) {
        try {
            std::size_t used = 0;
            parts.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument("trailing");
        } catch (const std::logic_error&) {
            throw ConfigError("bad grid spec '" + spec + "' (expected min:max:count)");
        }
    }
    if (parts.size() != 3 || parts[2] < 1 || parts[2] != std::floor(parts[2]))
        throw ConfigError("bad grid spec '" + spec + "' (expected min:max:count)");
    const auto count = static_cast<Eigen::Index>(parts[2]);
    if (count > 1 && !(parts[1] > parts[0])) throw ConfigError("grid max must exceed grid min");
    Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(count, parts[0], parts[1]);
    if (count == 1) grid(0) = parts[0];
    if (grid.minCoeff() < t.minCoeff() || grid.maxCoeff() > t.maxCoeff())
        throw ConfigError("grid [" + fmt(grid.minCoeff()) + ", " + fmt(grid.maxCoeff()) +
                          "] leaves the observed treatment range [" + fmt(t.minCoeff()) + ", " + fmt(t.maxCoeff()) + "]");
    return grid;
}

// ---------------------------------------------------------------------------
// Shared pipeline

struct Context {
    RunConfig cfg;
    Dataset data;
    std::vector<std::string> covariates;
    LossSpec loss;
    Eigen::VectorXd grid;
    WeightModel model;
    SieveConfig sieve;
    std::size_t threads = 1;
    std::vector<std::string> warnings;
    json resolved = json::object();
};

inline Context load(const RunConfig& cfg) {
    validate(cfg);
    if (cfg.input.empty()) throw ConfigError("--input is required");
    const Table table = read_csv(cfg.input);
    std::vector<std::string> xs = cfg.x_columns;
    if (xs.empty())
        for (const auto& name : table.header)
            if (name != cfg.t_column && name != cfg.y_column) xs.push_back(name);
    if (xs.empty()) throw InputError("input has no covariate columns");
    Eigen::VectorXd t = Transform::parse(cfg.t_transform).apply(table.column(cfg.t_column), "treatment");
    Eigen::VectorXd y = Transform::parse(cfg.y_transform).apply(table.column(cfg.y_column), "outcome");
    Eigen::MatrixXd x(static_cast<Eigen::Index>(table.rows()), static_cast<Eigen::Index>(xs.size()));
    for (std::size_t k = 0; k < xs.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = table.column(xs[k]);

    Context ctx;
    ctx.cfg = cfg;
    ctx.data = Dataset(std::move(t), std::move(x), std::move(y));
    ctx.covariates = xs;
    ctx.loss = parse_loss(cfg.loss);
    ctx.grid = parse_grid(cfg.grid, ctx.data.t());
    ctx.sieve.k1 = cfg.k1;
    ctx.sieve.k2 = cfg.k2;
    ctx.sieve.normalize_covariates = cfg.normalize_covariates;
    ctx.model = cfg.naive ? WeightModel::naive(ctx.data.size()) : WeightModel::proposed(ctx.data, ctx.sieve);
    if (ctx.model.center().degraded_conditioning)
        ctx.warnings.push_back("sieve Gram matrix was ill-conditioned; ridge fallback applied");
    ctx.threads = cfg.threads == 0 ? default_threads() : cfg.threads;
    return ctx;
}

inline double cv_pilot(Context& ctx) {
    CvGrid grid;
    grid.degrees = {{ctx.cfg.k1, ctx.cfg.k2}};
    grid.bandwidths = default_cv_bandwidths(ctx.data.t(), ctx.cfg.cv_count, ctx.cfg.cv_lo, ctx.cfg.cv_hi);
    grid.folds = ctx.cfg.folds;
    grid.naive = ctx.cfg.naive;
    CvOptions opts;
    opts.eval_range = std::make_pair(ctx.grid(0), ctx.grid(ctx.grid.size() - 1));
    const PilotSelection sel = select_pilot(ctx.data, grid, ctx.loss, derive_seed(ctx.cfg.seed, {stream::folds}), opts);
    json table = json::array();
    for (const auto& e : sel.table)
        table.push_back({{"h", e.h}, {"score", std::isfinite(e.score) ? json(e.score) : json(nullptr)}});
    ctx.resolved["h_tilde"] = sel.h_tilde;
    ctx.resolved["cv_score"] = sel.score;
    ctx.resolved["cv_table"] = table;
    return sel.h_tilde;
}

inline UndersmoothConfig undersmooth_config(const RunConfig& c) {
    UndersmoothConfig u;
    u.J = c.ladder_j;
    if (c.j_override > 0) u.j_override = c.j_override;
    return u;
}

inline json undersmooth_json(const UndersmoothResult& r) {
    return {{"h0", r.h0}, {"h_u", r.h_u}, {"j", r.j}, {"ladder", r.ladder}, {"profile", r.profile},
            {"truncated", r.truncated}, {"warning", r.warning}};
}

/// Bandwidth for the non-Lepski modes; `target` picks the undersmoothing
/// pilot (tau uses the g ladder).
inline double resolve_bandwidth(Context& ctx, Target target) {
    const std::string& mode = ctx.cfg.tuning;
    ctx.resolved["tuning"] = mode;
    if (mode == "fixed") {
        ctx.resolved["h"] = ctx.cfg.bandwidth;
        return ctx.cfg.bandwidth;
    }
    const double h_tilde = cv_pilot(ctx);
    if (mode == "cv") {
        ctx.resolved["h"] = h_tilde;
        return h_tilde;
    }
    const UndersmoothResult us = undersmooth_bandwidth(ctx.data, ctx.model.center().values, ctx.loss, ctx.grid,
                                                       h_tilde, target, undersmooth_config(ctx.cfg));
    if (!us.warning.empty()) ctx.warnings.push_back(us.warning);
    ctx.resolved["undersmooth"] = undersmooth_json(us);
    ctx.resolved["h"] = us.h_u;
    return us.h_u;
}

inline BootstrapOptions boot_options(const Context& ctx) {
    BootstrapOptions o;
    o.threads = ctx.threads;
    return o;
}

struct LepskiRun {
    LepskiConfig config;
    LepskiInputs inputs;
    LepskiSelection selection;
};

inline LepskiRun run_lepski(Context& ctx, Target target) {
    const double h_tilde = cv_pilot(ctx);
    LepskiRun r;
    r.config = lepski_candidates(ctx.data.size(), h_tilde, target);
    r.inputs = lepski_inputs(ctx.data, ctx.model, ctx.loss, ctx.grid, r.config, ctx.cfg.bootstrap,
                             derive_seed(ctx.cfg.seed, {stream::bootstrap}), target, boot_options(ctx), &ctx.warnings);
    r.selection = lepski_select(r.inputs, r.config);
    if (!r.selection.warning.empty()) ctx.warnings.push_back(r.selection.warning);
    json pairs = json::array();
    for (const auto& p : r.selection.pairs)
        pairs.push_back({{"h", r.inputs.bandwidths[p.larger]},
                         {"h2", r.inputs.bandwidths[p.smaller]},
                         {"sup_stat", p.sup_stat}});
    ctx.resolved["tuning"] = "lepski";
    ctx.resolved["lepski"] = {{"j_min", r.config.j_min},       {"j_max", r.config.j_max},
                              {"h_seed", r.config.h_seed},     {"gamma_n", r.config.gamma_n},
                              {"v", r.config.v},               {"u_n", r.config.u_n},
                              {"c_sigma", r.config.c_sigma},   {"candidates", r.inputs.bandwidths},
                              {"c_tilde", r.selection.c_tilde}, {"accepted", r.selection.accepted},
                              {"pairs", pairs}};
    ctx.resolved["h"] = r.selection.h_hat;
    return r;
}

inline json provenance(const Context& ctx, const std::string& command) {
    const json config = to_json(ctx.cfg);
    json meta;
    meta["command"] = command;
    meta["version"] = kVersion;
    meta["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION);
    meta["config_hash"] = hex64(fnv1a(config.dump()));
    meta["input_digest"] = file_digest(ctx.cfg.input);
    meta["seed"] = ctx.cfg.seed;
    meta["config"] = config;
    meta["n"] = ctx.data.size();
    meta["covariates"] = ctx.covariates;
    meta["loss"] = ctx.loss.describe();
    meta["weights"] = to_string(ctx.model.center().source);
    if (!ctx.model.is_naive()) {
        meta["sieve"] = {{"k1", ctx.sieve.k1}, {"k2", ctx.sieve.k2}, {"K", ctx.model.basis().dim()}};
    }
    meta["log_convention"] = "natural log in the Lepski J_min bound; log2 only where base 2 is explicit";
    meta["fit"] = {{"mass_floor_points", FitOptions{}.mass_floor_points},
                   {"irls_floor", FitOptions{}.irls_floor},
                   {"tolerance", FitOptions{}.tolerance},
                   {"max_iterations", FitOptions{}.max_iterations}};
    meta["resolved"] = ctx.resolved;
    meta["warnings"] = ctx.warnings;
    return meta;
}

inline void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

inline fs::path prepare_out(const RunConfig& c) {
    fs::path dir(c.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create output directory '" + c.out + "': " + ec.message());
    return dir;
}

inline std::string level_tag(double level) {
    std::ostringstream os;
    os << std::round(level * 1000.0) / 10.0;
    return os.str();
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_estimate(const RunConfig& cfg) {
    Context ctx = load(cfg);
    const TargetKind tk = parse_target(cfg.target);
    const Target target = tk == TargetKind::gprime ? Target::gprime : Target::g;
    double h = 0.0;
    if (cfg.tuning == "lepski")
        h = run_lepski(ctx, target).selection.h_hat;
    else
        h = resolve_bandwidth(ctx, target);
    CurveEstimate curve;
    curve = estimate_curve(ctx.data, ctx.model.center(), ctx.loss, ctx.grid, KernelConfig{h});
    if (!curve.all_converged) ctx.warnings.push_back("quantile fit did not converge at every grid point");
    const fs::path dir = prepare_out(cfg);
    CsvWriter w((dir / "curve.csv").string(), {"t", "g", "gprime"});
    for (Eigen::Index j = 0; j < ctx.grid.size(); ++j) w.row({ctx.grid(j), curve.g(j), curve.gprime(j)});
    write_json(dir / "meta.json", provenance(ctx, "estimate"));
    return kOk;
}

struct BandSet {
    std::vector<BandEstimate> bands;  // one per level, in config order
};

inline BandSet compute_bands(Context& ctx) {
    const TargetKind tk = parse_target(ctx.cfg.target);
    const ScaleMethod scale = parse_scale(ctx.cfg.scale);
    BandSet out;
    if (ctx.cfg.tuning == "lepski") {
        if (tk == TargetKind::tau) throw ConfigError("the Lepski band is available for targets g and gprime only");
        if (scale != ScaleMethod::bootstrap_sd) throw ConfigError("the Lepski band uses the bootstrap SD scale");
        const Target target = tk == TargetKind::gprime ? Target::gprime : Target::g;
        const LepskiRun run = run_lepski(ctx, target);
        json chat = json::array();
        for (double level : ctx.cfg.levels) {
            const LepskiBand lb = lepski_band(run.inputs, run.config, 1.0 - level, &run.selection);
            chat.push_back({{"level", level}, {"c_hat", lb.c_hat}});
            out.bands.push_back(lb.band);
        }
        ctx.resolved["lepski"]["c_hat"] = chat;
        return out;
    }
    const Target target = tk == TargetKind::gprime ? Target::gprime : Target::g;
    const double h = resolve_bandwidth(ctx, target);
    const BootstrapEnsemble ens = bootstrap_curves(ctx.data, ctx.model, ctx.loss, ctx.grid, KernelConfig{h},
                                                   ctx.cfg.bootstrap, derive_seed(ctx.cfg.seed, {stream::bootstrap}),
                                                   boot_options(ctx));
    ctx.resolved["bootstrap_dropped"] = ens.dropped.size();
    for (double level : ctx.cfg.levels)
        out.bands.push_back(tk == TargetKind::tau ? band_for_tau(ens, 1.0 - level, scale)
                                                  : uniform_band(ens, target, 1.0 - level, scale));
    return out;
}

inline void write_band(const fs::path& path, const BandEstimate& band) {
    if (band.is_pair_band()) {
        CsvWriter w(path.string(), {"t1", "t0", "center", "sigma", "lower", "upper"});
        for (Eigen::Index j = 0; j < band.center.size(); ++j)
            w.row({band.grid(j), band.grid0(j), band.center(j), band.sigma(j), band.lower(j), band.upper(j)});
        return;
    }
    CsvWriter w(path.string(), {"t", "center", "sigma", "lower", "upper"});
    for (Eigen::Index j = 0; j < band.center.size(); ++j)
        w.row({band.grid(j), band.center(j), band.sigma(j), band.lower(j), band.upper(j)});
}

inline json band_summary(const std::vector<BandEstimate>& bands, const std::vector<double>& levels) {
    json arr = json::array();
    for (std::size_t k = 0; k < bands.size(); ++k)
        arr.push_back({{"level", levels[k]},
                       {"critical_value", bands[k].c_alpha},
                       {"mean_width", bands[k].mean_width()},
                       {"scale", to_string(bands[k].scale_method)},
                       {"file", k == 0 ? "band.csv" : "band_" + level_tag(levels[k]) + ".csv"}});
    return arr;
}

inline int cmd_band(const RunConfig& cfg) {
    Context ctx = load(cfg);
    const BandSet set = compute_bands(ctx);
    const fs::path dir = prepare_out(cfg);
    for (std::size_t k = 0; k < set.bands.size(); ++k)
        write_band(dir / (k == 0 ? "band.csv" : "band_" + level_tag(cfg.levels[k]) + ".csv"), set.bands[k]);
    json meta = provenance(ctx, "band");
    meta["target"] = cfg.target;
    meta["bands"] = band_summary(set.bands, cfg.levels);
    write_json(dir / "meta.json", meta);
    return kOk;
}

/// "zero", a numeric constant, or path.csv:column with one value per band row.
inline Eigen::VectorXd null_values(const std::string& spec, Eigen::Index size) {
    if (spec == "zero") return Eigen::VectorXd::Zero(size);
    try {
        std::size_t used = 0;
        const double v = std::stod(spec, &used);
        if (used == spec.size()) return Eigen::VectorXd::Constant(size, v);
    } catch (const std::logic_error&) {
    }
    const auto colon = spec.rfind(':');
    if (colon == std::string::npos || colon == 0)
        throw ConfigError("null spec '" + spec + "' must be zero, a number, or file.csv:column");
    const Table t = read_csv(spec.substr(0, colon));
    Eigen::VectorXd v = t.column(spec.substr(colon + 1));
    if (v.size() != size)
        throw InputError("null column has " + std::to_string(v.size()) + " values but the band has " +
                         std::to_string(size) + " points");
    return v;
}

inline int cmd_test(const RunConfig& cfg) {
    Context ctx = load(cfg);
    const BandSet set = compute_bands(ctx);
    const Eigen::VectorXd nulls = null_values(cfg.null_spec, set.bands.front().center.size());
    json results = json::array();
    for (std::size_t k = 0; k < set.bands.size(); ++k) {
        const BandEstimate& band = set.bands[k];
        const NullTestResult r = test_uniform_null(band, nulls);
        json viol = json::array();
        for (std::size_t idx : r.violations) {
            const auto j = static_cast<Eigen::Index>(idx);
            json v = {{"index", idx}, {"t", band.grid(j)}};
            if (band.is_pair_band()) v["t0"] = band.grid0(j);
            v["null"] = nulls(j);
            v["lower"] = band.lower(j);
            v["upper"] = band.upper(j);
            viol.push_back(v);
        }
        results.push_back({{"level", cfg.levels[k]},
                           {"alpha", 1.0 - cfg.levels[k]},
                           {"reject", r.reject},
                           {"violations", viol}});
    }
    const fs::path dir = prepare_out(cfg);
    json verdict;
    verdict["target"] = cfg.target;
    verdict["null"] = cfg.null_spec;
    verdict["results"] = results;
    verdict["meta"] = provenance(ctx, "test");
    write_json(dir / "verdict.json", verdict);
    return kOk;
}

inline int cmd_tune(const RunConfig& cfg) {
    Context ctx = load(cfg);
    const double h_tilde = cv_pilot(ctx);
    json report;
    report["h_tilde"] = h_tilde;
    const fs::path dir = prepare_out(cfg);
    CsvWriter prof((dir / "distance_profile.csv").string(), {"target", "j", "h", "distance"});
    for (Target target : {Target::g, Target::gprime}) {
        const char* name = to_string(target);
        try {
            const UndersmoothResult us = undersmooth_bandwidth(ctx.data, ctx.model.center().values, ctx.loss, ctx.grid,
                                                               h_tilde, target, undersmooth_config(cfg));
            report["undersmooth"][name] = undersmooth_json(us);
            for (std::size_t j = 0; j < us.profile.size(); ++j)
                prof.row({name, std::to_string(j + 1), fmt(us.ladder[j + 1]), fmt(us.profile[j])});
        } catch (const NumericError& e) {
            report["undersmooth"][name] = {{"error", e.what()}};
        }
        const LepskiConfig lc = lepski_candidates(ctx.data.size(), h_tilde, target);
        json lj = {{"j_min", lc.j_min}, {"j_max", lc.j_max}, {"h_seed", lc.h_seed},
                   {"gamma_n", lc.gamma_n}, {"candidates", lc.bandwidths}};
        if (cfg.bootstrap >= 2) {
            try {
                Context sub = ctx;
                sub.resolved = json::object();
                const LepskiRun run = run_lepski(sub, target);
                lj = sub.resolved["lepski"];
                lj["h_hat"] = run.selection.h_hat;
                json chat = json::array();
                for (double level : cfg.levels)
                    chat.push_back({{"level", level},
                                    {"c_hat", lepski_band(run.inputs, run.config, 1.0 - level, &run.selection).c_hat}});
                lj["c_hat"] = chat;
            } catch (const NumericError& e) {
                lj["error"] = e.what();
            }
        }
        report["lepski"][name] = lj;
    }
    ctx.resolved["report"] = report;
    json out = report;
    out["meta"] = provenance(ctx, "tune");
    out["meta"].erase("resolved");
    write_json(dir / "tuning.json", out);
    return kOk;
}

inline ExperimentConfig experiment_from(const RunConfig& cfg, std::string& measure, std::size_t threads) {
    ExperimentConfig e;
    e.reps = cfg.reps;
    e.B = cfg.bootstrap;
    e.seed = cfg.seed;
    e.levels = cfg.levels;
    e.threads = threads;
    e.run_naive = cfg.sim_naive;
    e.sieve.k1 = cfg.k1;
    e.sieve.k2 = cfg.k2;
    e.folds = cfg.folds;
    e.cv_bandwidth_count = cfg.cv_count;
    e.undersmooth.J = cfg.ladder_j;
    e.undersmooth.j_override = cfg.j_override > 0 ? cfg.j_override : 18;
    measure = cfg.measure;
    std::string method = cfg.tuning == "lepski" ? "lepski" : "undersmooth";
    std::vector<std::string> dgps = cfg.dgps;
    std::vector<std::size_t> sizes = cfg.sizes;
    if (!cfg.preset.empty()) {
        static const std::map<std::string, std::pair<std::string, std::string>> presets{
            {"table1", {"coverage", "undersmooth"}}, {"table2", {"coverage", "lepski"}},
            {"table3", {"rejection", "undersmooth"}}, {"table4", {"rejection", "lepski"}},
            {"table5", {"bias", "undersmooth"}},      {"table6", {"bias", "lepski"}}};
        const auto it = presets.find(cfg.preset);
        if (it == presets.end()) throw ConfigError("unknown preset '" + cfg.preset + "' (table1 .. table6)");
        measure = it->second.first;
        method = it->second.second;
        dgps = {"DGP0", "DGP1L", "DGP1NL"};
        sizes = {400, 800, 1200};
        e.levels = {0.99, 0.95, 0.90};
    }
    if (e.levels.empty()) e.levels = {0.99, 0.95, 0.90};
    e.band_method = method == "lepski" ? BandMethod::lepski : BandMethod::undersmooth;
    std::vector<LossSpec> losses{LossSpec::squared()};
    for (double q : cfg.quantiles) losses.push_back(LossSpec::quantile(q));
    if (cfg.loss != "squared" && cfg.quantiles.empty()) losses = {parse_loss(cfg.loss)};
    for (const auto& loss : losses)
        for (std::size_t n : sizes)
            for (const auto& d : dgps) e.cells.push_back({parse_dgp(d), n, loss});
    return e;
}

inline int export_sample(const RunConfig& cfg) {
    if (cfg.dgps.empty() || cfg.sizes.empty()) throw ConfigError("--export needs --dgp and --n");
    const Dataset ds = sample_dgp({parse_dgp(cfg.dgps.front()), cfg.sizes.front(), cfg.seed});
    CsvWriter w(cfg.export_path, {"t", "z", "w", "y"});
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        w.row({ds.t()(k), ds.x()(k, 0), ds.x()(k, 1), ds.y()(k)});
    }
    return kOk;
}

inline int cmd_simulate(const RunConfig& cfg) {
    if (!cfg.export_path.empty()) return export_sample(cfg);
    validate(cfg);
    const std::size_t threads = cfg.threads == 0 ? default_threads() : cfg.threads;
    std::string measure;
    ExperimentConfig e = experiment_from(cfg, measure, threads);
    ExperimentReport report;
    if (measure == "coverage")
        report = run_coverage_experiment(e);
    else if (measure == "rejection")
        report = run_rejection_experiment(e);
    else if (measure == "bias")
        report = bias_variance_table(e);
    else
        throw ConfigError("unknown measure '" + measure + "' (coverage, rejection or bias)");

    const fs::path dir = prepare_out(cfg);
    {
        CsvWriter w((dir / "report.csv").string(),
                    {"dgp", "n", "loss", "method", "band_method", "measure", "level", "rate", "mean_width",
                     "sq_bias_x1000", "variance_x1000", "replications", "failures", "seed"});
        for (const auto& r : report.rows)
            w.row({r.dgp, std::to_string(r.n), r.loss, r.method, r.band_method, r.measure, fmt(r.level), fmt(r.rate),
                   fmt(r.mean_width), fmt(r.sq_bias_x1000), fmt(r.variance_x1000), std::to_string(r.replications),
                   std::to_string(r.failures), std::to_string(r.seed)});
    }
    // Wide layout: one row per (loss, n, method), one cell per design and level.
    {
        std::vector<std::string> designs;
        for (const auto& c : e.cells)
            if (std::find(designs.begin(), designs.end(), to_string(c.dgp)) == designs.end())
                designs.push_back(to_string(c.dgp));
        std::vector<std::string> header{"loss", "n", "method"};
        std::vector<std::string> measures;
        if (measure == "bias")
            measures = {"bias_variance_g", "bias_variance_gprime"};
        for (const auto& d : designs) {
            if (measure == "bias") {
                for (const char* m : {"g", "gprime"}) header.push_back(d + "_" + m);
            } else {
                for (double l : e.levels) header.push_back(d + "_" + level_tag(l));
            }
        }
        CsvWriter w((dir / "table.csv").string(), header);
        std::vector<std::tuple<std::string, std::size_t, std::string>> keys;
        for (const auto& r : report.rows) {
            auto key = std::make_tuple(r.loss, r.n, r.method);
            if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
        }
        for (const auto& [loss, n, method] : keys) {
            std::vector<std::string> row{loss, std::to_string(n), method};
            for (const auto& d : designs) {
                auto cell = [&](const std::string& m, double level) -> std::string {
                    for (const auto& r : report.rows)
                        if (r.loss == loss && r.n == n && r.method == method && r.dgp == d && r.measure == m &&
                            std::abs(r.level - level) < 1e-9) {
                            char buf[64];
                            if (measure == "bias")
                                std::snprintf(buf, sizeof buf, "%.2f (%.3g)", r.sq_bias_x1000, r.variance_x1000);
                            else
                                std::snprintf(buf, sizeof buf, "%.3f (%.1f)", r.rate, r.mean_width);
                            return buf;
                        }
                    return "";
                };
                if (measure == "bias") {
                    for (const auto& m : measures) row.push_back(cell(m, 0.0));
                } else {
                    for (double l : e.levels) row.push_back(cell(measure, l));
                }
            }
            w.row(row);
        }
    }
    json rows = json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"dgp", r.dgp}, {"n", r.n}, {"loss", r.loss}, {"method", r.method},
                        {"band_method", r.band_method}, {"measure", r.measure}, {"level", r.level},
                        {"rate", r.rate}, {"mean_width", r.mean_width}, {"sq_bias_x1000", r.sq_bias_x1000},
                        {"variance_x1000", r.variance_x1000}, {"replications", r.replications},
                        {"failures", r.failures}});
    const json config = to_json(cfg);
    json out;
    out["rows"] = rows;
    out["log"] = report.log;
    out["meta"] = {{"command", "simulate"},
                   {"version", kVersion},
                   {"config_hash", hex64(fnv1a(config.dump()))},
                   {"seed", cfg.seed},
                   {"config", config},
                   {"oracle_draws", e.oracle_draws},
                   {"oracle_seed", e.oracle_seed},
                   {"j", *e.undersmooth.j_override},
                   {"J", e.undersmooth.J}};
    write_json(dir / "report.json", out);
    return kOk;
}

inline int cmd_diagnose(const RunConfig& cfg) {
    Context ctx = load(cfg);
    const WeightSummary s = summarize(ctx.model.center());
    const fs::path dir = prepare_out(cfg);
    {
        CsvWriter w((dir / "weights.csv").string(), {"row", "weight"});
        const Eigen::VectorXd& v = ctx.model.center().values;
        for (Eigen::Index i = 0; i < v.size(); ++i) w.row({std::to_string(i + 1), fmt(v(i))});
    }
    json d;
    d["weights"] = {{"mean", s.mean}, {"min", s.min}, {"max", s.max}, {"variance", s.var},
                    {"has_negative", s.has_negative}, {"ridge_fallback", s.condition_flag}};
    if (!ctx.model.is_naive()) {
        const BasisDiagnostics bd = diagnose_basis(ctx.model.basis());
        std::vector<double> eig(bd.eigenvalues.data(), bd.eigenvalues.data() + bd.eigenvalues.size());
        d["basis"] = {{"K", ctx.model.basis().dim()},
                      {"eigenvalues", eig},
                      {"min_eigenvalue", bd.min_eigenvalue},
                      {"max_eigenvalue", bd.max_eigenvalue},
                      {"condition_number", std::isfinite(bd.condition_number) ? json(bd.condition_number) : json(nullptr)},
                      {"ill_conditioned", bd.ill_conditioned}};
        const Eigen::VectorXd residual =
            ctx.model.basis().u * ctx.model.center().values / static_cast<double>(ctx.data.size()) -
            ctx.model.target().b;
        d["balance_residual_max"] = residual.cwiseAbs().maxCoeff();
    }
    d["meta"] = provenance(ctx, "diagnose");
    write_json(dir / "diagnostics.json", d);
    return kOk;
}

inline int exit_code(const Error& e) {
    switch (e.kind()) {
        case Error::Kind::numeric: return kNumeric;
        case Error::Kind::input: return kInput;
        case Error::Kind::config: return kConfig;
        case Error::Kind::dimension: return kInput;
    }
    return kNumeric;
}

}  // namespace unidrf::cli

int main(int argc, char** argv) {
    using namespace unidrf::cli;
    CLI::App app{"Uniform inference for dose-response functions of a continuous treatment"};
    app.set_version_flag("--version", unidrf::kVersion);
    app.require_subcommand(1);

    RunConfig cfg;
    std::string config_path;
    Bindings bindings;
    struct Command {
        const char* name;
        const char* help;
        int (*run)(const RunConfig&);
    };
    const std::vector<Command> commands{
        {"estimate", "estimate g and g' on the grid (curve.csv, meta.json)", cmd_estimate},
        {"band", "uniform confidence band (band.csv, meta.json)", cmd_band},
        {"test", "test a uniform null against the band (verdict.json)", cmd_test},
        {"tune", "cross-validation, undersmoothing and Lepski report (tuning.json, distance_profile.csv)", cmd_tune},
        {"simulate", "Monte Carlo experiment (report.csv, table.csv, report.json)", cmd_simulate},
        {"diagnose", "balancing weight and basis diagnostics (weights.csv, diagnostics.json)", cmd_diagnose},
    };
    std::vector<std::pair<CLI::App*, const Command*>> subs;
    for (const auto& c : commands) {
        CLI::App* sub = app.add_subcommand(c.name, c.help);
        // Options are shared across subcommands; only one subcommand runs.
        Bindings local;
        add_shared(sub, cfg, local, config_path);
        if (std::string(c.name) == "test")
            local.options["null"] = sub->add_option("--null", cfg.null_spec, "zero | constant | file.csv:column");
        if (std::string(c.name) == "simulate") {
            local.options["preset"] = sub->add_option("--preset", cfg.preset, "table1 .. table6");
            local.options["dgps"] = sub->add_option("--dgp", cfg.dgps, "DGP0, DGP1L, DGP1NL")->delimiter(',');
            local.options["sizes"] = sub->add_option("--n", cfg.sizes, "sample sizes")->delimiter(',');
            local.options["quantiles"] =
                sub->add_option("--quantiles", cfg.quantiles, "extra quantile-loss cells")->delimiter(',');
            local.options["reps"] = sub->add_option("--reps", cfg.reps, "replications per cell");
            local.options["measure"] = sub->add_option("--measure", cfg.measure, "coverage | rejection | bias");
            local.options["sim_naive"] =
                sub->add_flag("--proposed-only{false}", cfg.sim_naive, "skip the naive estimator");
            sub->add_option("--export", cfg.export_path, "write one sample (t,z,w,y) of --dgp/--n/--seed to this CSV");
        }
        subs.emplace_back(sub, &c);
        sub->callback([sub, &bindings, local]() {
            if (sub->parsed()) bindings = local;
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    for (const auto& [sub, command] : subs) {
        if (!sub->parsed()) continue;
        try {
            if (!config_path.empty()) merge_config(config_path, cfg, bindings);
            return command->run(cfg);
        } catch (const unidrf::Error& e) {
            std::cerr << "error: " << e.what() << '\n';
            return exit_code(e);
        } catch (const nlohmann::json::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return kConfig;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return kNumeric;
        }
    }
    return kConfig;
}
