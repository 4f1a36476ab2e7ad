#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

namespace unidrf {
namespace {

TEST(Dgp, ParseAndName) {
    EXPECT_EQ(parse_dgp("DGP0"), DgpKind::dgp0);
    EXPECT_EQ(parse_dgp("dgp1l"), DgpKind::dgp1l);
    EXPECT_EQ(parse_dgp("DGP1NL"), DgpKind::dgp1nl);
    EXPECT_THROW(parse_dgp("DGP2"), ConfigError);
    EXPECT_STREQ(to_string(DgpKind::dgp1nl), "DGP1NL");
}

TEST(Dgp, StructuralEquations) {
    const DgpNoise e{0.4, -1.0, 0.5, 2.0};
    EXPECT_DOUBLE_EQ(dgp_w(e), 0.5 * 0.4 - 0.5);
    EXPECT_DOUBLE_EQ(dgp_t(e), 0.1 * (0.2 - 0.5) + 0.04 + 0.2);
    const double w = dgp_w(e);
    EXPECT_DOUBLE_EQ(dgp_potential(DgpKind::dgp0, 1.3, e), std::exp(0.08 - 0.5 * w) + 0.2);
    EXPECT_DOUBLE_EQ(dgp_potential(DgpKind::dgp1l, 1.3, e), 0.78 + 0.28 - 2.0 * w + 0.2);
    EXPECT_DOUBLE_EQ(dgp_potential(DgpKind::dgp1nl, 1.3, e), 0.75 * std::exp(1.3) + 0.6 * 0.064 - 3.0 * w + 0.2);
}

TEST(Dgp, SamplesAreSeededAndConfounded) {
    const Dataset a = sample_dgp({DgpKind::dgp1l, 2000, 3});
    const Dataset b = sample_dgp({DgpKind::dgp1l, 2000, 3});
    const Dataset c = sample_dgp({DgpKind::dgp1l, 2000, 4});
    EXPECT_EQ(a.y(), b.y());
    EXPECT_NE(a.y(), c.y());
    ASSERT_EQ(a.covariate_dim(), 2u);
    EXPECT_LE(a.x().col(0).cwiseAbs().maxCoeff(), 0.65);
    const Eigen::VectorXd tc = a.t().array() - a.t().mean();
    const Eigen::VectorXd zc = a.x().col(0).array() - a.x().col(0).mean();
    EXPECT_GT(tc.dot(zc) / std::sqrt(tc.squaredNorm() * zc.squaredNorm()), 0.1);
    EXPECT_THROW(sample_dgp({DgpKind::dgp0, 49, 1}), ConfigError);
}

// Each oracle curve is compared with its closed form at 5 Monte Carlo SEs.
TEST(Truth, AverageCurvesMatchClosedForms) {
    const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(5, -0.3, 0.3);
    const double dgp0 = std::sinh(0.0325) / 0.0325 * std::exp(0.03125);
    const TruthCurve t0 = true_curve(DgpKind::dgp0, LossSpec::squared(), grid);
    const TruthCurve t1 = true_curve(DgpKind::dgp1l, LossSpec::squared(), grid);
    const TruthCurve t2 = true_curve(DgpKind::dgp1nl, LossSpec::squared(), grid);
    for (Eigen::Index j = 0; j < grid.size(); ++j) {
        EXPECT_NEAR(t0.g(j), dgp0, 5.0 * t0.g_se(j));
        EXPECT_NEAR(t1.g(j), 0.6 * grid(j), 5.0 * t1.g_se(j));
        EXPECT_NEAR(t2.g(j), 0.75 * std::exp(grid(j)), 5.0 * t2.g_se(j));
        EXPECT_DOUBLE_EQ(t0.gprime(j), 0.0);
        EXPECT_DOUBLE_EQ(t1.gprime(j), 0.6);
        EXPECT_DOUBLE_EQ(t2.gprime(j), 0.75 * std::exp(grid(j)));
    }
}

TEST(Truth, QuantileCurveShiftsWithLinearDose) {
    const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(4, -0.2, 0.2);
    const TruthCurve tq = true_curve(DgpKind::dgp1l, LossSpec::quantile(0.45), grid);
    for (Eigen::Index j = 1; j < grid.size(); ++j)
        EXPECT_NEAR(tq.g(j) - 0.6 * grid(j), tq.g(0) - 0.6 * grid(0), 1e-12);
    const TruthCurve t0 = true_curve(DgpKind::dgp0, LossSpec::quantile(0.45), grid);
    EXPECT_DOUBLE_EQ(t0.g(0), t0.g(3));
}

TEST(Truth, RequiresEnoughDraws) {
    EXPECT_THROW(true_curve(DgpKind::dgp0, LossSpec::squared(), Eigen::VectorXd::Zero(1), 1000), ConfigError);
}

ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.cells = {{DgpKind::dgp0, 200, LossSpec::squared()}};
    cfg.reps = 4;
    cfg.B = 40;
    cfg.grid_points = 8;
    cfg.cv_bandwidth_count = 5;
    cfg.oracle_draws = 100000;
    cfg.seed = 7;
    return cfg;
}

TEST(Experiment, ReportRowsPerMethodAndLevel) {
    const ExperimentReport rep = run_coverage_experiment(tiny_config());
    EXPECT_EQ(rep.rows.size(), 6u);
    const ReportRow* row = rep.find("DGP0", 200, "proposed", "coverage", 0.95);
    ASSERT_NE(row, nullptr);
    EXPECT_EQ(row->replications + row->failures, 4u);
    EXPECT_GE(row->rate, 0.0);
    EXPECT_LE(row->rate, 1.0);
    EXPECT_GT(row->mean_width, 0.0);
    EXPECT_NE(rep.find("DGP0", 200, "naive", "coverage", 0.99), nullptr);
}

TEST(Experiment, DeterministicAcrossThreadCounts) {
    ExperimentConfig one = tiny_config();
    ExperimentConfig many = tiny_config();
    one.threads = 1;
    many.threads = 3;
    const ExperimentReport a = run_coverage_experiment(one);
    const ExperimentReport b = run_coverage_experiment(many);
    ASSERT_EQ(a.rows.size(), b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        EXPECT_EQ(a.rows[i].rate, b.rows[i].rate);
        EXPECT_EQ(a.rows[i].mean_width, b.rows[i].mean_width);
    }
}

TEST(Experiment, BiasVarianceRows) {
    ExperimentConfig cfg = tiny_config();
    cfg.cells = {{DgpKind::dgp1l, 200, LossSpec::squared()}};
    const ExperimentReport rep = bias_variance_table(cfg);
    const ReportRow* g = rep.find("DGP1L", 200, "proposed", "bias_variance_g");
    const ReportRow* n = rep.find("DGP1L", 200, "naive", "bias_variance_g");
    ASSERT_NE(g, nullptr);
    ASSERT_NE(n, nullptr);
    EXPECT_GE(g->sq_bias_x1000, 0.0);
    EXPECT_GT(g->variance_x1000, 0.0);
    EXPECT_NE(rep.find("DGP1L", 200, "proposed", "bias_variance_gprime"), nullptr);
}

}  // namespace
}  // namespace unidrf
