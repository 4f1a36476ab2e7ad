#include <gtest/gtest.h>

#include <chrono>
#include <random>

#include "test_support.hpp"

namespace unidrf {
namespace {

struct Instance {
    Dataset ds;
    SieveConfig cfg;
};

// n <= 50 and K <= 10.
Instance random_instance(std::mt19937_64& eng) {
    struct Shape {
        int k1, k2;
        std::size_t d;
    };
    static const Shape shapes[] = {{1, 1, 1}, {2, 1, 1}, {1, 1, 2}, {2, 1, 2}, {1, 1, 3},
                                   {1, 2, 2}, {4, 1, 1}, {0, 1, 3}, {3, 1, 1}, {1, 1, 4}};
    const Shape s = shapes[eng() % std::size(shapes)];
    SieveConfig cfg;
    cfg.k1 = s.k1;
    cfg.k2 = s.k2;
    const std::size_t K = cfg.dimension(s.d);
    const std::size_t n = K + 5 + eng() % (46 - K);
    return {testing::random_dataset(n, s.d, eng()), cfg};
}

MomentTarget brute_force_target(const Basis& b) {
    const std::size_t n = b.n();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(b.dim()));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) sum += b.mixed(i, j);
    return {sum / (static_cast<double>(n) * static_cast<double>(n - 1))};
}

TEST(TargetMoments, FactorizedFormMatchesPairSum) {
    std::mt19937_64 eng(99);
    for (int rep = 0; rep < 20; ++rep) {
        const Instance in = random_instance(eng);
        const Basis b = build_basis(in.ds, in.cfg);
        const Eigen::VectorXd fast = target_moments(b).b;
        const Eigen::VectorXd slow = brute_force_target(b).b;
        EXPECT_LT((fast - slow).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, slow.cwiseAbs().maxCoeff()));
    }
}

TEST(MinVarianceWeights, MatchKktOracleOnRandomInstances) {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 eng(2024);
    for (int rep = 0; rep < 100; ++rep) {
        const Instance in = random_instance(eng);
        const Basis b = build_basis(in.ds, in.cfg);
        const MomentTarget target = target_moments(b);
        const WeightSet w = min_variance_weights(b, target);
        const WeightSet oracle = qp_oracle_weights(b, target);
        const double n = static_cast<double>(b.n());

        EXPECT_LT((w.values - oracle.values).cwiseAbs().maxCoeff(), 1e-8) << "instance " << rep;
        const Eigen::VectorXd residual = b.u * w.values / n - target.b;
        EXPECT_LT(residual.cwiseAbs().maxCoeff(), 1e-10) << "instance " << rep;
        EXPECT_NEAR(w.values.mean(), 1.0, 1e-12) << "instance " << rep;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EXPECT_LT(secs, 10.0);
}

TEST(MinVarianceWeights, DualCoefficientsReproduceWeights) {
    const Dataset ds = testing::random_dataset(80, 2, 4);
    const Basis b = build_basis(ds, SieveConfig{});
    const WeightSet w = min_variance_weights(b);
    const Eigen::VectorXd rebuilt = Eigen::VectorXd::Ones(80) - b.u.transpose() * w.gamma;
    EXPECT_EQ((rebuilt - w.values).cwiseAbs().maxCoeff(), 0.0);
    const WeightSet oracle = qp_oracle_weights(b, target_moments(b));
    EXPECT_LT((oracle.gamma - w.gamma).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, w.gamma.cwiseAbs().maxCoeff()));
}

TEST(MinVarianceWeights, IndependentDesignGivesNearUnitWeights) {
    // T independent of X: the balancing constraints hold approximately at pi = 1.
    std::mt19937_64 eng(8);
    std::normal_distribution<double> norm;
    Eigen::VectorXd t(4000), y(4000);
    Eigen::MatrixXd x(4000, 1);
    for (Eigen::Index i = 0; i < 4000; ++i) {
        t(i) = norm(eng);
        x(i, 0) = norm(eng);
        y(i) = norm(eng);
    }
    const WeightSet w = min_variance_weights(Dataset(t, x, y), SieveConfig{});
    const WeightSummary s = summarize(w);
    EXPECT_NEAR(s.mean, 1.0, 1e-12);
    EXPECT_LT(s.var, 0.01);
}

TEST(MinVarianceWeights, SingularGramUsesRidgeFallback) {
    const Dataset base = testing::random_dataset(60, 1, 6);
    Eigen::MatrixXd x(60, 2);
    x.col(0) = base.x().col(0);
    x.col(1) = base.x().col(0);
    const WeightSet w = min_variance_weights(Dataset(base.t(), x, base.y()), SieveConfig{});
    EXPECT_TRUE(w.degraded_conditioning);
    EXPECT_TRUE(summarize(w).condition_flag);
    EXPECT_TRUE(w.values.allFinite());
}

TEST(BootstrapWeights, SatisfyPerturbedConstraints) {
    const Dataset ds = testing::random_dataset(120, 2, 12);
    const Basis b = build_basis(ds, SieveConfig{});
    const MomentTarget target = target_moments(b);
    const MultiplierDraw draw = draw_multiplier(120, 77, 3);
    const WeightSet w = bootstrap_weights(b, target, draw, 3);
    EXPECT_EQ(w.source, WeightSource::bootstrap);
    EXPECT_EQ(w.replicate, 3u);
    const Eigen::VectorXd residual = b.u * draw.xi.cwiseProduct(w.values) / 120.0 - target.b;
    EXPECT_LT(residual.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(BootstrapWeights, UnitMultipliersCollapseToCenter) {
    const Dataset ds = testing::random_dataset(100, 2, 13);
    const WeightModel model = WeightModel::proposed(ds, SieveConfig{});
    const WeightSet w = model.replicate(MultiplierDraw{Eigen::VectorXd::Ones(100)}, 0);
    EXPECT_EQ((w.values - model.center().values).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((w.gamma - model.center().gamma).cwiseAbs().maxCoeff(), 0.0);
}

TEST(BootstrapWeights, RejectsMisalignedMultipliers) {
    const Dataset ds = testing::random_dataset(50, 1, 2);
    const WeightModel model = WeightModel::proposed(ds, SieveConfig{});
    EXPECT_THROW(model.replicate(MultiplierDraw{Eigen::VectorXd::Ones(49)}, 0), DimensionError);
}

TEST(NaiveModel, UnitWeightsEverywhere) {
    const WeightModel model = WeightModel::naive(30);
    EXPECT_TRUE(model.is_naive());
    EXPECT_EQ(model.center().values, Eigen::VectorXd::Ones(30));
    const WeightSet w = model.replicate(draw_multiplier(30, 1, 0), 5);
    EXPECT_EQ(w.values, Eigen::VectorXd::Ones(30));
    EXPECT_EQ(w.replicate, 5u);
}

TEST(Multipliers, TakeValuesZeroOrTwoWithUnitMean) {
    const MultiplierDraw d = draw_multiplier(20000, 5, 0);
    for (Eigen::Index i = 0; i < d.xi.size(); ++i) EXPECT_TRUE(d.xi(i) == 0.0 || d.xi(i) == 2.0);
    const double mean = d.xi.mean();
    const double var = (d.xi.array() - mean).square().mean();
    // Binomial SE of the mean is 1 / sqrt(20000) ~ 0.007.
    EXPECT_NEAR(mean, 1.0, 0.03);
    EXPECT_NEAR(var, 1.0, 0.03);
}

TEST(Multipliers, DeterministicPerSeedAndReplicate) {
    EXPECT_EQ(draw_multiplier(64, 9, 4).xi, draw_multiplier(64, 9, 4).xi);
    EXPECT_NE(draw_multiplier(64, 9, 4).xi, draw_multiplier(64, 9, 5).xi);
    EXPECT_NE(draw_multiplier(64, 9, 4).xi, draw_multiplier(64, 10, 4).xi);
}

TEST(DeriveSeed, DistinctKeysGiveDistinctSeeds) {
    EXPECT_NE(derive_seed(1, {1, 2}), derive_seed(1, {2, 1}));
    EXPECT_NE(derive_seed(1, {0}), derive_seed(2, {0}));
    EXPECT_EQ(derive_seed(3, {4, 5}), derive_seed(3, {4, 5}));
}

}  // namespace
}  // namespace unidrf
