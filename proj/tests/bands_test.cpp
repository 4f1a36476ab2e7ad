#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "test_support.hpp"

namespace unidrf {
namespace {

TEST(OrderStatistics, UpperOrderStatisticUsesCeiling) {
    std::vector<double> v(100);
    for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = 100.0 - i;  // 100 down to 1
    EXPECT_DOUBLE_EQ(upper_order_statistic(v, 0.95), 95.0);
    EXPECT_DOUBLE_EQ(upper_order_statistic(v, 0.90), 90.0);
    EXPECT_DOUBLE_EQ(upper_order_statistic(v, 0.951), 96.0);
    EXPECT_DOUBLE_EQ(upper_order_statistic(v, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(upper_order_statistic(v, 1.0), 100.0);
    EXPECT_DOUBLE_EQ(upper_order_statistic({3.0, 1.0, 2.0}, 0.5), 2.0);
}

TEST(OrderStatistics, EmpiricalQuantileInterpolates) {
    EXPECT_DOUBLE_EQ(empirical_quantile({4.0, 1.0, 3.0, 2.0}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(empirical_quantile({4.0, 1.0, 3.0, 2.0}, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(empirical_quantile({4.0, 1.0, 3.0, 2.0}, 1.0), 4.0);
    EXPECT_THROW(empirical_quantile({}, 0.5), InputError);
}

TEST(Scale, SdAndIqrOfKnownColumns) {
    Eigen::MatrixXd dev(4, 2);
    dev << 1, 0, 2, 0, 3, 4, 4, 8;
    const ScaleEstimate sd = scale_sd(dev);
    EXPECT_NEAR(sd.sigma(0), std::sqrt(5.0 / 3.0), 1e-15);
    const ScaleEstimate iqr = scale_normalized_iqr(dev);
    EXPECT_NEAR(iqr.sigma(0), (3.25 - 1.75) / kNormalIqr, 1e-15);
    EXPECT_NEAR(iqr.sigma(1), (5.0 - 0.0) / kNormalIqr, 1e-15);
}

TEST(Scale, ZeroSpreadIsNumericError) {
    EXPECT_THROW(scale_sd(Eigen::MatrixXd::Zero(5, 3)), NumericError);
}

TEST(CriticalValue, OrderStatisticOfSupStatistics) {
    std::mt19937_64 eng(4);
    std::normal_distribution<double> norm;
    Eigen::MatrixXd dev(200, 6);
    for (Eigen::Index b = 0; b < 200; ++b)
        for (Eigen::Index j = 0; j < 6; ++j) dev(b, j) = norm(eng) * (j + 1);
    Eigen::VectorXd sigma(6);
    for (Eigen::Index j = 0; j < 6; ++j) sigma(j) = j + 1.0;
    std::vector<double> sups;
    for (Eigen::Index b = 0; b < 200; ++b) {
        double m = 0.0;
        for (Eigen::Index j = 0; j < 6; ++j) m = std::max(m, std::abs(dev(b, j) / sigma(j)));
        sups.push_back(m);
    }
    std::sort(sups.begin(), sups.end());
    EXPECT_DOUBLE_EQ(critical_value(dev, sigma, 0.05), sups[189]);
    EXPECT_DOUBLE_EQ(critical_value(dev, sigma, 0.10), sups[179]);
    EXPECT_THROW(critical_value(dev, sigma, 1.0), ConfigError);
}

class EnsembleTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        ds_ = new Dataset(testing::random_dataset(300, 2, 41));
        model_ = new WeightModel(WeightModel::proposed(*ds_, SieveConfig{}));
        grid_ = new Eigen::VectorXd(default_grid(ds_->t(), 15));
        ens_ = new BootstrapEnsemble(
            bootstrap_curves(*ds_, *model_, LossSpec::squared(), *grid_, KernelConfig{0.5}, 200, 17));
    }
    static void TearDownTestSuite() {
        delete ens_;
        delete grid_;
        delete model_;
        delete ds_;
    }
    static Dataset* ds_;
    static WeightModel* model_;
    static Eigen::VectorXd* grid_;
    static BootstrapEnsemble* ens_;
};

Dataset* EnsembleTest::ds_ = nullptr;
WeightModel* EnsembleTest::model_ = nullptr;
Eigen::VectorXd* EnsembleTest::grid_ = nullptr;
BootstrapEnsemble* EnsembleTest::ens_ = nullptr;

TEST_F(EnsembleTest, CenterMatchesPlainEstimate) {
    const CurveEstimate c = estimate_curve(*ds_, model_->center(), LossSpec::squared(), *grid_, KernelConfig{0.5});
    EXPECT_EQ(ens_->center.g, c.g);
    EXPECT_EQ(ens_->center.gprime, c.gprime);
    EXPECT_EQ(ens_->replicates.size() + ens_->dropped.size(), 200u);
}

TEST_F(EnsembleTest, BandsNestAcrossLevels) {
    for (Target target : {Target::g, Target::gprime}) {
        for (ScaleMethod m : {ScaleMethod::bootstrap_sd, ScaleMethod::normalized_iqr}) {
            const BandEstimate b99 = uniform_band(*ens_, target, 0.01, m);
            const BandEstimate b95 = uniform_band(*ens_, target, 0.05, m);
            const BandEstimate b90 = uniform_band(*ens_, target, 0.10, m);
            EXPECT_GE(b99.c_alpha, b95.c_alpha);
            EXPECT_GE(b95.c_alpha, b90.c_alpha);
            for (Eigen::Index j = 0; j < grid_->size(); ++j) {
                EXPECT_LE(b99.lower(j), b95.lower(j));
                EXPECT_LE(b95.lower(j), b90.lower(j));
                EXPECT_GE(b99.upper(j), b95.upper(j));
                EXPECT_GE(b95.upper(j), b90.upper(j));
                EXPECT_LE(b90.lower(j), b90.center(j));
                EXPECT_GE(b90.upper(j), b90.center(j));
            }
        }
    }
}

TEST_F(EnsembleTest, BandCoversItsOwnReplicatesAtNominalRate) {
    const BandEstimate band = uniform_band(*ens_, Target::g, 0.05);
    std::size_t inside = 0;
    for (const auto& r : ens_->replicates) {
        const Eigen::VectorXd dev = r.g - ens_->center.g;
        if (((dev.array() / band.sigma.array()).abs() <= band.c_alpha).all()) ++inside;
    }
    EXPECT_GE(static_cast<double>(inside) / ens_->replicates.size(), 0.95);
}

TEST_F(EnsembleTest, TauBandOverOffDiagonalPairs) {
    const BandEstimate band = band_for_tau(*ens_, 0.05);
    const Eigen::Index G = grid_->size();
    ASSERT_TRUE(band.is_pair_band());
    ASSERT_EQ(band.center.size(), G * (G - 1));
    for (Eigen::Index p = 0; p < band.center.size(); ++p) EXPECT_NE(band.grid(p), band.grid0(p));
    EXPECT_DOUBLE_EQ(band.center(0), ens_->center.g(0) - ens_->center.g(1));
    EXPECT_THROW(band_for_tau(*ens_, 0.05, ScaleMethod::bootstrap_sd, {{2, 2}}), ConfigError);
}

TEST_F(EnsembleTest, NullTestFlagsOnlyPointsOutsideTheBand) {
    const BandEstimate band = uniform_band(*ens_, Target::g, 0.05);
    EXPECT_FALSE(test_uniform_null(band, band.center).reject);
    Eigen::VectorXd shifted = band.center;
    shifted(3) = band.upper(3) + 1e-6;
    const NullTestResult r = test_uniform_null(band, shifted);
    EXPECT_TRUE(r.reject);
    ASSERT_EQ(r.violations.size(), 1u);
    EXPECT_EQ(r.violations[0], 3u);
    EXPECT_THROW(test_uniform_null(band, Eigen::VectorXd::Zero(3)), DimensionError);
}

TEST(Bootstrap, UnitMultipliersCollapseToCenter) {
    const Dataset ds = testing::random_dataset(150, 2, 5);
    const WeightModel model = WeightModel::proposed(ds, SieveConfig{});
    const Eigen::VectorXd grid = default_grid(ds.t(), 10);
    BootstrapOptions opts;
    opts.unit_multipliers = true;
    for (const LossSpec& loss : {LossSpec::squared(), LossSpec::quantile(0.4)}) {
        const BootstrapEnsemble ens = bootstrap_curves(ds, model, loss, grid, KernelConfig{0.6}, 5, 3, opts);
        ASSERT_EQ(ens.replicates.size(), 5u);
        for (const auto& r : ens.replicates) {
            EXPECT_EQ(r.g, ens.center.g);
            EXPECT_EQ(r.gprime, ens.center.gprime);
        }
    }
}

TEST(Bootstrap, DeterministicAndThreadIndependent) {
    const Dataset ds = testing::random_dataset(200, 2, 6);
    const WeightModel model = WeightModel::proposed(ds, SieveConfig{});
    const Eigen::VectorXd grid = default_grid(ds.t(), 8);
    BootstrapOptions one, four;
    four.threads = 4;
    const auto a = bootstrap_curves(ds, model, LossSpec::squared(), grid, KernelConfig{0.5}, 40, 11, one);
    const auto b = bootstrap_curves(ds, model, LossSpec::squared(), grid, KernelConfig{0.5}, 40, 11, four);
    ASSERT_EQ(a.replicates.size(), b.replicates.size());
    for (std::size_t r = 0; r < a.replicates.size(); ++r) EXPECT_EQ(a.replicates[r].g, b.replicates[r].g);
    const auto c = bootstrap_curves(ds, model, LossSpec::squared(), grid, KernelConfig{0.5}, 40, 12, one);
    EXPECT_NE(a.replicates[0].g, c.replicates[0].g);
}

TEST(Bootstrap, RejectsTooFewReplicates) {
    const Dataset ds = testing::random_dataset(100, 1, 6);
    const WeightModel model = WeightModel::naive(100);
    EXPECT_THROW(bootstrap_curves(ds, model, LossSpec::squared(), default_grid(ds.t(), 5), KernelConfig{0.5}, 1, 1),
                 ConfigError);
}

}  // namespace
}  // namespace unidrf
