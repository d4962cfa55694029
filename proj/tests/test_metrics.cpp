#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedsim/errors.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/metrics.hpp"
#include "support/oracles.hpp"

namespace fedsim {
namespace {

LossModel scalar_quadratic(double c, double s = 1.0) {
  return LossModel::quadratic(Eigen::VectorXd::Constant(1, c), Eigen::MatrixXd::Constant(1, 1, s));
}

Federation logistic_federation(std::size_t m, std::size_t n_each, std::uint64_t seed) {
  FederatedDataset data;
  data.inputs = 3;
  data.classes = 3;
  for (std::size_t k = 0; k < m; ++k) data.shards.push_back(oracle::random_shard(n_each, 3, 3, seed + k));
  data.test = oracle::random_shard(30, 3, 3, seed + 100);
  data.refresh_meta();
  return make_federation(std::move(data), LossModel::logistic(3, 3));
}

TEST(Metrics, GlobalLossSingleDeviceAndHandWorked) {
  const auto one = make_quadratic_federation({scalar_quadratic(2.0)});
  EXPECT_EQ(global_loss(ParamVector::Zero(1), one), loss_value(one.models[0], ParamVector::Zero(1), {}));
  const auto two = make_quadratic_federation({scalar_quadratic(1.0), scalar_quadratic(-1.0)});
  EXPECT_DOUBLE_EQ(global_loss(ParamVector::Zero(1), two), 0.5);
}

TEST(Metrics, BalancedGlobalLossEqualsPooled) {
  const auto fed = logistic_federation(4, 25, 3);
  const auto theta = oracle::random_params(12, 0.4, 1);
  EXPECT_NEAR(global_loss(theta, fed), loss_value(fed.models[0], theta, fed.data.pooled()), 1e-12);
}

TEST(Metrics, StationarityAtOptimum) {
  const auto fed = random_quadratic_ensemble(5, 4, 1.0, 4.0, 1.0, 7);
  const auto opt = quadratic_optimum(fed);
  EXPECT_LE(stationarity_norm(opt.theta, fed), 1e-12);
  EXPECT_NEAR(global_loss(opt.theta, fed), opt.loss, 1e-12);
}

TEST(Metrics, StationarityUnequalCurvature) {
  // S1 = I, S2 = 2I, c = +-1: global min (S1 + S2)^-1 (c1 S1 + c2 S2) = -1/3
  const auto fed = make_quadratic_federation({scalar_quadratic(1.0, 1.0), scalar_quadratic(-1.0, 2.0)});
  EXPECT_NEAR(quadratic_optimum(fed).theta(0), -1.0 / 3.0, 1e-15);
  EXPECT_NEAR(stationarity_norm(ParamVector::Zero(1), fed), 0.5, 1e-15);
  EXPECT_LE(stationarity_norm(ParamVector::Constant(1, -1.0 / 3.0), fed), 1e-15);
}

TEST(Metrics, StationarityOnLogistic) {
  const auto fed = logistic_federation(3, 10, 5);
  const auto theta = oracle::random_params(12, 0.5, 2);
  ParamVector g = ParamVector::Zero(12);
  for (std::size_t k = 0; k < 3; ++k) g += loss_gradient(fed.models[k], theta, fed.data.shards[k]);
  EXPECT_NEAR(stationarity_norm(theta, fed), (g / 3.0).norm(), 1e-14);
}

TEST(Metrics, AccuracyTiesGoToLowestClass) {
  const auto m = LossModel::logistic(2, 3, 0.0);
  DataShard s = oracle::random_shard(6, 2, 3, 1);
  for (auto& y : s.labels) y = 0;
  EXPECT_EQ(accuracy(m, ParamVector::Zero(9), s), 1.0);
  for (auto& y : s.labels) y = 2;
  EXPECT_EQ(accuracy(m, ParamVector::Zero(9), s), 0.0);
  EXPECT_TRUE(std::isnan(accuracy(scalar_quadratic(1.0), ParamVector::Zero(1), s)));
}

TEST(Metrics, HInvariantAtInitIsZero) {
  const ParamVector zero = ParamVector::Zero(3);
  std::vector<DeviceState> devices(4, initial_device_state(zero));
  EXPECT_EQ(verify_h_invariant(initial_server_state(zero), devices), 0.0);
}

std::vector<RoundRecord> geometric_records(double optimum, double start, double rate, std::size_t n) {
  std::vector<RoundRecord> out;
  for (std::size_t t = 0; t < n; ++t) {
    RoundRecord r;
    r.round = t;
    r.gamma_train_loss = optimum + start * std::pow(rate, static_cast<double>(t));
    out.push_back(r);
  }
  return out;
}

TEST(Metrics, EmpiricalRateRecoversGeometricDecay) {
  const auto recs = geometric_records(2.0, 1.0, 0.8, 40);
  EXPECT_NEAR(*empirical_rate(recs, 5, 30, 2.0), 0.8, 1e-9);
}

TEST(Metrics, EmpiricalRateTruncatesAtResolution) {
  auto recs = geometric_records(0.0, 1.0, 0.5, 20);
  for (std::size_t t = 10; t < 20; ++t) recs[t].gamma_train_loss = 0.0;
  EXPECT_NEAR(*empirical_rate(recs, 0, 19, 0.0), 0.5, 1e-12);
  EXPECT_FALSE(empirical_rate(recs, 10, 19, 0.0).has_value());
}

std::vector<RoundRecord> accuracy_records() {
  std::vector<RoundRecord> out;
  for (std::size_t t = 0; t <= 5; ++t) {
    RoundRecord r;
    r.round = t;
    r.test_accuracy = 0.3 + 0.1 * static_cast<double>(t);
    r.train_loss = 1.0 - 0.1 * static_cast<double>(t);
    r.cumulative_comm_units = static_cast<double>(t);
    out.push_back(r);
  }
  return out;
}

TEST(Metrics, RoundsToTarget) {
  const auto recs = accuracy_records();
  const auto below = rounds_to_target(recs, 0.1);
  EXPECT_TRUE(below.reached);
  EXPECT_EQ(below.units, 0.0);
  const auto mid = rounds_to_target(recs, 0.55);
  EXPECT_TRUE(mid.reached);
  EXPECT_EQ(mid.units, 3.0);
  const auto never = rounds_to_target(recs, 1.1);
  EXPECT_FALSE(never.reached);
  EXPECT_EQ(never.units, 5.0);
  EXPECT_EQ(rounds_to_loss(recs, 0.75).units, 3.0);
}

TEST(Metrics, SummaryTableRatios) {
  SummaryTable t;
  t.add("feddyn", "syn", 0.5, {34, true});
  t.add("scaffold", "syn", 0.5, {260, true});
  t.add("fedavg", "syn", 0.5, {1000, false});
  t.compute_ratios();
  const auto& rows = t.rows();
  EXPECT_NEAR(*rows[1].savings_ratio * 34, 260, 0.5);
  EXPECT_TRUE(rows[2].ratio_is_lower_bound);
  std::ostringstream out;
  t.write_csv(out);
  EXPECT_NE(out.str().find("scaffold,syn,0.5,260,1,7.65"), std::string::npos) << out.str();
  EXPECT_NE(out.str().find("fedavg,syn,0.5,1000+,0,>29.41"), std::string::npos) << out.str();
}

TEST(Metrics, RoundsCsvRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "fedsim_rounds_test.csv";
  auto recs = accuracy_records();
  recs[2].train_loss = 0.1 + 0.2;
  {
    std::ofstream out(path);
    write_rounds_csv(recs, out);
  }
  const auto back = read_rounds_csv(path);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].train_loss, recs[i].train_loss);
    EXPECT_TRUE(std::isnan(back[i].avg_train_loss));
  }
  std::filesystem::remove(path);
}

TEST(Metrics, ReferenceOptimumOnLogisticIsStationary) {
  const auto fed = logistic_federation(3, 20, 9);
  const auto ref = reference_optimum(fed, 1e-10);
  EXPECT_FALSE(ref.analytic);
  EXPECT_LE(stationarity_norm(ref.theta, fed), 1e-10);
}

}  // namespace
}  // namespace fedsim
