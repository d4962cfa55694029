#include <gtest/gtest.h>

#include "fedsim/algorithms.hpp"
#include "fedsim/errors.hpp"
#include "support/oracles.hpp"

namespace fedsim {
namespace {

const DataShard kEmpty;

LossModel scalar_quadratic(double c, double s = 1.0) {
  return LossModel::quadratic(Eigen::VectorXd::Constant(1, c), Eigen::MatrixXd::Constant(1, 1, s));
}

ParamVector scalar(double v) { return ParamVector::Constant(1, v); }

LocalSolverConfig exact() {
  LocalSolverConfig cfg;
  cfg.method = SolverMethod::ClosedFormQuadratic;
  return cfg;
}

DeviceTask task_for(const LossModel& m, const DataShard& s = kEmpty, std::size_t device = 0, std::size_t round = 1) {
  return {&m, &s, device, round, 0};
}

TEST(FedDyn, DeviceUpdateScalar) {
  const auto m = scalar_quadratic(1.0);
  const auto next = feddyn_device_update(initial_device_state(scalar(0)), scalar(0), task_for(m), 1.0, exact());
  EXPECT_DOUBLE_EQ(next.theta(0), 0.5);
  EXPECT_DOUBLE_EQ(next.grad_cache(0), -0.5);
  EXPECT_EQ(next.last_active_round, 1u);
}

TEST(FedDyn, ConsensusFixedPoint) {
  const auto m = LossModel::quadratic(oracle::random_params(4, 1.0, 1), oracle::random_spd(4, 0.5, 2.0, 2));
  const auto server = oracle::random_params(4, 1.0, 3);
  DeviceState st = initial_device_state(server);
  st.grad_cache = loss_gradient(m, server, kEmpty);
  const auto next = feddyn_device_update(st, server, task_for(m), 0.7, exact());
  EXPECT_LE((next.theta - server).norm(), 1e-14);
}

TEST(FedDyn, LargeAlphaStaysNearServer) {
  const auto m = LossModel::quadratic(oracle::random_params(5, 3.0, 4), oracle::random_spd(5, 1.0, 2.0, 5));
  const auto server = ParamVector::Zero(5);
  const double alpha = 1e6;
  const auto next = feddyn_device_update(initial_device_state(server), server, task_for(m), alpha, exact());
  EXPECT_LE((next.theta - server).norm(), loss_gradient(m, server, kEmpty).norm() / alpha);
  EXPECT_GT((next.theta - server).norm(), 0.0);
}

TEST(FedDyn, ServerConsensusFixedPoint) {
  ServerState s = initial_server_state(oracle::random_params(3, 1.0, 1));
  std::vector<ReturnedModel> ret = {{0, s.theta}, {1, s.theta}};
  const auto next = feddyn_server_update(s, ret, 2, 0.3);
  EXPECT_EQ(next.theta, s.theta);
  EXPECT_EQ(next.h, ParamVector::Zero(3));
  EXPECT_EQ(next.round, 1u);
}

TEST(FedDyn, ServerPartialHandWorked) {
  ServerState s = initial_server_state(scalar(2.0));
  const double v = 0.6;
  std::vector<ReturnedModel> ret = {{1, scalar(2.0 + v)}};
  const auto next = feddyn_server_update(s, ret, 2, 1.0);
  EXPECT_DOUBLE_EQ(next.h(0), -v / 2);
  EXPECT_DOUBLE_EQ(next.theta(0), 2.0 + v + v / 2);
}

TEST(FedDyn, EmptyActiveSetIsNoOp) {
  ServerState s = initial_server_state(scalar(2.0));
  const auto next = feddyn_server_update(s, {}, 3, 1.0);
  EXPECT_EQ(next.theta, s.theta);
  EXPECT_EQ(next.h, s.h);
}

TEST(FedDyn, ServerHEqualsMeanGradient) {
  const std::size_t m = 4, d = 3;
  std::vector<LossModel> models;
  for (std::size_t k = 0; k < m; ++k)
    models.push_back(LossModel::quadratic(oracle::random_params(d, 2.0, k), oracle::random_spd(d, 0.5, 3.0, 50 + k)));
  const double alpha = 0.8;
  ServerState server = initial_server_state(ParamVector::Zero(d));
  std::vector<DeviceState> devices(m, initial_device_state(server.theta));
  Rng rng(3);
  for (std::size_t t = 1; t <= 20; ++t) {
    std::vector<ReturnedModel> ret;
    for (std::size_t k = 0; k < m; ++k) {
      if (rng.uniform() < 0.5) continue;
      devices[k] = feddyn_device_update(devices[k], server.theta, task_for(models[k], kEmpty, k, t), alpha, exact());
      ret.push_back({k, devices[k].theta});
    }
    server = feddyn_server_update(server, ret, m, alpha);
    ParamVector mean_grad = ParamVector::Zero(d);
    for (std::size_t k = 0; k < m; ++k) {
      const auto g = loss_gradient(models[k], devices[k].theta, kEmpty);
      mean_grad += g;
      if (devices[k].last_active_round) EXPECT_LE((devices[k].grad_cache - g).cwiseAbs().maxCoeff(), 1e-10);
    }
    mean_grad /= static_cast<double>(m);
    // never-activated devices sit at theta0 with a zero cache, so compare against caches
    ParamVector mean_cache = ParamVector::Zero(d);
    for (const auto& dv : devices) mean_cache += dv.grad_cache;
    EXPECT_LE((server.h - mean_cache / static_cast<double>(m)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(OneStep, HandWorked) {
  const auto m = scalar_quadratic(1.0);
  const auto next = feddyn_onestep_device_update(initial_device_state(scalar(0)), scalar(0), task_for(m), 2.0);
  EXPECT_DOUBLE_EQ(next.theta(0), 0.5);
  EXPECT_DOUBLE_EQ(next.h(0), -1.0);
}

TEST(OneStep, ZeroNetStep) {
  const auto m = LossModel::quadratic(oracle::random_params(3, 1.0, 1), oracle::random_spd(3, 1.0, 2.0, 2));
  const auto server = oracle::random_params(3, 1.0, 3);
  DeviceState st = initial_device_state(server);
  st.h = loss_gradient(m, server, kEmpty);
  EXPECT_EQ(feddyn_onestep_device_update(st, server, task_for(m), 0.4).theta, server);
}

TEST(OneStep, EquivalentToSingleGradientStepFedDyn) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = LossModel::quadratic(oracle::random_params(6, 1.0, seed), oracle::random_spd(6, 0.5, 3.0, seed + 9));
    const auto server = oracle::random_params(6, 1.0, seed + 20);
    const double alpha = 5.0;
    DeviceState st = initial_device_state(server);
    st.h = oracle::random_params(6, 0.5, seed + 30);
    const auto one = feddyn_onestep_device_update(st, server, task_for(m), alpha);

    // FedDyn whose inner solver takes one full gradient step of size 1/alpha from server, with grad_cache = h_k.
    LocalSolverConfig single;
    single.lr = 1.0 / alpha;
    single.steps = 1;
    DeviceState as_dyn = initial_device_state(server);
    as_dyn.grad_cache = st.h;
    const auto dyn = feddyn_device_update(as_dyn, server, task_for(m), alpha, single);
    EXPECT_LE((one.theta - dyn.theta).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((one.h - dyn.grad_cache).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((one.h - loss_gradient(m, server, kEmpty)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(FedAvg, OneFullBatchStep) {
  const auto m = LossModel::quadratic(oracle::random_params(3, 1.0, 1), oracle::random_spd(3, 1.0, 2.0, 2));
  const auto server = oracle::random_params(3, 1.0, 3);
  LocalSolverConfig cfg;
  cfg.lr = 0.2;
  cfg.steps = 1;
  const auto next = fedavg_device_update(initial_device_state(server), server, task_for(m), cfg);
  EXPECT_EQ(next.theta, ParamVector(server - 0.2 * loss_gradient(m, server, kEmpty)));
}

TEST(FedAvg, HomogeneousMatchesCentralizedSgd) {
  const auto shard = oracle::random_shard(40, 3, 3, 5);
  const auto model = LossModel::logistic(3, 3);
  LocalSolverConfig cfg;
  cfg.batch = 8;
  cfg.epochs = 2;
  const ParamVector theta0 = ParamVector::Zero(static_cast<Eigen::Index>(model.dimension()));
  ServerState server = initial_server_state(theta0);
  // two devices: (a + a) / 2 == a exactly
  std::vector<DeviceState> devices(2, initial_device_state(theta0));
  ParamVector central = theta0;
  for (std::size_t t = 1; t <= 3; ++t) {
    std::vector<ReturnedModel> ret;
    for (std::size_t k = 0; k < 2; ++k) {
      DeviceTask task{&model, &shard, k, t, 1234 + t};
      devices[k] = fedavg_device_update(devices[k], server.theta, task, cfg);
      ret.push_back({k, devices[k].theta});
    }
    server = average_server_update(server, ret);
    central = minimize({&model, &shard}, central, cfg, 1234 + t, t).params;
    EXPECT_EQ(server.theta, central) << "round " << t;
  }
}

TEST(FedAvg, ExactSolveFixedPointIsMeanOfMinimizers) {
  const auto a = scalar_quadratic(1.0, 1.0), b = scalar_quadratic(-1.0, 2.0);
  ServerState s = initial_server_state(scalar(0.3));
  for (int t = 1; t <= 3; ++t) {
    const auto da = fedavg_device_update(initial_device_state(s.theta), s.theta, task_for(a), exact());
    const auto db = fedavg_device_update(initial_device_state(s.theta), s.theta, task_for(b), exact());
    std::vector<ReturnedModel> ret = {{0, da.theta}, {1, db.theta}};
    s = average_server_update(s, ret);
  }
  EXPECT_DOUBLE_EQ(s.theta(0), 0.0);
  // global gradient there: 0.5 * ((0 - 1) + 2 (0 + 1)) = 0.5
  EXPECT_DOUBLE_EQ(0.5 * (loss_gradient(a, s.theta, kEmpty)(0) + loss_gradient(b, s.theta, kEmpty)(0)), 0.5);
}

TEST(FedProx, ZeroMuIsFedAvg) {
  const auto shard = oracle::random_shard(30, 3, 2, 5);
  const auto model = LossModel::logistic(3, 2);
  LocalSolverConfig cfg;
  cfg.batch = 4;
  const auto theta = oracle::random_params(8, 0.2, 1);
  const DeviceTask t{&model, &shard, 2, 3, 77};
  EXPECT_EQ(fedprox_device_update(initial_device_state(theta), theta, t, 0.0, cfg).theta,
            fedavg_device_update(initial_device_state(theta), theta, t, cfg).theta);
}

TEST(FedProx, ClosedFormScalar) {
  const auto m = scalar_quadratic(1.0);
  EXPECT_DOUBLE_EQ(fedprox_device_update(initial_device_state(scalar(0)), scalar(0), task_for(m), 1.0, exact()).theta(0), 0.5);
}

TEST(FedProx, HugeMuStaysNearServer) {
  const auto m = LossModel::quadratic(oracle::random_params(4, 3.0, 1), oracle::random_spd(4, 1.0, 3.0, 2));
  const ParamVector server = ParamVector::Zero(4);
  const double mu = 1e9;
  const auto next = fedprox_device_update(initial_device_state(server), server, task_for(m), mu, exact());
  EXPECT_LE((next.theta - server).norm(), loss_gradient(m, server, kEmpty).norm() / mu);
}

LocalSolverConfig sgd_steps(double lr, std::size_t k) {
  LocalSolverConfig cfg;
  cfg.lr = lr;
  cfg.steps = k;
  return cfg;
}

TEST(Scaffold, ZeroControlsArePlainSgd) {
  const auto shard = oracle::random_shard(30, 3, 2, 5);
  const auto model = LossModel::logistic(3, 2);
  LocalSolverConfig cfg = sgd_steps(0.3, 5);
  cfg.batch = 6;
  const auto theta = oracle::random_params(8, 0.2, 1);
  const DeviceTask t{&model, &shard, 2, 3, 77};
  const auto u = scaffold_device_update(initial_device_state(theta), theta, ParamVector::Zero(8), t, cfg);
  EXPECT_EQ(u.state.theta, fedavg_device_update(initial_device_state(theta), theta, t, cfg).theta);
}

TEST(Scaffold, OneStepControlIsGradient) {
  const auto m = LossModel::quadratic(oracle::random_params(3, 1.0, 1), oracle::random_spd(3, 1.0, 2.0, 2));
  const auto server = oracle::random_params(3, 1.0, 3);
  const auto c = oracle::random_params(3, 0.3, 4);
  DeviceState st = initial_device_state(server);
  st.h = oracle::random_params(3, 0.3, 5);
  const auto u = scaffold_device_update(st, server, c, task_for(m), sgd_steps(0.1, 1));
  const auto g = loss_gradient(m, server, kEmpty);
  EXPECT_LE((u.state.theta - (server - 0.1 * (g - st.h + c))).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((u.state.h - g).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_EQ(u.delta_c, ParamVector(u.state.h - st.h));
}

TEST(Scaffold, ServerControlIsMeanOfDeviceControls) {
  const std::size_t m = 3, d = 2;
  std::vector<LossModel> models;
  for (std::size_t k = 0; k < m; ++k)
    models.push_back(LossModel::quadratic(oracle::random_params(d, 1.0, k), oracle::random_spd(d, 1.0, 2.0, k + 10)));
  ServerState server = initial_server_state(ParamVector::Zero(d));
  std::vector<DeviceState> devices(m, initial_device_state(server.theta));
  const auto cfg = sgd_steps(0.05, 4);
  for (std::size_t t = 1; t <= 3; ++t) {
    std::vector<ScaffoldUpdate> ups;
    for (std::size_t k = 0; k < m; ++k) {
      ups.push_back(scaffold_device_update(devices[k], server.theta, server.h, task_for(models[k], kEmpty, k, t), cfg));
      devices[k] = ups.back().state;
    }
    server = scaffold_server_update(server, ups, m);
    ParamVector sum = ParamVector::Zero(d);
    for (const auto& dv : devices) sum += dv.h;
    EXPECT_LE((server.h - sum / static_cast<double>(m)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Strategy, CommUnitsAndValidation) {
  AlgorithmConfig cfg;
  EXPECT_EQ(cfg.comm_units_per_round(), 1);
  cfg.kind = AlgorithmKind::Scaffold;
  EXPECT_EQ(cfg.comm_units_per_round(), 2);
  EXPECT_EQ(make_strategy(cfg)->comm_units_per_round(), 2);
  cfg.solver.method = SolverMethod::FullGd;
  EXPECT_THROW(cfg.validate(), ContractError);
  AlgorithmConfig dyn;
  dyn.alpha = 0.0;
  EXPECT_THROW(dyn.validate(), ContractError);
  dyn.kind = AlgorithmKind::FedAvg;
  EXPECT_NO_THROW(dyn.validate());
  EXPECT_EQ(algorithm_from_string("feddyn_onestep"), AlgorithmKind::FedDynOneStep);
  EXPECT_THROW(algorithm_from_string("sgd"), ConfigError);
}

TEST(Strategy, DivergenceCarriesContext) {
  const auto m = scalar_quadratic(1.0, 10.0);
  AlgorithmConfig cfg;
  cfg.kind = AlgorithmKind::FedAvg;
  cfg.solver = sgd_steps(1.0, 2000);
  const auto s = make_strategy(cfg);
  const ServerState server = initial_server_state(scalar(0));
  try {
    s->update_device(initial_device_state(server.theta), server, {&m, &kEmpty, 4, 7, 0});
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.round(), 7u);
    EXPECT_EQ(e.device(), 4u);
  }
}

}  // namespace
}  // namespace fedsim
