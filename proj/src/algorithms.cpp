#include "fedsim/algorithms.hpp"

#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <iostream>

#include "fedsim/errors.hpp"

namespace fedsim {

namespace {

bool same_bits(const ParamVector& a, const ParamVector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

void check_task(const DeviceTask& task, const ParamVector& server_theta) {
  if (task.model == nullptr || task.shard == nullptr) throw ContractError("device task needs a model and a shard");
  if (static_cast<std::size_t>(server_theta.size()) != task.model->dimension()) {
    throw ContractError("server model dimension does not match the device loss");
  }
}

// Re-throws a solver divergence with the device and round attached.
template <typename Fn>
auto with_context(const DeviceTask& task, Fn&& fn) {
  try {
    return fn();
  } catch (const DivergenceError& e) {
    throw DivergenceError(fmt::format("round {}, device {}: {}", task.round, task.device, e.what()),
                          task.round, task.device);
  }
}

void require_finite(const ParamVector& v, const DeviceTask& task, const char* what) {
  if (!v.allFinite()) {
    throw DivergenceError(fmt::format("round {}, device {}: non-finite {}", task.round, task.device, what),
                          task.round, task.device);
  }
}

ParamVector mean_of(std::span<const ReturnedModel> returned) {
  ParamVector sum = ParamVector::Zero(returned.front().theta.size());
  for (const auto& r : returned) sum += r.theta;
  return sum / static_cast<double>(returned.size());
}

class FedDynStrategy final : public Strategy {
 public:
  using Strategy::Strategy;

  DeviceResult update_device(const DeviceState& state, const ServerState& server,
                             const DeviceTask& task) const override {
    DeviceResult r;
    r.device = task.device;
    r.state = cfg_.kind == AlgorithmKind::FedDyn
                  ? feddyn_device_update(state, server.theta, task, cfg_.alpha, cfg_.solver)
                  : feddyn_onestep_device_update(state, server.theta, task, cfg_.alpha);
    return r;
  }

  ServerState update_server(const ServerState& server, std::span<const DeviceResult> results,
                            std::size_t devices) const override {
    std::vector<ReturnedModel> returned;
    returned.reserve(results.size());
    for (const auto& r : results) returned.push_back({r.device, r.state.theta});
    return feddyn_server_update(server, returned, devices, cfg_.alpha);
  }
};

class AveragingStrategy final : public Strategy {
 public:
  using Strategy::Strategy;

  DeviceResult update_device(const DeviceState& state, const ServerState& server,
                             const DeviceTask& task) const override {
    DeviceResult r;
    r.device = task.device;
    r.state = cfg_.kind == AlgorithmKind::FedProx
                  ? fedprox_device_update(state, server.theta, task, cfg_.mu_prox, cfg_.solver)
                  : fedavg_device_update(state, server.theta, task, cfg_.solver);
    return r;
  }

  ServerState update_server(const ServerState& server, std::span<const DeviceResult> results,
                            std::size_t) const override {
    std::vector<ReturnedModel> returned;
    returned.reserve(results.size());
    for (const auto& r : results) returned.push_back({r.device, r.state.theta});
    return average_server_update(server, returned);
  }
};

class ScaffoldStrategy final : public Strategy {
 public:
  using Strategy::Strategy;

  DeviceResult update_device(const DeviceState& state, const ServerState& server,
                             const DeviceTask& task) const override {
    ScaffoldUpdate u = scaffold_device_update(state, server.theta, server.h, task, cfg_.solver);
    return {task.device, std::move(u.state), std::move(u.delta_theta), std::move(u.delta_c)};
  }

  ServerState update_server(const ServerState& server, std::span<const DeviceResult> results,
                            std::size_t devices) const override {
    std::vector<ScaffoldUpdate> updates;
    updates.reserve(results.size());
    for (const auto& r : results) updates.push_back({r.state, r.delta_theta, r.delta_c});
    return scaffold_server_update(server, updates, devices);
  }
};

}  // namespace

const char* to_string(AlgorithmKind kind) {
  switch (kind) {
    case AlgorithmKind::FedDyn: return "feddyn";
    case AlgorithmKind::FedDynOneStep: return "feddyn_onestep";
    case AlgorithmKind::FedAvg: return "fedavg";
    case AlgorithmKind::FedProx: return "fedprox";
    case AlgorithmKind::Scaffold: return "scaffold";
  }
  return "unknown";
}

AlgorithmKind algorithm_from_string(const std::string& name) {
  if (name == "feddyn") return AlgorithmKind::FedDyn;
  if (name == "feddyn_onestep") return AlgorithmKind::FedDynOneStep;
  if (name == "fedavg") return AlgorithmKind::FedAvg;
  if (name == "fedprox") return AlgorithmKind::FedProx;
  if (name == "scaffold") return AlgorithmKind::Scaffold;
  throw ConfigError(fmt::format("unknown algorithm '{}'", name));
}

void AlgorithmConfig::validate() const {
  if (is_feddyn_family() && !(alpha > 0.0)) throw ContractError("alpha must be positive for FedDyn");
  if (kind == AlgorithmKind::FedProx && !(mu_prox >= 0.0)) throw ContractError("mu_prox must be nonnegative");
  if (kind != AlgorithmKind::FedDynOneStep) solver.validate();
  if (kind == AlgorithmKind::Scaffold && solver.method != SolverMethod::Sgd) {
    throw ContractError("SCAFFOLD runs corrected SGD steps; solver method must be sgd");
  }
}

bool identical(const DeviceState& a, const DeviceState& b) {
  return same_bits(a.theta, b.theta) && same_bits(a.grad_cache, b.grad_cache) && same_bits(a.h, b.h) &&
         a.last_active_round == b.last_active_round;
}

DeviceState initial_device_state(const ParamVector& theta0) {
  const ParamVector zero = ParamVector::Zero(theta0.size());
  return {theta0, zero, zero, std::nullopt};
}

ServerState initial_server_state(const ParamVector& theta0) {
  return {theta0, ParamVector::Zero(theta0.size()), 0};
}

DeviceState feddyn_device_update(const DeviceState& state, const ParamVector& server_theta,
                                 const DeviceTask& task, double alpha, const LocalSolverConfig& solver) {
  if (!(alpha > 0.0)) throw ContractError("alpha must be positive");
  check_task(task, server_theta);
  LocalObjective objective{task.model, task.shard, state.grad_cache, alpha, server_theta};
  SolveResult solved =
      with_context(task, [&] { return minimize(objective, server_theta, solver, task.stream, task.round); });
  DeviceState next = state;
  next.theta = std::move(solved.params);
  next.grad_cache = state.grad_cache - alpha * (next.theta - server_theta);
  next.last_active_round = task.round;
  return next;
}

ServerState feddyn_server_update(const ServerState& server, std::span<const ReturnedModel> returned,
                                 std::size_t devices, double alpha) {
  if (!(alpha > 0.0)) throw ContractError("alpha must be positive");
  if (devices == 0) throw ContractError("device count must be positive");
  ServerState next = server;
  next.round = server.round + 1;
  if (returned.empty()) {
    std::cerr << fmt::format("warning: round {} had no active devices; server state unchanged\n", next.round);
    return next;
  }
  ParamVector drift = ParamVector::Zero(server.theta.size());
  for (const auto& r : returned) drift += r.theta - server.theta;
  next.h = server.h - (alpha / static_cast<double>(devices)) * drift;
  next.theta = mean_of(returned) - next.h / alpha;
  return next;
}

DeviceState feddyn_onestep_device_update(const DeviceState& state, const ParamVector& server_theta,
                                         const DeviceTask& task, double alpha) {
  if (!(alpha > 0.0)) throw ContractError("alpha must be positive");
  check_task(task, server_theta);
  const ParamVector grad = loss_gradient(*task.model, server_theta, *task.shard);
  require_finite(grad, task, "gradient");
  DeviceState next = state;
  next.theta = server_theta - (grad - state.h) / alpha;
  next.h = state.h - alpha * (next.theta - server_theta);
  next.last_active_round = task.round;
  return next;
}

DeviceState fedavg_device_update(const DeviceState& state, const ParamVector& server_theta,
                                 const DeviceTask& task, const LocalSolverConfig& solver) {
  return fedprox_device_update(state, server_theta, task, 0.0, solver);
}

DeviceState fedprox_device_update(const DeviceState& state, const ParamVector& server_theta,
                                  const DeviceTask& task, double mu_prox, const LocalSolverConfig& solver) {
  if (!(mu_prox >= 0.0)) throw ContractError("mu_prox must be nonnegative");
  check_task(task, server_theta);
  LocalObjective objective{task.model, task.shard, ParamVector(), mu_prox, server_theta};
  SolveResult solved =
      with_context(task, [&] { return minimize(objective, server_theta, solver, task.stream, task.round); });
  DeviceState next = state;
  next.theta = std::move(solved.params);
  next.last_active_round = task.round;
  return next;
}

ServerState average_server_update(const ServerState& server, std::span<const ReturnedModel> returned) {
  ServerState next = server;
  next.round = server.round + 1;
  if (returned.empty()) {
    std::cerr << fmt::format("warning: round {} had no active devices; server state unchanged\n", next.round);
    return next;
  }
  next.theta = mean_of(returned);
  return next;
}

ScaffoldUpdate scaffold_device_update(const DeviceState& state, const ParamVector& server_theta,
                                      const ParamVector& server_c, const DeviceTask& task,
                                      const LocalSolverConfig& solver) {
  check_task(task, server_theta);
  if (server_c.size() != server_theta.size()) throw ContractError("server control variate has the wrong dimension");
  if (solver.method != SolverMethod::Sgd) throw ContractError("SCAFFOLD local steps use the sgd solver");
  // Correction g - c_k + c is the gradient of L_k(theta) - <c_k - c, theta>.
  LocalObjective objective{task.model, task.shard, state.h - server_c, 0.0, ParamVector()};
  SolveResult solved =
      with_context(task, [&] { return minimize(objective, server_theta, solver, task.stream, task.round); });
  const double lr = solver.lr * std::pow(solver.lr_decay_per_round, static_cast<double>(task.round));
  const double steps = static_cast<double>(solved.iterations);

  ScaffoldUpdate out;
  out.state = state;
  out.state.theta = std::move(solved.params);
  out.state.h = state.h - server_c + (server_theta - out.state.theta) / (steps * lr);
  out.state.last_active_round = task.round;
  require_finite(out.state.h, task, "control variate");
  out.delta_theta = out.state.theta - server_theta;
  out.delta_c = out.state.h - state.h;
  return out;
}

ServerState scaffold_server_update(const ServerState& server, std::span<const ScaffoldUpdate> updates,
                                   std::size_t devices) {
  if (devices == 0) throw ContractError("device count must be positive");
  ServerState next = server;
  next.round = server.round + 1;
  if (updates.empty()) {
    std::cerr << fmt::format("warning: round {} had no active devices; server state unchanged\n", next.round);
    return next;
  }
  ParamVector step = ParamVector::Zero(server.theta.size());
  ParamVector control = ParamVector::Zero(server.theta.size());
  for (const auto& u : updates) {
    step += u.delta_theta;
    control += u.delta_c;
  }
  next.theta = server.theta + step / static_cast<double>(updates.size());
  next.h = server.h + control / static_cast<double>(devices);
  return next;
}

Strategy::Strategy(AlgorithmConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

std::unique_ptr<Strategy> make_strategy(const AlgorithmConfig& cfg) {
  switch (cfg.kind) {
    case AlgorithmKind::FedDyn:
    case AlgorithmKind::FedDynOneStep: return std::make_unique<FedDynStrategy>(cfg);
    case AlgorithmKind::FedAvg:
    case AlgorithmKind::FedProx: return std::make_unique<AveragingStrategy>(cfg);
    case AlgorithmKind::Scaffold: return std::make_unique<ScaffoldStrategy>(cfg);
  }
  throw ContractError("unknown algorithm kind");
}

}  // namespace fedsim
