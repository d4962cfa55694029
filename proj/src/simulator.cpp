#include "fedsim/simulator.hpp"

#include <cmath>
#include <exception>
#include <fmt/format.h>
#include <thread>

#include "fedsim/errors.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace {

constexpr std::uint64_t kParticipantStream = 0x7061727431ULL;
constexpr std::uint64_t kSolverStream = 0x736f6c7665ULL;

// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the
// exception of the lowest failing index.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto body = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < n; i += stride) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(std::max<std::size_t>(workers, 1), n);
  if (threads <= 1) {
    body(0, 1);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(body, w, threads);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

const char* to_string(ReportMode mode) {
  switch (mode) {
    case ReportMode::ServerModel: return "server";
    case ReportMode::AllDeviceAverage: return "device_average";
    case ReportMode::Both: return "both";
  }
  return "unknown";
}

ReportMode report_mode_from_string(const std::string& name) {
  if (name == "server") return ReportMode::ServerModel;
  if (name == "device_average") return ReportMode::AllDeviceAverage;
  if (name == "both") return ReportMode::Both;
  throw ConfigError(fmt::format("unknown report mode '{}'", name));
}

std::size_t SimulationConfig::participants(std::size_t devices) const {
  const double raw = std::round(participation * static_cast<double>(devices));
  return std::max<std::size_t>(1, static_cast<std::size_t>(raw));
}

void SimulationConfig::validate(std::size_t devices) const {
  if (!(participation > 0.0) || participation > 1.0 ||
      std::ceil(participation * static_cast<double>(devices)) < 1.0) {
    throw ContractError("participation must yield >=1 device and lie in (0, 1]");
  }
  if (rounds < 1) throw ContractError("rounds must be >= 1");
  if (eval_every < 1) throw ContractError("eval_every must be >= 1");
  algorithm.validate();
}

std::vector<std::size_t> sample_participants(std::size_t devices, std::size_t participants, std::size_t round,
                                             std::uint64_t seed) {
  if (participants < 1 || participants > devices) throw ContractError("need 1 <= P <= m");
  if (participants == devices) {
    std::vector<std::size_t> all(devices);
    for (std::size_t k = 0; k < devices; ++k) all[k] = k;
    return all;
  }
  Rng rng(stream_seed(seed, {kParticipantStream, round}));
  return rng.sample_without_replacement(devices, participants);
}

std::uint64_t solver_stream(std::uint64_t seed, std::size_t round, std::size_t device) {
  return stream_seed(seed, {kSolverStream, round, device});
}

RoundRecord evaluate_round(const Federation& fed, std::size_t round, const ServerState& server,
                           std::span<const DeviceState> devices, const ParamVector& gamma,
                           double cumulative_units, ReportMode mode) {
  RoundRecord r;
  r.round = round;
  r.cumulative_comm_units = cumulative_units;
  const LossModel& model = fed.models.front();
  if (mode != ReportMode::AllDeviceAverage) {
    r.train_loss = global_loss(server.theta, fed);
    r.test_accuracy = accuracy(model, server.theta, fed.data.test);
    r.stationarity_norm = stationarity_norm(server.theta, fed);
  }
  if (mode != ReportMode::ServerModel) {
    const ParamVector avg = device_average(devices);
    r.avg_train_loss = global_loss(avg, fed);
    r.avg_test_accuracy = accuracy(model, avg, fed.data.test);
    r.avg_stationarity_norm = stationarity_norm(avg, fed);
  }
  r.gamma_train_loss = global_loss(gamma.size() == 0 ? server.theta : gamma, fed);
  return r;
}

ExperimentResult run_experiment(const Federation& fed, const SimulationConfig& cfg, const RunHooks& hooks) {
  fed.validate();
  const std::size_t m = fed.devices();
  cfg.validate(m);
  const auto strategy = make_strategy(cfg.algorithm);
  const std::size_t participants = cfg.participants(m);
  const double units_per_round = static_cast<double>(strategy->comm_units_per_round());

  const ParamVector theta0 = initial_params(fed.models.front(), cfg.seed);
  ExperimentResult out;
  out.participants = participants;
  out.server = initial_server_state(theta0);
  out.devices.assign(m, initial_device_state(theta0));

  auto emit = [&](RoundRecord r) {
    out.records.push_back(r);
    if (hooks.on_record) hooks.on_record(out.records.back());
    return hooks.stop && hooks.stop(out.records.back());
  };

  double cumulative = 0.0;
  if (emit(evaluate_round(fed, 0, out.server, out.devices, theta0, cumulative, cfg.report_mode))) return out;

  std::vector<DeviceResult> results;
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    const std::vector<std::size_t> active = sample_participants(m, participants, t, cfg.seed);
    results.assign(active.size(), DeviceResult{});
    parallel_for(active.size(), cfg.workers, [&](std::size_t i) {
      const std::size_t k = active[i];
      const DeviceTask task{&fed.models[k], &fed.data.shards[k], k, t, solver_stream(cfg.seed, t, k)};
      results[i] = strategy->update_device(out.devices[k], out.server, task);
    });
    out.server = strategy->update_server(out.server, results, m);
    ParamVector gamma = ParamVector::Zero(theta0.size());
    for (auto& r : results) {
      gamma += r.state.theta;
      out.devices[r.device] = std::move(r.state);
    }
    gamma /= static_cast<double>(results.size());
    if (!out.server.theta.allFinite()) {
      throw DivergenceError(fmt::format("round {}: server model became non-finite", t), t);
    }
    // Cost of this round relative to one FedAvg round with P active devices.
    cumulative += units_per_round * static_cast<double>(active.size()) / static_cast<double>(participants);
    out.rounds_run = t;
    if (hooks.on_round) hooks.on_round(t, out.server, out.devices, active);
    if (t % cfg.eval_every == 0 || t == cfg.rounds) {
      if (emit(evaluate_round(fed, t, out.server, out.devices, gamma, cumulative, cfg.report_mode))) break;
    }
  }
  return out;
}

}  // namespace fedsim
