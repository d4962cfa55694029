#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedsim/algorithms.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/round_record.hpp"

namespace fedsim {

enum class ReportMode { ServerModel, AllDeviceAverage, Both };

const char* to_string(ReportMode mode);
ReportMode report_mode_from_string(const std::string& name);

/// Round-loop settings for one run over an already-built Federation.
struct SimulationConfig {
  AlgorithmConfig algorithm;
  /// Fraction of devices active per round; P = max(1, round(participation * m)).
  double participation = 1.0;
  std::size_t rounds = 100;
  std::size_t eval_every = 1;
  std::uint64_t seed = 0;
  ReportMode report_mode = ReportMode::Both;
  /// Threads used for device updates within a round. Results do not depend on it.
  std::size_t workers = 1;

  std::size_t participants(std::size_t devices) const;
  void validate(std::size_t devices) const;

  friend bool operator==(const SimulationConfig&, const SimulationConfig&) = default;
};

/// Uniform sample of P distinct devices for `round`, ascending. Depends only on
/// (m, P, round, seed), so rounds are independent of each other.
std::vector<std::size_t> sample_participants(std::size_t devices, std::size_t participants, std::size_t round,
                                             std::uint64_t seed);

/// Seed of device `device`'s solver stream in `round`.
std::uint64_t solver_stream(std::uint64_t seed, std::size_t round, std::size_t device);

/// Optional callbacks. on_round fires after every round's server update, with
/// the devices that were active; on_record fires for every emitted record; a
/// true return from stop ends the run after that record.
struct RunHooks {
  std::function<void(std::size_t round, const ServerState& server, std::span<const DeviceState> devices,
                     std::span<const std::size_t> active)>
      on_round;
  std::function<void(const RoundRecord&)> on_record;
  std::function<bool(const RoundRecord&)> stop;
};

struct ExperimentResult {
  std::vector<RoundRecord> records;
  ServerState server;
  std::vector<DeviceState> devices;
  std::size_t participants = 0;
  std::size_t rounds_run = 0;
};

/// Runs `cfg.rounds` rounds of the configured algorithm. A device divergence
/// propagates as DivergenceError after the records produced so far have been
/// passed to hooks.on_record.
ExperimentResult run_experiment(const Federation& fed, const SimulationConfig& cfg, const RunHooks& hooks = {});

/// Evaluates the models the report mode asks for. `gamma` may be empty (round 0 uses theta).
RoundRecord evaluate_round(const Federation& fed, std::size_t round, const ServerState& server,
                           std::span<const DeviceState> devices, const ParamVector& gamma,
                           double cumulative_units, ReportMode mode);

}  // namespace fedsim
