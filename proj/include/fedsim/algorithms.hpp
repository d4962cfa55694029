#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsim/localsolve.hpp"
#include "fedsim/losses.hpp"

namespace fedsim {

enum class AlgorithmKind { FedDyn, FedDynOneStep, FedAvg, FedProx, Scaffold };

const char* to_string(AlgorithmKind kind);
AlgorithmKind algorithm_from_string(const std::string& name);

struct AlgorithmConfig {
  AlgorithmKind kind = AlgorithmKind::FedDyn;
  double alpha = 0.01;
  double mu_prox = 0.0;
  LocalSolverConfig solver;

  /// Models moved per active device per round: SCAFFOLD also ships its control variate.
  int comm_units_per_round() const noexcept { return kind == AlgorithmKind::Scaffold ? 2 : 1; }
  bool is_feddyn_family() const noexcept {
    return kind == AlgorithmKind::FedDyn || kind == AlgorithmKind::FedDynOneStep;
  }
  void validate() const;

  friend bool operator==(const AlgorithmConfig&, const AlgorithmConfig&) = default;
};

/// Per-device persistent state.
///
/// `grad_cache` is FedDyn's running copy of grad L_k(theta_k). `h` is the
/// one-step variant's device state and SCAFFOLD's control variate c_k.
struct DeviceState {
  ParamVector theta;
  ParamVector grad_cache;
  ParamVector h;
  std::optional<std::size_t> last_active_round;
};

/// Bitwise equality of every field.
bool identical(const DeviceState& a, const DeviceState& b);

DeviceState initial_device_state(const ParamVector& theta0);

/// Server model and state. For SCAFFOLD, `h` holds the server control variate c.
struct ServerState {
  ParamVector theta;
  ParamVector h;
  std::size_t round = 0;
};

ServerState initial_server_state(const ParamVector& theta0);

/// What a device needs to run its local update in a given round.
struct DeviceTask {
  const LossModel* model = nullptr;
  const DataShard* shard = nullptr;
  std::size_t device = 0;
  std::size_t round = 0;
  /// Seed of the device's solver stream for this round.
  std::uint64_t stream = 0;
};

DeviceState feddyn_device_update(const DeviceState& state, const ParamVector& server_theta,
                                 const DeviceTask& task, double alpha, const LocalSolverConfig& solver);

struct ReturnedModel {
  std::size_t device = 0;
  ParamVector theta;
};

/// h <- h - alpha/m * sum_k (theta_k - theta_old); theta <- mean(theta_k) - h / alpha.
/// An empty active set leaves the model untouched (only the round advances).
ServerState feddyn_server_update(const ServerState& server, std::span<const ReturnedModel> returned,
                                 std::size_t devices, double alpha);

/// theta_k <- theta - (grad L_k(theta) - h_k) / alpha; h_k <- h_k - alpha (theta_k - theta).
DeviceState feddyn_onestep_device_update(const DeviceState& state, const ParamVector& server_theta,
                                         const DeviceTask& task, double alpha);

DeviceState fedavg_device_update(const DeviceState& state, const ParamVector& server_theta,
                                 const DeviceTask& task, const LocalSolverConfig& solver);

DeviceState fedprox_device_update(const DeviceState& state, const ParamVector& server_theta,
                                  const DeviceTask& task, double mu_prox, const LocalSolverConfig& solver);

/// Plain average of the returned models (FedAvg and FedProx server step).
ServerState average_server_update(const ServerState& server, std::span<const ReturnedModel> returned);

struct ScaffoldUpdate {
  DeviceState state;
  ParamVector delta_theta;
  ParamVector delta_c;
};

/// K corrected steps theta <- theta - lr (g_k(theta) - c_k + c), then the
/// option-II control update c_k <- c_k - c + (server_theta - theta_K) / (K lr).
/// K is solver.steps (or the epoch-equivalent step count when that is 0) and
/// lr is the decayed solver rate for the task's round.
ScaffoldUpdate scaffold_device_update(const DeviceState& state, const ParamVector& server_theta,
                                      const ParamVector& server_c, const DeviceTask& task,
                                      const LocalSolverConfig& solver);

/// theta <- theta + mean(delta_theta); c <- c + (1/m) sum(delta_c).
ServerState scaffold_server_update(const ServerState& server, std::span<const ScaffoldUpdate> updates,
                                   std::size_t devices);

/// Outcome of one device's local work in a round.
struct DeviceResult {
  std::size_t device = 0;
  DeviceState state;
  ParamVector delta_theta;
  ParamVector delta_c;
};

/// Common round interface over the five algorithms. Implementations are
/// stateless: everything persistent lives in DeviceState / ServerState.
class Strategy {
 public:
  explicit Strategy(AlgorithmConfig cfg);
  virtual ~Strategy() = default;

  const AlgorithmConfig& config() const noexcept { return cfg_; }
  int comm_units_per_round() const noexcept { return cfg_.comm_units_per_round(); }

  virtual DeviceResult update_device(const DeviceState& state, const ServerState& server,
                                     const DeviceTask& task) const = 0;

  /// `results` are ordered by device id.
  virtual ServerState update_server(const ServerState& server, std::span<const DeviceResult> results,
                                    std::size_t devices) const = 0;

 protected:
  AlgorithmConfig cfg_;
};

std::unique_ptr<Strategy> make_strategy(const AlgorithmConfig& cfg);

}  // namespace fedsim
