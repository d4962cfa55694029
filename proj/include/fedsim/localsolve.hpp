#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "fedsim/losses.hpp"

namespace fedsim {

enum class SolverMethod { Sgd, FullGd, ClosedFormQuadratic };

const char* to_string(SolverMethod method);
SolverMethod solver_method_from_string(const std::string& name);

/// Default clip threshold when clipping is switched on without a value.
inline constexpr double kDefaultGradClipNorm = 10.0;

struct LocalSolverConfig {
  SolverMethod method = SolverMethod::Sgd;
  /// Step size. For FullGd, 0 selects 1/(L + prox) on quadratics and an
  /// initial trial step of 1 with backtracking otherwise.
  double lr = 0.1;
  std::size_t epochs = 1;
  /// When nonzero, run exactly this many mini-batch steps instead of `epochs`
  /// passes (SCAFFOLD's K).
  std::size_t steps = 0;
  std::size_t batch = 50;
  /// Sgd step at round t is lr * lr_decay_per_round^t.
  double lr_decay_per_round = 1.0;
  std::optional<double> grad_clip_norm;
  double tol = 1e-9;
  std::size_t max_iters = 10000;

  void validate() const;
  /// Mini-batch steps one Sgd solve takes on a shard of n samples.
  std::size_t resolved_steps(std::size_t n) const;

  friend bool operator==(const LocalSolverConfig&, const LocalSolverConfig&) = default;
};

/// Device objective L_k(theta) - <linear, theta> + (prox / 2) ||theta - anchor||^2.
///
/// FedDyn sets linear to the cached gradient and prox to alpha, FedProx sets
/// prox to mu, SCAFFOLD sets linear to c_k - c. Empty `linear` means zero.
struct LocalObjective {
  const LossModel* model = nullptr;
  const DataShard* shard = nullptr;
  ParamVector linear;
  double prox = 0.0;
  ParamVector anchor;

  double value(const ParamVector& theta) const;
  ParamVector gradient(const ParamVector& theta) const;
  ParamVector gradient(const ParamVector& theta, std::span<const std::size_t> rows) const;
  /// Smoothness of the full objective when analytic (quadratic kind).
  std::optional<double> smoothness() const;
};

struct SolveResult {
  ParamVector params;
  std::size_t iterations = 0;
  bool converged = true;
};

/// Rescales g to norm `limit` when it is longer. Returns whether it clipped.
bool clip_gradient(ParamVector& g, double limit);

/// Runs the configured inner optimizer from `init`. Sgd shuffles with a
/// generator seeded by `stream`; `round` drives the learning-rate decay.
/// Throws DivergenceError on a non-finite iterate and ContractError when
/// ClosedFormQuadratic is asked to solve a non-quadratic objective.
SolveResult minimize(const LocalObjective& objective, const ParamVector& init,
                     const LocalSolverConfig& cfg, std::uint64_t stream, std::size_t round = 0);

}  // namespace fedsim
