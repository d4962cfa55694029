#include "fedsim/localsolve.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace {

constexpr double kRoundoff = 1e-14;

void check_finite(const ParamVector& theta, std::size_t iteration) {
  if (!theta.allFinite()) {
    throw DivergenceError(fmt::format("local solver produced a non-finite iterate at step {}", iteration));
  }
}

SolveResult solve_closed_form(const LocalObjective& obj) {
  const LossModel& model = *obj.model;
  if (model.kind() != LossKind::Quadratic) {
    throw ContractError("closed-form solve requires a quadratic loss");
  }
  Eigen::MatrixXd system = model.scale();
  system.diagonal().array() += model.weight_decay() + obj.prox;
  Eigen::VectorXd rhs = model.scale() * model.center();
  if (obj.linear.size() != 0) rhs += obj.linear;
  if (obj.prox != 0.0) rhs += obj.prox * obj.anchor;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(system);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14) {
    throw DivergenceError("closed-form solve: local objective is not strongly convex");
  }
  SolveResult out{ldlt.solve(rhs), 1, true};
  check_finite(out.params, 1);
  return out;
}

SolveResult solve_full_gd(const LocalObjective& obj, const ParamVector& init, const LocalSolverConfig& cfg) {
  double step = cfg.lr;
  if (step == 0.0) {
    const auto smooth = obj.smoothness();
    step = smooth ? 1.0 / *smooth : 1.0;
  }
  const double max_step = step;
  ParamVector theta = init;
  double f = obj.value(theta);
  ParamVector g = obj.gradient(theta);
  SolveResult out;
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    if (cfg.grad_clip_norm) clip_gradient(g, *cfg.grad_clip_norm);
    const double gg = g.squaredNorm();
    if (std::sqrt(gg) <= cfg.tol) {
      out.params = std::move(theta);
      out.iterations = it;
      out.converged = true;
      return out;
    }
    // Armijo backtracking; a step <= 1/L is always accepted. Once the
    // predicted decrease drops below the roundoff of f, the value test is
    // meaningless and a shrinking gradient norm is required instead.
    ParamVector next, g_next;
    double f_next = 0.0;
    for (int tries = 0;; ++tries) {
      next = theta - step * g;
      f_next = obj.value(next);
      if (std::isfinite(f_next)) {
        if (0.5 * step * gg > kRoundoff * std::max(1.0, std::abs(f))) {
          if (f_next <= f - 0.5 * step * gg) break;
        } else {
          g_next = obj.gradient(next);
          if (g_next.squaredNorm() < gg) break;
          g_next.resize(0);
        }
      }
      if (tries > 60) throw DivergenceError("full gradient descent: line search failed");
      step *= 0.5;
    }
    check_finite(next, it + 1);
    theta = std::move(next);
    f = f_next;
    g = g_next.size() != 0 ? std::move(g_next) : obj.gradient(theta);
    step = std::min(max_step, 2.0 * step);
  }
  out.params = std::move(theta);
  out.iterations = cfg.max_iters;
  out.converged = false;
  return out;
}

SolveResult solve_sgd(const LocalObjective& obj, const ParamVector& init, const LocalSolverConfig& cfg,
                      std::uint64_t stream, std::size_t round) {
  const std::size_t n = obj.shard ? obj.shard->size() : 0;
  const double step = cfg.lr * std::pow(cfg.lr_decay_per_round, static_cast<double>(round));
  const std::size_t total = cfg.resolved_steps(n);
  ParamVector theta = init;
  if (n == 0 || obj.model->kind() == LossKind::Quadratic) {
    // Data-free objective: every step is a full gradient step.
    for (std::size_t it = 0; it < total; ++it) {
      ParamVector g = obj.gradient(theta);
      if (cfg.grad_clip_norm) clip_gradient(g, *cfg.grad_clip_norm);
      theta -= step * g;
      check_finite(theta, it + 1);
    }
    return {std::move(theta), total, true};
  }

  Rng rng(stream);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = n;  // forces a shuffle before the first batch
  const std::size_t batch = std::min(cfg.batch, n);
  for (std::size_t it = 0; it < total; ++it) {
    if (cursor >= n) {
      rng.shuffle(order);
      cursor = 0;
    }
    const std::size_t len = std::min(batch, n - cursor);
    ParamVector g = obj.gradient(theta, std::span<const std::size_t>(order.data() + cursor, len));
    cursor += len;
    if (cfg.grad_clip_norm) clip_gradient(g, *cfg.grad_clip_norm);
    theta -= step * g;
    check_finite(theta, it + 1);
  }
  return {std::move(theta), total, true};
}

}  // namespace

const char* to_string(SolverMethod method) {
  switch (method) {
    case SolverMethod::Sgd: return "sgd";
    case SolverMethod::FullGd: return "full_gd";
    case SolverMethod::ClosedFormQuadratic: return "closed_form";
  }
  return "unknown";
}

SolverMethod solver_method_from_string(const std::string& name) {
  if (name == "sgd") return SolverMethod::Sgd;
  if (name == "full_gd") return SolverMethod::FullGd;
  if (name == "closed_form") return SolverMethod::ClosedFormQuadratic;
  throw ConfigError(fmt::format("unknown solver method '{}'", name));
}

void LocalSolverConfig::validate() const {
  const bool auto_lr = method == SolverMethod::FullGd && lr == 0.0;
  if (!(lr > 0.0) && !auto_lr) throw ContractError("solver lr must be positive");
  if (batch < 1) throw ContractError("solver batch must be >= 1");
  if (epochs < 1) throw ContractError("solver epochs must be >= 1");
  if (!(tol > 0.0)) throw ContractError("solver tol must be positive");
  if (!(lr_decay_per_round > 0.0 && lr_decay_per_round <= 1.0)) {
    throw ContractError("lr_decay_per_round must lie in (0, 1]");
  }
  if (grad_clip_norm && !(*grad_clip_norm > 0.0)) throw ContractError("grad_clip_norm must be positive");
}

std::size_t LocalSolverConfig::resolved_steps(std::size_t n) const {
  if (steps > 0) return steps;
  if (n == 0) return epochs;
  return epochs * ((n + batch - 1) / batch);
}

double LocalObjective::value(const ParamVector& theta) const {
  double v = loss_value(*model, theta, *shard);
  if (linear.size() != 0) v -= linear.dot(theta);
  if (prox != 0.0) v += 0.5 * prox * (theta - anchor).squaredNorm();
  return v;
}

ParamVector LocalObjective::gradient(const ParamVector& theta) const {
  ParamVector g = loss_gradient(*model, theta, *shard);
  if (linear.size() != 0) g -= linear;
  if (prox != 0.0) g += prox * (theta - anchor);
  return g;
}

ParamVector LocalObjective::gradient(const ParamVector& theta, std::span<const std::size_t> rows) const {
  ParamVector g = loss_gradient(*model, theta, *shard, rows);
  if (linear.size() != 0) g -= linear;
  if (prox != 0.0) g += prox * (theta - anchor);
  return g;
}

std::optional<double> LocalObjective::smoothness() const {
  if (model->kind() != LossKind::Quadratic) return std::nullopt;
  return model->smoothness() + prox;
}

bool clip_gradient(ParamVector& g, double limit) {
  const double norm = g.norm();
  if (norm <= limit) return false;
  g *= limit / norm;
  return true;
}

SolveResult minimize(const LocalObjective& objective, const ParamVector& init, const LocalSolverConfig& cfg,
                     std::uint64_t stream, std::size_t round) {
  if (objective.model == nullptr || objective.shard == nullptr) {
    throw ContractError("local objective needs a model and a shard");
  }
  cfg.validate();
  if (static_cast<std::size_t>(init.size()) != objective.model->dimension()) {
    throw ContractError("initial point has the wrong dimension");
  }
  if (!init.allFinite()) throw ContractError("initial point must be finite");
  if (objective.prox != 0.0 && objective.anchor.size() != init.size()) {
    throw ContractError("proximal anchor has the wrong dimension");
  }
  if (objective.linear.size() != 0 && objective.linear.size() != init.size()) {
    throw ContractError("linear term has the wrong dimension");
  }
  switch (cfg.method) {
    case SolverMethod::ClosedFormQuadratic: return solve_closed_form(objective);
    case SolverMethod::FullGd: return solve_full_gd(objective, init, cfg);
    case SolverMethod::Sgd: return solve_sgd(objective, init, cfg, stream, round);
  }
  throw ContractError("unknown solver method");
}

}  // namespace fedsim
