#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/datagen.hpp"
#include "fedsim/losses.hpp"

namespace fedsim {

/// The global problem: device k minimizes models[k] over data.shards[k].
/// All models share one kind and dimension; quadratic devices carry their own
/// center and scale and ignore (empty) shards.
struct Federation {
  FederatedDataset data;
  std::vector<LossModel> models;

  std::size_t devices() const noexcept { return models.size(); }
  std::size_t dimension() const { return models.front().dimension(); }
  const LossModel& model(std::size_t k) const { return models.at(k); }

  /// Throws ContractError on mismatched device counts, kinds or dimensions.
  void validate() const;
};

/// Every device uses the same loss model on its own shard.
Federation make_federation(FederatedDataset data, const LossModel& model);

/// Data-free quadratic devices.
Federation make_quadratic_federation(std::vector<LossModel> models);

/// Random strongly convex quadratic ensemble: S_k = Q_k diag(lambda) Q_k^T with
/// eigenvalues spread over [mu, L] (both endpoints attained on every device),
/// centers c_k ~ N(0, center_scale^2 I).
Federation random_quadratic_ensemble(std::size_t devices, std::size_t dim, double mu, double smoothness,
                                     double center_scale, std::uint64_t seed, double weight_decay = 0.0);

/// Minimizer and minimum of the unweighted mean of quadratic device losses:
/// theta* = (sum S_k + wd_k I)^-1 sum S_k c_k.
struct QuadraticOptimum {
  ParamVector theta;
  double loss = 0.0;
};
QuadraticOptimum quadratic_optimum(const Federation& fed);

/// min_k mu_k and max_k L_k over quadratic devices.
struct CurvatureBounds {
  double mu = 0.0;
  double smoothness = 0.0;
};
CurvatureBounds quadratic_curvature(const Federation& fed);

/// Reference minimum of the global loss: analytic for quadratics, otherwise
/// gradient descent with backtracking on the global loss until the gradient
/// norm is <= tol or max_iters is hit.
struct ReferenceOptimum {
  ParamVector theta;
  double loss = 0.0;
  double gradient_norm = 0.0;
  std::size_t iterations = 0;
  bool analytic = false;
  /// "analytic", "newton" or "gradient_descent".
  std::string method = "analytic";
};
ReferenceOptimum reference_optimum(const Federation& fed, double tol = 1e-12, std::size_t max_iters = 20000);

}  // namespace fedsim
