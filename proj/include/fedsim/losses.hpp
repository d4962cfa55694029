#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fedsim {

/// Flat model parameters. Every model in an experiment shares one dimension.
using ParamVector = Eigen::VectorXd;
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Labeled samples held by one device: n x p features and n labels in [0, C).
struct DataShard {
  FeatureMatrix features;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  /// Throws ContractError if shapes disagree, a label is outside [0, classes)
  /// or a feature is non-finite.
  void validate(std::size_t classes) const;
};

enum class LossKind { Quadratic, MulticlassLogistic, TwoLayerMLP };

const char* to_string(LossKind kind);

/// Loss family plus its shape. The parameter layout is fixed per kind:
///
///   Quadratic           theta (p)
///   MulticlassLogistic  W (C x p, row-major), b (C)
///   TwoLayerMLP         W1 (H x p), b1 (H), W2 (C x H), b2 (C), ReLU hidden layer
///
/// Logistic and MLP losses are mean softmax cross-entropy. The quadratic loss
/// is data-free: 1/2 (theta - c)^T S (theta - c). Every kind adds
/// (weight_decay / 2) ||theta||^2.
class LossModel {
 public:
  static LossModel quadratic(Eigen::VectorXd center, Eigen::MatrixXd scale,
                             double weight_decay = 0.0);
  static LossModel logistic(std::size_t inputs, std::size_t classes, double weight_decay = 1e-4);
  static LossModel mlp(std::size_t inputs, std::size_t hidden, std::size_t classes,
                       double weight_decay = 1e-4);

  LossKind kind() const noexcept { return kind_; }
  std::size_t inputs() const noexcept { return inputs_; }
  std::size_t classes() const noexcept { return classes_; }
  std::size_t hidden() const noexcept { return hidden_; }
  double weight_decay() const noexcept { return weight_decay_; }
  std::size_t dimension() const noexcept;

  /// Quadratic kind only.
  const Eigen::VectorXd& center() const;
  const Eigen::MatrixXd& scale() const;

  /// lambda_min(S) + weight_decay and lambda_max(S) + weight_decay, from power
  /// iteration at construction. Quadratic kind only.
  double strong_convexity() const;
  double smoothness() const;

 private:
  LossModel() = default;

  LossKind kind_ = LossKind::Quadratic;
  std::size_t inputs_ = 0;
  std::size_t classes_ = 0;
  std::size_t hidden_ = 0;
  double weight_decay_ = 0.0;
  Eigen::VectorXd center_;
  Eigen::MatrixXd scale_;
  double lambda_min_ = 0.0;
  double lambda_max_ = 0.0;
};

/// Largest and smallest eigenvalue of a symmetric PSD matrix by power
/// iteration (the smallest via the shifted matrix lambda_max I - S).
struct EigenBounds {
  double min = 0.0;
  double max = 0.0;
};
EigenBounds power_iteration_bounds(const Eigen::MatrixXd& symmetric, double tol = 1e-10,
                                   std::size_t max_iters = 200000);

double loss_value(const LossModel& model, const ParamVector& params, const DataShard& shard);

ParamVector loss_gradient(const LossModel& model, const ParamVector& params,
                          const DataShard& shard);

/// Gradient of the mean loss over the given rows only (a mini-batch). The
/// weight-decay term is included in full. Rows are ignored for the quadratic kind.
ParamVector loss_gradient(const LossModel& model, const ParamVector& params,
                          const DataShard& shard, std::span<const std::size_t> rows);

/// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12).
double fd_gradient_check(const LossModel& model, const ParamVector& params,
                         const DataShard& shard, double step);

/// Per-sample class scores (n x C logits). Not defined for the quadratic kind.
Eigen::MatrixXd class_scores(const LossModel& model, const ParamVector& params,
                             const FeatureMatrix& features);

/// Starting point: zeros for quadratic and logistic; uniform(-1/sqrt(fan_in),
/// 1/sqrt(fan_in)) per layer for the MLP.
ParamVector initial_params(const LossModel& model, std::uint64_t seed);

bool all_finite(const ParamVector& v);

}  // namespace fedsim
