#include "fedsim/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace {

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMutMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void check_params(const LossModel& model, const ParamVector& params) {
  if (static_cast<std::size_t>(params.size()) != model.dimension()) {
    throw ContractError(fmt::format("parameter length {} does not match model dimension {}",
                                    params.size(), model.dimension()));
  }
}

void check_shard(const LossModel& model, const DataShard& shard) {
  if (model.kind() == LossKind::Quadratic) return;
  if (shard.empty()) {
    throw ContractError(fmt::format("{} loss is undefined on an empty shard", to_string(model.kind())));
  }
  if (static_cast<std::size_t>(shard.features.cols()) != model.inputs()) {
    throw ContractError(fmt::format("shard has {} features, model expects {}",
                                    shard.features.cols(), model.inputs()));
  }
  shard.validate(model.classes());
}

// Softmax of each row of `logits` in place; returns sum over rows of the
// cross-entropy against `labels`.
double softmax_cross_entropy(Eigen::MatrixXd& logits, std::span<const int> labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const double peak = row.maxCoeff();
    row.array() -= peak;
    const double norm = row.array().exp().sum();
    total += std::log(norm) - row(labels[static_cast<std::size_t>(i)]);
    row = row.array().exp() / norm;
  }
  return total;
}

struct Batch {
  FeatureMatrix features;
  std::vector<int> labels;
};

Batch gather(const DataShard& shard, std::span<const std::size_t> rows) {
  Batch b;
  b.features.resize(static_cast<Eigen::Index>(rows.size()), shard.features.cols());
  b.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= shard.size()) throw ContractError("batch row index out of range");
    b.features.row(static_cast<Eigen::Index>(i)) = shard.features.row(static_cast<Eigen::Index>(rows[i]));
    b.labels[i] = shard.labels[rows[i]];
  }
  return b;
}

// Mean cross-entropy and (optionally) its gradient for the logistic and MLP
// kinds, without weight decay.
double data_term(const LossModel& model, const ParamVector& params, const FeatureMatrix& x,
                 std::span<const int> labels, ParamVector* grad) {
  const auto n = x.rows();
  const auto p = static_cast<Eigen::Index>(model.inputs());
  const auto c = static_cast<Eigen::Index>(model.classes());
  const double inv_n = 1.0 / static_cast<double>(n);

  if (model.kind() == LossKind::MulticlassLogistic) {
    RowMajorMap w(params.data(), c, p);
    auto b = params.segment(c * p, c);
    Eigen::MatrixXd probs = x * w.transpose();
    probs.rowwise() += b.transpose();
    const double loss = softmax_cross_entropy(probs, labels) * inv_n;
    if (grad) {
      for (Eigen::Index i = 0; i < n; ++i) probs(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
      probs *= inv_n;
      grad->resize(params.size());
      RowMajorMutMap gw(grad->data(), c, p);
      gw.noalias() = probs.transpose() * x;
      grad->segment(c * p, c) = probs.colwise().sum().transpose();
    }
    return loss;
  }

  const auto h = static_cast<Eigen::Index>(model.hidden());
  RowMajorMap w1(params.data(), h, p);
  auto b1 = params.segment(h * p, h);
  RowMajorMap w2(params.data() + h * p + h, c, h);
  auto b2 = params.segment(h * p + h + c * h, c);

  Eigen::MatrixXd pre = x * w1.transpose();
  pre.rowwise() += b1.transpose();
  Eigen::MatrixXd act = pre.cwiseMax(0.0);
  Eigen::MatrixXd probs = act * w2.transpose();
  probs.rowwise() += b2.transpose();
  const double loss = softmax_cross_entropy(probs, labels) * inv_n;
  if (grad) {
    for (Eigen::Index i = 0; i < n; ++i) probs(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    probs *= inv_n;
    grad->resize(params.size());
    RowMajorMutMap gw2(grad->data() + h * p + h, c, h);
    gw2.noalias() = probs.transpose() * act;
    grad->segment(h * p + h + c * h, c) = probs.colwise().sum().transpose();
    Eigen::MatrixXd back = probs * w2;
    back.array() *= (pre.array() > 0.0).cast<double>();
    RowMajorMutMap gw1(grad->data(), h, p);
    gw1.noalias() = back.transpose() * x;
    grad->segment(h * p, h) = back.colwise().sum().transpose();
  }
  return loss;
}

}  // namespace

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::Quadratic: return "quadratic";
    case LossKind::MulticlassLogistic: return "logistic";
    case LossKind::TwoLayerMLP: return "mlp";
  }
  return "unknown";
}

void DataShard::validate(std::size_t classes) const {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ContractError(fmt::format("shard has {} feature rows but {} labels", features.rows(),
                                    labels.size()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ContractError(fmt::format("label {} outside [0, {})", y, classes));
    }
  }
  if (!features.allFinite()) throw ContractError("shard contains non-finite features");
}

EigenBounds power_iteration_bounds(const Eigen::MatrixXd& s, double tol, std::size_t max_iters) {
  const auto n = s.rows();
  if (n == 0 || s.cols() != n) throw ContractError("power iteration needs a square, nonempty matrix");
  if (n == 1) return {s(0, 0), s(0, 0)};

  auto dominant = [&](const Eigen::MatrixXd& a) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = 1.0 + 0.01 * static_cast<double>(i + 1);
    v.normalize();
    double lambda = 0.0;
    // stop on the residual ||Av - lambda v||, which bounds the distance to an eigenvalue
    for (std::size_t it = 0; it < max_iters; ++it) {
      const Eigen::VectorXd w = a * v;
      lambda = v.dot(w);
      if ((w - lambda * v).norm() <= tol * std::max(1.0, std::abs(lambda))) break;
      const double norm = w.norm();
      if (norm == 0.0) return 0.0;
      v = w / norm;
    }
    return lambda;
  };

  const double top = dominant(s);
  Eigen::MatrixXd shifted = top * Eigen::MatrixXd::Identity(n, n) - s;
  const double bottom = top - dominant(shifted);
  return {bottom, top};
}

LossModel LossModel::quadratic(Eigen::VectorXd center, Eigen::MatrixXd scale, double weight_decay) {
  if (center.size() == 0) throw ContractError("quadratic loss needs a nonempty center");
  if (scale.rows() != center.size() || scale.cols() != center.size()) {
    throw ContractError("quadratic scale must be a d x d matrix matching the center");
  }
  if (!(weight_decay >= 0.0)) throw ContractError("weight_decay must be nonnegative");
  if ((scale - scale.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + scale.cwiseAbs().maxCoeff())) {
    throw ContractError("quadratic scale must be symmetric");
  }
  LossModel m;
  m.kind_ = LossKind::Quadratic;
  m.inputs_ = static_cast<std::size_t>(center.size());
  m.weight_decay_ = weight_decay;
  const EigenBounds bounds = power_iteration_bounds(scale);
  m.lambda_min_ = bounds.min;
  m.lambda_max_ = bounds.max;
  m.center_ = std::move(center);
  m.scale_ = std::move(scale);
  return m;
}

LossModel LossModel::logistic(std::size_t inputs, std::size_t classes, double weight_decay) {
  if (inputs == 0 || classes < 2) throw ContractError("logistic model needs p >= 1 and C >= 2");
  if (!(weight_decay >= 0.0)) throw ContractError("weight_decay must be nonnegative");
  LossModel m;
  m.kind_ = LossKind::MulticlassLogistic;
  m.inputs_ = inputs;
  m.classes_ = classes;
  m.weight_decay_ = weight_decay;
  return m;
}

LossModel LossModel::mlp(std::size_t inputs, std::size_t hidden, std::size_t classes,
                         double weight_decay) {
  if (inputs == 0 || hidden == 0 || classes < 2) {
    throw ContractError("mlp model needs p >= 1, H >= 1 and C >= 2");
  }
  if (!(weight_decay >= 0.0)) throw ContractError("weight_decay must be nonnegative");
  LossModel m;
  m.kind_ = LossKind::TwoLayerMLP;
  m.inputs_ = inputs;
  m.hidden_ = hidden;
  m.classes_ = classes;
  m.weight_decay_ = weight_decay;
  return m;
}

std::size_t LossModel::dimension() const noexcept {
  switch (kind_) {
    case LossKind::Quadratic: return inputs_;
    case LossKind::MulticlassLogistic: return classes_ * inputs_ + classes_;
    case LossKind::TwoLayerMLP: return hidden_ * inputs_ + hidden_ + classes_ * hidden_ + classes_;
  }
  return 0;
}

const Eigen::VectorXd& LossModel::center() const {
  if (kind_ != LossKind::Quadratic) throw ContractError("center() is defined for quadratic losses only");
  return center_;
}

const Eigen::MatrixXd& LossModel::scale() const {
  if (kind_ != LossKind::Quadratic) throw ContractError("scale() is defined for quadratic losses only");
  return scale_;
}

double LossModel::strong_convexity() const {
  if (kind_ != LossKind::Quadratic) throw ContractError("strong_convexity() is analytic for quadratic losses only");
  return lambda_min_ + weight_decay_;
}

double LossModel::smoothness() const {
  if (kind_ != LossKind::Quadratic) throw ContractError("smoothness() is analytic for quadratic losses only");
  return lambda_max_ + weight_decay_;
}

double loss_value(const LossModel& model, const ParamVector& params, const DataShard& shard) {
  check_params(model, params);
  check_shard(model, shard);
  const double decay = 0.5 * model.weight_decay() * params.squaredNorm();
  if (model.kind() == LossKind::Quadratic) {
    const Eigen::VectorXd diff = params - model.center();
    return 0.5 * diff.dot(model.scale() * diff) + decay;
  }
  return data_term(model, params, shard.features, shard.labels, nullptr) + decay;
}

ParamVector loss_gradient(const LossModel& model, const ParamVector& params, const DataShard& shard) {
  check_params(model, params);
  check_shard(model, shard);
  ParamVector grad;
  if (model.kind() == LossKind::Quadratic) {
    grad = model.scale() * (params - model.center());
  } else {
    data_term(model, params, shard.features, shard.labels, &grad);
  }
  grad += model.weight_decay() * params;
  return grad;
}

ParamVector loss_gradient(const LossModel& model, const ParamVector& params, const DataShard& shard,
                          std::span<const std::size_t> rows) {
  if (model.kind() == LossKind::Quadratic) return loss_gradient(model, params, shard);
  check_params(model, params);
  if (rows.empty()) throw ContractError("mini-batch must contain at least one row");
  check_shard(model, shard);
  const Batch batch = gather(shard, rows);
  ParamVector grad;
  data_term(model, params, batch.features, batch.labels, &grad);
  grad += model.weight_decay() * params;
  return grad;
}

double fd_gradient_check(const LossModel& model, const ParamVector& params, const DataShard& shard,
                         double step) {
  if (!(step > 0.0)) throw ContractError("finite-difference step must be positive");
  const ParamVector analytic = loss_gradient(model, params, shard);
  ParamVector probe = params;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    probe(i) = params(i) + step;
    const double up = loss_value(model, probe, shard);
    probe(i) = params(i) - step;
    const double down = loss_value(model, probe, shard);
    probe(i) = params(i);
    const double central = (up - down) / (2.0 * step);
    const double err = std::abs(analytic(i) - central) / (std::abs(analytic(i)) + std::abs(central) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

Eigen::MatrixXd class_scores(const LossModel& model, const ParamVector& params,
                             const FeatureMatrix& x) {
  check_params(model, params);
  if (model.kind() == LossKind::Quadratic) throw ContractError("quadratic losses have no class scores");
  if (static_cast<std::size_t>(x.cols()) != model.inputs()) throw ContractError("feature width mismatch");
  const auto p = static_cast<Eigen::Index>(model.inputs());
  const auto c = static_cast<Eigen::Index>(model.classes());
  if (model.kind() == LossKind::MulticlassLogistic) {
    RowMajorMap w(params.data(), c, p);
    Eigen::MatrixXd z = x * w.transpose();
    z.rowwise() += params.segment(c * p, c).transpose();
    return z;
  }
  const auto h = static_cast<Eigen::Index>(model.hidden());
  RowMajorMap w1(params.data(), h, p);
  RowMajorMap w2(params.data() + h * p + h, c, h);
  Eigen::MatrixXd pre = x * w1.transpose();
  pre.rowwise() += params.segment(h * p, h).transpose();
  Eigen::MatrixXd z = pre.cwiseMax(0.0) * w2.transpose();
  z.rowwise() += params.segment(h * p + h + c * h, c).transpose();
  return z;
}

ParamVector initial_params(const LossModel& model, std::uint64_t seed) {
  ParamVector theta = ParamVector::Zero(static_cast<Eigen::Index>(model.dimension()));
  if (model.kind() != LossKind::TwoLayerMLP) return theta;
  Rng rng(stream_seed(seed, {0x1417ULL}));
  const auto p = static_cast<Eigen::Index>(model.inputs());
  const auto h = static_cast<Eigen::Index>(model.hidden());
  const double r1 = 1.0 / std::sqrt(static_cast<double>(p));
  const double r2 = 1.0 / std::sqrt(static_cast<double>(h));
  const Eigen::Index first = h * p + h;
  for (Eigen::Index i = 0; i < first; ++i) theta(i) = rng.uniform(-r1, r1);
  for (Eigen::Index i = first; i < theta.size(); ++i) theta(i) = rng.uniform(-r2, r2);
  return theta;
}

bool all_finite(const ParamVector& v) { return v.allFinite(); }

}  // namespace fedsim
