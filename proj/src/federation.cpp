#include "fedsim/federation.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "fedsim/errors.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

void Federation::validate() const {
  if (models.empty()) throw ContractError("a federation needs at least one device");
  if (data.shards.size() != models.size()) {
    throw ContractError(fmt::format("{} shards for {} device models", data.shards.size(), models.size()));
  }
  const LossModel& first = models.front();
  for (std::size_t k = 0; k < models.size(); ++k) {
    if (models[k].kind() != first.kind() || models[k].dimension() != first.dimension()) {
      throw ContractError(fmt::format("device {} loss disagrees with device 0 on kind or dimension", k));
    }
    if (first.kind() != LossKind::Quadratic) {
      if (data.shards[k].empty()) throw ContractError(fmt::format("device {} has no data", k));
      data.shards[k].validate(first.classes());
    }
  }
}

Federation make_federation(FederatedDataset data, const LossModel& model) {
  Federation fed;
  fed.models.assign(data.devices(), model);
  fed.data = std::move(data);
  fed.validate();
  return fed;
}

Federation make_quadratic_federation(std::vector<LossModel> models) {
  Federation fed;
  if (models.empty()) throw ContractError("a federation needs at least one device");
  const auto d = static_cast<Eigen::Index>(models.front().dimension());
  fed.data.inputs = static_cast<std::size_t>(d);
  fed.data.shards.resize(models.size());
  for (auto& s : fed.data.shards) s.features.resize(0, d);
  fed.data.test.features.resize(0, d);
  fed.data.refresh_meta();
  fed.models = std::move(models);
  fed.validate();
  return fed;
}

Federation random_quadratic_ensemble(std::size_t devices, std::size_t dim, double mu, double smoothness,
                                     double center_scale, std::uint64_t seed, double weight_decay) {
  if (devices == 0 || dim == 0) throw ContractError("ensemble needs devices >= 1 and dim >= 1");
  if (!(mu > 0.0) || !(smoothness >= mu)) throw ContractError("ensemble needs 0 < mu <= L");
  const auto d = static_cast<Eigen::Index>(dim);
  std::vector<LossModel> models;
  models.reserve(devices);
  for (std::size_t k = 0; k < devices; ++k) {
    Rng rng(stream_seed(seed, {0x9a11ULL, k}));
    Eigen::MatrixXd gauss(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) gauss(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
    const Eigen::MatrixXd q = qr.householderQ();
    Eigen::VectorXd eig(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      eig(i) = d == 1 ? mu : mu + (smoothness - mu) * static_cast<double>(i) / static_cast<double>(d - 1);
    }
    Eigen::MatrixXd s = q * eig.asDiagonal() * q.transpose();
    s = 0.5 * (s + s.transpose()).eval();
    Eigen::VectorXd c(d);
    for (Eigen::Index i = 0; i < d; ++i) c(i) = center_scale * rng.normal();
    models.push_back(LossModel::quadratic(std::move(c), std::move(s), weight_decay));
  }
  return make_quadratic_federation(std::move(models));
}

QuadraticOptimum quadratic_optimum(const Federation& fed) {
  fed.validate();
  if (fed.models.front().kind() != LossKind::Quadratic) {
    throw ContractError("analytic optimum is available for quadratic federations only");
  }
  const auto d = static_cast<Eigen::Index>(fed.dimension());
  Eigen::MatrixXd system = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
  for (const auto& m : fed.models) {
    system += m.scale();
    system.diagonal().array() += m.weight_decay();
    rhs += m.scale() * m.center();
  }
  QuadraticOptimum out;
  out.theta = system.ldlt().solve(rhs);
  out.loss = global_loss(out.theta, fed);
  return out;
}

CurvatureBounds quadratic_curvature(const Federation& fed) {
  fed.validate();
  CurvatureBounds b{std::numeric_limits<double>::infinity(), 0.0};
  for (const auto& m : fed.models) {
    b.mu = std::min(b.mu, m.strong_convexity());
    b.smoothness = std::max(b.smoothness, m.smoothness());
  }
  return b;
}

namespace {

// Mean Hessian of the multiclass logistic objective, weight decay included.
Eigen::MatrixXd logistic_hessian(const ParamVector& theta, const Federation& fed) {
  const LossModel& model = fed.models.front();
  const auto p = static_cast<Eigen::Index>(model.inputs());
  const auto c = static_cast<Eigen::Index>(model.classes());
  const Eigen::Index d = theta.size();
  auto index = [&](Eigen::Index a, Eigen::Index j) { return j < p ? a * p + j : c * p + a; };
  Eigen::MatrixXd blocks = Eigen::MatrixXd::Zero(c * (p + 1), c * (p + 1));
  for (std::size_t k = 0; k < fed.devices(); ++k) {
    const DataShard& shard = fed.data.shards[k];
    if (shard.empty()) continue;
    const auto n = static_cast<Eigen::Index>(shard.size());
    Eigen::MatrixXd probs = class_scores(model, theta, shard.features);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double top = probs.row(i).maxCoeff();
      probs.row(i) = (probs.row(i).array() - top).exp().matrix();
      probs.row(i) /= probs.row(i).sum();
    }
    Eigen::MatrixXd xt(n, p + 1);
    xt.leftCols(p) = shard.features;
    xt.col(p).setOnes();
    const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(fed.devices()));
    for (Eigen::Index a = 0; a < c; ++a) {
      for (Eigen::Index b = a; b < c; ++b) {
        Eigen::VectorXd w = -probs.col(a).cwiseProduct(probs.col(b));
        if (a == b) w += probs.col(a);
        const Eigen::MatrixXd blk = scale * (xt.transpose() * w.asDiagonal() * xt);
        blocks.block(a * (p + 1), b * (p + 1), p + 1, p + 1) += blk;
        if (b != a) blocks.block(b * (p + 1), a * (p + 1), p + 1, p + 1) += blk.transpose();
      }
    }
  }
  Eigen::MatrixXd h(d, d);
  for (Eigen::Index a = 0; a < c; ++a)
    for (Eigen::Index j = 0; j <= p; ++j)
      for (Eigen::Index b = 0; b < c; ++b)
        for (Eigen::Index l = 0; l <= p; ++l)
          h(index(a, j), index(b, l)) = blocks(a * (p + 1) + j, b * (p + 1) + l);
  h.diagonal().array() += model.weight_decay();
  return h;
}

}  // namespace

ReferenceOptimum reference_optimum(const Federation& fed, double tol, std::size_t max_iters) {
  fed.validate();
  ReferenceOptimum out;
  if (fed.models.front().kind() == LossKind::Quadratic) {
    const QuadraticOptimum q = quadratic_optimum(fed);
    out.theta = q.theta;
    out.loss = q.loss;
    out.gradient_norm = stationarity_norm(q.theta, fed);
    out.analytic = true;
    return out;
  }
  const bool newton = fed.models.front().kind() == LossKind::MulticlassLogistic;
  // Damped Newton for the logistic objective; gradient descent with
  // Barzilai-Borwein trial steps otherwise. Both backtrack monotonically.
  ParamVector theta = ParamVector::Zero(static_cast<Eigen::Index>(fed.dimension()));
  double f = global_loss(theta, fed);
  ParamVector g = global_gradient(theta, fed);
  double step = 1.0;
  std::size_t it = 0;
  for (; it < max_iters; ++it) {
    const double gg = g.squaredNorm();
    if (std::sqrt(gg) <= tol) break;
    ParamVector next, g_next;
    double f_next = 0.0;
    bool accepted = false;
    ParamVector dir = g;
    double slope = gg;
    if (newton) {
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(logistic_hessian(theta, fed));
      ParamVector nd = ldlt.solve(g);
      if (ldlt.info() == Eigen::Success && nd.allFinite() && nd.dot(g) > 0.0) {
        dir = std::move(nd);
        slope = dir.dot(g);
      }
      step = 1.0;
    }
    for (int tries = 0; tries <= 60; ++tries, step *= 0.5) {
      next = theta - step * dir;
      f_next = global_loss(next, fed);
      if (!std::isfinite(f_next)) continue;
      if (0.5 * step * slope > 1e-14 * std::max(1.0, std::abs(f))) {
        accepted = f_next <= f - 1e-4 * step * slope;
        if (accepted) g_next = global_gradient(next, fed);
      } else {
        g_next = global_gradient(next, fed);
        accepted = g_next.squaredNorm() < gg;
      }
      if (accepted) break;
    }
    if (!accepted) break;  // no further progress at double precision
    const ParamVector s = next - theta;
    const ParamVector y = g_next - g;
    theta = std::move(next);
    f = f_next;
    g = std::move(g_next);
    const double sy = s.dot(y);
    step = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-10, 1e10) : 1.0;
  }
  out.theta = std::move(theta);
  out.loss = f;
  out.gradient_norm = g.norm();
  out.iterations = it;
  out.method = newton ? "newton" : "gradient_descent";
  return out;
}

}  // namespace fedsim
