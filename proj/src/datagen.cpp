#include "fedsim/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace {

// Stream tags for the synthetic generator.
constexpr std::uint64_t kSharedModel = 1;
constexpr std::uint64_t kDeviceModel = 2;
constexpr std::uint64_t kFeatureMean = 3;
constexpr std::uint64_t kSizes = 4;
constexpr std::uint64_t kSamples = 5;
constexpr std::uint64_t kTestSamples = 6;

std::size_t infer_classes(const DataShard& pool) {
  int top = -1;
  for (int y : pool.labels) {
    if (y < 0) throw ContractError("labels must be nonnegative");
    top = std::max(top, y);
  }
  return static_cast<std::size_t>(top + 1);
}

std::vector<std::size_t> even_sizes(std::size_t n, std::size_t m) {
  std::vector<std::size_t> sizes(m, n / m);
  for (std::size_t k = 0; k < n % m; ++k) ++sizes[k];
  return sizes;
}

DataShard take_rows(const DataShard& pool, const std::vector<std::size_t>& rows) {
  DataShard out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), pool.features.cols());
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = pool.features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels[i] = pool.labels[rows[i]];
  }
  return out;
}

FederatedDataset assemble(const DataShard& pool, const std::vector<std::vector<std::size_t>>& assignment,
                          std::size_t classes) {
  FederatedDataset out;
  out.inputs = static_cast<std::size_t>(pool.features.cols());
  out.classes = classes;
  out.test.features.resize(0, pool.features.cols());
  out.shards.reserve(assignment.size());
  for (const auto& rows : assignment) out.shards.push_back(take_rows(pool, rows));
  out.refresh_meta();
  return out;
}

void check_pool(const DataShard& pool, std::size_t devices) {
  if (static_cast<std::size_t>(pool.features.rows()) != pool.labels.size()) {
    throw ContractError("features and labels disagree on sample count");
  }
  if (devices == 0) throw ContractError("device count must be positive");
  if (devices > pool.size()) {
    throw ContractError(fmt::format("cannot split {} samples across {} devices", pool.size(), devices));
  }
}

struct DeviceDistribution {
  Eigen::MatrixXd weights;  // C x p
  Eigen::VectorXd bias;     // C
  Eigen::VectorXd mean;     // p
};

void draw_samples(const DeviceDistribution& dist, const std::vector<double>& stddev, std::size_t count,
                  Rng& rng, DataShard& out, std::size_t offset) {
  const auto p = static_cast<Eigen::Index>(stddev.size());
  for (std::size_t j = 0; j < count; ++j) {
    const auto row = static_cast<Eigen::Index>(offset + j);
    for (Eigen::Index k = 0; k < p; ++k) {
      out.features(row, k) = dist.mean(k) + stddev[static_cast<std::size_t>(k)] * rng.normal();
    }
    Eigen::VectorXd scores = dist.weights * out.features.row(row).transpose() + dist.bias;
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.size(); ++c) {
      if (scores(c) > scores(best)) best = c;
    }
    out.labels[offset + j] = static_cast<int>(best);
  }
}

}  // namespace

const char* to_string(Heterogeneity mode) {
  switch (mode) {
    case Heterogeneity::Homogeneous: return "homogeneous";
    case Heterogeneity::Type1: return "type1";
    case Heterogeneity::Type2: return "type2";
    case Heterogeneity::Type3: return "type3";
  }
  return "unknown";
}

Heterogeneity heterogeneity_from_string(const std::string& name) {
  if (name == "homogeneous") return Heterogeneity::Homogeneous;
  if (name == "type1") return Heterogeneity::Type1;
  if (name == "type2") return Heterogeneity::Type2;
  if (name == "type3") return Heterogeneity::Type3;
  throw ConfigError(fmt::format("unknown heterogeneity mode '{}'", name));
}

void SyntheticConfig::validate() const {
  if (devices < 1) throw ContractError("synthetic data needs at least one device");
  if (avg_samples < 1) throw ContractError("synthetic data needs avg_samples >= 1");
  if (inputs < 1) throw ContractError("synthetic data needs p >= 1");
  if (classes < 2) throw ContractError("synthetic data needs C >= 2");
  if (gamma1 < 0.0 || gamma2 < 0.0 || gamma3 < 0.0) throw ContractError("gammas must be nonnegative");
  if (!(test_fraction >= 0.0)) throw ContractError("test_fraction must be nonnegative");
}

std::size_t FederatedDataset::total_samples() const noexcept {
  std::size_t n = 0;
  for (const auto& s : shards) n += s.size();
  return n;
}

void FederatedDataset::refresh_meta() {
  meta.sizes.assign(shards.size(), 0);
  meta.histograms.assign(shards.size(), std::vector<std::size_t>(classes, 0));
  for (std::size_t k = 0; k < shards.size(); ++k) {
    meta.sizes[k] = shards[k].size();
    for (int y : shards[k].labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= classes) {
        throw ContractError(fmt::format("device {} has label {} outside [0, {})", k, y, classes));
      }
      ++meta.histograms[k][static_cast<std::size_t>(y)];
    }
  }
}

DataShard FederatedDataset::pooled() const {
  DataShard out;
  out.features.resize(static_cast<Eigen::Index>(total_samples()), static_cast<Eigen::Index>(inputs));
  out.labels.reserve(total_samples());
  Eigen::Index row = 0;
  for (const auto& s : shards) {
    if (!s.empty()) out.features.middleRows(row, static_cast<Eigen::Index>(s.size())) = s.features;
    row += static_cast<Eigen::Index>(s.size());
    out.labels.insert(out.labels.end(), s.labels.begin(), s.labels.end());
  }
  return out;
}

std::vector<double> synthetic_feature_variances(std::size_t inputs) {
  std::vector<double> v(inputs);
  for (std::size_t k = 0; k < inputs; ++k) v[k] = std::pow(static_cast<double>(k + 1), -1.2);
  return v;
}

FederatedDataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const auto p = static_cast<Eigen::Index>(cfg.inputs);
  const auto c = static_cast<Eigen::Index>(cfg.classes);
  const bool type1 = cfg.mode == Heterogeneity::Type1;
  const bool type2 = cfg.mode == Heterogeneity::Type2;
  const bool type3 = cfg.mode == Heterogeneity::Type3;

  std::vector<double> stddev = synthetic_feature_variances(cfg.inputs);
  for (auto& s : stddev) s = std::sqrt(s);

  DeviceDistribution shared;
  {
    Rng rng(stream_seed(cfg.seed, {kSharedModel}));
    shared.weights.resize(c, p);
    shared.bias.resize(c);
    for (Eigen::Index i = 0; i < c; ++i)
      for (Eigen::Index j = 0; j < p; ++j) shared.weights(i, j) = rng.normal();
    for (Eigen::Index i = 0; i < c; ++i) shared.bias(i) = rng.normal();
    shared.mean = Eigen::VectorXd::Zero(p);
  }

  const std::size_t total = cfg.devices * cfg.avg_samples;
  const std::vector<std::size_t> sizes =
      sample_unbalanced_sizes(cfg.devices, type3 ? std::sqrt(cfg.gamma3) : 0.0, total,
                              stream_seed(cfg.seed, {kSizes}));

  FederatedDataset out;
  out.inputs = cfg.inputs;
  out.classes = cfg.classes;
  out.shards.resize(cfg.devices);

  std::vector<DeviceDistribution> dists(cfg.devices, shared);
  std::vector<std::size_t> test_sizes(cfg.devices);
  for (std::size_t i = 0; i < cfg.devices; ++i) {
    DeviceDistribution& dist = dists[i];
    if (type1) {
      Rng rng(stream_seed(cfg.seed, {kDeviceModel, i}));
      const double center = rng.normal(0.0, std::sqrt(cfg.gamma1));
      for (Eigen::Index a = 0; a < c; ++a)
        for (Eigen::Index b = 0; b < p; ++b) dist.weights(a, b) = rng.normal(center, 1.0);
      for (Eigen::Index a = 0; a < c; ++a) dist.bias(a) = rng.normal(center, 1.0);
    }
    if (type2) {
      Rng rng(stream_seed(cfg.seed, {kFeatureMean, i}));
      const double center = rng.normal(0.0, std::sqrt(cfg.gamma2));
      for (Eigen::Index k = 0; k < p; ++k) dist.mean(k) = rng.normal(center, 1.0);
    }

    DataShard& shard = out.shards[i];
    shard.features.resize(static_cast<Eigen::Index>(sizes[i]), p);
    shard.labels.resize(sizes[i]);
    Rng rng(stream_seed(cfg.seed, {kSamples, i}));
    draw_samples(dist, stddev, sizes[i], rng, shard, 0);
    test_sizes[i] = static_cast<std::size_t>(std::ceil(cfg.test_fraction * static_cast<double>(sizes[i])));
  }

  const std::size_t test_total = std::accumulate(test_sizes.begin(), test_sizes.end(), std::size_t{0});
  out.test.features.resize(static_cast<Eigen::Index>(test_total), p);
  out.test.labels.resize(test_total);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < cfg.devices; ++i) {
    Rng rng(stream_seed(cfg.seed, {kTestSamples, i}));
    draw_samples(dists[i], stddev, test_sizes[i], rng, out.test, offset);
    offset += test_sizes[i];
  }
  out.refresh_meta();
  return out;
}

FederatedDataset partition_iid(const DataShard& pool, std::size_t devices, std::uint64_t seed) {
  check_pool(pool, devices);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  const std::vector<std::size_t> sizes = even_sizes(pool.size(), devices);
  std::vector<std::vector<std::size_t>> assignment(devices);
  std::size_t next = 0;
  for (std::size_t k = 0; k < devices; ++k) {
    assignment[k].assign(order.begin() + static_cast<std::ptrdiff_t>(next),
                         order.begin() + static_cast<std::ptrdiff_t>(next + sizes[k]));
    next += sizes[k];
  }
  return assemble(pool, assignment, infer_classes(pool));
}

FederatedDataset partition_dirichlet(const DataShard& pool, std::size_t devices, double prior,
                                     std::uint64_t seed,
                                     const std::optional<std::vector<std::size_t>>& sizes) {
  if (!(prior > 0.0)) throw ContractError("Dirichlet prior must be positive");
  check_pool(pool, devices);
  const std::size_t classes = infer_classes(pool);

  std::vector<std::size_t> quota = sizes ? *sizes : even_sizes(pool.size(), devices);
  if (quota.size() != devices ||
      std::accumulate(quota.begin(), quota.end(), std::size_t{0}) != pool.size()) {
    throw ContractError("device quotas must have one entry per device and sum to the sample count");
  }

  Rng rng(seed);
  // Unassigned samples per class, in random order; popped from the back.
  std::vector<std::vector<std::size_t>> stock(classes);
  for (std::size_t i = 0; i < pool.size(); ++i) stock[static_cast<std::size_t>(pool.labels[i])].push_back(i);
  for (auto& s : stock) rng.shuffle(s);

  std::vector<std::vector<double>> priors(devices);
  for (auto& pr : priors) pr = rng.dirichlet(classes, prior);

  std::vector<std::vector<std::size_t>> assignment(devices);
  for (std::size_t k = 0; k < devices; ++k) assignment[k].reserve(quota[k]);
  std::size_t remaining = pool.size();
  std::vector<double> weights(classes);
  while (remaining > 0) {
    for (std::size_t k = 0; k < devices && remaining > 0; ++k) {
      if (assignment[k].size() >= quota[k]) continue;
      double mass = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        weights[c] = stock[c].empty() ? 0.0 : priors[k][c];
        mass += weights[c];
      }
      if (!(mass > 0.0)) {
        // The device's prior has no mass left on any stocked class.
        for (std::size_t c = 0; c < classes; ++c) weights[c] = stock[c].empty() ? 0.0 : 1.0;
      }
      const std::size_t label = rng.categorical(weights);
      assignment[k].push_back(stock[label].back());
      stock[label].pop_back();
      --remaining;
    }
  }
  return assemble(pool, assignment, classes);
}

std::vector<std::size_t> sample_unbalanced_sizes(std::size_t devices, double sigma, std::size_t total,
                                                 std::uint64_t seed) {
  if (devices == 0) throw ContractError("device count must be positive");
  if (!(sigma >= 0.0)) throw ContractError("lognormal sigma must be nonnegative");
  if (total < devices) throw ContractError("total sample count must be at least the device count");

  std::vector<double> weights(devices, 1.0);
  if (sigma > 0.0) {
    Rng rng(seed);
    for (auto& w : weights) w = rng.lognormal(0.0, sigma);
  }
  const double mass = std::accumulate(weights.begin(), weights.end(), 0.0);

  // Each device first gets one sample, the rest is shared by largest remainder.
  const std::size_t spare = total - devices;
  std::vector<std::size_t> sizes(devices, 1);
  std::vector<double> remainder(devices);
  std::size_t given = 0;
  for (std::size_t k = 0; k < devices; ++k) {
    const double exact = static_cast<double>(spare) * weights[k] / mass;
    const auto whole = static_cast<std::size_t>(std::floor(exact));
    sizes[k] += whole;
    given += whole;
    remainder[k] = exact - static_cast<double>(whole);
  }
  std::vector<std::size_t> order(devices);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; given < spare; ++i, ++given) ++sizes[order[i % devices]];
  return sizes;
}

FederatedDataset partition_unbalanced(const DataShard& pool, std::size_t devices, double sigma,
                                      std::uint64_t seed) {
  check_pool(pool, devices);
  const std::vector<std::size_t> sizes =
      sample_unbalanced_sizes(devices, sigma, pool.size(), stream_seed(seed, {kSizes}));
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> assignment(devices);
  std::size_t next = 0;
  for (std::size_t k = 0; k < devices; ++k) {
    assignment[k].assign(order.begin() + static_cast<std::ptrdiff_t>(next),
                         order.begin() + static_cast<std::ptrdiff_t>(next + sizes[k]));
    next += sizes[k];
  }
  return assemble(pool, assignment, infer_classes(pool));
}

std::size_t classes_covering(const std::vector<std::size_t>& histogram, double fraction) {
  std::vector<std::size_t> sorted = histogram;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double total = static_cast<double>(std::accumulate(sorted.begin(), sorted.end(), std::size_t{0}));
  if (total == 0.0) return 0;
  std::size_t acc = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    acc += sorted[i];
    if (static_cast<double>(acc) >= fraction * total) return i + 1;
  }
  return sorted.size();
}

double label_entropy(const std::vector<std::size_t>& histogram) {
  const double total = static_cast<double>(std::accumulate(histogram.begin(), histogram.end(), std::size_t{0}));
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (std::size_t count : histogram) {
    if (count == 0) continue;
    const double q = static_cast<double>(count) / total;
    h -= q * std::log(q);
  }
  return h;
}

}  // namespace fedsim
