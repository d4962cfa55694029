#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/losses.hpp"

namespace fedsim {

/// Which single source of heterogeneity the synthetic generator enables.
enum class Heterogeneity { Homogeneous, Type1, Type2, Type3 };

const char* to_string(Heterogeneity mode);
Heterogeneity heterogeneity_from_string(const std::string& name);

/// Synthetic argmax-linear classification data.
///
///   Type1  per-device optimal model: (W*_i, b*_i) entries ~ N(mu_i, 1), mu_i ~ N(0, gamma1)
///   Type2  per-device feature mean:  nu_i entries ~ N(beta_i, 1), beta_i ~ N(0, gamma2)
///   Type3  per-device sample count:  lognormal with log-variance gamma3
///
/// Only the knob selected by `mode` is used; the other two sources are off
/// (one shared optimal model, nu_i = 0, equal sizes). Second arguments of N(.,.)
/// are variances.
struct SyntheticConfig {
  std::size_t devices = 20;
  std::size_t avg_samples = 200;
  std::size_t inputs = 30;
  std::size_t classes = 5;
  double gamma1 = 1.0;
  double gamma2 = 1.0;
  double gamma3 = 1.0;
  Heterogeneity mode = Heterogeneity::Homogeneous;
  std::uint64_t seed = 0;
  /// Held-out samples per device, as a fraction of that device's training count.
  double test_fraction = 0.1;

  void validate() const;

  friend bool operator==(const SyntheticConfig&, const SyntheticConfig&) = default;
};

struct PartitionMeta {
  std::vector<std::size_t> sizes;
  /// histograms[k][c] = number of samples of class c on device k.
  std::vector<std::vector<std::size_t>> histograms;
};

/// m device shards plus a held-out test shard.
struct FederatedDataset {
  std::vector<DataShard> shards;
  DataShard test;
  std::size_t inputs = 0;
  std::size_t classes = 0;
  PartitionMeta meta;

  std::size_t devices() const noexcept { return shards.size(); }
  std::size_t total_samples() const noexcept;
  /// Recomputes `meta` from the shards.
  void refresh_meta();
  /// All training shards concatenated in device order.
  DataShard pooled() const;
};

/// Feature covariance diagonal k^-1.2, k = 1..p.
std::vector<double> synthetic_feature_variances(std::size_t inputs);

FederatedDataset generate_synthetic(const SyntheticConfig& cfg);

/// Uniform random split. Sizes are n / m, with the remainder handed out one
/// sample per device starting at device 0. Throws ContractError if m > n.
FederatedDataset partition_iid(const DataShard& pool, std::size_t devices, std::uint64_t seed);

/// Label-skewed split. Each device draws class priors from Dirichlet(prior * 1_C);
/// devices are visited round-robin, each draws a label from its priors
/// restricted to classes that still have unassigned samples and takes one
/// unassigned sample of that label. Device quotas are `sizes` when given,
/// otherwise the IID sizes.
FederatedDataset partition_dirichlet(const DataShard& pool, std::size_t devices, double prior,
                                     std::uint64_t seed,
                                     const std::optional<std::vector<std::size_t>>& sizes = std::nullopt);

/// Device sizes proportional to LogNormal(0, sigma^2) draws, rescaled to sum to
/// `total` with every size >= 1. sigma = 0 gives equal sizes.
std::vector<std::size_t> sample_unbalanced_sizes(std::size_t devices, double sigma, std::size_t total,
                                                 std::uint64_t seed);

/// Unbalanced random split: sizes from sample_unbalanced_sizes, samples assigned uniformly.
FederatedDataset partition_unbalanced(const DataShard& pool, std::size_t devices, double sigma,
                                      std::uint64_t seed);

/// Smallest number of classes whose combined count reaches `fraction` of the total.
std::size_t classes_covering(const std::vector<std::size_t>& histogram, double fraction);

/// Shannon entropy (nats) of a label histogram.
double label_entropy(const std::vector<std::size_t>& histogram);

// CSV ingestion and dataset dumps ---------------------------------------------

/// Header-free, comma-separated decimal floats, one sample per line.
FeatureMatrix read_features_csv(const std::filesystem::path& path);
/// One integer label per line.
std::vector<int> read_labels_csv(const std::filesystem::path& path);
DataShard read_csv_pair(const std::filesystem::path& features, const std::filesystem::path& labels);

/// Writes shard_<k>.csv (feature columns then the label, one sample per row),
/// test.csv and meta.json into `dir`. `extra` is merged into meta.json.
void write_dataset(const FederatedDataset& data, const std::filesystem::path& dir,
                   const std::string& extra_json = "{}");
FederatedDataset read_dataset(const std::filesystem::path& dir);

/// 64-bit FNV-1a over shard shapes, features and labels.
std::uint64_t dataset_fingerprint(const FederatedDataset& data);

}  // namespace fedsim
