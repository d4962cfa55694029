#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/datagen.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/simulator.hpp"

namespace fedsim {

enum class DataSource { Synthetic, Csv, Quadratic };
enum class PartitionKind { Iid, Dirichlet, Unbalanced };

const char* to_string(DataSource source);
const char* to_string(PartitionKind kind);

/// Everything needed to build the Federation for a run.
struct DataConfig {
  DataSource source = DataSource::Synthetic;
  /// Device count, shape and heterogeneity for `synthetic`; `devices` also
  /// applies to the csv and quadratic sources.
  SyntheticConfig synthetic;

  std::string features;
  std::string labels;
  std::string test_features;
  std::string test_labels;
  PartitionKind partition = PartitionKind::Iid;
  double dirichlet_prior = 0.3;
  double unbalanced_sigma = 0.3;
  /// Share of the CSV pool held out as test data when no test files are given.
  double holdout_fraction = 0.1;

  std::size_t dim = 10;
  double mu = 1.0;
  double smoothness = 4.0;
  double center_scale = 1.0;

  LossKind loss = LossKind::MulticlassLogistic;
  std::size_t hidden = 16;
  /// Resolved at parse time: 0 for quadratic, 1e-4 otherwise.
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

/// One run: what to build and how to iterate.
struct ExperimentConfig {
  std::string name = "run";
  DataConfig data;
  SimulationConfig sim;
  std::optional<double> target_accuracy;
  std::optional<double> target_loss;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Parses an INI document with sections [data], [algorithm], [solver], [run].
/// `overrides` are "section.key=value" strings applied on top. Unknown keys
/// and invariant violations throw ConfigError naming the key or invariant.
ExperimentConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides = {});
ExperimentConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Writes every resolved field; parse_config_text(emit_config(c)) == c.
std::string emit_config(const ExperimentConfig& cfg);

/// Checks cross-field invariants; throws ConfigError.
void validate_config(const ExperimentConfig& cfg);

/// Builds the device losses and data for a config.
Federation build_federation(const DataConfig& data);

/// Keys accepted by `sweep`.
const std::vector<std::string>& sweep_parameters();

/// Copy of `cfg` with a sweep parameter set.
ExperimentConfig with_parameter(const ExperimentConfig& cfg, const std::string& parameter, double value);

}  // namespace fedsim
