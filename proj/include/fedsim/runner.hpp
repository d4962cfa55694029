#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/simulator.hpp"

namespace fedsim {

inline constexpr const char* kSoftwareVersion = "0.1.0";

/// Output root: $FEDSIM_OUT_ROOT when set, otherwise "out".
std::filesystem::path output_root();

struct RunOutcome {
  std::filesystem::path directory;
  ExperimentResult result;
  std::uint64_t fingerprint = 0;
};

/// Builds the federation, runs it and writes manifest.json, rounds.csv,
/// summary.csv and shards/ into `dir`. rounds.csv is written as records are
/// produced, so a diverged run leaves its partial history behind.
RunOutcome run_to_directory(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                            const std::vector<std::string>& overrides = {});

struct SweepEntry {
  double value = 0.0;
  std::filesystem::path directory;
  bool ok = false;
  std::string error;
  double best_test_accuracy = RoundRecord::kNaN;
  double final_train_loss = RoundRecord::kNaN;
  double final_stationarity = RoundRecord::kNaN;
};

/// One run per value under `root/<name>_<parameter>_<value>`, then
/// `root/sweep_summary.csv`. A failing child is recorded and the sweep moves on.
std::vector<SweepEntry> run_sweep(const ExperimentConfig& base, const std::string& parameter,
                                  const std::vector<double>& values, const std::filesystem::path& root);

/// One invariant probe against a finished run directory.
struct ProbeResult {
  std::string name;
  enum class Status { Pass, Fail, Info } status = Status::Pass;
  std::string detail;
};

/// Re-checks a run directory: manifest and dataset fingerprint, comm
/// accounting, replay determinism of rounds.csv, and for FedDyn the h
/// invariant (pass/fail only with exact quadratic solves).
std::vector<ProbeResult> verify_run(const std::filesystem::path& dir);

}  // namespace fedsim
