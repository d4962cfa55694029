#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsim/algorithms.hpp"
#include "fedsim/losses.hpp"
#include "fedsim/round_record.hpp"

namespace fedsim {

struct Federation;

/// (1/m) sum_k L_k(theta), unweighted over devices.
double global_loss(const ParamVector& params, const Federation& fed);

/// (1/m) sum_k grad L_k(theta).
ParamVector global_gradient(const ParamVector& params, const Federation& fed);

/// ||(1/m) sum_k grad L_k(theta)||.
double stationarity_norm(const ParamVector& params, const Federation& fed);

/// Fraction of correct argmax predictions (ties go to the lowest class). NaN
/// for quadratic models or an empty shard.
double accuracy(const LossModel& model, const ParamVector& params, const DataShard& shard);

/// max_i |h_i - (1/m) sum_k grad_cache_k,i|.
double verify_h_invariant(const ServerState& server, std::span<const DeviceState> devices);

/// Mean of every device's local model.
ParamVector device_average(std::span<const DeviceState> devices);

/// Per-round contraction of the excess loss l(gamma^t) - optimum, from a
/// least-squares fit of log(excess) against the round over records whose round
/// lies in [first_round, last_round]. The window stops at the first record
/// whose excess is not positive. Returns nullopt with fewer than two usable points.
std::optional<double> empirical_rate(std::span<const RoundRecord> records, std::size_t first_round,
                                     std::size_t last_round, double optimum);

/// Communication spent when a target is first met.
struct TargetCost {
  double units = 0.0;
  bool reached = false;
};

/// First record with test_accuracy >= target (server model). When never met,
/// reached = false and units carries the final cumulative cost.
TargetCost rounds_to_target(std::span<const RoundRecord> records, double target_accuracy,
                            EvalModel model = EvalModel::Server);

/// First record with train_loss <= target.
TargetCost rounds_to_loss(std::span<const RoundRecord> records, double target_loss,
                          EvalModel model = EvalModel::Server);

struct SummaryRow {
  std::string algorithm;
  std::string setting;
  double target = 0.0;
  TargetCost cost;
  /// competitor units / FedDyn units when both reached; lower bound otherwise.
  std::optional<double> savings_ratio;
  bool ratio_is_lower_bound = false;
};

/// Communication-to-target comparison against the FedDyn row of each setting.
class SummaryTable {
 public:
  void add(std::string algorithm, std::string setting, double target, TargetCost cost);
  /// Fills savings_ratio for every row whose setting has a reached FedDyn row.
  void compute_ratios(const std::string& reference = "feddyn");
  const std::vector<SummaryRow>& rows() const noexcept { return rows_; }
  void write_csv(std::ostream& out) const;

 private:
  std::vector<SummaryRow> rows_;
};

/// Column order of rounds.csv.
inline constexpr const char* kRoundsCsvHeader =
    "round,train_loss,test_accuracy,stationarity_norm,gamma_train_loss,cumulative_comm_units,"
    "avg_train_loss,avg_test_accuracy,avg_stationarity_norm";

std::string format_round_row(const RoundRecord& r);
void write_rounds_csv(std::span<const RoundRecord> records, std::ostream& out);
std::vector<RoundRecord> read_rounds_csv(const std::filesystem::path& path);

}  // namespace fedsim
