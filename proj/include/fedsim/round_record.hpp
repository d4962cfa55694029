#pragma once

#include <cstddef>
#include <limits>

namespace fedsim {

/// Metrics captured after a round (round 0 is the initial model).
///
/// Server-model columns are NaN when the run only reports the device average,
/// and vice versa. Accuracies are NaN when there is no labeled test data.
struct RoundRecord {
  static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

  std::size_t round = 0;
  double train_loss = kNaN;          // global loss at the server model
  double test_accuracy = kNaN;       // at the server model
  double stationarity_norm = kNaN;   // ||mean device gradient|| at the server model
  double gamma_train_loss = kNaN;    // global loss at the mean of this round's active models
  double cumulative_comm_units = 0;  // in rounds-of-FedAvg equivalents
  double avg_train_loss = kNaN;      // same three metrics at the all-device average model
  double avg_test_accuracy = kNaN;
  double avg_stationarity_norm = kNaN;
};

/// Which evaluated model a selector reads.
enum class EvalModel { Server, DeviceAverage };

}  // namespace fedsim
