#include "fedsim/metrics.hpp"

#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <ostream>
#include <sstream>

#include "fedsim/errors.hpp"
#include "fedsim/federation.hpp"

namespace fedsim {

namespace {

double select(const RoundRecord& r, EvalModel model, double RoundRecord::*server, double RoundRecord::*avg) {
  return model == EvalModel::Server ? r.*server : r.*avg;
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{}", v);
}

double parse_csv_number(const std::string& text) {
  if (text == "nan") return RoundRecord::kNaN;
  std::size_t used = 0;
  const double v = std::stod(text, &used);
  if (used != text.size()) throw IoError(fmt::format("bad number '{}' in rounds.csv", text));
  return v;
}

}  // namespace

double global_loss(const ParamVector& params, const Federation& fed) {
  if (fed.devices() == 0) throw ContractError("global loss over an empty device set");
  double sum = 0.0;
  for (std::size_t k = 0; k < fed.devices(); ++k) sum += loss_value(fed.models[k], params, fed.data.shards[k]);
  return sum / static_cast<double>(fed.devices());
}

ParamVector global_gradient(const ParamVector& params, const Federation& fed) {
  if (fed.devices() == 0) throw ContractError("global gradient over an empty device set");
  ParamVector sum = ParamVector::Zero(params.size());
  for (std::size_t k = 0; k < fed.devices(); ++k) sum += loss_gradient(fed.models[k], params, fed.data.shards[k]);
  return sum / static_cast<double>(fed.devices());
}

double stationarity_norm(const ParamVector& params, const Federation& fed) {
  return global_gradient(params, fed).norm();
}

double accuracy(const LossModel& model, const ParamVector& params, const DataShard& shard) {
  if (model.kind() == LossKind::Quadratic || shard.empty()) return RoundRecord::kNaN;
  const Eigen::MatrixXd scores = class_scores(model, params, shard.features);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c) {
      if (scores(i, c) > scores(i, best)) best = c;
    }
    if (best == shard.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(shard.size());
}

double verify_h_invariant(const ServerState& server, std::span<const DeviceState> devices) {
  if (devices.empty()) throw ContractError("h invariant needs at least one device");
  ParamVector mean = ParamVector::Zero(server.h.size());
  for (const auto& d : devices) mean += d.grad_cache;
  mean /= static_cast<double>(devices.size());
  return (server.h - mean).cwiseAbs().maxCoeff();
}

ParamVector device_average(std::span<const DeviceState> devices) {
  if (devices.empty()) throw ContractError("device average over an empty set");
  ParamVector sum = ParamVector::Zero(devices.front().theta.size());
  for (const auto& d : devices) sum += d.theta;
  return sum / static_cast<double>(devices.size());
}

std::optional<double> empirical_rate(std::span<const RoundRecord> records, std::size_t first_round,
                                     std::size_t last_round, double optimum) {
  std::vector<double> xs, ys;
  for (const auto& r : records) {
    if (r.round < first_round || r.round > last_round) continue;
    const double excess = r.gamma_train_loss - optimum;
    if (!(excess > 0.0) || !std::isfinite(excess)) break;
    xs.push_back(static_cast<double>(r.round));
    ys.push_back(std::log(excess));
  }
  if (xs.size() < 2) return std::nullopt;
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return std::exp(sxy / sxx);
}

TargetCost rounds_to_target(std::span<const RoundRecord> records, double target_accuracy, EvalModel model) {
  if (records.empty()) throw ContractError("rounds_to_target needs at least one record");
  for (const auto& r : records) {
    const double acc = select(r, model, &RoundRecord::test_accuracy, &RoundRecord::avg_test_accuracy);
    if (acc >= target_accuracy) return {r.cumulative_comm_units, true};
  }
  return {records.back().cumulative_comm_units, false};
}

TargetCost rounds_to_loss(std::span<const RoundRecord> records, double target_loss, EvalModel model) {
  if (records.empty()) throw ContractError("rounds_to_loss needs at least one record");
  for (const auto& r : records) {
    const double loss = select(r, model, &RoundRecord::train_loss, &RoundRecord::avg_train_loss);
    if (loss <= target_loss) return {r.cumulative_comm_units, true};
  }
  return {records.back().cumulative_comm_units, false};
}

void SummaryTable::add(std::string algorithm, std::string setting, double target, TargetCost cost) {
  rows_.push_back({std::move(algorithm), std::move(setting), target, cost, std::nullopt, false});
}

void SummaryTable::compute_ratios(const std::string& reference) {
  for (auto& row : rows_) {
    row.savings_ratio.reset();
    row.ratio_is_lower_bound = false;
    const SummaryRow* ref = nullptr;
    for (const auto& cand : rows_) {
      if (cand.algorithm == reference && cand.setting == row.setting) ref = &cand;
    }
    if (ref == nullptr || !ref->cost.reached || ref->cost.units <= 0.0) continue;
    row.savings_ratio = row.cost.units / ref->cost.units;
    row.ratio_is_lower_bound = !row.cost.reached;
  }
}

void SummaryTable::write_csv(std::ostream& out) const {
  out << "algorithm,setting,target,comm_units,reached,savings_ratio\n";
  for (const auto& r : rows_) {
    std::string ratio = "";
    if (r.savings_ratio) ratio = fmt::format("{}{:.2f}", r.ratio_is_lower_bound ? ">" : "", *r.savings_ratio);
    out << fmt::format("{},{},{},{}{},{},{}\n", r.algorithm, r.setting, csv_number(r.target),
                       csv_number(r.cost.units), r.cost.reached ? "" : "+", r.cost.reached ? 1 : 0, ratio);
  }
}

std::string format_round_row(const RoundRecord& r) {
  return fmt::format("{},{},{},{},{},{},{},{},{}", r.round, csv_number(r.train_loss),
                     csv_number(r.test_accuracy), csv_number(r.stationarity_norm),
                     csv_number(r.gamma_train_loss), csv_number(r.cumulative_comm_units),
                     csv_number(r.avg_train_loss), csv_number(r.avg_test_accuracy),
                     csv_number(r.avg_stationarity_norm));
}

void write_rounds_csv(std::span<const RoundRecord> records, std::ostream& out) {
  out << kRoundsCsvHeader << '\n';
  for (const auto& r : records) out << format_round_row(r) << '\n';
}

std::vector<RoundRecord> read_rounds_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::string line;
  if (!std::getline(in, line) || line != kRoundsCsvHeader) {
    throw IoError(fmt::format("{}: unexpected header", path.string()));
  }
  std::vector<RoundRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw IoError(fmt::format("{}: malformed row '{}'", path.string(), line));
    RoundRecord r;
    r.round = static_cast<std::size_t>(std::stoull(cells[0]));
    r.train_loss = parse_csv_number(cells[1]);
    r.test_accuracy = parse_csv_number(cells[2]);
    r.stationarity_norm = parse_csv_number(cells[3]);
    r.gamma_train_loss = parse_csv_number(cells[4]);
    r.cumulative_comm_units = parse_csv_number(cells[5]);
    r.avg_train_loss = parse_csv_number(cells[6]);
    r.avg_test_accuracy = parse_csv_number(cells[7]);
    r.avg_stationarity_norm = parse_csv_number(cells[8]);
    out.push_back(r);
  }
  return out;
}

}  // namespace fedsim
