#include "fedsim/runner.hpp"

#include <cmath>
#include <cstdlib>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "fedsim/errors.hpp"
#include "fedsim/metrics.hpp"

namespace fedsim {

namespace {

using nlohmann::json;

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  return out;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json oracle_values(const Federation& fed) {
  json o = json::object();
  const ReferenceOptimum opt = [&] {
    if (fed.models.front().kind() == LossKind::TwoLayerMLP) return ReferenceOptimum{};
    return reference_optimum(fed);
  }();
  if (fed.models.front().kind() == LossKind::TwoLayerMLP) {
    o["optimum_loss"] = nullptr;
    return o;
  }
  o["optimum_loss"] = opt.loss;
  o["optimum_gradient_norm"] = opt.gradient_norm;
  o["optimum_method"] = opt.analytic ? opt.method : fmt::format("{}({} iterations)", opt.method, opt.iterations);
  if (fed.models.front().kind() == LossKind::Quadratic) {
    const CurvatureBounds b = quadratic_curvature(fed);
    o["mu"] = b.mu;
    o["L"] = b.smoothness;
  }
  return o;
}

double final_value(const std::vector<RoundRecord>& records, double RoundRecord::*field, double RoundRecord::*fallback) {
  if (records.empty()) return RoundRecord::kNaN;
  const double v = records.back().*field;
  return std::isnan(v) ? records.back().*fallback : v;
}

}  // namespace

std::filesystem::path output_root() {
  const char* env = std::getenv("FEDSIM_OUT_ROOT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("out");
}

RunOutcome run_to_directory(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                            const std::vector<std::string>& overrides) {
  validate_config(cfg);
  const Federation fed = build_federation(cfg.data);
  std::filesystem::create_directories(dir);

  RunOutcome outcome;
  outcome.directory = dir;
  outcome.fingerprint = dataset_fingerprint(fed.data);

  json manifest;
  manifest["software_version"] = kSoftwareVersion;
  manifest["config"] = emit_config(cfg);
  manifest["overrides"] = overrides;
  manifest["seeds"] = {{"run", cfg.sim.seed}, {"data", cfg.data.seed}};
  manifest["dataset_fingerprint"] = fmt::format("{:016x}", outcome.fingerprint);
  manifest["devices"] = fed.devices();
  manifest["participants_per_round"] = cfg.sim.participants(fed.devices());
  manifest["dimension"] = fed.dimension();
  manifest["comm_units_per_round"] = cfg.sim.algorithm.comm_units_per_round();
  if (!fed.data.shards.empty() && cfg.sim.algorithm.kind != AlgorithmKind::FedDynOneStep) {
    manifest["local_steps_device0"] = cfg.sim.algorithm.solver.resolved_steps(fed.data.shards.front().size());
  }
  manifest["oracle"] = oracle_values(fed);
  if (cfg.data.source == DataSource::Synthetic) {
    manifest["synthetic_test_set"] = fmt::format("{} extra samples per device, same process", cfg.data.synthetic.test_fraction);
  }

  json data_meta = {{"source", to_string(cfg.data.source)}, {"seed", cfg.data.seed}};
  write_dataset(fed.data, dir / "shards", data_meta.dump());
  {
    auto out = open_out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
  }

  auto rounds = open_out(dir / "rounds.csv");
  rounds << kRoundsCsvHeader << '\n';
  RunHooks hooks;
  hooks.on_record = [&](const RoundRecord& r) { rounds << format_round_row(r) << '\n' << std::flush; };
  outcome.result = run_experiment(fed, cfg.sim, hooks);

  SummaryTable table;
  const auto& recs = outcome.result.records;
  if (cfg.target_loss) {
    table.add(to_string(cfg.sim.algorithm.kind), cfg.name, *cfg.target_loss, rounds_to_loss(recs, *cfg.target_loss));
  } else if (cfg.target_accuracy) {
    table.add(to_string(cfg.sim.algorithm.kind), cfg.name, *cfg.target_accuracy,
              rounds_to_target(recs, *cfg.target_accuracy));
  } else {
    table.add(to_string(cfg.sim.algorithm.kind), cfg.name, RoundRecord::kNaN,
              TargetCost{recs.back().cumulative_comm_units, false});
  }
  table.compute_ratios();
  auto summary = open_out(dir / "summary.csv");
  table.write_csv(summary);
  return outcome;
}

std::vector<SweepEntry> run_sweep(const ExperimentConfig& base, const std::string& parameter,
                                  const std::vector<double>& values, const std::filesystem::path& root) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  const auto& allowed = sweep_parameters();
  if (std::find(allowed.begin(), allowed.end(), parameter) == allowed.end()) {
    throw ConfigError(fmt::format("cannot sweep '{}'; choose one of alpha, participation, dirichlet_prior, mu_prox, lr",
                                  parameter));
  }
  std::vector<SweepEntry> entries;
  for (double value : values) {
    SweepEntry e;
    e.value = value;
    e.directory = root / fmt::format("{}_{}_{}", base.name, parameter, value);
    try {
      ExperimentConfig cfg = with_parameter(base, parameter, value);
      cfg.name = e.directory.filename().string();
      const RunOutcome run = run_to_directory(cfg, e.directory, {fmt::format("{}={}", parameter, value)});
      const auto& recs = run.result.records;
      for (const auto& r : recs) {
        const double acc = std::isnan(r.test_accuracy) ? r.avg_test_accuracy : r.test_accuracy;
        if (!std::isnan(acc) && (std::isnan(e.best_test_accuracy) || acc > e.best_test_accuracy)) e.best_test_accuracy = acc;
      }
      e.final_train_loss = final_value(recs, &RoundRecord::train_loss, &RoundRecord::avg_train_loss);
      e.final_stationarity = final_value(recs, &RoundRecord::stationarity_norm, &RoundRecord::avg_stationarity_norm);
      e.ok = true;
    } catch (const std::exception& ex) {
      e.error = ex.what();
    }
    entries.push_back(std::move(e));
  }

  std::filesystem::create_directories(root);
  auto out = open_out(root / "sweep_summary.csv");
  out << "parameter,value,status,best_test_accuracy,final_train_loss,final_stationarity,best,directory,error\n";
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (!e.ok) continue;
    const double key = std::isnan(e.best_test_accuracy) ? -e.final_train_loss : e.best_test_accuracy;
    if (std::isnan(key)) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = entries[*best];
    const double bkey = std::isnan(b.best_test_accuracy) ? -b.final_train_loss : b.best_test_accuracy;
    if (key > bkey) best = i;
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    std::string err = e.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << fmt::format("{},{},{},{},{},{},{},{},{}\n", parameter, e.value, e.ok ? "ok" : "error", e.best_test_accuracy,
                       e.final_train_loss, e.final_stationarity, best && *best == i ? 1 : 0, e.directory.string(), err);
  }
  return entries;
}

std::vector<ProbeResult> verify_run(const std::filesystem::path& dir) {
  using Status = ProbeResult::Status;
  std::vector<ProbeResult> probes;
  auto add = [&](std::string name, bool ok, std::string detail) {
    probes.push_back({std::move(name), ok ? Status::Pass : Status::Fail, std::move(detail)});
  };

  json manifest;
  try {
    manifest = json::parse(slurp(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError(fmt::format("{}: {}", (dir / "manifest.json").string(), e.what()));
  }
  const ExperimentConfig cfg = parse_config_text(manifest.at("config").get<std::string>());
  const Federation fed = build_federation(cfg.data);
  const std::string expected_fp = manifest.at("dataset_fingerprint").get<std::string>();

  const std::string rebuilt_fp = fmt::format("{:016x}", dataset_fingerprint(fed.data));
  add("dataset_fingerprint", rebuilt_fp == expected_fp, fmt::format("manifest {} rebuilt {}", expected_fp, rebuilt_fp));
  {
    const FederatedDataset dumped = read_dataset(dir / "shards");
    const std::string dumped_fp = fmt::format("{:016x}", dataset_fingerprint(dumped));
    add("shard_dump_fingerprint", dumped_fp == expected_fp, fmt::format("shards/ {}", dumped_fp));
    std::size_t bad = 0;
    for (std::size_t k = 0; k < dumped.devices(); ++k) {
      std::size_t total = 0;
      for (auto c : dumped.meta.histograms[k]) total += c;
      if (total != dumped.meta.sizes[k]) ++bad;
    }
    add("histograms_match_sizes", bad == 0, fmt::format("{} devices disagree", bad));
  }

  const std::vector<RoundRecord> recorded = read_rounds_csv(dir / "rounds.csv");
  {
    bool ok = !recorded.empty();
    const double per_round = cfg.sim.algorithm.comm_units_per_round();
    for (std::size_t i = 0; ok && i < recorded.size(); ++i) {
      const double expected = per_round * static_cast<double>(recorded[i].round);
      if (recorded[i].cumulative_comm_units != expected) ok = false;
      if (i > 0 && recorded[i].cumulative_comm_units < recorded[i - 1].cumulative_comm_units) ok = false;
    }
    add("comm_accounting", ok, fmt::format("{} units per round, {} records", per_round, recorded.size()));
  }

  std::ostringstream replay;
  replay << kRoundsCsvHeader << '\n';
  RunHooks hooks;
  hooks.on_record = [&](const RoundRecord& r) { replay << format_round_row(r) << '\n'; };
  const ExperimentResult rerun = run_experiment(fed, cfg.sim, hooks);
  add("replay_determinism", replay.str() == slurp(dir / "rounds.csv"), "rounds.csv re-generated from manifest config");

  if (cfg.sim.algorithm.kind == AlgorithmKind::FedDyn) {
    const double dev = verify_h_invariant(rerun.server, rerun.devices);
    const bool exact = cfg.sim.algorithm.solver.method == SolverMethod::ClosedFormQuadratic;
    if (exact) {
      add("h_invariant", dev <= 1e-10, fmt::format("max |h - mean grad_cache| = {:.3e}", dev));
    } else {
      probes.push_back({"h_invariant", Status::Info, fmt::format("max |h - mean grad_cache| = {:.3e} (inexact solves)", dev)});
    }
  }
  if (!recorded.empty()) {
    const auto& last = recorded.back();
    probes.push_back({"final_stationarity", Status::Info,
                      fmt::format("server {:.3e}, device average {:.3e}", last.stationarity_norm, last.avg_stationarity_norm)});
  }
  return probes;
}

}  // namespace fedsim
