// fedsim: command-line driver for the federated optimization simulator.
//
//   fedsim run <config.ini> [--set section.key=value ...] [--out DIR]
//   fedsim sweep <config.ini> --param alpha --values 0.001,0.01,0.1 [--set ...] [--out DIR]
//   fedsim gen-data <config.ini> [--set ...] [--out DIR]
//   fedsim verify <run-dir>
//
// Exit codes: 0 success, 2 config error, 3 divergence, 4 I/O error,
// 5 verify found a failing probe, 1 anything else.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <iostream>
#include <json.hpp>

#include "fedsim/config.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/runner.hpp"

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kDivergence = 3, kIo = 4, kVerifyFailed = 5 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic federated optimization simulator (FedDyn, FedAvg, FedProx, SCAFFOLD)"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;

  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("config", config_path, "INI config file")->required();
  run->add_option("--set", overrides, "Override, section.key=value");
  run->add_option("--out", out_dir, "Output directory (default $FEDSIM_OUT_ROOT/<run.name>)");

  std::string parameter;
  std::vector<double> values;
  auto* sweep = app.add_subcommand("sweep", "Run one experiment per parameter value");
  sweep->add_option("config", config_path, "INI config file")->required();
  sweep->add_option("--param", parameter, "alpha | participation | dirichlet_prior | mu_prox | lr")->required();
  sweep->add_option("--values", values, "Comma-separated values")->delimiter(',');
  sweep->add_option("--set", overrides, "Override, section.key=value");
  sweep->add_option("--out", out_dir, "Sweep root (default $FEDSIM_OUT_ROOT/<run.name>_sweep)");

  auto* gen = app.add_subcommand("gen-data", "Generate and dump the federated dataset only");
  gen->add_option("config", config_path, "INI config file")->required();
  gen->add_option("--set", overrides, "Override, section.key=value");
  gen->add_option("--out", out_dir, "Dataset directory (default $FEDSIM_OUT_ROOT/<run.name>/shards)");

  std::string run_dir;
  auto* verify = app.add_subcommand("verify", "Re-check invariants of a finished run directory");
  verify->add_option("run_dir", run_dir, "Directory written by `run`")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run) {
      const auto cfg = fedsim::parse_config(config_path, overrides);
      const auto dir = out_dir.empty() ? fedsim::output_root() / cfg.name : std::filesystem::path(out_dir);
      const auto outcome = fedsim::run_to_directory(cfg, dir, overrides);
      const auto& last = outcome.result.records.back();
      std::cout << fmt::format("{}: {} rounds, train_loss {:.6g}, stationarity {:.3e}, comm units {}\n",
                               dir.string(), outcome.result.rounds_run, last.train_loss, last.stationarity_norm,
                               last.cumulative_comm_units);
    } else if (*sweep) {
      const auto cfg = fedsim::parse_config(config_path, overrides);
      const auto root = out_dir.empty() ? fedsim::output_root() / (cfg.name + "_sweep") : std::filesystem::path(out_dir);
      const auto entries = fedsim::run_sweep(cfg, parameter, values, root);
      int failures = 0;
      for (const auto& e : entries) {
        if (e.ok) {
          std::cout << fmt::format("{}={}: best accuracy {:.4f}, final stationarity {:.3e}\n", parameter, e.value,
                                   e.best_test_accuracy, e.final_stationarity);
        } else {
          ++failures;
          std::cout << fmt::format("{}={}: error: {}\n", parameter, e.value, e.error);
        }
      }
      std::cout << fmt::format("summary: {}\n", (root / "sweep_summary.csv").string());
      if (failures > 0) return kDivergence;
    } else if (*gen) {
      const auto cfg = fedsim::parse_config(config_path, overrides);
      const auto dir = out_dir.empty() ? fedsim::output_root() / cfg.name / "shards" : std::filesystem::path(out_dir);
      const auto fed = fedsim::build_federation(cfg.data);
      nlohmann::json extra = {{"source", fedsim::to_string(cfg.data.source)},
                              {"seed", cfg.data.seed},
                              {"config", fedsim::emit_config(cfg)}};
      fedsim::write_dataset(fed.data, dir, extra.dump());
      std::cout << fmt::format("{}: {} devices, {} training samples\n", dir.string(), fed.data.devices(),
                               fed.data.total_samples());
    } else if (*verify) {
      const auto probes = fedsim::verify_run(run_dir);
      bool failed = false;
      for (const auto& p : probes) {
        const char* tag = p.status == fedsim::ProbeResult::Status::Pass   ? "PASS"
                          : p.status == fedsim::ProbeResult::Status::Fail ? "FAIL"
                                                                          : "INFO";
        failed |= p.status == fedsim::ProbeResult::Status::Fail;
        std::cout << fmt::format("[{}] {}: {}\n", tag, p.name, p.detail);
      }
      return failed ? kVerifyFailed : kOk;
    }
  } catch (const fedsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const fedsim::ContractError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const fedsim::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const fedsim::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOk;
}
