#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fedsim/config.hpp"
#include "fedsim/errors.hpp"

namespace fedsim {
namespace {

constexpr const char* kMinimal = R"(
[data]
source = synthetic
mode = homogeneous

[algorithm]
name = feddyn
)";

TEST(Config, MinimalDefaults) {
  const auto cfg = parse_config_text(kMinimal);
  EXPECT_EQ(cfg.sim.algorithm.kind, AlgorithmKind::FedDyn);
  EXPECT_EQ(cfg.sim.algorithm.alpha, 0.01);
  EXPECT_EQ(cfg.sim.participation, 1.0);
  EXPECT_EQ(cfg.sim.rounds, 100u);
  EXPECT_EQ(cfg.data.loss, LossKind::MulticlassLogistic);
  EXPECT_EQ(cfg.data.weight_decay, 1e-4);
  EXPECT_EQ(cfg.sim.report_mode, ReportMode::Both);
}

TEST(Config, ZeroParticipationRejected) {
  try {
    parse_config_text(kMinimal, {"run.participation=0"});
    FAIL() << "expected a config error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("participation must yield >=1 device"), std::string::npos) << e.what();
  }
}

TEST(Config, FedAvgWithoutAlpha) {
  EXPECT_NO_THROW(parse_config_text("[algorithm]\nname = fedavg\n"));
  EXPECT_THROW(parse_config_text("[algorithm]\nname = feddyn\nalpha = 0\n"), ConfigError);
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    parse_config_text("[algorithm]\nname = fedavg\nlearning_rate = 3\n");
    FAIL() << "expected a config error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("algorithm.learning_rate"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config_text(kMinimal, {"run.bogus=1"}), ConfigError);
  EXPECT_THROW(parse_config_text(kMinimal, {"norhs"}), ConfigError);
}

TEST(Config, BadValues) {
  EXPECT_THROW(parse_config_text(kMinimal, {"run.rounds=-4"}), ConfigError);
  EXPECT_THROW(parse_config_text(kMinimal, {"algorithm.alpha=abc"}), ConfigError);
  EXPECT_THROW(parse_config_text(kMinimal, {"solver.method=closed_form"}), ConfigError);
  EXPECT_THROW(parse_config_text(kMinimal, {"data.classes=1"}), ConfigError);
  EXPECT_THROW(parse_config_text("[data]\nsource = csv\n"), ConfigError);
}

TEST(Config, QuadraticSourceDefaults) {
  const auto cfg = parse_config_text("[data]\nsource = quadratic\ndim = 4\n[solver]\nmethod = closed_form\n");
  EXPECT_EQ(cfg.data.loss, LossKind::Quadratic);
  EXPECT_EQ(cfg.data.weight_decay, 0.0);
  const auto fed = build_federation(cfg.data);
  EXPECT_EQ(fed.devices(), 20u);
  EXPECT_EQ(fed.dimension(), 4u);
}

TEST(Config, OverridesWinOverFile) {
  const auto cfg = parse_config_text(kMinimal, {"algorithm.alpha=0.5", "solver.grad_clip=on"});
  EXPECT_EQ(cfg.sim.algorithm.alpha, 0.5);
  EXPECT_EQ(cfg.sim.algorithm.solver.grad_clip_norm, kDefaultGradClipNorm);
}

TEST(Config, EmitParseRoundTrip) {
  auto cfg = parse_config_text(kMinimal);
  EXPECT_EQ(parse_config_text(emit_config(cfg)), cfg);
  cfg = parse_config_text(R"(
[data]
source = synthetic
mode = type2
gamma2 = 0.37
devices = 7
seed = 99
loss = mlp
hidden = 5
weight_decay = 1e-5
[algorithm]
name = fedprox
mu_prox = 0.001
[solver]
lr = 0.3333333333333333
grad_clip = 2.5
lr_decay = 0.998
batch = 10
steps = 40
[run]
name = custom
participation = 0.15
rounds = 17
eval_every = 3
seed = 12345678901234
report_mode = server
workers = 3
target_loss = 0.25
)");
  const auto back = parse_config_text(emit_config(cfg));
  EXPECT_EQ(back, cfg);
  EXPECT_EQ(back.data.synthetic.seed, 99u);
  EXPECT_EQ(*back.target_loss, 0.25);
  EXPECT_FALSE(back.target_accuracy.has_value());
}

std::string fmt_csv_config(const std::filesystem::path& dir) {
  return "[data]\nsource = csv\ndevices = 4\nclasses = 3\ninputs = 2\nfeatures = " + (dir / "features.csv").string() +
         "\nlabels = " + (dir / "labels.csv").string() + "\nholdout_fraction = 0.1\n";
}

TEST(Config, CsvSourceWithHoldout) {
  const auto dir = std::filesystem::temp_directory_path() / "fedsim_cfg_csv";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "features.csv"), l(dir / "labels.csv");
    for (int i = 0; i < 100; ++i) {
      f << i * 0.01 << ',' << (i % 7) * 0.5 << '\n';
      l << i % 3 << '\n';
    }
  }
  const auto cfg = parse_config_text(fmt_csv_config(dir));
  const auto fed = build_federation(cfg.data);
  EXPECT_EQ(fed.devices(), 4u);
  EXPECT_EQ(fed.data.test.size(), 10u);
  EXPECT_EQ(fed.data.total_samples(), 90u);
  EXPECT_EQ(fed.data.classes, 3u);
  std::filesystem::remove_all(dir);
}

TEST(Config, WithParameter) {
  const auto cfg = parse_config_text(kMinimal);
  EXPECT_EQ(with_parameter(cfg, "alpha", 0.1).sim.algorithm.alpha, 0.1);
  EXPECT_EQ(with_parameter(cfg, "lr", 0.5).sim.algorithm.solver.lr, 0.5);
  EXPECT_EQ(with_parameter(cfg, "participation", 0.5).sim.participation, 0.5);
  EXPECT_EQ(with_parameter(cfg, "dirichlet_prior", 0.6).data.dirichlet_prior, 0.6);
  EXPECT_EQ(with_parameter(cfg, "mu_prox", 0.01).sim.algorithm.mu_prox, 0.01);
  EXPECT_THROW(with_parameter(cfg, "epochs", 2), ConfigError);
}

TEST(Config, MissingFile) { EXPECT_THROW(parse_config("/nonexistent/x.ini"), IoError); }

}  // namespace
}  // namespace fedsim
