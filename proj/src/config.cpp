#include "fedsim/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace {

namespace pt = boost::property_tree;

double to_real(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(fmt::format("{}: expected a number, got '{}'", key, text));
}

std::uint64_t to_count(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    if (!text.empty() && text.front() != '-') {
      const auto v = std::stoull(text, &used);
      if (used == text.size()) return v;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(fmt::format("{}: expected a nonnegative integer, got '{}'", key, text));
}

LossKind loss_from_string(const std::string& name) {
  if (name == "quadratic") return LossKind::Quadratic;
  if (name == "logistic") return LossKind::MulticlassLogistic;
  if (name == "mlp") return LossKind::TwoLayerMLP;
  throw ConfigError(fmt::format("data.loss: unknown loss '{}'", name));
}

DataSource source_from_string(const std::string& name) {
  if (name == "synthetic") return DataSource::Synthetic;
  if (name == "csv") return DataSource::Csv;
  if (name == "quadratic") return DataSource::Quadratic;
  throw ConfigError(fmt::format("data.source: unknown source '{}'", name));
}

PartitionKind partition_from_string(const std::string& name) {
  if (name == "iid") return PartitionKind::Iid;
  if (name == "dirichlet") return PartitionKind::Dirichlet;
  if (name == "unbalanced") return PartitionKind::Unbalanced;
  throw ConfigError(fmt::format("data.partition: unknown partition '{}'", name));
}

template <typename Fn>
auto translate(Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto real = [](double DataConfig::*f) {
      return [f](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.*f = to_real(k, v); };
    };
    t["data.source"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.source = source_from_string(v); };
    t["data.devices"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.synthetic.devices = to_count(k, v); };
    t["data.avg_samples"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.synthetic.avg_samples = to_count(k, v); };
    t["data.inputs"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.synthetic.inputs = to_count(k, v); };
    t["data.classes"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.synthetic.classes = to_count(k, v); };
    t["data.mode"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.synthetic.mode = heterogeneity_from_string(v); };
    t["data.gamma1"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.synthetic.gamma1 = to_real(k, v); };
    t["data.gamma2"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.synthetic.gamma2 = to_real(k, v); };
    t["data.gamma3"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.synthetic.gamma3 = to_real(k, v); };
    t["data.test_fraction"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.synthetic.test_fraction = to_real(k, v); };
    t["data.features"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.features = v; };
    t["data.labels"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.labels = v; };
    t["data.test_features"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.test_features = v; };
    t["data.test_labels"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.test_labels = v; };
    t["data.partition"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.partition = partition_from_string(v); };
    t["data.dirichlet_prior"] = real(&DataConfig::dirichlet_prior);
    t["data.unbalanced_sigma"] = real(&DataConfig::unbalanced_sigma);
    t["data.holdout_fraction"] = real(&DataConfig::holdout_fraction);
    t["data.dim"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.dim = to_count(k, v); };
    t["data.mu"] = real(&DataConfig::mu);
    t["data.smoothness"] = real(&DataConfig::smoothness);
    t["data.center_scale"] = real(&DataConfig::center_scale);
    t["data.loss"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.loss = loss_from_string(v); };
    t["data.hidden"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.hidden = to_count(k, v); };
    t["data.weight_decay"] = real(&DataConfig::weight_decay);
    t["data.seed"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.seed = to_count(k, v); };

    t["algorithm.name"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.sim.algorithm.kind = algorithm_from_string(v); };
    t["algorithm.alpha"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sim.algorithm.alpha = to_real(k, v); };
    t["algorithm.mu_prox"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sim.algorithm.mu_prox = to_real(k, v); };

    t["solver.method"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.sim.algorithm.solver.method = solver_method_from_string(v); };
    t["solver.lr"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sim.algorithm.solver.lr = to_real(k, v); };
    t["solver.epochs"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sim.algorithm.solver.epochs = to_count(k, v); };
    t["solver.steps"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sim.algorithm.solver.steps = to_count(k, v); };
    t["solver.batch"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sim.algorithm.solver.batch = to_count(k, v); };
    t["solver.lr_decay"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sim.algorithm.solver.lr_decay_per_round = to_real(k, v); };
    t["solver.grad_clip"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      auto& clip = c.sim.algorithm.solver.grad_clip_norm;
      if (v == "none") clip.reset();
      else if (v == "on") clip = kDefaultGradClipNorm;
      else clip = to_real(k, v);
    };
    t["solver.tol"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sim.algorithm.solver.tol = to_real(k, v); };
    t["solver.max_iters"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sim.algorithm.solver.max_iters = to_count(k, v); };

    t["run.name"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.name = v; };
    t["run.participation"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sim.participation = to_real(k, v); };
    t["run.rounds"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sim.rounds = to_count(k, v); };
    t["run.eval_every"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sim.eval_every = to_count(k, v); };
    t["run.seed"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sim.seed = to_count(k, v); };
    t["run.report_mode"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.sim.report_mode = report_mode_from_string(v); };
    t["run.workers"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sim.workers = to_count(k, v); };
    t["run.target_accuracy"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      if (v == "none") c.target_accuracy.reset(); else c.target_accuracy = to_real(k, v);
    };
    t["run.target_loss"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      if (v == "none") c.target_loss.reset(); else c.target_loss = to_real(k, v);
    };
    return t;
  }();
  return table;
}

std::string num(double v) { return fmt::format("{}", v); }

}  // namespace

const char* to_string(DataSource source) {
  switch (source) {
    case DataSource::Synthetic: return "synthetic";
    case DataSource::Csv: return "csv";
    case DataSource::Quadratic: return "quadratic";
  }
  return "unknown";
}

const char* to_string(PartitionKind kind) {
  switch (kind) {
    case PartitionKind::Iid: return "iid";
    case PartitionKind::Dirichlet: return "dirichlet";
    case PartitionKind::Unbalanced: return "unbalanced";
  }
  return "unknown";
}

ExperimentConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("malformed config: {}", e.message()));
  }

  // Flatten to section.key in file order, then apply overrides on top.
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(fmt::format("key '{}' must live inside a section", section));
    for (const auto& [key, value] : body) entries.emplace_back(section + "." + key, value.get_value<std::string>());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(fmt::format("override '{}' is not key=value", o));
    entries.emplace_back(o.substr(0, eq), o.substr(eq + 1));
  }

  ExperimentConfig cfg;
  bool loss_given = false;
  bool decay_given = false;
  const auto& table = setters();
  for (const auto& [key, value] : entries) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(fmt::format("unknown key '{}'", key));
    it->second(cfg, key, value);
    loss_given |= key == "data.loss";
    decay_given |= key == "data.weight_decay";
  }

  if (!loss_given) {
    cfg.data.loss = cfg.data.source == DataSource::Quadratic ? LossKind::Quadratic : LossKind::MulticlassLogistic;
  }
  if (!decay_given) cfg.data.weight_decay = cfg.data.loss == LossKind::Quadratic ? 0.0 : 1e-4;
  cfg.data.synthetic.seed = cfg.data.seed;
  validate_config(cfg);
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open config {}", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), overrides);
}

void validate_config(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  if (cfg.name.empty() || cfg.name.find('/') != std::string::npos) {
    throw ConfigError("run.name must be a nonempty name without '/'");
  }
  if ((d.source == DataSource::Quadratic) != (d.loss == LossKind::Quadratic)) {
    throw ConfigError("data.loss = quadratic goes with data.source = quadratic and only with it");
  }
  if (!(d.weight_decay >= 0.0)) throw ConfigError("data.weight_decay must be nonnegative");
  translate([&] { d.synthetic.validate(); return 0; });
  if (d.source == DataSource::Csv && (d.features.empty() || d.labels.empty())) {
    throw ConfigError("data.source = csv needs data.features and data.labels");
  }
  if (d.source == DataSource::Csv && d.test_features.empty() != d.test_labels.empty()) {
    throw ConfigError("data.test_features and data.test_labels go together");
  }
  if (!(d.dirichlet_prior > 0.0)) throw ConfigError("data.dirichlet_prior must be positive");
  if (!(d.unbalanced_sigma >= 0.0)) throw ConfigError("data.unbalanced_sigma must be nonnegative");
  if (!(d.holdout_fraction >= 0.0 && d.holdout_fraction < 1.0)) throw ConfigError("data.holdout_fraction must lie in [0, 1)");
  if (d.source == DataSource::Quadratic && (d.dim < 1 || !(d.mu > 0.0) || !(d.smoothness >= d.mu))) {
    throw ConfigError("quadratic data needs dim >= 1 and 0 < mu <= smoothness");
  }
  if (d.loss == LossKind::TwoLayerMLP && d.hidden < 1) throw ConfigError("data.hidden must be >= 1");
  if (cfg.sim.workers < 1) throw ConfigError("run.workers must be >= 1");
  if (cfg.sim.algorithm.solver.method == SolverMethod::ClosedFormQuadratic && d.loss != LossKind::Quadratic &&
      cfg.sim.algorithm.kind != AlgorithmKind::FedDynOneStep) {
    throw ConfigError("solver.method = closed_form requires quadratic losses");
  }
  translate([&] { cfg.sim.validate(d.synthetic.devices); return 0; });
}

std::string emit_config(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  const SyntheticConfig& s = d.synthetic;
  const AlgorithmConfig& a = cfg.sim.algorithm;
  const LocalSolverConfig& v = a.solver;
  std::string out;
  out += "[data]\n";
  out += fmt::format("source = {}\n", to_string(d.source));
  out += fmt::format("devices = {}\navg_samples = {}\ninputs = {}\nclasses = {}\n", s.devices, s.avg_samples, s.inputs, s.classes);
  out += fmt::format("mode = {}\ngamma1 = {}\ngamma2 = {}\ngamma3 = {}\ntest_fraction = {}\n", to_string(s.mode),
                     num(s.gamma1), num(s.gamma2), num(s.gamma3), num(s.test_fraction));
  if (!d.features.empty()) out += fmt::format("features = {}\n", d.features);
  if (!d.labels.empty()) out += fmt::format("labels = {}\n", d.labels);
  if (!d.test_features.empty()) out += fmt::format("test_features = {}\n", d.test_features);
  if (!d.test_labels.empty()) out += fmt::format("test_labels = {}\n", d.test_labels);
  out += fmt::format("partition = {}\ndirichlet_prior = {}\nunbalanced_sigma = {}\nholdout_fraction = {}\n",
                     to_string(d.partition), num(d.dirichlet_prior), num(d.unbalanced_sigma), num(d.holdout_fraction));
  out += fmt::format("dim = {}\nmu = {}\nsmoothness = {}\ncenter_scale = {}\n", d.dim, num(d.mu), num(d.smoothness),
                     num(d.center_scale));
  out += fmt::format("loss = {}\nhidden = {}\nweight_decay = {}\nseed = {}\n", to_string(d.loss), d.hidden,
                     num(d.weight_decay), d.seed);
  out += "\n[algorithm]\n";
  out += fmt::format("name = {}\nalpha = {}\nmu_prox = {}\n", to_string(a.kind), num(a.alpha), num(a.mu_prox));
  out += "\n[solver]\n";
  out += fmt::format("method = {}\nlr = {}\nepochs = {}\nsteps = {}\nbatch = {}\nlr_decay = {}\n", to_string(v.method),
                     num(v.lr), v.epochs, v.steps, v.batch, num(v.lr_decay_per_round));
  out += fmt::format("grad_clip = {}\ntol = {}\nmax_iters = {}\n",
                     v.grad_clip_norm ? num(*v.grad_clip_norm) : std::string("none"), num(v.tol), v.max_iters);
  out += "\n[run]\n";
  out += fmt::format("name = {}\nparticipation = {}\nrounds = {}\neval_every = {}\nseed = {}\nreport_mode = {}\nworkers = {}\n",
                     cfg.name, num(cfg.sim.participation), cfg.sim.rounds, cfg.sim.eval_every, cfg.sim.seed,
                     to_string(cfg.sim.report_mode), cfg.sim.workers);
  out += fmt::format("target_accuracy = {}\ntarget_loss = {}\n",
                     cfg.target_accuracy ? num(*cfg.target_accuracy) : std::string("none"),
                     cfg.target_loss ? num(*cfg.target_loss) : std::string("none"));
  return out;
}

Federation build_federation(const DataConfig& d) {
  const std::size_t m = d.synthetic.devices;
  switch (d.source) {
    case DataSource::Quadratic:
      return random_quadratic_ensemble(m, d.dim, d.mu, d.smoothness, d.center_scale, d.seed, d.weight_decay);

    case DataSource::Synthetic: {
      SyntheticConfig s = d.synthetic;
      s.seed = d.seed;
      FederatedDataset data = generate_synthetic(s);
      const LossModel model = d.loss == LossKind::TwoLayerMLP
                                  ? LossModel::mlp(s.inputs, d.hidden, s.classes, d.weight_decay)
                                  : LossModel::logistic(s.inputs, s.classes, d.weight_decay);
      return make_federation(std::move(data), model);
    }

    case DataSource::Csv: {
      DataShard pool = read_csv_pair(d.features, d.labels);
      DataShard test;
      if (!d.test_features.empty()) {
        test = read_csv_pair(d.test_features, d.test_labels);
      } else {
        // Hold out a random fraction of the pool as test data.
        std::vector<std::size_t> order(pool.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(stream_seed(d.seed, {0x686f6c64ULL}));
        rng.shuffle(order);
        const auto held = static_cast<std::size_t>(d.holdout_fraction * static_cast<double>(pool.size()));
        std::vector<std::size_t> test_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
        std::vector<std::size_t> train_rows(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
        std::sort(test_rows.begin(), test_rows.end());
        std::sort(train_rows.begin(), train_rows.end());
        auto take = [&](const std::vector<std::size_t>& rows) {
          DataShard s;
          s.features.resize(static_cast<Eigen::Index>(rows.size()), pool.features.cols());
          s.labels.resize(rows.size());
          for (std::size_t i = 0; i < rows.size(); ++i) {
            s.features.row(static_cast<Eigen::Index>(i)) = pool.features.row(static_cast<Eigen::Index>(rows[i]));
            s.labels[i] = pool.labels[rows[i]];
          }
          return s;
        };
        test = take(test_rows);
        pool = take(train_rows);
      }
      const std::uint64_t seed = stream_seed(d.seed, {0x70617274ULL});
      FederatedDataset data;
      switch (d.partition) {
        case PartitionKind::Iid: data = partition_iid(pool, m, seed); break;
        case PartitionKind::Dirichlet: data = partition_dirichlet(pool, m, d.dirichlet_prior, seed); break;
        case PartitionKind::Unbalanced: data = partition_unbalanced(pool, m, d.unbalanced_sigma, seed); break;
      }
      for (int y : test.labels) data.classes = std::max(data.classes, static_cast<std::size_t>(y + 1));
      data.classes = std::max<std::size_t>(data.classes, 2);
      data.test = std::move(test);
      data.refresh_meta();
      const std::size_t p = data.inputs;
      const LossModel model = d.loss == LossKind::TwoLayerMLP ? LossModel::mlp(p, d.hidden, data.classes, d.weight_decay)
                                                              : LossModel::logistic(p, data.classes, d.weight_decay);
      return make_federation(std::move(data), model);
    }
  }
  throw ConfigError("unknown data source");
}

const std::vector<std::string>& sweep_parameters() {
  static const std::vector<std::string> names = {"alpha", "participation", "dirichlet_prior", "mu_prox", "lr"};
  return names;
}

ExperimentConfig with_parameter(const ExperimentConfig& cfg, const std::string& parameter, double value) {
  ExperimentConfig out = cfg;
  if (parameter == "alpha") out.sim.algorithm.alpha = value;
  else if (parameter == "participation") out.sim.participation = value;
  else if (parameter == "dirichlet_prior") out.data.dirichlet_prior = value;
  else if (parameter == "mu_prox") out.sim.algorithm.mu_prox = value;
  else if (parameter == "lr") out.sim.algorithm.solver.lr = value;
  else throw ConfigError(fmt::format("cannot sweep '{}'; choose one of alpha, participation, dirichlet_prior, mu_prox, lr", parameter));
  validate_config(out);
  return out;
}

}  // namespace fedsim
