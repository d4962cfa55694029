#include <charconv>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string_view>

#include "fedsim/datagen.hpp"
#include "fedsim/errors.hpp"

namespace fedsim {

namespace {

using nlohmann::json;

template <typename T>
T parse_number(std::string_view text, const std::filesystem::path& path, std::size_t line) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  T value{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size() || text.empty()) {
    throw IoError(fmt::format("{}:{}: cannot parse '{}' as a number", path.string(), line, text));
  }
  return value;
}

std::vector<std::vector<double>> read_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      row.push_back(parse_number<double>(rest.substr(0, comma), path, lineno));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw IoError(fmt::format("{}:{}: expected {} columns, found {}", path.string(), lineno,
                                rows.front().size(), row.size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_shard(const DataShard& shard, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  for (std::size_t i = 0; i < shard.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    for (Eigen::Index k = 0; k < shard.features.cols(); ++k) out << fmt::format("{},", shard.features(row, k));
    out << shard.labels[i] << '\n';
  }
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

DataShard read_shard(const std::filesystem::path& path, std::size_t inputs) {
  DataShard shard;
  shard.features.resize(0, static_cast<Eigen::Index>(inputs));
  if (!std::filesystem::exists(path)) throw IoError(fmt::format("missing {}", path.string()));
  const auto rows = read_rows(path);
  shard.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(inputs));
  shard.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != inputs + 1) {
      throw IoError(fmt::format("{}: row {} has {} columns, expected {}", path.string(), i + 1,
                                rows[i].size(), inputs + 1));
    }
    for (std::size_t k = 0; k < inputs; ++k) shard.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    shard.labels[i] = static_cast<int>(rows[i][inputs]);
  }
  return shard;
}

void fnv_mix(std::uint64_t& h, const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

void fnv_shard(std::uint64_t& h, const DataShard& shard) {
  const std::uint64_t shape[2] = {static_cast<std::uint64_t>(shard.features.rows()),
                                  static_cast<std::uint64_t>(shard.features.cols())};
  fnv_mix(h, shape, sizeof(shape));
  fnv_mix(h, shard.features.data(), sizeof(double) * static_cast<std::size_t>(shard.features.size()));
  fnv_mix(h, shard.labels.data(), sizeof(int) * shard.labels.size());
}

}  // namespace

FeatureMatrix read_features_csv(const std::filesystem::path& path) {
  const auto rows = read_rows(path);
  const std::size_t cols = rows.empty() ? 0 : rows.front().size();
  FeatureMatrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < cols; ++k) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  return x;
}

std::vector<int> read_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    labels.push_back(parse_number<int>(line, path, lineno));
  }
  return labels;
}

DataShard read_csv_pair(const std::filesystem::path& features, const std::filesystem::path& labels) {
  DataShard shard{read_features_csv(features), read_labels_csv(labels)};
  if (static_cast<std::size_t>(shard.features.rows()) != shard.labels.size()) {
    throw IoError(fmt::format("{} has {} rows but {} has {} labels", features.string(),
                              shard.features.rows(), labels.string(), shard.labels.size()));
  }
  return shard;
}

void write_dataset(const FederatedDataset& data, const std::filesystem::path& dir,
                   const std::string& extra_json) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < data.shards.size(); ++k) {
    write_shard(data.shards[k], dir / fmt::format("shard_{}.csv", k));
  }
  write_shard(data.test, dir / "test.csv");

  json meta = json::parse(extra_json);
  meta["devices"] = data.devices();
  meta["inputs"] = data.inputs;
  meta["classes"] = data.classes;
  meta["sizes"] = data.meta.sizes;
  meta["histograms"] = data.meta.histograms;
  meta["test_size"] = data.test.size();
  meta["total_samples"] = data.total_samples();
  meta["fingerprint"] = fmt::format("{:016x}", dataset_fingerprint(data));
  std::ofstream out(dir / "meta.json");
  if (!out) throw IoError(fmt::format("cannot write {}", (dir / "meta.json").string()));
  out << meta.dump(2) << '\n';
}

FederatedDataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw IoError(fmt::format("cannot open {}", (dir / "meta.json").string()));
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(fmt::format("{}: {}", (dir / "meta.json").string(), e.what()));
  }
  FederatedDataset data;
  data.inputs = meta.at("inputs").get<std::size_t>();
  data.classes = meta.at("classes").get<std::size_t>();
  const auto devices = meta.at("devices").get<std::size_t>();
  for (std::size_t k = 0; k < devices; ++k) {
    data.shards.push_back(read_shard(dir / fmt::format("shard_{}.csv", k), data.inputs));
  }
  data.test = read_shard(dir / "test.csv", data.inputs);
  data.refresh_meta();
  return data;
}

std::uint64_t dataset_fingerprint(const FederatedDataset& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const std::uint64_t head[3] = {data.devices(), data.inputs, data.classes};
  fnv_mix(h, head, sizeof(head));
  for (const auto& s : data.shards) fnv_shard(h, s);
  fnv_shard(h, data.test);
  return h;
}

}  // namespace fedsim
