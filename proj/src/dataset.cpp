#include "corrmlp/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "corrmlp/cvol.hpp"
#include "corrmlp/rng.hpp"

namespace corrmlp {

namespace {

constexpr uint64_t kDatasetStream = 0x5359'4e54ULL;
const char* const kFiles[] = {"fixed.cvol", "moving.cvol", "fixed_labels.cvol", "moving_labels.cvol", "psi_true.cvol"};

std::string pair_name(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pair_%03lld", static_cast<long long>(i));
  return buf;
}

}  // namespace

uint64_t dataset_pair_seed(uint64_t seed, int64_t index) {
  return derive_seed(derive_seed(seed, kDatasetStream), static_cast<uint64_t>(index));
}

DatasetIndex write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticPairSpec& spec, int64_t count,
                                     uint64_t seed) {
  spec.validate();
  if (count < 1) throw std::invalid_argument("pair count must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());

  DatasetIndex index{seed, spec, {}};
  const std::string generator = std::string("corrmlp-synth/") + Rng::kAlgorithm;
  for (int64_t i = 0; i < count; ++i) {
    SyntheticPairSpec s = spec;
    s.seed = dataset_pair_seed(seed, i);
    const SyntheticPair p = make_pair(s);
    const std::filesystem::path pd = dir / pair_name(i);
    std::filesystem::create_directories(pd, ec);
    if (ec) throw std::runtime_error("cannot create " + pd.string() + ": " + ec.message());
    CvolMeta meta;
    meta.seed = s.seed;
    meta.generator = generator;
    write_volume(pd / kFiles[0], p.fixed, meta);
    write_volume(pd / kFiles[1], p.moving, meta);
    write_labels(pd / kFiles[2], p.fixed_labels, meta);
    write_labels(pd / kFiles[3], p.moving_labels, meta);
    write_field(pd / kFiles[4], p.psi_true, meta);
    index.pairs.push_back({pair_name(i), s.seed});
  }

  nlohmann::json j;
  j["format"] = "corrmlp-synth";
  j["version"] = 1;
  j["generator"] = generator;
  j["seed"] = seed;
  nlohmann::json sj = spec.to_json();
  sj.erase("seed");
  j["spec"] = sj;
  for (const auto& p : index.pairs) j["pairs"].push_back({{"name", p.name}, {"seed", p.seed}});
  std::ofstream out(dir / "index.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "index.json").string());
  out << j.dump(2) << '\n';
  return index;
}

DatasetIndex read_dataset_index(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw std::runtime_error("no index.json in data directory " + dir.string());
  DatasetIndex idx;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    idx.seed = j.at("seed").get<uint64_t>();
    const auto& s = j.at("spec");
    const auto e = s.at("extents").get<std::vector<int64_t>>();
    if (e.size() != 3) throw std::runtime_error("extents must have 3 entries");
    idx.spec.extents = {e[0], e[1], e[2]};
    idx.spec.num_blobs = s.at("num_blobs").get<int>();
    idx.spec.spacing = s.at("spacing").get<int>();
    idx.spec.max_magnitude = s.at("max_magnitude").get<double>();
    idx.spec.noise_sigma = s.at("noise_sigma").get<double>();
    for (const auto& p : j.at("pairs")) idx.pairs.push_back({p.at("name").get<std::string>(), p.at("seed").get<uint64_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed index.json in " + dir.string() + ": " + e.what());
  }
  return idx;
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  LoadedDataset d;
  d.index = read_dataset_index(dir);
  for (const auto& pf : d.index.pairs) {
    const std::filesystem::path pd = dir / pf.name;
    RegistrationPair p;
    p.seed = pf.seed;
    p.fixed = read_volume(pd / kFiles[0]);
    p.moving = read_volume(pd / kFiles[1]);
    if (std::filesystem::exists(pd / kFiles[2]) && std::filesystem::exists(pd / kFiles[3])) {
      p.fixed_labels = read_labels(pd / kFiles[2]);
      p.moving_labels = read_labels(pd / kFiles[3]);
    } else {
      d.warnings.push_back(pf.name + ": label maps missing");
    }
    if (std::filesystem::exists(pd / kFiles[4])) p.psi_true = read_field(pd / kFiles[4]);
    d.pairs.push_back(std::move(p));
  }
  return d;
}

}  // namespace corrmlp
