#include "corrmlp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "corrmlp/rng.hpp"

namespace corrmlp {

namespace {

constexpr char kMagic[4] = {'C', 'K', 'P', 'T'};
constexpr size_t kPreamble = 13;  // magic, version, u64 length

struct RawCheckpoint {
  nlohmann::json manifest;
  std::vector<uint8_t> bytes;
  size_t payload_offset = 0;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::Io, "cannot open " + path.string());
  RawCheckpoint r;
  r.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  const auto& b = r.bytes;
  if (b.size() < 4 || std::memcmp(b.data(), kMagic, 4) != 0) {
    throw CheckpointError(CheckpointErrorKind::BadMagic, path.string() + ": bad magic");
  }
  if (b.size() < kPreamble) throw CheckpointError(CheckpointErrorKind::Truncated, path.string() + ": truncated");
  if (b[4] != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorKind::VersionMismatch,
                          path.string() + ": checkpoint version " + std::to_string(b[4]) + ", expected " +
                              std::to_string(kCheckpointVersion));
  }
  uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = len << 8 | b[5 + size_t(i)];
  if (len > b.size() - kPreamble) throw CheckpointError(CheckpointErrorKind::Truncated, path.string() + ": truncated manifest");
  try {
    r.manifest = nlohmann::json::parse(b.begin() + kPreamble, b.begin() + static_cast<std::ptrdiff_t>(kPreamble + len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointErrorKind::BadManifest, path.string() + ": " + e.what());
  }
  r.payload_offset = kPreamble + len;
  int64_t count = 0;
  try {
    for (const auto& p : r.manifest.at("params")) count += shape_numel(p.at("shape").get<Shape>());
    if (r.manifest.at("param_count").get<int64_t>() != count) {
      throw CheckpointError(CheckpointErrorKind::BadManifest, path.string() + ": param_count disagrees with shapes");
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointErrorKind::BadManifest, path.string() + ": " + e.what());
  }
  if (b.size() - r.payload_offset != static_cast<uint64_t>(count) * 4) {
    throw CheckpointError(CheckpointErrorKind::Truncated,
                          path.string() + ": truncated payload (expected " + std::to_string(count * 4) +
                              " bytes, found " + std::to_string(b.size() - r.payload_offset) + ")");
  }
  return r;
}

}  // namespace

const char* to_string(CheckpointErrorKind k) {
  switch (k) {
    case CheckpointErrorKind::Io: return "io error";
    case CheckpointErrorKind::BadMagic: return "bad magic";
    case CheckpointErrorKind::VersionMismatch: return "version mismatch";
    case CheckpointErrorKind::BadManifest: return "bad manifest";
    case CheckpointErrorKind::Truncated: return "truncated";
    case CheckpointErrorKind::ConfigMismatch: return "config mismatch";
    case CheckpointErrorKind::NameMismatch: return "name mismatch";
    case CheckpointErrorKind::ShapeMismatch: return "shape mismatch";
  }
  return "unknown";
}

CheckpointError::CheckpointError(CheckpointErrorKind kind, const std::string& what)
    : std::runtime_error(what), kind_(kind) {}

void save_checkpoint(const std::filesystem::path& path, const CorrMLP& model, const CheckpointInfo& info) {
  nlohmann::json m;
  m["format_version"] = kCheckpointVersion;
  m["config"] = model.config().to_json();
  m["iteration"] = info.iteration;
  m["val_score"] = info.val_score;
  m["rng"] = Rng::kAlgorithm;
  m["extra"] = info.extra;
  m["param_count"] = model.params().scalar_count();
  nlohmann::json plist = nlohmann::json::array();
  for (const Parameter& p : model.params().params()) plist.push_back({{"name", p.name}, {"shape", p.value().shape()}});
  m["params"] = plist;
  const std::string manifest = m.dump();

  std::vector<uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kCheckpointVersion);
  const uint64_t len = manifest.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(len >> (8 * i)));
  out.insert(out.end(), manifest.begin(), manifest.end());
  for (const Parameter& p : model.params().params()) {
    for (double v : p.value().data()) {
      const uint32_t u = std::bit_cast<uint32_t>(static_cast<float>(v));
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(u >> (8 * i)));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointErrorKind::Io, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError(CheckpointErrorKind::Io, "write failed for " + path.string());
}

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path) { return read_raw(path).manifest; }

CheckpointInfo load_checkpoint(const std::filesystem::path& path, CorrMLP& model) {
  RawCheckpoint r = read_raw(path);
  const nlohmann::json& m = r.manifest;
  if (m.at("config") != model.config().to_json()) {
    throw CheckpointError(CheckpointErrorKind::ConfigMismatch,
                          path.string() + ": checkpoint config " + m.at("config").dump() +
                              " does not match model config " + model.config().to_json().dump());
  }
  auto& params = model.params().params();
  const auto& plist = m.at("params");
  if (plist.size() != params.size()) {
    throw CheckpointError(CheckpointErrorKind::NameMismatch, path.string() + ": parameter count differs from model");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const std::string name = plist[i].at("name").get<std::string>();
    if (name != params[i].name) {
      throw CheckpointError(CheckpointErrorKind::NameMismatch,
                            path.string() + ": parameter " + std::to_string(i) + " is '" + name + "', model expects '" +
                                params[i].name + "'");
    }
    if (plist[i].at("shape").get<Shape>() != params[i].value().shape()) {
      throw CheckpointError(CheckpointErrorKind::ShapeMismatch, path.string() + ": shape mismatch for " + name);
    }
  }
  const uint8_t* src = r.bytes.data() + r.payload_offset;
  for (Parameter& p : params) {
    Tensor& t = p.var.mutable_value();
    for (int64_t i = 0; i < t.numel(); ++i) {
      const uint32_t u = uint32_t(src[0]) | uint32_t(src[1]) << 8 | uint32_t(src[2]) << 16 | uint32_t(src[3]) << 24;
      t[i] = std::bit_cast<float>(u);
      src += 4;
    }
  }
  CheckpointInfo info;
  info.iteration = m.at("iteration").get<int64_t>();
  info.val_score = m.at("val_score").get<double>();
  info.extra = m.value("extra", nlohmann::json::object());
  return info;
}

CorrMLP load_model(const std::filesystem::path& path, CheckpointInfo* info) {
  const nlohmann::json m = read_checkpoint_manifest(path);
  CorrMLPConfig cfg;
  try {
    cfg = CorrMLPConfig::from_json(m.at("config"));
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointErrorKind::BadManifest, path.string() + ": bad config: " + e.what());
  }
  CorrMLP model(cfg, 0);
  CheckpointInfo i = load_checkpoint(path, model);
  if (info) *info = i;
  return model;
}

}  // namespace corrmlp
