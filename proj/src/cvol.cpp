#include "corrmlp/cvol.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include <json.hpp>

namespace corrmlp {

namespace {

constexpr char kMagic[4] = {'C', 'V', 'O', 'L'};
constexpr uint8_t kVersion = 1;
constexpr size_t kPreamble = 16;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t get_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

uint64_t get_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = v << 8 | p[i];
  return v;
}

std::vector<uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CvolError(CvolErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, CvolDtype dtype, const Shape& shape, const std::string& kind,
                const CvolMeta& meta, const std::vector<uint8_t>& payload) {
  nlohmann::json h;
  h["shape"] = shape;
  h["spacing"] = meta.spacing;
  h["kind"] = kind;
  if (meta.seed) h["seed"] = *meta.seed;
  if (meta.generator) h["generator"] = *meta.generator;
  const std::string header = h.dump();

  std::vector<uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kVersion);
  out.push_back(static_cast<uint8_t>(dtype));
  out.push_back(0);
  out.push_back(0);
  const uint64_t len = header.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(len >> (8 * i)));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CvolError(CvolErrorKind::Io, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw CvolError(CvolErrorKind::Io, "write failed for " + path.string());
}

struct Parsed {
  CvolHeader header;
  std::vector<uint8_t> bytes;
  size_t payload_offset = 0;
};

Parsed parse(const std::filesystem::path& path, bool need_payload) {
  Parsed r;
  r.bytes = slurp(path);
  const auto& b = r.bytes;
  if (b.size() < 4 || std::memcmp(b.data(), kMagic, 4) != 0) {
    throw CvolError(CvolErrorKind::BadMagic, path.string() + ": bad magic");
  }
  if (b.size() < kPreamble) throw CvolError(CvolErrorKind::Truncated, path.string() + ": truncated preamble");
  if (b[4] != kVersion) {
    throw CvolError(CvolErrorKind::UnsupportedVersion, path.string() + ": unsupported version " + std::to_string(b[4]));
  }
  if (b[5] > 1) throw CvolError(CvolErrorKind::DtypeMismatch, path.string() + ": unknown dtype code");
  if (b[6] != 0 || b[7] != 0) throw CvolError(CvolErrorKind::BadHeader, path.string() + ": reserved bytes not zero");
  r.header.dtype = static_cast<CvolDtype>(b[5]);
  const uint64_t hlen = get_u64(b.data() + 8);
  if (hlen > b.size() - kPreamble) throw CvolError(CvolErrorKind::Truncated, path.string() + ": truncated header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(b.begin() + kPreamble, b.begin() + static_cast<std::ptrdiff_t>(kPreamble + hlen));
    r.header.shape = h.at("shape").get<Shape>();
    r.header.kind = h.at("kind").get<std::string>();
    if (h.contains("spacing")) r.header.meta.spacing = h.at("spacing").get<std::array<double, 3>>();
    if (h.contains("seed")) r.header.meta.seed = h.at("seed").get<uint64_t>();
    if (h.contains("generator")) r.header.meta.generator = h.at("generator").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CvolError(CvolErrorKind::BadHeader, path.string() + ": bad header: " + e.what());
  }
  if (r.header.shape.size() != 5) throw CvolError(CvolErrorKind::ShapeMismatch, path.string() + ": shape must have 5 entries");
  for (int64_t d : r.header.shape) {
    if (d < 1) throw CvolError(CvolErrorKind::ShapeMismatch, path.string() + ": non-positive extent");
  }
  r.payload_offset = kPreamble + hlen;
  if (need_payload) {
    const uint64_t expect = static_cast<uint64_t>(shape_numel(r.header.shape)) * 4;
    if (b.size() - r.payload_offset != expect) {
      throw CvolError(CvolErrorKind::Truncated, path.string() + ": truncated payload (expected " +
                                                    std::to_string(expect) + " bytes, found " +
                                                    std::to_string(b.size() - r.payload_offset) + ")");
    }
  }
  return r;
}

void expect(const CvolHeader& h, const std::filesystem::path& path, const std::string& kind, CvolDtype dtype,
            int64_t channels) {
  if (h.kind != kind) {
    throw CvolError(CvolErrorKind::KindMismatch, path.string() + ": expected kind '" + kind + "', found '" + h.kind + "'");
  }
  if (h.dtype != dtype) throw CvolError(CvolErrorKind::DtypeMismatch, path.string() + ": dtype does not match kind " + kind);
  if (h.shape[0] != 1 || h.shape[1] != channels) {
    throw CvolError(CvolErrorKind::ShapeMismatch, path.string() + ": shape " + shape_str(h.shape) + " invalid for " + kind);
  }
}

std::vector<uint8_t> f32_payload(const Tensor& t) {
  std::vector<uint8_t> out;
  out.reserve(static_cast<size_t>(t.numel()) * 4);
  for (double v : t.data()) put_u32(out, std::bit_cast<uint32_t>(static_cast<float>(v)));
  return out;
}

Tensor f32_tensor(const Parsed& p) {
  Tensor t(p.header.shape);
  const uint8_t* src = p.bytes.data() + p.payload_offset;
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = std::bit_cast<float>(get_u32(src + 4 * i));
  return t;
}

}  // namespace

const char* to_string(CvolErrorKind k) {
  switch (k) {
    case CvolErrorKind::Io: return "io error";
    case CvolErrorKind::BadMagic: return "bad magic";
    case CvolErrorKind::UnsupportedVersion: return "unsupported version";
    case CvolErrorKind::BadHeader: return "bad header";
    case CvolErrorKind::Truncated: return "truncated payload";
    case CvolErrorKind::ShapeMismatch: return "shape mismatch";
    case CvolErrorKind::DtypeMismatch: return "dtype mismatch";
    case CvolErrorKind::KindMismatch: return "kind mismatch";
  }
  return "unknown";
}

CvolError::CvolError(CvolErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

CvolHeader read_cvol_header(const std::filesystem::path& path) { return parse(path, false).header; }

void write_volume(const std::filesystem::path& path, const Volume& v, const CvolMeta& meta) {
  write_file(path, CvolDtype::F32, v.tensor().shape(), "volume", meta, f32_payload(v.tensor()));
}

void write_field(const std::filesystem::path& path, const DisplacementField& f, const CvolMeta& meta) {
  write_file(path, CvolDtype::F32, f.tensor().shape(), "field", meta, f32_payload(f.tensor()));
}

void write_labels(const std::filesystem::path& path, const LabelMap& l, const CvolMeta& meta) {
  const Extents e = l.extents();
  std::vector<uint8_t> payload;
  payload.reserve(l.labels().size() * 4);
  for (int32_t v : l.labels()) put_u32(payload, static_cast<uint32_t>(v));
  write_file(path, CvolDtype::I32, Shape{1, 1, e.d, e.h, e.w}, "labels", meta, payload);
}

Volume read_volume(const std::filesystem::path& path, CvolMeta* meta) {
  Parsed p = parse(path, true);
  expect(p.header, path, "volume", CvolDtype::F32, 1);
  if (meta) *meta = p.header.meta;
  return Volume(f32_tensor(p));
}

DisplacementField read_field(const std::filesystem::path& path, CvolMeta* meta) {
  Parsed p = parse(path, true);
  expect(p.header, path, "field", CvolDtype::F32, 3);
  if (meta) *meta = p.header.meta;
  return DisplacementField(f32_tensor(p));
}

LabelMap read_labels(const std::filesystem::path& path, CvolMeta* meta) {
  Parsed p = parse(path, true);
  expect(p.header, path, "labels", CvolDtype::I32, 1);
  if (meta) *meta = p.header.meta;
  const Shape& s = p.header.shape;
  std::vector<int32_t> v(static_cast<size_t>(shape_numel(s)));
  const uint8_t* src = p.bytes.data() + p.payload_offset;
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<int32_t>(get_u32(src + 4 * i));
  return LabelMap(Extents{s[2], s[3], s[4]}, std::move(v));
}

}  // namespace corrmlp
