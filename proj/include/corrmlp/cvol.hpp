#pragma once

// CVOL: the on-disk format for volumes, label maps and displacement fields.
//
//   bytes 0-3   "CVOL"
//   byte  4     version (1)
//   byte  5     dtype: 0 = f32 LE, 1 = i32 LE
//   bytes 6-7   zero
//   bytes 8-15  header length, u64 LE
//   JSON header {shape:[B,C,D,H,W], spacing:[f,f,f], kind, seed?, generator?}
//   payload, row-major

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "corrmlp/volume.hpp"

namespace corrmlp {

enum class CvolErrorKind { Io, BadMagic, UnsupportedVersion, BadHeader, Truncated, ShapeMismatch, DtypeMismatch, KindMismatch };

const char* to_string(CvolErrorKind k);

class CvolError : public std::runtime_error {
 public:
  CvolError(CvolErrorKind kind, const std::string& what);
  CvolErrorKind kind() const { return kind_; }

 private:
  CvolErrorKind kind_;
};

enum class CvolDtype : uint8_t { F32 = 0, I32 = 1 };

struct CvolMeta {
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::optional<uint64_t> seed;
  std::optional<std::string> generator;
};

struct CvolHeader {
  CvolDtype dtype = CvolDtype::F32;
  Shape shape;
  std::string kind;
  CvolMeta meta;
};

CvolHeader read_cvol_header(const std::filesystem::path& path);

void write_volume(const std::filesystem::path& path, const Volume& v, const CvolMeta& meta = {});
void write_labels(const std::filesystem::path& path, const LabelMap& l, const CvolMeta& meta = {});
void write_field(const std::filesystem::path& path, const DisplacementField& f, const CvolMeta& meta = {});

Volume read_volume(const std::filesystem::path& path, CvolMeta* meta = nullptr);
LabelMap read_labels(const std::filesystem::path& path, CvolMeta* meta = nullptr);
DisplacementField read_field(const std::filesystem::path& path, CvolMeta* meta = nullptr);

}  // namespace corrmlp
