#pragma once

// Checkpoint files: "CKPT", version byte, u64 LE manifest length, JSON
// manifest, then f32 LE parameter data in manifest order.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "corrmlp/net.hpp"

namespace corrmlp {

enum class CheckpointErrorKind { Io, BadMagic, VersionMismatch, BadManifest, Truncated, ConfigMismatch, NameMismatch, ShapeMismatch };

const char* to_string(CheckpointErrorKind k);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what);
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

inline constexpr uint8_t kCheckpointVersion = 1;

struct CheckpointInfo {
  int64_t iteration = 0;
  double val_score = 0.0;
  nlohmann::json extra = nlohmann::json::object();  // training settings, free form
};

void save_checkpoint(const std::filesystem::path& path, const CorrMLP& model, const CheckpointInfo& info);

/// Full manifest of a checkpoint file; the payload is validated for length.
nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path);

/// Loads parameters into `model`, rejecting config, name or shape mismatches.
CheckpointInfo load_checkpoint(const std::filesystem::path& path, CorrMLP& model);

/// Builds a model from the stored config and loads its parameters.
CorrMLP load_model(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

}  // namespace corrmlp
