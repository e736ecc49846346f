#pragma once

// The coarse-to-fine registration network: a shared four-level conv encoder
// and a decoder that refines the displacement field from 1/8 to full
// resolution with CMW-MLP blocks.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "corrmlp/blocks.hpp"
#include "corrmlp/volume.hpp"

namespace corrmlp {

struct CorrMLPConfig {
  std::array<int, 4> enc_channels{4, 8, 8, 16};
  CMWMLPConfig block;  // channels are overridden per level
  bool use_correlation_layer = true;
  bool use_image_level = true;
  bool use_step_level = true;
  double head_init_std = 1e-5;

  void validate() const;
  CMWMLPConfig block_for_level(int level) const;

  static CorrMLPConfig desk();
  static CorrMLPConfig paper();

  nlohmann::json to_json() const;
  static CorrMLPConfig from_json(const nlohmann::json& j);
  bool operator==(const CorrMLPConfig& o) const { return to_json() == o.to_json(); }
};

using Pyramid = std::array<FeatureMap, 4>;  // index 0 = level 1 (full resolution)

struct StepResult {
  Var psi;
  Var features;  // pre-head features consumed by the next step
};

struct ForwardResult {
  Var psi;                   // final full-resolution field (psi_4)
  Var warped;                // moving warped by psi
  std::array<Var, 4> flows;  // psi_1 .. psi_4, coarse to fine
};

class CorrMLP {
 public:
  struct DecoderStep {
    std::optional<CmwMlpParams> image_block;
    std::optional<ConvLayer> image_fuse;  // replaces image_block when the image-level path is off
    std::optional<ConvLayer> step_proj;   // 1x1x1 channel projection of upsampled features
    std::optional<CmwMlpParams> step_block;
    ConvLayer head;
    int cmw_block_count() const { return (image_block ? 1 : 0) + (step_block ? 1 : 0); }
  };

  CorrMLP(const CorrMLPConfig& cfg, uint64_t seed);

  const CorrMLPConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const DecoderStep& step(int k) const { return steps_.at(static_cast<size_t>(k - 1)); }

  /// Shared-weight encoder; extents must be divisible by 8.
  Pyramid encode(const Var& image) const;

  StepResult decode_step1(const FeatureMap& moving4, const FeatureMap& fixed4) const;
  /// k = 2, 3, 4 on pyramid levels 3, 2, 1.
  StepResult decode_step(int k, const FeatureMap& moving, const FeatureMap& fixed, const StepResult& previous) const;

  ForwardResult forward(const Var& moving, const Var& fixed) const;
  ForwardResult forward(const Volume& moving, const Volume& fixed) const;

 private:
  CorrMLPConfig cfg_;
  ParamStore params_;
  std::array<ConvModuleParams, 4> encoder_;
  std::array<DecoderStep, 4> steps_;
};

/// Trilinear 2x upsampling of each component, values doubled.
Var upsample_flow(const Var& psi);

/// Throws with a padding hint unless every extent is divisible by 8.
void check_network_extents(const Extents& e);

}  // namespace corrmlp
