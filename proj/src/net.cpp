#include "corrmlp/net.hpp"

#include <stdexcept>

#include "corrmlp/ops.hpp"
#include "corrmlp/warp.hpp"

namespace corrmlp {

void CorrMLPConfig::validate() const {
  for (int c : enc_channels) {
    if (c < 1) throw std::invalid_argument("encoder channel counts must be positive");
  }
  if (!use_image_level && !use_step_level) {
    throw std::invalid_argument("at least one of the image-level and step-level paths must be enabled");
  }
  if (head_init_std < 0.0) throw std::invalid_argument("head_init_std must be >= 0");
  for (int level = 1; level <= 4; ++level) block_for_level(level).validate();
}

CMWMLPConfig CorrMLPConfig::block_for_level(int level) const {
  CMWMLPConfig b = block;
  b.channels = enc_channels.at(static_cast<size_t>(level - 1));
  b.use_correlation = use_correlation_layer;
  return b;
}

CorrMLPConfig CorrMLPConfig::desk() { return CorrMLPConfig{}; }

CorrMLPConfig CorrMLPConfig::paper() {
  CorrMLPConfig c;
  c.enc_channels = {16, 32, 32, 64};
  return c;
}

nlohmann::json CorrMLPConfig::to_json() const {
  return {
      {"enc_channels", enc_channels},
      {"max_displacement", block.max_displacement},
      {"branch_windows", block.branch_windows},
      {"ffn_expansion", block.ffn_expansion},
      {"se_reduction", block.se_reduction},
      {"per_channel_fusion", block.per_channel_fusion},
      {"use_correlation_layer", use_correlation_layer},
      {"use_image_level", use_image_level},
      {"use_step_level", use_step_level},
      {"head_init_std", head_init_std},
  };
}

CorrMLPConfig CorrMLPConfig::from_json(const nlohmann::json& j) {
  CorrMLPConfig c;
  c.enc_channels = j.at("enc_channels").get<std::array<int, 4>>();
  c.block.max_displacement = j.at("max_displacement").get<int>();
  c.block.branch_windows = j.at("branch_windows").get<std::vector<int>>();
  c.block.ffn_expansion = j.at("ffn_expansion").get<int>();
  c.block.se_reduction = j.at("se_reduction").get<int>();
  c.block.per_channel_fusion = j.at("per_channel_fusion").get<bool>();
  c.use_correlation_layer = j.at("use_correlation_layer").get<bool>();
  c.use_image_level = j.at("use_image_level").get<bool>();
  c.use_step_level = j.at("use_step_level").get<bool>();
  c.head_init_std = j.at("head_init_std").get<double>();
  c.validate();
  return c;
}

void check_network_extents(const Extents& e) {
  if (e.d % 8 || e.h % 8 || e.w % 8 || e.d < 8 || e.h < 8 || e.w < 8) {
    auto up = [](int64_t v) { return v < 8 ? 8 : (v + 7) / 8 * 8; };
    throw std::invalid_argument("volume extents " + std::to_string(e.d) + "x" + std::to_string(e.h) + "x" +
                                std::to_string(e.w) + " must be divisible by 8; pad to " + std::to_string(up(e.d)) +
                                "x" + std::to_string(up(e.h)) + "x" + std::to_string(up(e.w)));
  }
}

CorrMLP::CorrMLP(const CorrMLPConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  int64_t cin = 1;
  for (int level = 1; level <= 4; ++level) {
    const int64_t c = cfg_.enc_channels[static_cast<size_t>(level - 1)];
    encoder_[static_cast<size_t>(level - 1)] =
        ConvModuleParams::create(params_, "enc.l" + std::to_string(level), cin, c, rng);
    cin = c;
  }
  for (int k = 1; k <= 4; ++k) {
    const int level = 5 - k;
    const std::string prefix = "dec.s" + std::to_string(k);
    const CMWMLPConfig bc = cfg_.block_for_level(level);
    const int64_t c = bc.channels;
    DecoderStep& st = steps_[static_cast<size_t>(k - 1)];
    if (k == 1) {
      st.image_block = CmwMlpParams::create(params_, prefix + ".img", c, c, bc, rng);
    } else {
      if (cfg_.use_image_level) {
        st.image_block = CmwMlpParams::create(params_, prefix + ".img", c, c, bc, rng);
      } else {
        st.image_fuse = ConvLayer::create(params_, prefix + ".imgfuse", 2 * c, c, 3, rng);
      }
      if (cfg_.use_step_level) {
        const int64_t prev_c = cfg_.enc_channels[static_cast<size_t>(level)];
        if (prev_c != c) st.step_proj = ConvLayer::create(params_, prefix + ".proj", prev_c, c, 1, rng);
        st.step_block = CmwMlpParams::create(params_, prefix + ".step", c, c, bc, rng);
      }
    }
    st.head = create_registration_head(params_, prefix + ".head", c, cfg_.head_init_std, rng);
  }
}

Pyramid CorrMLP::encode(const Var& image) const {
  if (image.value().rank() != 5 || image.shape()[1] != 1) {
    throw std::invalid_argument("encode: expected a (B,1,D,H,W) volume, got " + shape_str(image.shape()));
  }
  check_network_extents(spatial_extents(image.value()));
  Pyramid out;
  Var h = image;
  for (int level = 1; level <= 4; ++level) {
    if (level > 1) h = ops::maxpool3d(h);
    h = conv_module(h, encoder_[static_cast<size_t>(level - 1)]);
    out[static_cast<size_t>(level - 1)] = {h, level};
  }
  return out;
}

Var upsample_flow(const Var& psi) { return ops::scale(ops::upsample_trilinear2x(psi), 2.0); }

StepResult CorrMLP::decode_step1(const FeatureMap& moving4, const FeatureMap& fixed4) const {
  if (moving4.level != 4 || fixed4.level != 4) throw std::invalid_argument("decode_step1 expects level-4 features");
  const DecoderStep& st = steps_[0];
  Var feat = cmw_mlp(fixed4.tensor, moving4.tensor, *st.image_block);
  return {registration_head(feat, st.head), feat};
}

StepResult CorrMLP::decode_step(int k, const FeatureMap& moving, const FeatureMap& fixed,
                                const StepResult& previous) const {
  if (k < 2 || k > 4) throw std::invalid_argument("decode_step: k must be 2, 3 or 4");
  const int level = 5 - k;
  if (moving.level != level || fixed.level != level) {
    throw std::invalid_argument("decode_step " + std::to_string(k) + " expects level-" + std::to_string(level) +
                                " features");
  }
  const Extents e = spatial_extents(fixed.tensor.value());
  const Extents pe = spatial_extents(previous.psi.value());
  if (pe.d * 2 != e.d || pe.h * 2 != e.h || pe.w * 2 != e.w) {
    throw std::invalid_argument("decode_step: previous field is not at the next coarser level");
  }
  const DecoderStep& st = steps_[static_cast<size_t>(k - 1)];
  Var psi_up = upsample_flow(previous.psi);
  Var warped = warp_trilinear(moving.tensor, psi_up);
  Var image_feat = st.image_block ? cmw_mlp(fixed.tensor, warped, *st.image_block)
                                  : (*st.image_fuse)(ops::concat({fixed.tensor, warped}, 1));
  Var feat = image_feat;
  if (st.step_block) {
    Var up = ops::upsample_trilinear2x(previous.features);
    if (st.step_proj) up = (*st.step_proj)(up);
    feat = cmw_mlp(image_feat, up, *st.step_block);
  }
  return {ops::add(psi_up, registration_head(feat, st.head)), feat};
}

ForwardResult CorrMLP::forward(const Var& moving, const Var& fixed) const {
  if (moving.shape() != fixed.shape()) {
    throw std::invalid_argument("forward: moving " + shape_str(moving.shape()) + " and fixed " +
                                shape_str(fixed.shape()) + " differ in shape");
  }
  const Pyramid pm = encode(moving);
  const Pyramid pf = encode(fixed);
  ForwardResult r;
  StepResult s = decode_step1(pm[3], pf[3]);
  r.flows[0] = s.psi;
  for (int k = 2; k <= 4; ++k) {
    const size_t li = static_cast<size_t>(4 - k);  // level index (5 - k) - 1
    s = decode_step(k, pm[li], pf[li], s);
    r.flows[static_cast<size_t>(k - 1)] = s.psi;
  }
  r.psi = s.psi;
  r.warped = warp_trilinear(moving, r.psi);
  return r;
}

ForwardResult CorrMLP::forward(const Volume& moving, const Volume& fixed) const {
  return forward(Var(moving.tensor()), Var(fixed.tensor()));
}

}  // namespace corrmlp
