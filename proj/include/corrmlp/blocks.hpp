#pragma once

// Building blocks of the correlation-aware multi-window MLP (CMW-MLP) block,
// plus the encoder conv module and the displacement head.

#include <string>
#include <vector>

#include "corrmlp/autograd.hpp"
#include "corrmlp/rng.hpp"

namespace corrmlp {

struct CMWMLPConfig {
  int max_displacement = 3;              // odd; d^3 correlation channels
  std::vector<int> branch_windows{3, 5, 7};
  int channels = 8;                      // working channel count C
  int ffn_expansion = 2;                 // gMLP hidden width = ffn_expansion * C
  int se_reduction = 4;
  bool use_correlation = true;
  bool per_channel_fusion = true;        // false: one softmax weight per branch

  void validate() const;
  int correlation_channels() const { return max_displacement * max_displacement * max_displacement; }
};

/// Feature tensor (B,C,D,H,W) tagged with its pyramid level (1 = full resolution).
struct FeatureMap {
  Var tensor;
  int level = 1;
};

// --- parameter holders -----------------------------------------------------

struct ConvLayer {
  Var weight, bias;
  static ConvLayer create(ParamStore& store, const std::string& prefix, int64_t cin, int64_t cout, int64_t k,
                          Rng& rng);
  Var operator()(const Var& x) const;
};

struct NormAffine {
  Var gamma, beta;
  static NormAffine create(ParamStore& store, const std::string& prefix, int64_t n);
};

struct LinearLayer {
  Var weight, bias;
  static LinearLayer create(ParamStore& store, const std::string& prefix, int64_t cin, int64_t cout, Rng& rng);
  Var operator()(const Var& x) const;
};

struct ConvModuleParams {
  ConvLayer conv1, conv2;
  NormAffine norm1, norm2;
  static ConvModuleParams create(ParamStore& store, const std::string& prefix, int64_t cin, int64_t cout, Rng& rng);
};

struct GmlpParams {
  int64_t window = 1;
  NormAffine norm_in;
  LinearLayer proj_in;   // C -> h
  NormAffine norm_gate;  // over h/2
  Var gate_weight;       // (T,T), starts at 0
  Var gate_bias;         // (T), starts at 1
  LinearLayer proj_out;  // h/2 -> C
  static GmlpParams create(ParamStore& store, const std::string& prefix, int64_t channels, int64_t expansion,
                           int64_t window, Rng& rng);
};

struct MultiWindowParams {
  std::vector<GmlpParams> branches;
  LinearLayer fuse_hidden, fuse_out;
  bool per_channel = true;
  static MultiWindowParams create(ParamStore& store, const std::string& prefix, const CMWMLPConfig& cfg, Rng& rng);
};

struct ChannelAttentionParams {
  NormAffine norm;
  ConvLayer conv1, conv2;
  LinearLayer se_squeeze, se_excite;
  static ChannelAttentionParams create(ParamStore& store, const std::string& prefix, int64_t channels,
                                       int64_t reduction, Rng& rng);
};

struct CmwMlpParams {
  int max_displacement = 3;
  bool use_correlation = true;
  ConvLayer fuse;  // concat[f1, f2, corr] -> C
  MultiWindowParams multi_window;
  ChannelAttentionParams attention;
  static CmwMlpParams create(ParamStore& store, const std::string& prefix, int64_t c1, int64_t c2,
                             const CMWMLPConfig& cfg, Rng& rng);
};

/// 3x3x3 conv C -> 3 with weights ~ N(0, init_std), zero bias.
ConvLayer create_registration_head(ParamStore& store, const std::string& prefix, int64_t channels, double init_std,
                                   Rng& rng);

// --- ops -------------------------------------------------------------------

/// conv -> LeakyReLU(0.2) -> instance norm, twice.
Var conv_module(const Var& x, const ConvModuleParams& p);

/// Channel o (offsets in lexicographic (dz,dy,dx) order) holds
/// (1/C) sum_c f1(p,c) f2(p+o,c), with f2 zero outside the grid.
Var correlation3d(const Var& f1, const Var& f2, int64_t max_displacement);

struct PadRecord {
  int64_t batch = 1, channels = 1;
  int64_t d = 1, h = 1, w = 1;     // original extents
  int64_t window = 1;
  int64_t pd = 1, ph = 1, pw = 1;  // padded extents (multiples of window)
  int64_t num_windows() const { return batch * (pd / window) * (ph / window) * (pw / window); }
};

struct Windows {
  Var tokens;  // (Nw, w^3, C), windows ordered (b, wz, wy, wx), tokens (z, y, x)
  PadRecord record;
};

Windows window_partition(const Var& x, int64_t window);
Var window_unpartition(const Var& tokens, const PadRecord& record);

/// y = x + V(Z1 * (W_s norm(Z2) + b_s)), Z = GELU(U layer_norm(x)) split into halves.
Var gmlp_window(const Var& tokens, const GmlpParams& p);

struct MultiWindowResult {
  Var output;
  Var weights;  // (B, N, C) per-channel fusion weights (C = 1 in per-branch mode)
};

MultiWindowResult multi_window_mlp(const Var& x, const MultiWindowParams& p);

/// x + SE(conv(LeakyReLU(conv(layer_norm(x))))).
Var residual_channel_attention(const Var& x, const ChannelAttentionParams& p);

/// Correlation -> fusion conv -> multi-window MLP -> residual channel attention.
Var cmw_mlp(const Var& f1, const Var& f2, const CmwMlpParams& p);

Var registration_head(const Var& x, const ConvLayer& head);

}  // namespace corrmlp
