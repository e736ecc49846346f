#include "corrmlp/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "corrmlp/kernels.hpp"
#include "corrmlp/ops.hpp"

namespace corrmlp {

namespace {

constexpr double kSlope = 0.2;

// PyTorch-style default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

void CMWMLPConfig::validate() const {
  if (max_displacement < 1 || max_displacement % 2 == 0) {
    throw std::invalid_argument("max_displacement must be a positive odd integer");
  }
  if (branch_windows.empty()) throw std::invalid_argument("at least one MLP branch is required");
  for (int w : branch_windows) {
    if (w < 1 || w % 2 == 0) throw std::invalid_argument("branch window sizes must be positive odd integers");
  }
  if (channels < 1 || ffn_expansion < 1 || se_reduction < 1) {
    throw std::invalid_argument("channels, ffn_expansion and se_reduction must be positive");
  }
  if ((ffn_expansion * channels) % 2 != 0) throw std::invalid_argument("gMLP hidden width must be even");
}

ConvLayer ConvLayer::create(ParamStore& store, const std::string& prefix, int64_t cin, int64_t cout, int64_t k,
                            Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k * k));
  ConvLayer c;
  c.weight = store.add(prefix + ".weight", uniform_tensor(Shape{cout, cin, k, k, k}, bound, rng));
  c.bias = store.add(prefix + ".bias", uniform_tensor(Shape{cout}, bound, rng));
  return c;
}

Var ConvLayer::operator()(const Var& x) const { return ops::conv3d(x, weight, bias, (weight.shape()[2] - 1) / 2); }

NormAffine NormAffine::create(ParamStore& store, const std::string& prefix, int64_t n) {
  return {store.add(prefix + ".gamma", Tensor(Shape{n}, 1.0)), store.add(prefix + ".beta", Tensor(Shape{n}, 0.0))};
}

LinearLayer LinearLayer::create(ParamStore& store, const std::string& prefix, int64_t cin, int64_t cout, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
  LinearLayer l;
  l.weight = store.add(prefix + ".weight", uniform_tensor(Shape{cout, cin}, bound, rng));
  l.bias = store.add(prefix + ".bias", uniform_tensor(Shape{cout}, bound, rng));
  return l;
}

Var LinearLayer::operator()(const Var& x) const { return ops::linear(x, weight, bias); }

ConvModuleParams ConvModuleParams::create(ParamStore& store, const std::string& prefix, int64_t cin, int64_t cout,
                                          Rng& rng) {
  ConvModuleParams p;
  p.conv1 = ConvLayer::create(store, prefix + ".conv1", cin, cout, 3, rng);
  p.norm1 = NormAffine::create(store, prefix + ".norm1", cout);
  p.conv2 = ConvLayer::create(store, prefix + ".conv2", cout, cout, 3, rng);
  p.norm2 = NormAffine::create(store, prefix + ".norm2", cout);
  return p;
}

GmlpParams GmlpParams::create(ParamStore& store, const std::string& prefix, int64_t channels, int64_t expansion,
                              int64_t window, Rng& rng) {
  const int64_t hidden = channels * expansion;
  if (hidden % 2) throw std::invalid_argument("gMLP hidden width must be even, got " + std::to_string(hidden));
  const int64_t tokens = window * window * window;
  GmlpParams p;
  p.window = window;
  p.norm_in = NormAffine::create(store, prefix + ".norm_in", channels);
  p.proj_in = LinearLayer::create(store, prefix + ".proj_in", channels, hidden, rng);
  p.norm_gate = NormAffine::create(store, prefix + ".norm_gate", hidden / 2);
  p.gate_weight = store.add(prefix + ".gate.weight", Tensor(Shape{tokens, tokens}, 0.0));
  p.gate_bias = store.add(prefix + ".gate.bias", Tensor(Shape{tokens}, 1.0));
  p.proj_out = LinearLayer::create(store, prefix + ".proj_out", hidden / 2, channels, rng);
  return p;
}

MultiWindowParams MultiWindowParams::create(ParamStore& store, const std::string& prefix, const CMWMLPConfig& cfg,
                                            Rng& rng) {
  MultiWindowParams p;
  p.per_channel = cfg.per_channel_fusion;
  for (int w : cfg.branch_windows) {
    p.branches.push_back(
        GmlpParams::create(store, prefix + ".w" + std::to_string(w), cfg.channels, cfg.ffn_expansion, w, rng));
  }
  const int64_t n = static_cast<int64_t>(cfg.branch_windows.size());
  const int64_t in = n * cfg.channels;
  const int64_t hidden = std::max<int64_t>(1, in / 2);
  p.fuse_hidden = LinearLayer::create(store, prefix + ".fuse1", in, hidden, rng);
  p.fuse_out = LinearLayer::create(store, prefix + ".fuse2", hidden, p.per_channel ? in : n, rng);
  return p;
}

ChannelAttentionParams ChannelAttentionParams::create(ParamStore& store, const std::string& prefix, int64_t channels,
                                                      int64_t reduction, Rng& rng) {
  ChannelAttentionParams p;
  p.norm = NormAffine::create(store, prefix + ".norm", channels);
  p.conv1 = ConvLayer::create(store, prefix + ".conv1", channels, channels, 3, rng);
  p.conv2 = ConvLayer::create(store, prefix + ".conv2", channels, channels, 3, rng);
  const int64_t hidden = std::max<int64_t>(1, channels / reduction);
  p.se_squeeze = LinearLayer::create(store, prefix + ".se1", channels, hidden, rng);
  p.se_excite = LinearLayer::create(store, prefix + ".se2", hidden, channels, rng);
  return p;
}

CmwMlpParams CmwMlpParams::create(ParamStore& store, const std::string& prefix, int64_t c1, int64_t c2,
                                  const CMWMLPConfig& cfg, Rng& rng) {
  cfg.validate();
  CmwMlpParams p;
  p.max_displacement = cfg.max_displacement;
  p.use_correlation = cfg.use_correlation;
  const int64_t fuse_in = c1 + c2 + (cfg.use_correlation ? cfg.correlation_channels() : 0);
  p.fuse = ConvLayer::create(store, prefix + ".fuse", fuse_in, cfg.channels, 3, rng);
  p.multi_window = MultiWindowParams::create(store, prefix + ".mw", cfg, rng);
  p.attention = ChannelAttentionParams::create(store, prefix + ".rca", cfg.channels, cfg.se_reduction, rng);
  return p;
}

ConvLayer create_registration_head(ParamStore& store, const std::string& prefix, int64_t channels, double init_std,
                                   Rng& rng) {
  Tensor w(Shape{3, channels, 3, 3, 3});
  for (double& v : w.data()) v = init_std * rng.normal();
  ConvLayer head;
  head.weight = store.add(prefix + ".weight", std::move(w));
  head.bias = store.add(prefix + ".bias", Tensor(Shape{3}, 0.0));
  return head;
}

// --- ops -------------------------------------------------------------------

Var conv_module(const Var& x, const ConvModuleParams& p) {
  Var h = ops::instance_norm(ops::leaky_relu(p.conv1(x), kSlope), p.norm1.gamma, p.norm1.beta);
  return ops::instance_norm(ops::leaky_relu(p.conv2(h), kSlope), p.norm2.gamma, p.norm2.beta);
}

Var correlation3d(const Var& f1, const Var& f2, int64_t max_displacement) {
  if (f1.value().rank() != 5 || f1.shape() != f2.shape()) {
    throw std::invalid_argument("correlation3d: inputs must be equal-shaped 5-D tensors, got " +
                                shape_str(f1.shape()) + " and " + shape_str(f2.shape()));
  }
  if (max_displacement < 1 || max_displacement % 2 == 0) {
    throw std::invalid_argument("correlation3d: max displacement must be odd");
  }
  const Shape& s = f1.shape();
  kernels::GridGeom g{s[0], s[1], s[2], s[3], s[4]};
  const int64_t nd = max_displacement * max_displacement * max_displacement;
  Tensor y(Shape{s[0], nd, s[2], s[3], s[4]});
  kernels::correlation3d_forward(g, max_displacement, f1.value().ptr(), f2.value().ptr(), y.ptr());
  return detail::finish(std::move(y), detail::any_requires_grad({&f1, &f2}),
                        [f1, f2, g, max_displacement](const Tensor& gy) mutable {
                          kernels::correlation3d_backward(g, max_displacement, f1.value().ptr(), f2.value().ptr(),
                                                          gy.ptr(),
                                                          f1.requires_grad() ? f1.grad_buffer().ptr() : nullptr,
                                                          f2.requires_grad() ? f2.grad_buffer().ptr() : nullptr);
                        });
}

namespace {

int64_t round_up(int64_t v, int64_t m) { return (v + m - 1) / m * m; }

// Flat source index in the (B,C,D,H,W) map for every (window, token, channel)
// slot; -1 marks zero padding.
std::shared_ptr<std::vector<int64_t>> partition_map(const PadRecord& r) {
  const int64_t w = r.window, T = w * w * w;
  const int64_t nz = r.pd / w, ny = r.ph / w, nx = r.pw / w;
  auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(r.num_windows() * T * r.channels), -1);
  int64_t slot = 0;
  for (int64_t b = 0; b < r.batch; ++b)
    for (int64_t wz = 0; wz < nz; ++wz)
      for (int64_t wy = 0; wy < ny; ++wy)
        for (int64_t wx = 0; wx < nx; ++wx)
          for (int64_t tz = 0; tz < w; ++tz)
            for (int64_t ty = 0; ty < w; ++ty)
              for (int64_t tx = 0; tx < w; ++tx) {
                const int64_t z = wz * w + tz, y = wy * w + ty, x = wx * w + tx;
                const bool inside = z < r.d && y < r.h && x < r.w;
                for (int64_t c = 0; c < r.channels; ++c, ++slot) {
                  if (inside) (*map)[static_cast<size_t>(slot)] = (((b * r.channels + c) * r.d + z) * r.h + y) * r.w + x;
                }
              }
  return map;
}

}  // namespace

Windows window_partition(const Var& x, int64_t window) {
  if (window < 1) throw std::invalid_argument("window_partition: window must be >= 1");
  if (x.value().rank() != 5) throw std::invalid_argument("window_partition: expected 5-D feature map");
  const Shape& s = x.shape();
  PadRecord r{s[0], s[1], s[2], s[3], s[4], window,
              round_up(s[2], window), round_up(s[3], window), round_up(s[4], window)};
  auto map = partition_map(r);
  const int64_t T = window * window * window;
  Tensor y(Shape{r.num_windows(), T, r.channels}, 0.0);
  const double* xp = x.value().ptr();
  for (size_t i = 0; i < map->size(); ++i) {
    if ((*map)[i] >= 0) y[static_cast<int64_t>(i)] = xp[(*map)[i]];
  }
  Var tokens = detail::finish(std::move(y), x.requires_grad(), [x, map](const Tensor& gy) mutable {
    double* gx = x.grad_buffer().ptr();
    for (size_t i = 0; i < map->size(); ++i) {
      if ((*map)[i] >= 0) gx[(*map)[i]] += gy[static_cast<int64_t>(i)];
    }
  });
  return {tokens, r};
}

Var window_unpartition(const Var& tokens, const PadRecord& r) {
  const int64_t T = r.window * r.window * r.window;
  if (r.pd % r.window || r.ph % r.window || r.pw % r.window || r.pd < r.d || r.ph < r.h || r.pw < r.w ||
      r.pd - r.d >= r.window || r.ph - r.h >= r.window || r.pw - r.w >= r.window) {
    throw std::invalid_argument("window_unpartition: inconsistent pad record");
  }
  if (tokens.shape() != Shape{r.num_windows(), T, r.channels}) {
    throw std::invalid_argument("window_unpartition: token tensor " + shape_str(tokens.shape()) +
                                " does not match pad record");
  }
  auto map = partition_map(r);
  Tensor y(Shape{r.batch, r.channels, r.d, r.h, r.w}, 0.0);
  const double* tp = tokens.value().ptr();
  for (size_t i = 0; i < map->size(); ++i) {
    if ((*map)[i] >= 0) y[(*map)[i]] = tp[i];
  }
  return detail::finish(std::move(y), tokens.requires_grad(), [tokens, map](const Tensor& gy) mutable {
    double* gt = tokens.grad_buffer().ptr();
    for (size_t i = 0; i < map->size(); ++i) {
      if ((*map)[i] >= 0) gt[i] += gy[(*map)[i]];
    }
  });
}

Var gmlp_window(const Var& tokens, const GmlpParams& p) {
  if (tokens.value().rank() != 3) throw std::invalid_argument("gmlp_window: expected (N,T,C) tokens");
  const int64_t hidden = p.proj_in.weight.shape()[0];
  if (hidden % 2) throw std::invalid_argument("gmlp_window: hidden width must be even");
  Var xn = ops::layer_norm(tokens, p.norm_in.gamma, p.norm_in.beta, 1e-5, 2);
  Var z = ops::gelu(p.proj_in(xn));
  Var z1 = ops::slice(z, 2, 0, hidden / 2);
  Var z2 = ops::slice(z, 2, hidden / 2, hidden / 2);
  Var z2n = ops::layer_norm(z2, p.norm_gate.gamma, p.norm_gate.beta, 1e-5, 2);
  Var gate = ops::token_mix(z2n, p.gate_weight, p.gate_bias);
  return ops::add(tokens, p.proj_out(ops::mul(z1, gate)));
}

MultiWindowResult multi_window_mlp(const Var& x, const MultiWindowParams& p) {
  if (x.value().rank() != 5) throw std::invalid_argument("multi_window_mlp: expected 5-D feature map");
  const int64_t C = p.branches.front().norm_in.gamma.value().numel();
  if (x.shape()[1] != C) {
    throw std::invalid_argument("multi_window_mlp: input has " + std::to_string(x.shape()[1]) +
                                " channels, block expects " + std::to_string(C));
  }
  const int64_t B = x.shape()[0];
  const int64_t N = static_cast<int64_t>(p.branches.size());
  std::vector<Var> outs, pooled;
  for (const GmlpParams& br : p.branches) {
    Windows win = window_partition(x, br.window);
    outs.push_back(window_unpartition(gmlp_window(win.tokens, br), win.record));
    pooled.push_back(ops::global_avg_pool(outs.back()));
  }
  Var logits = p.fuse_out(ops::leaky_relu(p.fuse_hidden(ops::concat(pooled, 1)), kSlope));
  const int64_t wc = p.per_channel ? C : 1;
  Var weights = ops::softmax(ops::reshape(logits, Shape{B, N, wc}), 1);
  Var out;
  for (int64_t i = 0; i < N; ++i) {
    Var alpha = ops::reshape(ops::slice(weights, 1, i, 1), Shape{B, wc});
    if (!p.per_channel) alpha = ops::concat(std::vector<Var>(static_cast<size_t>(C), alpha), 1);
    Var term = ops::mul_channels(outs[static_cast<size_t>(i)], alpha);
    out = out.defined() ? ops::add(out, term) : term;
  }
  return {out, weights};
}

Var residual_channel_attention(const Var& x, const ChannelAttentionParams& p) {
  Var h = ops::layer_norm(x, p.norm.gamma, p.norm.beta, 1e-5, 1);
  h = p.conv2(ops::leaky_relu(p.conv1(h), kSlope));
  Var gates = ops::sigmoid(p.se_excite(ops::leaky_relu(p.se_squeeze(ops::global_avg_pool(h)), kSlope)));
  return ops::add(x, ops::mul_channels(h, gates));
}

Var cmw_mlp(const Var& f1, const Var& f2, const CmwMlpParams& p) {
  if (f1.value().rank() != 5 || f2.value().rank() != 5) throw std::invalid_argument("cmw_mlp: expected 5-D inputs");
  const Shape& a = f1.shape();
  const Shape& b = f2.shape();
  if (a[0] != b[0] || a[2] != b[2] || a[3] != b[3] || a[4] != b[4]) {
    throw std::invalid_argument("cmw_mlp: spatial shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  std::vector<Var> parts{f1, f2};
  if (p.use_correlation) {
    if (a[1] != b[1]) throw std::invalid_argument("cmw_mlp: correlation needs equal channel counts");
    parts.push_back(correlation3d(f1, f2, p.max_displacement));
  }
  Var fused = p.fuse(ops::concat(parts, 1));
  return residual_channel_attention(multi_window_mlp(fused, p.multi_window).output, p.attention);
}

Var registration_head(const Var& x, const ConvLayer& head) { return head(x); }

}  // namespace corrmlp
