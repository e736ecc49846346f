#include "corrmlp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "corrmlp/blocks.hpp"
#include "corrmlp/net.hpp"
#include "corrmlp/objectives.hpp"
#include "corrmlp/ops.hpp"
#include "corrmlp/synth.hpp"
#include "corrmlp/warp.hpp"

namespace corrmlp::gradcheck {

namespace {

// Relative errors of smaller gradients are dominated by difference noise and
// are not reported (they are still judged against atol).
constexpr double kRelFloor = 1e-4;

Tensor randn(const Shape& s, Rng& rng, double scale = 1.0, double offset = 0.0) {
  Tensor t(s);
  for (double& v : t.data()) v = offset + scale * rng.normal();
  return t;
}

Var leaf(const Shape& s, Rng& rng, double scale = 1.0, double offset = 0.0) {
  return Var(randn(s, rng, scale, offset), true);
}

// Fourth-order central difference of eval() with respect to `x`, which is
// restored afterwards.
template <class Eval>
double central_difference(Eval&& eval, double& x, double h) {
  const double orig = x;
  double f[4];
  const double offsets[4] = {2 * h, h, -h, -2 * h};
  for (int k = 0; k < 4; ++k) {
    x = orig + offsets[k];
    f[k] = eval();
  }
  x = orig;
  return (8.0 * (f[1] - f[2]) - (f[0] - f[3])) / (12.0 * h);
}

// Records one analytic/numeric comparison. When the estimate disagrees it is
// refined at smaller steps: a disagreement that persists across two steps is a
// failure, an estimate that keeps moving means a kink lies within the stencil
// and the entry is skipped.
template <class Eval>
void judge(CheckResult& res, double analytic, Eval&& eval, double& x, const Tolerance& tol) {
  auto close = [&](double a, double b) {
    const double d = std::fabs(a - b);
    return d <= tol.atol || d <= tol.rtol * std::max(std::fabs(a), std::fabs(b));
  };
  double numeric = central_difference(eval, x, tol.step);
  if (!close(analytic, numeric)) {
    const double finer = central_difference(eval, x, tol.step / 10);
    if (!close(numeric, finer)) {
      const double finest = central_difference(eval, x, tol.step / 100);
      if (!close(finer, finest)) {
        ++res.skipped;
        return;
      }
      numeric = finer;
    }
  }
  const double abs_err = std::fabs(analytic - numeric);
  const double denom = std::max(std::fabs(analytic), std::fabs(numeric));
  ++res.checked;
  res.max_abs_err = std::max(res.max_abs_err, abs_err);
  res.max_grad = std::max(res.max_grad, denom);
  if (denom > kRelFloor) res.max_rel_err = std::max(res.max_rel_err, abs_err / denom);
  if (!close(analytic, numeric)) res.passed = false;
}

void finalize(CheckResult& res) {
  if (res.skipped * 4 > res.checked + res.skipped) res.passed = false;
}

double project(const Tensor& out, const Tensor& r) {
  double acc = 0.0;
  for (int64_t i = 0; i < out.numel(); ++i) acc += out[i] * r[i];
  return acc;
}

// Square with a backward rule that is 1% off.
Var faulty_square(const Var& x) {
  Tensor y = x.value();
  for (double& v : y.data()) v *= v;
  return detail::finish(std::move(y), x.requires_grad(), [x](const Tensor& g) mutable {
    Tensor& gx = x.grad_buffer();
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += 2.02 * x.value()[i] * g[i];
  });
}

void randomize(ParamStore& store, Rng& rng, double scale) {
  for (Parameter& p : store.params()) {
    for (double& v : p.var.mutable_value().data()) v += scale * rng.normal();
  }
}

std::vector<Var> param_vars(const ParamStore& store) {
  std::vector<Var> v;
  for (const Parameter& p : store.params()) v.push_back(p.var);
  return v;
}

struct Suite {
  const Options& opts;
  std::vector<CaseResult>& out;
  std::string name;
  Tolerance tol;

  void add(const std::string& case_name, uint64_t seed, const CheckResult& r) { out.push_back({name, case_name, seed, r}); }
};

void ops_suite(Suite& s, uint64_t seed) {
  Rng rng(seed);
  const Tolerance& tol = s.tol;
  constexpr int64_t kAll = 1 << 30;
  auto run = [&](const std::string& name, const std::function<Var()>& f, const std::vector<Var>& leaves,
                 int64_t entries = 24) { s.add(name, seed, check(f, leaves, rng, tol, entries)); };

  {
    Var x = leaf({2, 2, 4, 3, 5}, rng), w = leaf({3, 2, 3, 3, 3}, rng, 0.3), b = leaf({3}, rng);
    run("conv3d_k3", [=] { return ops::conv3d(x, w, b, 1); }, {x, w, b});
    Var w1 = leaf({3, 2, 1, 1, 1}, rng);
    run("conv3d_k1", [=] { return ops::conv3d(x, w1, b, 0); }, {x, w1, b});
  }
  {
    Var x = leaf({1, 2, 4, 4, 6}, rng);
    run("maxpool3d", [=] { return ops::maxpool3d(x); }, {x}, kAll);
    Var u = leaf({1, 2, 3, 2, 4}, rng);
    run("upsample_trilinear2x", [=] { return ops::upsample_trilinear2x(u); }, {u}, kAll);
  }
  {
    Var x = leaf({2, 3, 3, 2, 4}, rng), g = leaf({3}, rng, 0.5, 1.0), b = leaf({3}, rng);
    run("instance_norm", [=] { return ops::instance_norm(x, g, b); }, {x, g, b});
    run("layer_norm_channels", [=] { return ops::layer_norm(x, g, b, 1e-5, 1); }, {x, g, b});
    Var t = leaf({4, 5, 6}, rng), gt = leaf({6}, rng, 0.5, 1.0), bt = leaf({6}, rng);
    run("layer_norm_last", [=] { return ops::layer_norm(t, gt, bt, 1e-5, 2); }, {t, gt, bt});
  }
  {
    Var x = leaf({3, 4, 5}, rng);
    run("leaky_relu", [=] { return ops::leaky_relu(x, 0.2); }, {x}, kAll);
    run("gelu", [=] { return ops::gelu(x); }, {x}, kAll);
    run("sigmoid", [=] { return ops::sigmoid(x); }, {x}, kAll);
    run("softmax_axis1", [=] { return ops::softmax(x, 1); }, {x}, kAll);
    run("softmax_last", [=] { return ops::softmax(x, 2); }, {x}, kAll);
    run("square", [=] { return ops::square(x); }, {x}, kAll);
    run("scale", [=] { return ops::scale(x, -1.7); }, {x}, kAll);
    run("div_scalar", [=] { return ops::div_scalar(x, -1.7); }, {x}, kAll);
    run("add_scalar", [=] { return ops::add_scalar(x, 0.3); }, {x}, kAll);
    run("sum", [=] { return ops::sum(x); }, {x}, kAll);
    run("mean", [=] { return ops::mean(x); }, {x}, kAll);
    run("reshape", [=] { return ops::reshape(x, Shape{12, 5}); }, {x}, kAll);
    run("slice", [=] { return ops::slice(x, 2, 1, 3); }, {x}, kAll);
    Var y = leaf({3, 4, 5}, rng), d = leaf({3, 4, 5}, rng, 0.3, 1.5);
    run("add", [=] { return ops::add(x, y); }, {x, y}, kAll);
    run("sub", [=] { return ops::sub(x, y); }, {x, y}, kAll);
    run("mul", [=] { return ops::mul(x, y); }, {x, y}, kAll);
    run("div", [=] { return ops::div(x, d); }, {x, d}, kAll);
    Var z = leaf({3, 2, 5}, rng);
    run("concat", [=] { return ops::concat({x, z}, 1); }, {x, z}, kAll);
  }
  {
    Var x = leaf({2, 3, 7}, rng), w = leaf({4, 7}, rng), b = leaf({4}, rng);
    run("linear", [=] { return ops::linear(x, w, b); }, {x, w, b}, kAll);
    Var v = leaf({2, 3, 2, 3, 2}, rng), g = leaf({2, 3}, rng);
    run("global_avg_pool", [=] { return ops::global_avg_pool(v); }, {v}, kAll);
    run("mul_channels", [=] { return ops::mul_channels(v, g); }, {v, g}, kAll);
    Var t = leaf({3, 8, 4}, rng), tw = leaf({8, 8}, rng, 0.4), tb = leaf({8}, rng);
    run("token_mix", [=] { return ops::token_mix(t, tw, tb); }, {t, tw, tb});
  }
  {
    Var x = leaf({1, 2, 4, 3, 5}, rng);
    for (int axis = 2; axis <= 4; ++axis) {
      run("forward_diff_axis" + std::to_string(axis), [=] { return ops::forward_diff(x, axis); }, {x}, kAll);
    }
    run("box_sum_3", [=] { return ops::box_sum(x, 3); }, {x}, kAll);
    run("local_mean_3", [=] { return local_mean(x, 3); }, {x}, kAll);
  }
  {
    Var f1 = leaf({1, 3, 4, 3, 4}, rng), f2 = leaf({1, 3, 4, 3, 4}, rng);
    run("correlation3d", [=] { return correlation3d(f1, f2, 3); }, {f1, f2});
    Var x = leaf({2, 2, 4, 5, 3}, rng);
    run("window_partition", [=] { return window_partition(x, 3).tokens; }, {x});
    const Windows w = window_partition(Var(x.value()), 3);
    Var tok = leaf(w.tokens.shape(), rng);
    const PadRecord rec = w.record;
    run("window_unpartition", [=] { return window_unpartition(tok, rec); }, {tok});
  }
  {
    Var x = leaf({1, 2, 5, 4, 6}, rng), psi = leaf({1, 3, 5, 4, 6}, rng, 1.3);
    run("warp_trilinear", [=] { return warp_trilinear(x, psi); }, {x, psi});
    LossConfig lc;
    lc.ncc_window = 3;
    Var a = leaf({1, 1, 5, 4, 6}, rng, 0.3, 0.5), b = leaf({1, 1, 5, 4, 6}, rng, 0.3, 0.5);
    run("ncc_loss", [=] { return ncc_loss(a, b, lc); }, {a, b});
    run("diffusion_mean", [=] { return diffusion_loss(psi, Reduction::Mean); }, {psi});
    run("diffusion_sum", [=] { return diffusion_loss(psi, Reduction::Sum); }, {psi});
  }
}

void blocks_suite(Suite& s, uint64_t seed) {
  Rng rng(seed);
  const Tolerance& tol = s.tol;
  constexpr int64_t kPer = 6;
  auto run = [&](const std::string& name, ParamStore& store, const std::function<Var()>& f, std::vector<Var> inputs) {
    randomize(store, rng, 0.2);
    for (const Var& p : param_vars(store)) inputs.push_back(p);
    s.add(name, seed, check(f, inputs, rng, tol, kPer));
  };

  CMWMLPConfig cfg;
  cfg.channels = 4;
  cfg.branch_windows = {3, 5};
  {
    ParamStore st;
    auto p = ConvModuleParams::create(st, "cm", 2, 3, rng);
    Var x = leaf({1, 2, 4, 4, 3}, rng);
    run("conv_module", st, [=] { return conv_module(x, p); }, {x});
  }
  {
    ParamStore st;
    auto p = GmlpParams::create(st, "g", 4, 2, 2, rng);
    Var t = leaf({3, 8, 4}, rng);
    run("gmlp_window", st, [=] { return gmlp_window(t, p); }, {t});
  }
  for (bool per_channel : {true, false}) {
    ParamStore st;
    CMWMLPConfig c = cfg;
    c.per_channel_fusion = per_channel;
    auto p = MultiWindowParams::create(st, "mw", c, rng);
    Var x = leaf({1, 4, 4, 3, 5}, rng);
    run(per_channel ? "multi_window_channel" : "multi_window_branch", st,
        [=] { return multi_window_mlp(x, p).output; }, {x});
  }
  {
    ParamStore st;
    auto p = ChannelAttentionParams::create(st, "rca", 4, 4, rng);
    Var x = leaf({1, 4, 3, 4, 3}, rng);
    run("residual_channel_attention", st, [=] { return residual_channel_attention(x, p); }, {x});
  }
  for (bool corr : {true, false}) {
    ParamStore st;
    CMWMLPConfig c = cfg;
    c.use_correlation = corr;
    auto p = CmwMlpParams::create(st, "cmw", 4, 4, c, rng);
    Var a = leaf({1, 4, 4, 4, 4}, rng), b = leaf({1, 4, 4, 4, 4}, rng);
    run(corr ? "cmw_mlp" : "cmw_mlp_no_corr", st, [=] { return cmw_mlp(a, b, p); }, {a, b});
  }
  {
    ParamStore st;
    auto head = create_registration_head(st, "head", 4, 0.1, rng);
    Var x = leaf({1, 4, 3, 3, 4}, rng);
    run("registration_head", st, [=] { return registration_head(x, head); }, {x});
  }
}

void network_suite(Suite& s, uint64_t seed) {
  Rng rng(seed);
  CorrMLPConfig cfg;
  cfg.enc_channels = {2, 2, 2, 4};
  cfg.head_init_std = 0.05;
  CorrMLP model(cfg, derive_seed(seed, 1));
  SyntheticPairSpec spec;
  spec.seed = derive_seed(seed, 2);
  spec.extents = {8, 8, 8};
  spec.num_blobs = 2;
  spec.max_magnitude = 1.5;
  const SyntheticPair pair = make_pair(spec);
  const Var fixed(pair.fixed.tensor()), moving(pair.moving.tensor());
  const LossConfig lc;
  const CorrMLP* m = &model;
  auto f = [=] {
    ForwardResult r = m->forward(moving, fixed);
    return total_loss_prewarped(fixed, r.warped, r.psi, lc).total;
  };

  // Sample entries across parameters, picking the tensor first so that small
  // tensors are covered as often as large ones.
  const auto& ps = model.params().params();
  std::vector<std::set<int64_t>> picks(ps.size());
  int placed = 0;
  while (placed < s.opts.network_entries) {
    const size_t i = rng.below(ps.size());
    if (picks[i].insert(static_cast<int64_t>(rng.below(uint64_t(ps[i].value().numel())))).second) ++placed;
  }
  std::vector<Tensor> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    model.params().zero_grad();
    backward(tape, f());
    for (const Parameter& p : ps) analytic.push_back(p.grad());
  }
  CheckResult total;
  for (size_t i = 0; i < ps.size(); ++i) {
    for (int64_t idx : picks[i]) {
      judge(total, analytic[i][idx], [&] { return f().value().item(); }, ps[i].var.mutable_value()[idx], s.tol);
    }
  }
  finalize(total);
  s.add("micro_network_8cubed", seed, total);
}

}  // namespace

Scope parse_scope(const std::string& s) {
  if (s == "ops") return Scope::Ops;
  if (s == "blocks") return Scope::Blocks;
  if (s == "network") return Scope::Network;
  if (s == "all") return Scope::All;
  throw std::invalid_argument("unknown gradcheck scope '" + s + "' (ops|blocks|network|all)");
}

const char* to_string(Scope s) {
  switch (s) {
    case Scope::Ops: return "ops";
    case Scope::Blocks: return "blocks";
    case Scope::Network: return "network";
    case Scope::All: return "all";
  }
  return "?";
}

CheckResult check(const std::function<Var()>& f, const std::vector<Var>& leaves, Rng& rng, const Tolerance& tol,
                  int64_t max_entries) {
  Tensor r;
  std::vector<Tensor> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    for (Var v : leaves) v.grad_buffer().fill(0.0);
    Var out = f();
    r = randn(out.shape(), rng);
    Var loss = ops::sum(ops::mul(out, Var(r)));
    backward(tape, loss);
    for (const Var& v : leaves) analytic.push_back(v.grad());
  }
  CheckResult res;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Var v = leaves[li];
    Tensor& val = v.mutable_value();
    const int64_t n = val.numel();
    std::vector<int64_t> idx;
    if (n <= max_entries) {
      for (int64_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      std::set<int64_t> chosen;
      while (static_cast<int64_t>(chosen.size()) < max_entries) chosen.insert(static_cast<int64_t>(rng.below(uint64_t(n))));
      idx.assign(chosen.begin(), chosen.end());
    }
    for (int64_t i : idx) {
      judge(res, analytic[li][i], [&] { return project(f().value(), r); }, val[i], tol);
    }
  }
  finalize(res);
  return res;
}

std::vector<CaseResult> run(const Options& opts) {
  if (opts.seeds < 1) throw std::invalid_argument("gradcheck needs at least one seed");
  std::vector<CaseResult> out;
  for (int k = 0; k < opts.seeds; ++k) {
    const uint64_t seed = derive_seed(opts.seed, static_cast<uint64_t>(k));
    if (opts.scope == Scope::Ops || opts.scope == Scope::All) {
      Suite s{opts, out, "ops", {opts.rtol_primitive, 1e-8, 1e-5}};
      ops_suite(s, seed);
    }
    if (opts.scope == Scope::Blocks || opts.scope == Scope::All) {
      Suite s{opts, out, "blocks", {opts.rtol_primitive, 1e-8, 1e-5}};
      blocks_suite(s, seed);
    }
    if (opts.scope == Scope::Network || opts.scope == Scope::All) {
      Suite s{opts, out, "network", {opts.rtol_network, 1e-8, 1e-5}};
      network_suite(s, seed);
    }
    if (opts.inject_fault) {
      Rng rng(seed);
      Var x = leaf({2, 3}, rng);
      const CheckResult r = check([=] { return faulty_square(x); }, {x}, rng, {opts.rtol_primitive, 1e-8, 1e-5}, 6);
      out.push_back({"fault", "injected_faulty_square", seed, r});
    }
  }
  return out;
}

bool all_passed(const std::vector<CaseResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CaseResult& c) { return c.result.passed; });
}

}  // namespace corrmlp::gradcheck
