// Acceptance run: one PASS/FAIL line per criterion, exit 0 only if all pass.
// Usage: acceptance [criterion ...]   (default: 1..7)

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "corrmlp/blocks.hpp"
#include "corrmlp/checkpoint.hpp"
#include "corrmlp/cvol.hpp"
#include "corrmlp/gradcheck.hpp"
#include "corrmlp/objectives.hpp"
#include "corrmlp/ops.hpp"
#include "corrmlp/trainer.hpp"
#include "corrmlp/warp.hpp"
#include "oracles.hpp"

using namespace corrmlp;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

double seconds_since(clk::time_point t0) { return std::chrono::duration<double>(clk::now() - t0).count(); }

int64_t pick(Rng& rng, int64_t lo, int64_t hi) { return lo + int64_t(rng.below(uint64_t(hi - lo + 1))); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

bool report(int id, bool ok, const std::string& what) {
  std::printf("criterion %d: %s  %s\n", id, ok ? "PASS" : "FAIL", what.c_str());
  std::fflush(stdout);
  return ok;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

bool criterion1() {
  const auto t0 = clk::now();
  gradcheck::Options o;
  o.seeds = 5;
  const auto results = gradcheck::run(o);
  int failed = 0;
  double worst_prim = 0.0, worst_net = 0.0;
  for (const auto& c : results) {
    if (!c.result.passed) {
      ++failed;
      std::printf("  gradcheck failure: %s/%s seed %llu rel %.3e\n", c.suite.c_str(), c.name.c_str(),
                  (unsigned long long)c.seed, c.result.max_rel_err);
    }
    double& w = c.suite == "network" ? worst_net : worst_prim;
    w = std::max(w, c.result.max_rel_err);
  }
  const double secs = seconds_since(t0);
  return report(1, failed == 0 && secs <= 600.0,
                fmt("gradient suite: %zu cases over 5 seeds, %d failed, worst rel %.2e (ops/blocks) %.2e (network), %.0f s",
                    results.size(), failed, worst_prim, worst_net, secs));
}

// ---------------------------------------------------------------------------

bool criterion2() {
  Rng rng(2024);
  const int n = 100;
  std::vector<std::pair<std::string, double>> worst;
  auto run = [&](const std::string& name, const std::function<double()>& one) {
    double w = 0.0;
    for (int i = 0; i < n; ++i) w = std::max(w, one());
    worst.emplace_back(name, w);
  };
  run("correlation3d", [&] {
    const Shape s{1, pick(rng, 1, 4), pick(rng, 1, 6), pick(rng, 1, 6), pick(rng, 1, 6)};
    const int64_t d = pick(rng, 0, 2) * 2 + 1;
    Tensor a = oracle::random_tensor(s, rng), b = oracle::random_tensor(s, rng);
    return oracle::max_abs_diff(correlation3d(Var(a), Var(b), d).value(), oracle::correlation(a, b, d));
  });
  run("conv3d", [&] {
    const int64_t k = rng.below(4) == 0 ? 1 : 3;
    const Shape s{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 6), pick(rng, 1, 6), pick(rng, 1, 6)};
    const int64_t co = pick(rng, 1, 5);
    Tensor x = oracle::random_tensor(s, rng), w = oracle::random_tensor(Shape{co, s[1], k, k, k}, rng),
           b = oracle::random_tensor(Shape{co}, rng);
    return oracle::max_abs_diff(ops::conv3d(Var(x), Var(w), Var(b), (k - 1) / 2).value(), oracle::conv3d(x, w, b));
  });
  run("maxpool3d", [&] {
    const Shape s{1, pick(rng, 1, 3), 2 * pick(rng, 1, 3), 2 * pick(rng, 1, 3), 2 * pick(rng, 1, 3)};
    Tensor x = oracle::random_tensor(s, rng);
    return oracle::max_abs_diff(ops::maxpool3d(Var(x)).value(), oracle::maxpool(x));
  });
  run("local_mean", [&] {
    const Shape s{1, 1, pick(rng, 1, 7), pick(rng, 1, 7), pick(rng, 1, 7)};
    const int k = int(pick(rng, 0, 2)) * 2 + 3;
    Tensor x = oracle::random_tensor(s, rng);
    return oracle::max_abs_diff(local_mean(Var(x), k).value(), oracle::local_mean(x, k));
  });
  run("diffusion_loss", [&] {
    const Shape s{1, 3, pick(rng, 2, 7), pick(rng, 2, 7), pick(rng, 2, 7)};
    Tensor p = oracle::random_tensor(s, rng, 3.0);
    return std::fabs(diffusion_loss(Var(p)).value().item() - oracle::diffusion(p));
  });
  run("jacobian_determinants", [&] {
    const Shape s{1, 3, pick(rng, 3, 7), pick(rng, 3, 7), pick(rng, 3, 7)};
    Tensor p = oracle::random_tensor(s, rng, 0.7);
    return oracle::max_abs_diff(jacobian_determinants(DisplacementField(p)), oracle::jacobian(p));
  });
  bool ok = true;
  std::string msg = "oracle equivalence (100 instances each, max abs err):";
  for (const auto& [name, w] : worst) {
    ok = ok && w <= 1e-10;
    msg += fmt(" %s %.1e", name.c_str(), w);
  }
  return report(2, ok, msg);
}

// ---------------------------------------------------------------------------

DisplacementField linear_field(Extents e, double s) {
  DisplacementField f(e);
  for (int64_t z = 0; z < e.d; ++z)
    for (int64_t y = 0; y < e.h; ++y)
      for (int64_t x = 0; x < e.w; ++x) {
        f.tensor().at(0, 0, z, y, x) = s * double(z);
        f.tensor().at(0, 1, z, y, x) = s * double(y);
        f.tensor().at(0, 2, z, y, x) = s * double(x);
      }
  return f;
}

bool criterion3() {
  Rng rng(3);
  std::vector<std::string> bad;

  // warp with zero field
  bool warp_id = true;
  for (int i = 0; i < 20; ++i) {
    const Extents e{pick(rng, 1, 9), pick(rng, 1, 9), pick(rng, 1, 9)};
    Tensor x = oracle::random_tensor(Shape{1, pick(rng, 1, 3), e.d, e.h, e.w}, rng);
    Var zero(Tensor(Shape{1, 3, e.d, e.h, e.w}, 0.0));
    Var w = warp_trilinear(Var(x), zero);
    warp_id = warp_id && std::memcmp(w.value().data().data(), x.data().data(), sizeof(double) * size_t(x.numel())) == 0;
  }
  if (!warp_id) bad.push_back("warp(x,0) != x");

  const Extents e{8, 9, 7};
  if (njd_percent(DisplacementField(e)) != 0.0) bad.push_back("NJD(0) != 0");
  const DisplacementField flip = linear_field(e, -2.0);  // p + psi = -p
  const Tensor det = jacobian_determinants(flip);
  bool interior = true;
  for (int64_t z = 1; z < e.d - 1; ++z)
    for (int64_t y = 1; y < e.h - 1; ++y)
      for (int64_t x = 1; x < e.w - 1; ++x) interior = interior && det.at(0, 0, z, y, x) <= 0.0;
  if (!interior || njd_percent(flip) != 100.0) bad.push_back("NJD(-p) != 100%");

  bool ramp = true;
  for (Extents r : {Extents{4, 4, 4}, Extents{5, 7, 6}, Extents{32, 32, 32}}) {
    DisplacementField f(r);
    for (int64_t z = 0; z < r.d; ++z)
      for (int64_t y = 0; y < r.h; ++y)
        for (int64_t x = 0; x < r.w; ++x) f.tensor().at(0, 0, z, y, x) = double(x);
    ramp = ramp && diffusion_loss(Var(f.tensor())).value().item() == 1.0 / 9.0;
  }
  if (!ramp) bad.push_back("diffusion(ramp) != 1/9");

  double worst_sum = 0.0;
  for (bool per_channel : {true, false}) {
    ParamStore store;
    CMWMLPConfig cfg;
    cfg.channels = 8;
    cfg.per_channel_fusion = per_channel;
    MultiWindowParams p = MultiWindowParams::create(store, "mw", cfg, rng);
    for (int i = 0; i < 5; ++i) {
      Tensor x = oracle::random_tensor(Shape{1, 8, pick(rng, 2, 9), pick(rng, 2, 9), pick(rng, 2, 9)}, rng, 2.0);
      MultiWindowResult r = multi_window_mlp(Var(x), p);
      const Shape& ws = r.weights.shape();
      for (int64_t c = 0; c < ws[2]; ++c) {
        double s = 0.0;
        for (int64_t n = 0; n < ws[1]; ++n) s += r.weights.value()[n * ws[2] + c];
        worst_sum = std::max(worst_sum, std::fabs(s - 1.0));
      }
    }
  }
  if (worst_sum > 1e-12) bad.push_back("fusion weights do not sum to 1");

  double worst_ncc = -1.0;
  for (int i = 0; i < 5; ++i) {
    const Shape s{1, 1, pick(rng, 9, 16), pick(rng, 9, 16), pick(rng, 9, 16)};
    Var v(gaussian_smooth(oracle::random_tensor(s, rng), 1.0));
    worst_ncc = std::max(worst_ncc, ncc_loss(v, v, LossConfig{}).value().item());
  }
  if (worst_ncc > -0.99) bad.push_back("ncc(I,I) > -0.99 on smooth random volumes");

  std::string msg = fmt("analytic invariants: fusion |sum-1| %.1e, worst ncc(I,I) %.4f", worst_sum, worst_ncc);
  for (const auto& b : bad) msg += "; " + b;
  return report(3, bad.empty(), msg);
}

// ---------------------------------------------------------------------------

bool criterion4() {
  double worst_mean = 0.0, worst_njd = 0.0;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    CorrMLP m(CorrMLPConfig::desk(), seed);
    SyntheticPairSpec spec;
    spec.seed = 400 + seed;
    SyntheticPair p = make_pair(spec);
    Tape tape;
    TapeScope scope(tape);
    ForwardResult r = m.forward(p.moving, p.fixed);
    double sum = 0.0;
    for (double v : r.psi.value().data()) sum += std::fabs(v);
    worst_mean = std::max(worst_mean, sum / double(r.psi.value().numel()));
    worst_njd = std::max(worst_njd, njd_percent(DisplacementField(r.psi.value())));
  }
  return report(4, worst_mean <= 1e-3 && worst_njd == 0.0,
                fmt("identity start (5 seeds, 32^3): max mean|psi| %.2e, max NJD %.3f%%", worst_mean, worst_njd));
}

// ---------------------------------------------------------------------------

struct BenchRun {
  double dice_before = 0, dice_after = 0, epe_before = 0, epe_after = 0, njd = 0, secs = 0;
};

std::vector<RegistrationPair> make_pairs(uint64_t base, int count) {
  std::vector<RegistrationPair> out;
  for (int i = 0; i < count; ++i) {
    SyntheticPairSpec spec;
    spec.seed = derive_seed(base, uint64_t(i));
    out.push_back(RegistrationPair::from_synthetic(make_pair(spec), spec.seed));
  }
  return out;
}

// Trains the desk model for 2000 iterations, picks the best validation
// checkpoint and scores it on 8 held-out pairs.
BenchRun bench_run(uint64_t seed, bool use_correlation, const fs::path& dir) {
  const auto t0 = clk::now();
  CorrMLPConfig mc = CorrMLPConfig::desk();
  mc.use_correlation_layer = use_correlation;
  CorrMLP model(mc, derive_seed(seed, 1));
  const auto val = make_pairs(derive_seed(seed, 2), 8);
  const auto test = make_pairs(derive_seed(seed, 3), 8);
  TrainConfig tc;
  tc.seed = derive_seed(seed, 4);
  tc.log_path = dir / fmt("seed%llu_%s.log.jsonl", (unsigned long long)seed, use_correlation ? "full" : "nocorr");
  train(model, val, tc, [&](const TrainLogRecord& r) {
    if (r.val_dice) std::printf("  [seed %llu %s] iter %lld val dice %.4f\n", (unsigned long long)seed,
                                use_correlation ? "full" : "no-corr", (long long)r.iteration, *r.val_dice);
    std::fflush(stdout);
  });
  BenchRun b;
  for (const auto& p : test) {
    const PairMetrics m = evaluate_pair(model, p);
    b.dice_before += m.dice_before / 8.0;
    b.dice_after += m.dice_after / 8.0;
    b.epe_before += *m.epe_before / 8.0;
    b.epe_after += *m.epe_after / 8.0;
    b.njd += m.njd_percent / 8.0;
  }
  b.secs = seconds_since(t0);
  std::printf("  [seed %llu %s] test dice %.4f -> %.4f, epe %.4f -> %.4f, njd %.3f%%, %.0f s\n",
              (unsigned long long)seed, use_correlation ? "full" : "no-corr", b.dice_before, b.dice_after,
              b.epe_before, b.epe_after, b.njd, b.secs);
  std::fflush(stdout);
  return b;
}

std::vector<BenchRun> g_full;

bool criterion5(const fs::path& dir) {
  double total = 0.0;
  std::vector<double> gain, epe_drop, njd;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    g_full.push_back(bench_run(seed, true, dir));
    const BenchRun& b = g_full.back();
    gain.push_back(b.dice_after - b.dice_before);
    epe_drop.push_back(1.0 - b.epe_after / b.epe_before);
    njd.push_back(b.njd);
    total += b.secs;
  }
  const double g = median(gain), e = median(epe_drop), n = *std::max_element(njd.begin(), njd.end());
  return report(5, g >= 0.10 && e >= 0.30 && n <= 1.0 && total <= 3600.0,
                fmt("synthetic benchmark (3 seeds x 2000 iters): median dice gain %+.4f (need >= 0.10), median EPE "
                    "decrease %.1f%% (need >= 30%%), max NJD %.3f%% (need <= 1%%), %.1f min (need <= 60)",
                    g, 100.0 * e, n, total / 60.0));
}

bool criterion6(const fs::path& dir) {
  if (g_full.empty())
    for (uint64_t seed = 1; seed <= 3; ++seed) g_full.push_back(bench_run(seed, true, dir));
  std::vector<double> full, nocorr;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    full.push_back(g_full[size_t(seed - 1)].dice_after);
    nocorr.push_back(bench_run(seed, false, dir).dice_after);
  }
  const double f = median(full), n = median(nocorr);
  return report(6, f >= n - 0.01,
                fmt("correlation ablation: median dice full %.4f vs no-corr %.4f (need full >= no-corr - 0.01)", f, n));
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), sizeof(double) * size_t(a.numel())) == 0;
}

bool criterion7(const fs::path& dir) {
  std::vector<std::string> bad;
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto val = make_pairs(77, 2);
  std::vector<std::string> logs;
  std::vector<CorrMLP> models;
  for (int run = 0; run < 2; ++run) {
    CorrMLP m(CorrMLPConfig::desk(), 11);
    TrainConfig tc;
    tc.iterations = 50;
    tc.val_every = 25;
    tc.seed = 12;
    tc.log_path = dir / fmt("repro%d.log.jsonl", run);
    tc.checkpoint_path = dir / fmt("repro%d.ckpt", run);
    train(m, val, tc);
    logs.push_back(slurp(tc.log_path));
    models.push_back(std::move(m));
  }
  omp_set_num_threads(saved);
  if (logs[0] != logs[1]) bad.push_back("training logs differ");
  if (slurp(dir / "repro0.ckpt") != slurp(dir / "repro1.ckpt")) bad.push_back("checkpoints differ");
  for (size_t i = 0; i < models[0].params().params().size(); ++i)
    if (!same_bits(models[0].params().params()[i].value(), models[1].params().params()[i].value())) {
      bad.push_back("parameters differ");
      break;
    }

  // checkpoint: load then save again gives identical bytes and f32-rounded values
  CorrMLP loaded = load_model(dir / "repro0.ckpt");
  save_checkpoint(dir / "resaved.ckpt", loaded, CheckpointInfo{});
  CorrMLP reloaded = load_model(dir / "resaved.ckpt");
  for (size_t i = 0; i < loaded.params().params().size(); ++i)
    if (!same_bits(loaded.params().params()[i].value(), reloaded.params().params()[i].value())) {
      bad.push_back("checkpoint round trip");
      break;
    }

  // CVOL: f32-representable volumes and fields, integer labels
  SyntheticPairSpec spec;
  spec.seed = 9;
  SyntheticPair p = make_pair(spec);
  Tensor vt = p.moving.tensor(), ft = p.psi_true.tensor();
  for (double& v : vt.data()) v = double(float(v));
  for (double& v : ft.data()) v = double(float(v));
  write_volume(dir / "v.cvol", Volume(vt));
  write_field(dir / "f.cvol", DisplacementField(ft));
  write_labels(dir / "l.cvol", p.moving_labels);
  if (!same_bits(read_volume(dir / "v.cvol").tensor(), vt)) bad.push_back("volume round trip");
  if (!same_bits(read_field(dir / "f.cvol").tensor(), ft)) bad.push_back("field round trip");
  if (read_labels(dir / "l.cvol").labels() != p.moving_labels.labels()) bad.push_back("label round trip");
  write_volume(dir / "v2.cvol", read_volume(dir / "v.cvol"));
  if (slurp(dir / "v.cvol") != slurp(dir / "v2.cvol")) bad.push_back("volume bytes differ after rewrite");

  std::string msg = "reproducibility: two 50-iteration single-thread runs, checkpoint and CVOL round trips";
  for (const auto& b : bad) msg += "; " + b;
  return report(7, bad.empty(), msg);
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> which;
  for (int i = 1; i < argc; ++i) which.insert(std::atoi(argv[i]));
  if (which.empty()) which = {1, 2, 3, 4, 5, 6, 7};
  const fs::path dir = fs::temp_directory_path() / "corrmlp_acceptance";
  fs::create_directories(dir);
  const auto t0 = clk::now();
  bool ok = true;
  for (int c : which) {
    switch (c) {
      case 1: ok = criterion1() && ok; break;
      case 2: ok = criterion2() && ok; break;
      case 3: ok = criterion3() && ok; break;
      case 4: ok = criterion4() && ok; break;
      case 5: ok = criterion5(dir) && ok; break;
      case 6: ok = criterion6(dir) && ok; break;
      case 7: ok = criterion7(dir) && ok; break;
      default: std::fprintf(stderr, "unknown criterion %d\n", c); return 2;
    }
  }
  std::printf("acceptance: %s (%.1f min)\n", ok ? "ALL PASS" : "FAILURES", seconds_since(t0) / 60.0);
  return ok ? 0 : 1;
}
