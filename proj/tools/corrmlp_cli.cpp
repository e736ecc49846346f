// corrmlp: synth | train | register | evaluate | gradcheck

#include <omp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "corrmlp/checkpoint.hpp"
#include "corrmlp/cvol.hpp"
#include "corrmlp/dataset.hpp"
#include "corrmlp/gradcheck.hpp"
#include "corrmlp/rng.hpp"
#include "corrmlp/trainer.hpp"
#include "json_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace corrmlp::cli {

enum ExitCode { kOk = 0, kUsage = 1, kVerification = 2, kRuntime = 3 };

constexpr uint64_t kModelStream = 0x6d6f'6465'6cULL;

class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  uint64_t seed = 0;
  int threads = 1;
};

struct SynthArgs {
  std::string out;
  int64_t pairs = 8;
  std::vector<int64_t> size{32, 32, 32};
  double max_mag = 4.0;
  int num_blobs = 6;
  int spacing = 8;
  double noise = 0.02;
};

struct TrainArgs {
  std::string data, out, log;
  int64_t iters = 2000;
  std::string preset = "desk";
  std::string ablation = "none";
  std::vector<int> branches{3, 5, 7};
  double lr = 1e-4;
  int64_t val_every = 200;
  int64_t val_pairs = 8;
  int ncc_window = 9;
  double lambda = 1.0;
};

struct RegisterArgs {
  std::string ckpt, moving, fixed, out_field, out_warped;
};

struct EvaluateArgs {
  std::string ckpt, data, report;
};

struct GradcheckArgs {
  std::string scope = "all";
  int seeds = 5;
  bool inject_fault = false;
};

void print_resolved(const std::string& command, const Globals& g, const json& cfg) {
  std::cout << json{{"command", command}, {"seed", g.seed}, {"threads", g.threads}, {"config", cfg}}.dump() << '\n';
}

CorrMLPConfig model_config(const TrainArgs& a) {
  CorrMLPConfig c;
  if (a.preset == "desk") {
    c = CorrMLPConfig::desk();
  } else if (a.preset == "paper") {
    c = CorrMLPConfig::paper();
  } else {
    throw UsageError("unknown preset '" + a.preset + "' (desk|paper)");
  }
  if (a.ablation == "no-corr") {
    c.use_correlation_layer = false;
  } else if (a.ablation == "image-only") {
    c.use_step_level = false;
  } else if (a.ablation == "step-only") {
    c.use_image_level = false;
  } else if (a.ablation != "none") {
    throw UsageError("invalid ablation '" + a.ablation + "' (none|no-corr|image-only|step-only)");
  }
  c.block.branch_windows = a.branches;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

int run_synth(const Globals& g, const SynthArgs& a) {
  if (a.size.size() != 3) throw UsageError("--size takes three extents D,H,W");
  SyntheticPairSpec spec;
  spec.extents = {a.size[0], a.size[1], a.size[2]};
  spec.max_magnitude = a.max_mag;
  spec.num_blobs = a.num_blobs;
  spec.spacing = a.spacing;
  spec.noise_sigma = a.noise;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  json cfg = spec.to_json();
  cfg.erase("seed");
  cfg["out"] = a.out;
  cfg["pairs"] = a.pairs;
  print_resolved("synth", g, cfg);
  if (a.pairs < 1) throw UsageError("--pairs must be >= 1");
  const DatasetIndex idx = write_synthetic_dataset(a.out, spec, a.pairs, g.seed);
  std::cout << json{{"pairs", idx.pairs.size()}, {"files", idx.pairs.size() * 5}, {"out", a.out}}.dump() << '\n';
  return kOk;
}

int run_train(const Globals& g, TrainArgs a) {
  const CorrMLPConfig mcfg = model_config(a);
  if (!fs::exists(fs::path(a.data) / "index.json")) {
    throw std::runtime_error("missing data: no index.json in '" + a.data + "' (create it with 'corrmlp synth')");
  }
  LoadedDataset data = load_dataset(a.data);
  std::vector<RegistrationPair> val;
  for (auto& p : data.pairs) {
    if (static_cast<int64_t>(val.size()) >= a.val_pairs) break;
    if (has_labels(p)) val.push_back(std::move(p));
  }
  if (val.empty()) throw std::runtime_error("data directory has no labelled pairs for validation");

  TrainConfig tcfg;
  tcfg.adam.lr = a.lr;
  tcfg.iterations = a.iters;
  tcfg.val_every = a.iters > 0 ? std::min(a.val_every, a.iters) : std::max<int64_t>(a.val_every, 1);
  tcfg.seed = g.seed;
  tcfg.loss.ncc_window = a.ncc_window;
  tcfg.loss.lambda = a.lambda;
  tcfg.train_spec = data.index.spec;
  tcfg.checkpoint_path = a.out;
  tcfg.log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
  try {
    tcfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  json cfg{{"model", mcfg.to_json()}, {"train", tcfg.to_json()}, {"data", a.data}, {"out", a.out},
           {"log", tcfg.log_path.string()}, {"preset", a.preset}, {"ablation", a.ablation},
           {"val_pairs", val.size()}};
  print_resolved("train", g, cfg);

  CorrMLP model(mcfg, derive_seed(g.seed, kModelStream));
  const TrainResult r = train(model, val, tcfg, [](const TrainLogRecord& rec) {
    if (rec.val_dice) {
      std::fprintf(stderr, "iter %lld val_dice %.4f val_njd %.3f%%\n", static_cast<long long>(rec.iteration),
                   *rec.val_dice, *rec.val_njd);
    }
  });
  std::cout << json{{"best_iteration", r.best_iteration}, {"best_val_dice", r.best_dice}, {"checkpoint", a.out}}.dump()
            << '\n';
  return kOk;
}

int run_register(const Globals& g, const RegisterArgs& a) {
  print_resolved("register", g,
                 {{"ckpt", a.ckpt}, {"moving", a.moving}, {"fixed", a.fixed}, {"out_field", a.out_field},
                  {"out_warped", a.out_warped}});
  const CorrMLP model = load_model(a.ckpt);
  const Volume moving = read_volume(a.moving);
  const Volume fixed = read_volume(a.fixed);
  if (!(moving.extents() == fixed.extents())) {
    throw std::runtime_error("shape mismatch: moving " + shape_str(moving.tensor().shape()) + " vs fixed " +
                             shape_str(fixed.tensor().shape()));
  }
  Volume warped;
  const DisplacementField psi = register_volumes(model, moving, fixed, &warped);
  write_field(a.out_field, psi);
  write_volume(a.out_warped, warped);
  std::cout << json{{"njd_percent", njd_percent(psi)}}.dump() << '\n';
  return kOk;
}

int run_evaluate(const Globals& g, const EvaluateArgs& a) {
  print_resolved("evaluate", g, {{"ckpt", a.ckpt}, {"data", a.data}, {"report", a.report}});
  CheckpointInfo info;
  const CorrMLP model = load_model(a.ckpt, &info);
  const LoadedDataset data = load_dataset(a.data);
  json rows = json::array();
  int64_t skipped = 0;
  double dice_b = 0, dice_a = 0, njd = 0, epe_b = 0, epe_a = 0;
  int64_t n = 0, n_epe = 0;
  for (size_t i = 0; i < data.pairs.size(); ++i) {
    const RegistrationPair& p = data.pairs[i];
    const std::string& name = data.index.pairs[i].name;
    if (!has_labels(p)) {
      std::fprintf(stderr, "warning: %s has no label maps, skipped\n", name.c_str());
      ++skipped;
      continue;
    }
    const PairMetrics m = evaluate_pair(model, p);
    json row{{"pair", name}, {"seed", p.seed}, {"dice_before", m.dice_before}, {"dice_after", m.dice_after},
             {"njd_percent", m.njd_percent}};
    if (m.epe_after) {
      row["epe_before"] = *m.epe_before;
      row["epe_after"] = *m.epe_after;
      epe_b += *m.epe_before;
      epe_a += *m.epe_after;
      ++n_epe;
    }
    rows.push_back(row);
    dice_b += m.dice_before;
    dice_a += m.dice_after;
    njd += m.njd_percent;
    ++n;
  }
  json report;
  report["checkpoint"] = {{"path", a.ckpt}, {"iteration", info.iteration}, {"val_score", info.val_score}};
  report["pairs"] = rows;
  report["skipped_pairs"] = skipped;
  if (n > 0) {
    json before{{"method", "before registration"}, {"mean_dice", dice_b / n}, {"njd_percent", 0.0}};
    json after{{"method", "corrmlp"}, {"mean_dice", dice_a / n}, {"njd_percent", njd / n}};
    if (n_epe > 0) {
      before["mean_epe"] = epe_b / n_epe;
      after["mean_epe"] = epe_a / n_epe;
    }
    report["summary"] = json::array({before, after});
  }
  std::ofstream out(a.report, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report " + a.report);
  out << report.dump(2) << '\n';
  if (n > 0) std::cout << report["summary"].dump() << '\n';
  return kOk;
}

int run_gradcheck(const Globals& g, const GradcheckArgs& a) {
  gradcheck::Options o;
  try {
    o.scope = gradcheck::parse_scope(a.scope);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  o.seed = g.seed;
  o.seeds = a.seeds;
  o.inject_fault = a.inject_fault;
  print_resolved("gradcheck", g,
                 {{"scope", a.scope}, {"seeds", a.seeds}, {"inject_fault", a.inject_fault},
                  {"rtol_primitive", o.rtol_primitive}, {"rtol_network", o.rtol_network},
                  {"network_entries", o.network_entries}});
  const auto results = gradcheck::run(o);
  std::printf("%-8s %-28s %-20s %7s %5s %10s %10s  %s\n", "suite", "case", "seed", "checked", "skip", "max_rel",
              "max_abs", "status");
  for (const auto& c : results) {
    std::printf("%-8s %-28s %-20llu %7lld %5lld %10.3e %10.3e  %s\n", c.suite.c_str(), c.name.c_str(),
                static_cast<unsigned long long>(c.seed), static_cast<long long>(c.result.checked),
                static_cast<long long>(c.result.skipped), c.result.max_rel_err, c.result.max_abs_err,
                c.result.passed ? "PASS" : "FAIL");
  }
  const bool ok = gradcheck::all_passed(results);
  std::printf("%s\n", ok ? "all gradient checks passed" : "gradient check FAILED");
  return ok ? kOk : kVerification;
}

int main_impl(int argc, char** argv) {
  CLI::App app{"CorrMLP deformable 3-D registration"};
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file overriding defaults (keys mirror flag names)");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  Globals g;
  app.add_option("--seed", g.seed, "Global seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic benchmark");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--pairs", sa.pairs, "Number of pairs")->capture_default_str();
  synth->add_option("--size", sa.size, "Extents D,H,W (multiples of 8)")->delimiter(',')->expected(3)->capture_default_str();
  synth->add_option("--max-mag", sa.max_mag, "Maximum displacement magnitude (voxels)")->capture_default_str();
  synth->add_option("--num-blobs", sa.num_blobs, "Labelled blobs per phantom")->capture_default_str();
  synth->add_option("--spacing", sa.spacing, "Control-grid spacing (voxels)")->capture_default_str();
  synth->add_option("--noise", sa.noise, "Gaussian noise sigma on the moving image")->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model on synthetic pairs");
  tr->add_option("--data", ta.data, "Data directory from synth (validation pairs)")->required();
  tr->add_option("--out", ta.out, "Checkpoint path")->required();
  tr->add_option("--iters", ta.iters, "Training iterations")->capture_default_str();
  tr->add_option("--preset", ta.preset, "desk|paper")->capture_default_str();
  tr->add_option("--ablation", ta.ablation, "none|no-corr|image-only|step-only")->capture_default_str();
  tr->add_option("--branches", ta.branches, "MLP branch window sizes")->delimiter(',')->capture_default_str();
  tr->add_option("--lr", ta.lr, "Adam learning rate")->capture_default_str();
  tr->add_option("--val-every", ta.val_every, "Validation interval")->capture_default_str();
  tr->add_option("--val-pairs", ta.val_pairs, "Validation pairs taken from --data")->capture_default_str();
  tr->add_option("--ncc-window", ta.ncc_window, "Local NCC window")->capture_default_str();
  tr->add_option("--lambda", ta.lambda, "Diffusion weight")->capture_default_str();
  tr->add_option("--log", ta.log, "JSONL log path (default <out>.log.jsonl)");

  RegisterArgs ra;
  auto* reg = app.add_subcommand("register", "Register a moving volume onto a fixed one");
  reg->add_option("--ckpt", ra.ckpt, "Checkpoint")->required();
  reg->add_option("--moving", ra.moving, "Moving volume (CVOL)")->required();
  reg->add_option("--fixed", ra.fixed, "Fixed volume (CVOL)")->required();
  reg->add_option("--out-field", ra.out_field, "Output displacement field")->required();
  reg->add_option("--out-warped", ra.out_warped, "Output warped volume")->required();

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on a data directory");
  ev->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  ev->add_option("--data", ea.data, "Data directory")->required();
  ev->add_option("--report", ea.report, "JSON report path")->required();

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gc->add_option("--scope", ga.scope, "ops|blocks|network|all")->capture_default_str();
  gc->add_option("--seeds", ga.seeds, "Seeds per suite")->capture_default_str()->check(CLI::PositiveNumber);
  gc->add_flag("--inject-fault", ga.inject_fault, "Add a case with a deliberately broken backward rule");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  omp_set_num_threads(g.threads);

  try {
    if (synth->parsed()) return run_synth(g, sa);
    if (tr->parsed()) return run_train(g, ta);
    if (reg->parsed()) return run_register(g, ra);
    if (ev->parsed()) return run_evaluate(g, ea);
    if (gc->parsed()) return run_gradcheck(g, ga);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace corrmlp::cli

int main(int argc, char** argv) { return corrmlp::cli::main_impl(argc, argv); }
