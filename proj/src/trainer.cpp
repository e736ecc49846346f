#include "corrmlp/trainer.hpp"

#include <cmath>
#include <fstream>

#include "corrmlp/checkpoint.hpp"
#include "corrmlp/rng.hpp"
#include "corrmlp/warp.hpp"

namespace corrmlp {

namespace {
constexpr uint64_t kTrainPairStream = 0x7472'6169'6eULL;
}

void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg) {
  auto& ps = params.params();
  if (state.m.size() != ps.size()) {
    state.m.clear();
    state.v.clear();
    for (const Parameter& p : ps) {
      state.m.emplace_back(p.value().shape(), 0.0);
      state.v.emplace_back(p.value().shape(), 0.0);
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (size_t i = 0; i < ps.size(); ++i) {
    Tensor& theta = ps[i].var.mutable_value();
    const Tensor& g = ps[i].grad();
    double* m = state.m[i].ptr();
    double* v = state.v[i].ptr();
    for (int64_t j = 0; j < theta.numel(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      theta[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  params.zero_grad();
}

RegistrationPair RegistrationPair::from_synthetic(SyntheticPair p, uint64_t seed) {
  RegistrationPair r;
  r.seed = seed;
  r.fixed = std::move(p.fixed);
  r.moving = std::move(p.moving);
  r.fixed_labels = std::move(p.fixed_labels);
  r.moving_labels = std::move(p.moving_labels);
  r.psi_true = std::move(p.psi_true);
  return r;
}

DisplacementField register_volumes(const CorrMLP& model, const Volume& moving, const Volume& fixed, Volume* warped) {
  if (!(moving.extents() == fixed.extents())) throw std::invalid_argument("register: moving and fixed extents differ");
  ForwardResult r = model.forward(moving, fixed);
  if (warped) *warped = Volume(r.warped.value());
  return DisplacementField(r.psi.value());
}

PairMetrics evaluate_pair(const CorrMLP& model, const RegistrationPair& pair) {
  PairMetrics m;
  const DisplacementField psi = register_volumes(model, pair.moving, pair.fixed);
  m.dice_before = dice(pair.fixed_labels, pair.moving_labels).mean;
  m.dice_after = dice(pair.fixed_labels, warp_nearest(pair.moving_labels, psi)).mean;
  m.njd_percent = njd_percent(psi);
  if (pair.psi_true) {
    m.epe_before = endpoint_error(DisplacementField(pair.fixed.extents()), *pair.psi_true);
    m.epe_after = endpoint_error(psi, *pair.psi_true);
  }
  return m;
}

void TrainConfig::validate() const {
  if (!(adam.lr >= 0.0)) throw std::invalid_argument("lr must be >= 0");
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (val_every < 1) throw std::invalid_argument("val_every must be >= 1");
  if (iterations > 0 && val_every > iterations) throw std::invalid_argument("val_every must not exceed iterations");
  loss.validate();
  train_spec.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", adam.lr},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"adam_eps", adam.eps},
          {"iterations", iterations},
          {"val_every", val_every},
          {"seed", seed},
          {"ncc_window", loss.ncc_window},
          {"lambda", loss.lambda},
          {"train_spec", train_spec.to_json()}};
}

uint64_t training_pair_seed(uint64_t seed, int64_t iteration) {
  return derive_seed(derive_seed(seed, kTrainPairStream), static_cast<uint64_t>(iteration));
}

nlohmann::json TrainLogRecord::to_json() const {
  nlohmann::json j;
  j["iter"] = iteration;
  if (loss) j["loss"] = *loss;
  if (similarity) j["ncc"] = *similarity;
  if (regularization) j["diffusion"] = *regularization;
  if (val_dice) j["val_dice"] = *val_dice;
  if (val_njd) j["val_njd"] = *val_njd;
  return j;
}

TrainingDiverged::TrainingDiverged(int64_t it, uint64_t seed)
    : std::runtime_error("non-finite training loss at iteration " + std::to_string(it) + " (pair seed " +
                         std::to_string(seed) + ")"),
      iteration(it),
      pair_seed(seed) {}

TrainResult train(CorrMLP& model, const std::vector<RegistrationPair>& val, const TrainConfig& cfg,
                  const std::function<void(const TrainLogRecord&)>& progress) {
  cfg.validate();
  if (val.empty()) throw std::invalid_argument("train: at least one validation pair is required");
  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write log " + cfg.log_path.string());
  }
  TrainResult result;
  std::vector<Tensor> best;
  AdamState adam;

  auto emit = [&](const TrainLogRecord& rec) {
    result.log.push_back(rec);
    if (log) log << rec.to_json().dump() << '\n' << std::flush;
    if (progress) progress(rec);
  };
  auto validate_now = [&](TrainLogRecord& rec) {
    double dsum = 0.0, jsum = 0.0;
    for (const RegistrationPair& p : val) {
      const PairMetrics m = evaluate_pair(model, p);
      dsum += m.dice_after;
      jsum += m.njd_percent;
    }
    rec.val_dice = dsum / double(val.size());
    rec.val_njd = jsum / double(val.size());
    if (best.empty() || *rec.val_dice > result.best_dice) {
      result.best_dice = *rec.val_dice;
      result.best_iteration = rec.iteration;
      best.clear();
      for (const Parameter& p : model.params().params()) best.push_back(p.value());
      if (!cfg.checkpoint_path.empty()) {
        save_checkpoint(cfg.checkpoint_path, model,
                        {rec.iteration, *rec.val_dice, {{"train", cfg.to_json()}}});
      }
    }
  };

  TrainLogRecord init;
  validate_now(init);
  emit(init);

  model.params().zero_grad();
  for (int64_t it = 1; it <= cfg.iterations; ++it) {
    SyntheticPairSpec spec = cfg.train_spec;
    spec.seed = training_pair_seed(cfg.seed, it);
    const SyntheticPair pair = make_pair(spec);
    TrainLogRecord rec;
    rec.iteration = it;
    {
      Tape tape;
      TapeScope scope(tape);
      const Var fixed(pair.fixed.tensor());
      const Var moving(pair.moving.tensor());
      const ForwardResult fr = model.forward(moving, fixed);
      const LossTerms lt = total_loss_prewarped(fixed, fr.warped, fr.psi, cfg.loss);
      const double loss = lt.total.value().item();
      if (!std::isfinite(loss)) {
        if (log) {
          log << nlohmann::json{{"iter", it}, {"error", "non-finite loss"}, {"pair_seed", spec.seed}}.dump() << '\n';
        }
        throw TrainingDiverged(it, spec.seed);
      }
      rec.loss = loss;
      rec.similarity = lt.similarity.value().item();
      rec.regularization = lt.regularization.value().item();
      backward(tape, lt.total);
    }
    adam_step(model.params(), adam, cfg.adam);
    if (it % cfg.val_every == 0 || it == cfg.iterations) validate_now(rec);
    emit(rec);
  }

  auto& ps = model.params().params();
  for (size_t i = 0; i < ps.size(); ++i) ps[i].var.mutable_value() = best[i];
  return result;
}

}  // namespace corrmlp
