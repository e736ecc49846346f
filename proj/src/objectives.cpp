#include "corrmlp/objectives.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "corrmlp/ops.hpp"
#include "corrmlp/warp.hpp"

namespace corrmlp {

void LossConfig::validate() const {
  if (ncc_window < 1 || ncc_window % 2 == 0) throw std::invalid_argument("NCC window must be a positive odd integer");
  if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  if (ncc_eps <= 0.0) throw std::invalid_argument("ncc_eps must be > 0");
}

Var local_mean(const Var& image, int n) {
  if (n < 1 || n % 2 == 0) throw std::invalid_argument("local_mean: window must be odd, got " + std::to_string(n));
  return ops::scale(ops::box_sum(image, n), 1.0 / static_cast<double>(n * n * n));
}

Var ncc_loss(const Var& fixed, const Var& warped, const LossConfig& cfg) {
  cfg.validate();
  if (fixed.shape() != warped.shape()) {
    throw std::invalid_argument("ncc_loss: shape mismatch " + shape_str(fixed.shape()) + " vs " +
                                shape_str(warped.shape()));
  }
  const int64_t n = cfg.ncc_window;
  const double inv_n3 = 1.0 / static_cast<double>(n * n * n);
  Var s_i = ops::box_sum(fixed, n);
  Var s_j = ops::box_sum(warped, n);
  Var s_ii = ops::box_sum(ops::square(fixed), n);
  Var s_jj = ops::box_sum(ops::square(warped), n);
  Var s_ij = ops::box_sum(ops::mul(fixed, warped), n);
  // sum over the window of (I - mean_I)(J - mean_J) = S_IJ - S_I S_J / n^3
  Var cross = ops::sub(s_ij, ops::scale(ops::mul(s_i, s_j), inv_n3));
  Var var_i = ops::sub(s_ii, ops::scale(ops::square(s_i), inv_n3));
  Var var_j = ops::sub(s_jj, ops::scale(ops::square(s_j), inv_n3));
  Var value = ops::div(ops::square(cross), ops::add_scalar(ops::mul(var_i, var_j), cfg.ncc_eps));
  Var total = cfg.reduction == Reduction::Mean ? ops::mean(value) : ops::sum(value);
  return ops::scale(total, -1.0);
}

Var diffusion_loss(const Var& psi, Reduction reduction) {
  if (psi.value().rank() != 5) throw std::invalid_argument("diffusion_loss: expected (B,3,D,H,W) field");
  Var acc;
  for (int axis = 2; axis <= 4; ++axis) {
    Var sq = ops::square(ops::forward_diff(psi, axis));
    // mean over (voxel, component) of this axis, averaged over the 3 axes
    Var term = reduction == Reduction::Mean ? ops::div_scalar(ops::sum(sq), 3.0 * double(sq.value().numel()))
                                            : ops::sum(sq);
    acc = acc.defined() ? ops::add(acc, term) : term;
  }
  return acc;
}

LossTerms total_loss_prewarped(const Var& fixed, const Var& warped, const Var& psi, const LossConfig& cfg) {
  LossTerms t;
  t.similarity = ncc_loss(fixed, warped, cfg);
  t.regularization = diffusion_loss(psi, cfg.reduction);
  t.total = cfg.lambda == 0.0 ? ops::add_scalar(t.similarity, 0.0)
                              : ops::add(t.similarity, ops::scale(t.regularization, cfg.lambda));
  return t;
}

LossTerms total_loss(const Var& fixed, const Var& moving, const Var& psi, const LossConfig& cfg) {
  return total_loss_prewarped(fixed, warp_trilinear(moving, psi), psi, cfg);
}

DiceResult dice(const LabelMap& a, const LabelMap& b) {
  std::set<int32_t> labels;
  for (int32_t v : a.labels()) labels.insert(v);
  for (int32_t v : b.labels()) labels.insert(v);
  labels.erase(0);
  std::vector<int32_t> vocab(labels.begin(), labels.end());
  return dice(a, b, vocab);
}

DiceResult dice(const LabelMap& a, const LabelMap& b, std::span<const int32_t> vocabulary) {
  if (!(a.extents() == b.extents())) throw std::invalid_argument("dice: label maps differ in shape");
  std::map<int32_t, int64_t> count_a, count_b, overlap;
  for (size_t i = 0; i < a.labels().size(); ++i) {
    const int32_t la = a.labels()[i], lb = b.labels()[i];
    ++count_a[la];
    ++count_b[lb];
    if (la == lb) ++overlap[la];
  }
  DiceResult r;
  double total = 0.0;
  int n = 0;
  for (int32_t l : vocabulary) {
    if (l == 0) continue;
    const int64_t na = count_a[l], nb = count_b[l];
    const double d = (na + nb == 0) ? 1.0 : 2.0 * static_cast<double>(overlap[l]) / static_cast<double>(na + nb);
    r.per_label[l] = d;
    total += d;
    ++n;
  }
  r.mean = n ? total / n : 1.0;
  return r;
}

double njd_percent(const DisplacementField& psi, bool strict) {
  const Tensor det = jacobian_determinants(psi);
  int64_t neg = 0;
  for (double v : det.data()) {
    if (strict ? v < 0.0 : v <= 0.0) ++neg;
  }
  return 100.0 * static_cast<double>(neg) / static_cast<double>(det.numel());
}

double endpoint_error(const DisplacementField& pred, const DisplacementField& truth) {
  if (!(pred.extents() == truth.extents())) throw std::invalid_argument("endpoint_error: shape mismatch");
  const int64_t S = pred.extents().voxels();
  const Tensor& a = pred.tensor();
  const Tensor& b = truth.tensor();
  double acc = 0.0;
  for (int64_t p = 0; p < S; ++p) {
    double sq = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = a[c * S + p] - b[c * S + p];
      sq += d * d;
    }
    acc += std::sqrt(sq);
  }
  return acc / static_cast<double>(S);
}

}  // namespace corrmlp
