#pragma once

#include <map>
#include <span>

#include "corrmlp/autograd.hpp"
#include "corrmlp/volume.hpp"

namespace corrmlp {

enum class Reduction { Mean, Sum };

struct LossConfig {
  int ncc_window = 9;   // odd
  double lambda = 1.0;  // diffusion weight
  double ncc_eps = 1e-5;
  Reduction reduction = Reduction::Mean;
  void validate() const;
};

/// Local mean over the n^3 neighbourhood, zero padded, divisor n^3.
Var local_mean(const Var& image, int n);

/// Negative local NCC with windows centred on their local means.
Var ncc_loss(const Var& fixed, const Var& warped, const LossConfig& cfg);

/// Squared forward differences of every component along every axis.
/// Mean: average over (voxel, component, axis); Sum: plain sum.
Var diffusion_loss(const Var& psi, Reduction reduction = Reduction::Mean);

struct LossTerms {
  Var total, similarity, regularization;
};

/// ncc(fixed, warp(moving, psi)) + lambda * diffusion(psi).
LossTerms total_loss(const Var& fixed, const Var& moving, const Var& psi, const LossConfig& cfg);
/// Same, with the warped moving image already computed.
LossTerms total_loss_prewarped(const Var& fixed, const Var& warped, const Var& psi, const LossConfig& cfg);

struct DiceResult {
  double mean = 1.0;
  std::map<int32_t, double> per_label;
};

/// Mean Dice over the foreground labels present in either map.
DiceResult dice(const LabelMap& a, const LabelMap& b);
/// Mean Dice over a declared foreground vocabulary; a label absent from both
/// maps scores 1.
DiceResult dice(const LabelMap& a, const LabelMap& b, std::span<const int32_t> vocabulary);

/// 100 * fraction of voxels with det < 0 (det <= 0 when strict is false).
double njd_percent(const DisplacementField& psi, bool strict = true);

/// Mean Euclidean distance between displacement vectors, in voxels.
double endpoint_error(const DisplacementField& pred, const DisplacementField& truth);

}  // namespace corrmlp
