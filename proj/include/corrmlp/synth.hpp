#pragma once

// Synthetic registration benchmark: labelled blob phantoms, smooth random
// displacement fields and moving/fixed pairs.

#include <cstdint>

#include <json.hpp>

#include "corrmlp/volume.hpp"

namespace corrmlp {

struct SyntheticPairSpec {
  uint64_t seed = 0;
  Extents extents{32, 32, 32};
  int num_blobs = 6;
  int spacing = 8;              // control-grid spacing in voxels
  double max_magnitude = 4.0;   // voxels
  double noise_sigma = 0.02;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticPairSpec paper_scale();
};

struct Phantom {
  Volume image;
  LabelMap labels;
};

struct SyntheticPair {
  Volume fixed, moving;
  LabelMap fixed_labels, moving_labels;
  DisplacementField psi_true;  // fixed(p) ~ moving(p + psi_true(p))
};

Phantom gen_phantom(const SyntheticPairSpec& spec);
DisplacementField gen_smooth_field(const SyntheticPairSpec& spec);
SyntheticPair make_pair(const SyntheticPairSpec& spec);

/// Field u with u(q) = -psi(q + u(q)) by fixed-point iteration, so warping by
/// u and then by psi is close to the identity.
DisplacementField invert_field(const DisplacementField& psi, int iterations = 12);

/// Separable Gaussian blur of every channel over the spatial axes of a 5-D
/// tensor; radius ceil(3 sigma), borders replicated.
Tensor gaussian_smooth(const Tensor& t, double sigma);

}  // namespace corrmlp
