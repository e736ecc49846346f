#pragma once

#include "corrmlp/autograd.hpp"
#include "corrmlp/volume.hpp"

namespace corrmlp {

/// out(p) = x(p + psi(p)) per channel; trilinear, sample coordinates clamped
/// to the grid. Differentiable in both x and psi.
Var warp_trilinear(const Var& x, const Var& psi);

Volume warp_volume(const Volume& v, const DisplacementField& psi);

/// Nearest-neighbour label warp (round half away from zero, border clamped).
LabelMap warp_nearest(const LabelMap& labels, const DisplacementField& psi);

/// det(d(p + psi)/dp) per voxel, central differences inside, one-sided at
/// faces. Returns (1,1,D,H,W). All extents must be >= 3.
Tensor jacobian_determinants(const DisplacementField& psi);

}  // namespace corrmlp
