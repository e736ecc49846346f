#pragma once

#include <cstdint>
#include <vector>

#include "corrmlp/tensor.hpp"

namespace corrmlp {

/// Single-channel intensity volume, tensor shape (1,1,D,H,W).
class Volume {
 public:
  Volume() = default;
  explicit Volume(Tensor t);
  explicit Volume(Extents e, double fill = 0.0);

  const Tensor& tensor() const { return t_; }
  Tensor& tensor() { return t_; }
  Extents extents() const { return spatial_extents(t_); }

 private:
  Tensor t_;
};

/// Per-voxel displacement in voxel units, tensor shape (1,3,D,H,W) with
/// components ordered (dz, dy, dx) like the grid axes.
class DisplacementField {
 public:
  DisplacementField() = default;
  explicit DisplacementField(Tensor t);
  explicit DisplacementField(Extents e, double fill = 0.0);

  const Tensor& tensor() const { return t_; }
  Tensor& tensor() { return t_; }
  Extents extents() const { return spatial_extents(t_); }

 private:
  Tensor t_;
};

/// Integer segmentation on a voxel grid; 0 is background.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(Extents e, std::vector<int32_t> labels);
  explicit LabelMap(Extents e, int32_t fill = 0);

  Extents extents() const { return extents_; }
  const std::vector<int32_t>& labels() const { return labels_; }
  std::vector<int32_t>& labels() { return labels_; }
  int32_t at(int64_t z, int64_t y, int64_t x) const { return labels_[static_cast<size_t>((z * extents_.h + y) * extents_.w + x)]; }
  int32_t& at(int64_t z, int64_t y, int64_t x) { return labels_[static_cast<size_t>((z * extents_.h + y) * extents_.w + x)]; }
  /// Sorted distinct values present.
  std::vector<int32_t> vocabulary() const;

 private:
  Extents extents_;
  std::vector<int32_t> labels_;
};

}  // namespace corrmlp
