#include "corrmlp/warp.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "corrmlp/kernels.hpp"

namespace corrmlp {

Volume::Volume(Tensor t) : t_(std::move(t)) {
  if (t_.rank() != 5 || t_.dim(0) != 1 || t_.dim(1) != 1) {
    throw std::invalid_argument("Volume needs shape (1,1,D,H,W), got " + shape_str(t_.shape()));
  }
}

Volume::Volume(Extents e, double fill) : Volume(Tensor(Shape{1, 1, e.d, e.h, e.w}, fill)) {}

DisplacementField::DisplacementField(Tensor t) : t_(std::move(t)) {
  if (t_.rank() != 5 || t_.dim(0) != 1 || t_.dim(1) != 3) {
    throw std::invalid_argument("DisplacementField needs shape (1,3,D,H,W), got " + shape_str(t_.shape()));
  }
}

DisplacementField::DisplacementField(Extents e, double fill)
    : DisplacementField(Tensor(Shape{1, 3, e.d, e.h, e.w}, fill)) {}

LabelMap::LabelMap(Extents e, std::vector<int32_t> labels) : extents_(e), labels_(std::move(labels)) {
  if (e.d < 1 || e.h < 1 || e.w < 1 || static_cast<int64_t>(labels_.size()) != e.voxels()) {
    throw std::invalid_argument("LabelMap size does not match extents");
  }
}

LabelMap::LabelMap(Extents e, int32_t fill) : LabelMap(e, std::vector<int32_t>(static_cast<size_t>(e.voxels()), fill)) {}

std::vector<int32_t> LabelMap::vocabulary() const {
  std::set<int32_t> s(labels_.begin(), labels_.end());
  return {s.begin(), s.end()};
}

Var warp_trilinear(const Var& x, const Var& psi) {
  if (x.value().rank() != 5 || psi.value().rank() != 5 || psi.shape()[1] != 3) {
    throw std::invalid_argument("warp_trilinear: expected x (B,C,D,H,W) and psi (B,3,D,H,W)");
  }
  const Shape& s = x.shape();
  const Shape& ps = psi.shape();
  if (s[0] != ps[0] || s[2] != ps[2] || s[3] != ps[3] || s[4] != ps[4]) {
    throw std::invalid_argument("warp_trilinear: extent mismatch between " + shape_str(s) + " and field " +
                                shape_str(ps));
  }
  kernels::GridGeom g{s[0], s[1], s[2], s[3], s[4]};
  Tensor y(s);
  kernels::warp_trilinear_forward(g, x.value().ptr(), psi.value().ptr(), y.ptr());
  return detail::finish(std::move(y), detail::any_requires_grad({&x, &psi}), [x, psi, g](const Tensor& gy) mutable {
    kernels::warp_trilinear_backward(g, x.value().ptr(), psi.value().ptr(), gy.ptr(),
                                     x.requires_grad() ? x.grad_buffer().ptr() : nullptr,
                                     psi.requires_grad() ? psi.grad_buffer().ptr() : nullptr);
  });
}

Volume warp_volume(const Volume& v, const DisplacementField& psi) {
  return Volume(warp_trilinear(Var(v.tensor()), Var(psi.tensor())).value());
}

LabelMap warp_nearest(const LabelMap& labels, const DisplacementField& psi) {
  const Extents e = labels.extents();
  if (!(psi.extents() == e)) throw std::invalid_argument("warp_nearest: extent mismatch");
  const Tensor& t = psi.tensor();
  const int64_t S = e.voxels();
  LabelMap out(e);
  for (int64_t z = 0; z < e.d; ++z)
    for (int64_t y = 0; y < e.h; ++y)
      for (int64_t x = 0; x < e.w; ++x) {
        const int64_t p = (z * e.h + y) * e.w + x;
        const auto nearest = [](double c, int64_t n) {
          return std::clamp<int64_t>(static_cast<int64_t>(std::round(c)), 0, n - 1);
        };
        out.at(z, y, x) = labels.at(nearest(z + t[p], e.d), nearest(y + t[S + p], e.h), nearest(x + t[2 * S + p], e.w));
      }
  return out;
}

Tensor jacobian_determinants(const DisplacementField& psi) {
  const Extents e = psi.extents();
  if (e.d < 3 || e.h < 3 || e.w < 3) throw std::invalid_argument("jacobian_determinants: all extents must be >= 3");
  const Tensor& t = psi.tensor();
  const int64_t S = e.voxels();
  const int64_t ext[3] = {e.d, e.h, e.w};
  const int64_t stride[3] = {e.h * e.w, e.w, 1};
  Tensor det(Shape{1, 1, e.d, e.h, e.w});
  for (int64_t z = 0; z < e.d; ++z)
    for (int64_t y = 0; y < e.h; ++y)
      for (int64_t x = 0; x < e.w; ++x) {
        const int64_t p = (z * e.h + y) * e.w + x;
        const int64_t pos[3] = {z, y, x};
        double j[3][3];
        for (int a = 0; a < 3; ++a) {  // derivative direction
          int64_t lo = p, hi = p;
          double span = 2.0;
          if (pos[a] == 0) {
            hi = p + stride[a];
            span = 1.0;
          } else if (pos[a] == ext[a] - 1) {
            lo = p - stride[a];
            span = 1.0;
          } else {
            lo = p - stride[a];
            hi = p + stride[a];
          }
          for (int c = 0; c < 3; ++c) j[c][a] = (c == a ? 1.0 : 0.0) + (t[c * S + hi] - t[c * S + lo]) / span;
        }
        det[p] = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                 j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
      }
  return det;
}

}  // namespace corrmlp
