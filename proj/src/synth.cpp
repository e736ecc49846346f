#include "corrmlp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "corrmlp/rng.hpp"
#include "corrmlp/warp.hpp"

namespace corrmlp {

namespace {

constexpr uint64_t kPhantomStream = 1;
constexpr uint64_t kFieldStream = 2;
constexpr uint64_t kNoiseStream = 3;
constexpr double kBackground = 0.05;
constexpr double kEdgeWidth = 0.6;  // voxels, soft-edge logistic scale

int64_t extent_along(const Extents& e, int axis) { return axis == 0 ? e.d : axis == 1 ? e.h : e.w; }

}  // namespace

void SyntheticPairSpec::validate() const {
  if (extents.d < 8 || extents.h < 8 || extents.w < 8 || extents.d % 8 || extents.h % 8 || extents.w % 8) {
    throw std::invalid_argument("synthetic extents must be positive multiples of 8, got " + std::to_string(extents.d) +
                                "," + std::to_string(extents.h) + "," + std::to_string(extents.w));
  }
  if (num_blobs < 1) throw std::invalid_argument("num_blobs must be >= 1");
  if (spacing < 1) throw std::invalid_argument("control-grid spacing must be >= 1");
  if (!(max_magnitude >= 0.0) || !(max_magnitude < spacing)) {
    throw std::invalid_argument("max_magnitude must lie in [0, spacing)");
  }
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be >= 0");
}

nlohmann::json SyntheticPairSpec::to_json() const {
  return {{"seed", seed},
          {"extents", {extents.d, extents.h, extents.w}},
          {"num_blobs", num_blobs},
          {"spacing", spacing},
          {"max_magnitude", max_magnitude},
          {"noise_sigma", noise_sigma}};
}

SyntheticPairSpec SyntheticPairSpec::paper_scale() {
  SyntheticPairSpec s;
  s.extents = {144, 192, 160};
  s.spacing = 16;
  s.max_magnitude = 8.0;
  return s;
}

Tensor gaussian_smooth(const Tensor& t, double sigma) {
  if (t.rank() != 5) throw std::invalid_argument("gaussian_smooth: expected a 5-D tensor");
  if (!(sigma > 0.0)) return t;
  const int64_t r = static_cast<int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<size_t>(2 * r + 1));
  for (int64_t i = -r; i <= r; ++i) k[static_cast<size_t>(i + r)] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
  const double norm = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= norm;

  const Extents e = spatial_extents(t);
  const int64_t planes = t.dim(0) * t.dim(1);
  Tensor cur = t;
  for (int axis = 0; axis < 3; ++axis) {
    Tensor next(t.shape());
    const int64_t n = extent_along(e, axis);
    const int64_t stride = axis == 0 ? e.h * e.w : axis == 1 ? e.w : 1;
    const double* src = cur.ptr();
    double* dst = next.ptr();
    for (int64_t pl = 0; pl < planes; ++pl) {
      const int64_t base = pl * e.voxels();
      for (int64_t z = 0; z < e.d; ++z)
        for (int64_t y = 0; y < e.h; ++y)
          for (int64_t x = 0; x < e.w; ++x) {
            const int64_t pos = axis == 0 ? z : axis == 1 ? y : x;
            const int64_t p = base + (z * e.h + y) * e.w + x - pos * stride;
            double acc = 0.0;
            for (int64_t i = -r; i <= r; ++i) {
              const int64_t q = std::clamp<int64_t>(pos + i, 0, n - 1);
              acc += k[static_cast<size_t>(i + r)] * src[p + q * stride];
            }
            dst[p + pos * stride] = acc;
          }
    }
    cur = std::move(next);
  }
  return cur;
}

Phantom gen_phantom(const SyntheticPairSpec& spec) {
  spec.validate();
  const Extents e = spec.extents;
  const double ext[3] = {double(e.d), double(e.h), double(e.w)};
  const double min_ext = std::min({ext[0], ext[1], ext[2]});
  Rng rng(derive_seed(spec.seed, kPhantomStream));
  const int nb = spec.num_blobs;

  struct Blob {
    double c[3], r[3], intensity;
  };

  for (int attempt = 0;; ++attempt) {
    // Distinct intensities: one per stratum of [0.2, 1.0], strata shuffled.
    std::vector<int> order(static_cast<size_t>(nb));
    std::iota(order.begin(), order.end(), 0);
    for (int i = nb - 1; i > 0; --i) std::swap(order[size_t(i)], order[rng.below(uint64_t(i + 1))]);
    std::vector<Blob> blobs(static_cast<size_t>(nb));
    for (int b = 0; b < nb; ++b) {
      Blob& bl = blobs[size_t(b)];
      const double width = 0.8 / nb;
      bl.intensity = 0.2 + width * (order[size_t(b)] + 0.1 + 0.8 * rng.uniform());
      for (int a = 0; a < 3; ++a) {
        bl.r[a] = min_ext * rng.uniform(0.12, 0.25);
        bl.r[a] = std::max(bl.r[a], 1.0);
      }
      for (int a = 0; a < 3; ++a) {
        // Rescale radii that would leave the domain, then centre inside it.
        const double room = 0.5 * (ext[a] - 2.0);
        if (bl.r[a] > room) bl.r[a] = room;
        bl.c[a] = rng.uniform(bl.r[a], ext[a] - 1.0 - bl.r[a]);
      }
    }

    LabelMap labels(e);
    Tensor img(Shape{1, 1, e.d, e.h, e.w}, kBackground);
    std::vector<int64_t> counts(static_cast<size_t>(nb + 1), 0);
    for (int64_t z = 0; z < e.d; ++z)
      for (int64_t y = 0; y < e.h; ++y)
        for (int64_t x = 0; x < e.w; ++x) {
          const double p[3] = {double(z), double(y), double(x)};
          double v = kBackground;
          int32_t lab = 0;
          for (int b = 0; b < nb; ++b) {
            const Blob& bl = blobs[size_t(b)];
            double q = 0.0;
            for (int a = 0; a < 3; ++a) {
              const double u = (p[a] - bl.c[a]) / bl.r[a];
              q += u * u;
            }
            const double rho = std::sqrt(q);
            if (rho <= 1.0) lab = b + 1;
            const double mean_r = (bl.r[0] + bl.r[1] + bl.r[2]) / 3.0;
            const double m = 1.0 / (1.0 + std::exp((rho - 1.0) * mean_r / kEdgeWidth));
            v = v * (1.0 - m) + bl.intensity * m;
          }
          labels.at(z, y, x) = lab;
          ++counts[size_t(lab)];
          img.at(0, 0, z, y, x) = v;
        }
    const bool all_present = std::all_of(counts.begin() + 1, counts.end(), [](int64_t c) { return c > 0; });
    if (!all_present && attempt < 1000) continue;
    if (!all_present) throw std::runtime_error("gen_phantom: could not place every blob");

    img = gaussian_smooth(img, 1.0);
    for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);
    return {Volume(std::move(img)), std::move(labels)};
  }
}

DisplacementField gen_smooth_field(const SyntheticPairSpec& spec) {
  spec.validate();
  const Extents e = spec.extents;
  Rng rng(derive_seed(spec.seed, kFieldStream));
  int64_t n[3];
  for (int a = 0; a < 3; ++a) {
    n[a] = (extent_along(e, a) + spec.spacing - 1) / spec.spacing;
  }
  std::vector<double> ctrl(static_cast<size_t>(3 * n[0] * n[1] * n[2]));
  for (double& v : ctrl) v = rng.uniform(-1.0, 1.0);

  // Cell-centred control points, trilinear interpolation, clamped at the ends.
  auto locate = [](int64_t t, int64_t ext, int64_t cells, int64_t& i0, double& f) {
    double s = (double(t) + 0.5) * double(cells) / double(ext) - 0.5;
    s = std::clamp(s, 0.0, double(cells - 1));
    i0 = std::min<int64_t>(static_cast<int64_t>(std::floor(s)), std::max<int64_t>(cells - 2, 0));
    f = s - double(i0);
    if (cells == 1) f = 0.0;
  };
  Tensor field(Shape{1, 3, e.d, e.h, e.w});
  const int64_t S = e.voxels();
  for (int64_t z = 0; z < e.d; ++z) {
    int64_t z0;
    double fz;
    locate(z, e.d, n[0], z0, fz);
    for (int64_t y = 0; y < e.h; ++y) {
      int64_t y0;
      double fy;
      locate(y, e.h, n[1], y0, fy);
      for (int64_t x = 0; x < e.w; ++x) {
        int64_t x0;
        double fx;
        locate(x, e.w, n[2], x0, fx);
        const int64_t p = (z * e.h + y) * e.w + x;
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const double wgt = (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
                if (wgt == 0.0) continue;
                const int64_t iz = std::min(z0 + dz, n[0] - 1), iy = std::min(y0 + dy, n[1] - 1),
                              ix = std::min(x0 + dx, n[2] - 1);
                acc += wgt * ctrl[size_t(((c * n[0] + iz) * n[1] + iy) * n[2] + ix)];
              }
          field[c * S + p] = acc;
        }
      }
    }
  }
  field = gaussian_smooth(field, 0.5 * spec.spacing);

  double max_norm = 0.0;
  for (int64_t p = 0; p < S; ++p) {
    const double a = field[p], b = field[S + p], c = field[2 * S + p];
    max_norm = std::max(max_norm, std::sqrt(a * a + b * b + c * c));
  }
  const double k = max_norm > 0.0 ? spec.max_magnitude / max_norm : 0.0;
  for (double& v : field.data()) v *= k;
  return DisplacementField(std::move(field));
}

DisplacementField invert_field(const DisplacementField& psi, int iterations) {
  const Var neg_psi(psi.tensor());
  Tensor u(psi.tensor().shape(), 0.0);
  for (int it = 0; it < iterations; ++it) {
    Tensor next = warp_trilinear(neg_psi, Var(u)).value();
    for (double& v : next.data()) v = -v;
    u = std::move(next);
  }
  return DisplacementField(std::move(u));
}

SyntheticPair make_pair(const SyntheticPairSpec& spec) {
  spec.validate();
  Phantom ph = gen_phantom(spec);
  DisplacementField psi = gen_smooth_field(spec);
  const DisplacementField inv = invert_field(psi);
  Volume moving = warp_volume(ph.image, inv);
  if (spec.noise_sigma > 0.0) {
    Rng rng(derive_seed(spec.seed, kNoiseStream));
    for (double& v : moving.tensor().data()) v = std::clamp(v + spec.noise_sigma * rng.normal(), 0.0, 1.0);
  }
  LabelMap moving_labels = warp_nearest(ph.labels, inv);
  return {std::move(ph.image), std::move(moving), std::move(ph.labels), std::move(moving_labels), std::move(psi)};
}

}  // namespace corrmlp
