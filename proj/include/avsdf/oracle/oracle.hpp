#pragma once

// Exact ground truth over the capsule body: analytic union SDF, surface and
// volume samplers, Table-style evaluation metrics, and the AVSG grid dump.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "avsdf/body/body.hpp"
#include "avsdf/core/error.hpp"
#include "avsdf/core/rng.hpp"
#include "avsdf/core/tensor.hpp"

namespace avsdf::oracle {

using body::BodyState;
using body::Capsule;
using body::Vec3;
using body::operator+;
using body::operator-;
using body::operator*;

// exact SDF of the capsule union, negative inside
inline double gt_sdf(const Vec3& x, const BodyState& body) {
  require(!body.capsules.empty(), "gt_sdf: body has no capsule geometry");
  double best = std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < body.capsules.size(); ++k) {
    const Vec3 xc = body.transforms[k].to_canonical(x);
    best = std::min(best, body.capsules[k].sdf(xc));
  }
  return best;
}

namespace detail {

// orthonormal complement of a unit axis
inline void axis_frame(const Vec3& u, Vec3& e1, Vec3& e2) {
  const Vec3 pick = std::fabs(u[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  e1 = body::cross(u, pick);
  const double n1 = body::norm(e1);
  e1 = (1.0 / n1) * e1;
  e2 = body::cross(u, e1);
}

inline Vec3 uniform_sphere_dir(Rng& rng) {
  // Box-Muller-free: uniform z, uniform angle
  const double z = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

// area-proportional sample on a capsule surface (canonical frame): cylinder
// band 2*pi*r*L vs full sphere 4*pi*r^2 split across the two end caps
inline Vec3 sample_capsule_surface(const Capsule& cap, Rng& rng) {
  const Vec3 ab = cap.b - cap.a;
  const double len = body::norm(ab);
  const double r = cap.radius;
  const double area_cyl = 2.0 * 3.14159265358979323846 * r * len;
  const double area_sph = 4.0 * 3.14159265358979323846 * r * r;
  if (len > 0.0 && rng.uniform(0.0, area_cyl + area_sph) < area_cyl) {
    const Vec3 u = (1.0 / len) * ab;
    Vec3 e1, e2;
    axis_frame(u, e1, e2);
    const double h = rng.uniform(0.0, len);
    const double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    return cap.a + h * u + (r * std::cos(phi)) * e1 + (r * std::sin(phi)) * e2;
  }
  const Vec3 d = uniform_sphere_dir(rng);
  if (len == 0.0) return cap.a + r * d;
  const Vec3 u = (1.0 / len) * ab;
  return (body::dot(d, u) >= 0.0 ? cap.b : cap.a) + r * d;
}

inline Vec3 uniform_in_box(const body::PartBox& b, Rng& rng) {
  return {rng.uniform(b.lo[0], b.hi[0]), rng.uniform(b.lo[1], b.hi[1]),
          rng.uniform(b.lo[2], b.hi[2])};
}

// world AABB of all world-mapped part boxes (via their 8 corners each)
inline body::PartBox world_bounds(const BodyState& body) {
  body::PartBox out;
  out.lo = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity()};
  out.hi = {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
            -std::numeric_limits<double>::infinity()};
  for (size_t k = 0; k < body.boxes.size(); ++k) {
    const body::PartBox& b = body.boxes[k];
    for (int c = 0; c < 8; ++c) {
      const Vec3 corner = {c & 1 ? b.hi[0] : b.lo[0], c & 2 ? b.hi[1] : b.lo[1],
                           c & 4 ? b.hi[2] : b.lo[2]};
      const Vec3 w = body.transforms[k].to_world(corner);
      for (int i = 0; i < 3; ++i) {
        out.lo[i] = std::min(out.lo[i], w[i]);
        out.hi[i] = std::max(out.hi[i], w[i]);
      }
    }
  }
  return out;
}

inline bool inside_any_box(const Vec3& x, const BodyState& body) {
  for (size_t k = 0; k < body.boxes.size(); ++k)
    if (body.boxes[k].contains(body.transforms[k].to_canonical(x))) return true;
  return false;
}

}  // namespace detail

// per-part canonical clouds, [n,3] f32 each, points exactly on the surface
inline std::vector<num::Tensor> sample_surface(const BodyState& body, int n_per_part, Rng& rng) {
  require(n_per_part >= 1, "sample_surface: n_per_part must be >= 1");
  require(!body.capsules.empty(), "sample_surface: body has no capsule geometry");
  std::vector<num::Tensor> clouds;
  clouds.reserve(body.capsules.size());
  for (const Capsule& cap : body.capsules) {
    num::Tensor cloud({n_per_part, 3});
    for (int i = 0; i < n_per_part; ++i) {
      const Vec3 p = detail::sample_capsule_surface(cap, rng);
      cloud.at(i, 0) = static_cast<float>(p[0]);
      cloud.at(i, 1) = static_cast<float>(p[1]);
      cloud.at(i, 2) = static_cast<float>(p[2]);
    }
    clouds.push_back(std::move(cloud));
  }
  return clouds;
}

struct TrainSample {
  Vec3 point;      // world
  double gt_sdf;   // exact, meters
  int part;        // generating part
  enum Kind { kUniform, kNearSurface } kind;
};

// per part: uniform points inside the padded box (world-mapped) plus surface
// points pushed off by isotropic Gaussian noise, each labeled with exact gt
inline std::vector<TrainSample> sample_training_points(const BodyState& body, Rng& rng,
                                                       int uniform_per_part = 256,
                                                       int near_per_part = 256,
                                                       double sigma = 0.1) {
  require(uniform_per_part >= 0 && near_per_part >= 0, "sample_training_points: negative count");
  std::vector<TrainSample> out;
  out.reserve(body.capsules.size() * static_cast<size_t>(uniform_per_part + near_per_part));
  for (int k = 0; k < body.num_parts; ++k) {
    const auto ku = static_cast<size_t>(k);
    for (int i = 0; i < uniform_per_part; ++i) {
      const Vec3 xc = detail::uniform_in_box(body.boxes[ku], rng);
      const Vec3 x = body.transforms[ku].to_world(xc);
      out.push_back(TrainSample{x, gt_sdf(x, body), k, TrainSample::kUniform});
    }
    for (int i = 0; i < near_per_part; ++i) {
      const Vec3 sc = detail::sample_capsule_surface(body.capsules[ku], rng);
      Vec3 x = body.transforms[ku].to_world(sc);
      for (int j = 0; j < 3; ++j) x[j] += rng.normal(0.0, sigma);
      out.push_back(TrainSample{x, gt_sdf(x, body), k, TrainSample::kNearSurface});
    }
  }
  return out;
}

struct EvalReport {
  double iou_mean = 0.0, iou_surf = 0.0, iou_unif = 0.0;  // percent
  double mse_sdf = 0.0, mse_abs_sdf = 0.0;                // m^2
  double query_time = 0.0;                                // ms, model queries only
  int64_t points_evaluated = 0;
};

using BatchSdf = std::function<std::vector<double>(const std::vector<Vec3>&)>;

namespace detail {

inline double occupancy_iou(const std::vector<double>& model, const std::vector<double>& gt) {
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < gt.size(); ++i) {
    const bool a = model[i] < 0.0, b = gt[i] < 0.0;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  if (uni == 0) return 100.0;  // both empty: identical occupancy
  return 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace detail

inline EvalReport evaluate(const BatchSdf& model_sdf, const BodyState& body, Rng& rng,
                           int n_uniform = 30000, int n_near = 30000, double sigma = 0.1) {
  require(n_uniform >= 0 && n_near >= 0, "evaluate: negative sample count");
  require(!body.capsules.empty(), "evaluate: body has no capsule geometry");

  const body::PartBox bounds = detail::world_bounds(body);
  std::vector<Vec3> unif;
  unif.reserve(static_cast<size_t>(n_uniform));
  while (static_cast<int>(unif.size()) < n_uniform) {
    const Vec3 x = detail::uniform_in_box(bounds, rng);
    if (detail::inside_any_box(x, body)) unif.push_back(x);
  }

  std::vector<Vec3> near;
  near.reserve(static_cast<size_t>(n_near));
  for (int k = 0; k < body.num_parts; ++k) {
    int count = n_near / body.num_parts;
    if (k == body.num_parts - 1) count = n_near - static_cast<int>(near.size());
    for (int i = 0; i < count; ++i) {
      const Vec3 sc = detail::sample_capsule_surface(body.capsules[static_cast<size_t>(k)], rng);
      Vec3 x = body.transforms[static_cast<size_t>(k)].to_world(sc);
      for (int j = 0; j < 3; ++j) x[j] += rng.normal(0.0, sigma);
      near.push_back(x);
    }
  }

  std::vector<double> gt_u(unif.size()), gt_n(near.size());
  for (size_t i = 0; i < unif.size(); ++i) gt_u[i] = gt_sdf(unif[i], body);
  for (size_t i = 0; i < near.size(); ++i) gt_n[i] = gt_sdf(near[i], body);

  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> md_u = model_sdf(unif);
  const std::vector<double> md_n = model_sdf(near);
  const auto t1 = std::chrono::steady_clock::now();
  require(md_u.size() == unif.size() && md_n.size() == near.size(),
          "evaluate: model returned wrong count");

  EvalReport rep;
  rep.iou_unif = detail::occupancy_iou(md_u, gt_u);
  rep.iou_surf = detail::occupancy_iou(md_n, gt_n);
  rep.iou_mean = 0.5 * (rep.iou_surf + rep.iou_unif);
  double se = 0.0, sea = 0.0;
  int64_t n = 0;
  auto accumulate = [&](const std::vector<double>& md, const std::vector<double>& gt) {
    for (size_t i = 0; i < gt.size(); ++i) {
      const double e = md[i] - gt[i];
      const double ea = std::fabs(md[i]) - std::fabs(gt[i]);
      se += e * e;
      sea += ea * ea;
      ++n;
    }
  };
  accumulate(md_u, gt_u);
  accumulate(md_n, gt_n);
  rep.mse_sdf = n > 0 ? se / static_cast<double>(n) : 0.0;
  rep.mse_abs_sdf = n > 0 ? sea / static_cast<double>(n) : 0.0;
  rep.query_time = std::chrono::duration<double, std::milli>(t1 - t0).count();
  rep.points_evaluated = n;
  return rep;
}

// AVSG grid: magic 'AVSG', u32 version=1, u32 resolution, 6 x f32 world
// bounds (lo, hi), then resolution^3 f32 values sampled at cell centers in
// x-fastest order
inline void export_grid(const std::string& path, const BatchSdf& model_sdf, const BodyState& body,
                        int resolution) {
  require(resolution >= 8 && resolution <= 512, "export_grid: resolution must be in [8, 512]");
  const body::PartBox bounds = detail::world_bounds(body);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("AVSG: cannot open for writing: " + path);
  os.write("AVSG", 4);
  const uint32_t version = 1, res = static_cast<uint32_t>(resolution);
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&res), 4);
  for (int i = 0; i < 3; ++i) {
    const float v = static_cast<float>(bounds.lo[i]);
    os.write(reinterpret_cast<const char*>(&v), 4);
  }
  for (int i = 0; i < 3; ++i) {
    const float v = static_cast<float>(bounds.hi[i]);
    os.write(reinterpret_cast<const char*>(&v), 4);
  }

  const int r = resolution;
  std::vector<Vec3> slab(static_cast<size_t>(r) * static_cast<size_t>(r));
  std::vector<float> vals(slab.size());
  auto center = [&](int i, int axis) {
    return bounds.lo[axis] + (static_cast<double>(i) + 0.5) * (bounds.hi[axis] - bounds.lo[axis]) /
                                 static_cast<double>(r);
  };
  for (int z = 0; z < r; ++z) {
    size_t idx = 0;
    for (int y = 0; y < r; ++y)
      for (int x = 0; x < r; ++x) slab[idx++] = {center(x, 0), center(y, 1), center(z, 2)};
    const std::vector<double> d = model_sdf(slab);
    require(d.size() == slab.size(), "export_grid: model returned wrong count");
    for (size_t i = 0; i < d.size(); ++i) vals[i] = static_cast<float>(d[i]);
    os.write(reinterpret_cast<const char*>(vals.data()),
             static_cast<std::streamsize>(sizeof(float) * vals.size()));
  }
  if (!os) throw IoError("AVSG: write failed: " + path);
}

struct Grid {
  int resolution = 0;
  std::array<float, 6> bounds{};  // lo xyz, hi xyz
  std::vector<float> values;      // x-fastest
};

inline Grid load_grid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("AVSG: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "AVSG", 4) != 0) throw IoError("AVSG: bad magic");
  uint32_t version = 0, res = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&res), 4);
  if (!is || version != 1) throw IoError("AVSG: unsupported version");
  if (res < 8 || res > 512) throw IoError("AVSG: implausible resolution");
  Grid g;
  g.resolution = static_cast<int>(res);
  is.read(reinterpret_cast<char*>(g.bounds.data()), 6 * 4);
  const size_t n = static_cast<size_t>(res) * res * res;
  g.values.resize(n);
  is.read(reinterpret_cast<char*>(g.values.data()), static_cast<std::streamsize>(4 * n));
  if (!is) throw IoError("AVSG: truncated");
  is.peek();
  if (!is.eof()) throw IoError("AVSG: trailing bytes");
  return g;
}

}  // namespace avsdf::oracle
