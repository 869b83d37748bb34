#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "avsdf/core/error.hpp"
#include "avsdf/core/rng.hpp"

namespace avsdf::body {

inline constexpr int kNumParts = 15;
inline constexpr double kDefaultPadding = 0.125;

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

struct Mat3 {
  // row-major
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double operator()(int r, int c) const { return m[static_cast<size_t>(r * 3 + c)]; }
  double& operator()(int r, int c) { return m[static_cast<size_t>(r * 3 + c)]; }

  Vec3 apply(const Vec3& v) const {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
  }
  Vec3 apply_transposed(const Vec3& v) const {
    return {m[0] * v[0] + m[3] * v[1] + m[6] * v[2], m[1] * v[0] + m[4] * v[1] + m[7] * v[2],
            m[2] * v[0] + m[5] * v[1] + m[8] * v[2]};
  }
  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        r(i, j) = (*this)(i, 0) * o(0, j) + (*this)(i, 1) * o(1, j) + (*this)(i, 2) * o(2, j);
    return r;
  }
  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }
};

// guarded Rodrigues: R = I + a K + b K^2 with a = sin(t)/t, b = 2 sin^2(t/2)/t^2;
// the 1e-16 bias keeps t > 0 without disturbing finite rotations
inline Mat3 axis_angle_rotation(const Vec3& w) {
  const double t2 = dot(w, w) + 1e-16;
  const double t = std::sqrt(t2);
  const double a = std::sin(t) / t;
  const double hs = std::sin(0.5 * t);
  const double b = 2.0 * hs * hs / t2;
  const double x = w[0], y = w[1], z = w[2];
  Mat3 r;
  r(0, 0) = 1.0 + b * (-z * z - y * y);
  r(0, 1) = -a * z + b * x * y;
  r(0, 2) = a * y + b * x * z;
  r(1, 0) = a * z + b * x * y;
  r(1, 1) = 1.0 + b * (-z * z - x * x);
  r(1, 2) = -a * x + b * y * z;
  r(2, 0) = -a * y + b * x * z;
  r(2, 1) = a * x + b * y * z;
  r(2, 2) = 1.0 + b * (-y * y - x * x);
  return r;
}

// rigid canonical->world map
struct BoneTransform {
  Mat3 R;
  Vec3 t{0, 0, 0};

  Vec3 to_world(const Vec3& x) const { return R.apply(x) + t; }
  Vec3 to_canonical(const Vec3& x) const { return R.apply_transposed(x - t); }
  BoneTransform inverse() const {
    BoneTransform inv;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) inv.R(i, j) = R(j, i);
    inv.t = -1.0 * R.apply_transposed(t);
    return inv;
  }
};

inline Vec3 canonicalize(const Vec3& x, const BoneTransform& g) { return g.to_canonical(x); }

// capsule in the part's canonical frame
struct Capsule {
  Vec3 a{0, 0, 0}, b{0, 0, 0};
  double radius = 0.0;

  double sdf(const Vec3& p) const {
    const Vec3 ab = b - a;
    const double denom = dot(ab, ab);
    double h = denom > 0.0 ? dot(p - a, ab) / denom : 0.0;
    h = h < 0.0 ? 0.0 : (h > 1.0 ? 1.0 : h);
    return norm(p - (a + h * ab)) - radius;
  }
};

struct PartBox {
  Vec3 lo{0, 0, 0}, hi{0, 0, 0};

  bool contains(const Vec3& p) const {
    return p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1] && p[2] >= lo[2] &&
           p[2] <= hi[2];
  }
  // negative inside, exact Euclidean outside
  double sdf(const Vec3& p) const {
    double out2 = 0.0, inside = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) {
      const double c = 0.5 * (lo[i] + hi[i]), h = 0.5 * (hi[i] - lo[i]);
      const double q = std::fabs(p[i] - c) - h;
      if (q > 0.0) out2 += q * q;
      if (q > inside) inside = q;
    }
    return std::sqrt(out2) + (inside < 0.0 ? inside : 0.0);
  }
};

// fixed 15-part kinematic tree; the capsule runs from the joint origin along
// `axis`, and a child joint sits at lateral + attach_frac * (scaled parent
// length) * parent axis in the parent's frame
struct RestPart {
  const char* name;
  int parent;
  Vec3 axis;
  double length;
  double radius;
  Vec3 lateral;
  double attach_frac;
};

inline const std::array<RestPart, kNumParts>& rest_parts() {
  static const std::array<RestPart, kNumParts> parts = {{
      {"pelvis", -1, {0, 1, 0}, 0.16, 0.110, {0, 0, 0}, 0.0},
      {"spine", 0, {0, 1, 0}, 0.34, 0.100, {0, 0, 0}, 1.0},
      {"head", 1, {0, 1, 0}, 0.16, 0.075, {0, 0.02, 0}, 1.0},
      {"thigh_l", 0, {0, -1, 0}, 0.40, 0.065, {0.10, 0, 0}, 0.0},
      {"calf_l", 3, {0, -1, 0}, 0.38, 0.050, {0, 0, 0}, 1.0},
      {"foot_l", 4, {0, 0, 1}, 0.16, 0.040, {0, 0, 0}, 1.0},
      {"thigh_r", 0, {0, -1, 0}, 0.40, 0.065, {-0.10, 0, 0}, 0.0},
      {"calf_r", 6, {0, -1, 0}, 0.38, 0.050, {0, 0, 0}, 1.0},
      {"foot_r", 7, {0, 0, 1}, 0.16, 0.040, {0, 0, 0}, 1.0},
      {"uarm_l", 1, {1, 0, 0}, 0.27, 0.045, {0.17, -0.02, 0}, 1.0},
      {"forearm_l", 9, {1, 0, 0}, 0.25, 0.040, {0, 0, 0}, 1.0},
      {"hand_l", 10, {1, 0, 0}, 0.13, 0.035, {0, 0, 0}, 1.0},
      {"uarm_r", 1, {-1, 0, 0}, 0.27, 0.045, {-0.17, -0.02, 0}, 1.0},
      {"forearm_r", 12, {-1, 0, 0}, 0.25, 0.040, {0, 0, 0}, 1.0},
      {"hand_r", 13, {-1, 0, 0}, 0.13, 0.035, {0, 0, 0}, 1.0},
  }};
  return parts;
}

struct PartScale {
  double length = 1.0;
  double radius = 1.0;
};

// beta -> 30 scales through a fixed seeded basis, affine-squashed so each
// scale lands in [0.5, 1.5] for any clamped beta
namespace detail {

struct ShapeBasis {
  // rows pre-divided by 3 * L1 norm, so dot(row, beta) is in [-1, 1]
  std::array<std::array<double, 10>, 2 * kNumParts> rows;
};

inline const ShapeBasis& shape_basis() {
  static const ShapeBasis basis = [] {
    ShapeBasis b;
    Rng rng(42);
    for (auto& row : b.rows) {
      double l1 = 0.0;
      for (double& v : row) {
        v = rng.normal();
        l1 += std::fabs(v);
      }
      for (double& v : row) v /= 3.0 * l1;
    }
    return b;
  }();
  return basis;
}

}  // namespace detail

struct ShapeParams {
  std::array<double, 10> beta{};

  ShapeParams() = default;
  explicit ShapeParams(const std::vector<double>& b) {
    require(b.size() == 10, "ShapeParams: beta must have 10 coefficients");
    for (size_t i = 0; i < 10; ++i) {
      require(std::isfinite(b[i]), "ShapeParams: non-finite beta");
      beta[i] = b[i] < -3.0 ? -3.0 : (b[i] > 3.0 ? 3.0 : b[i]);
    }
  }

  std::array<PartScale, kNumParts> scales() const {
    const auto& basis = detail::shape_basis();
    std::array<PartScale, kNumParts> s;
    for (int k = 0; k < kNumParts; ++k) {
      double len = 0.0, rad = 0.0;
      for (int j = 0; j < 10; ++j) {
        len += basis.rows[static_cast<size_t>(2 * k)][static_cast<size_t>(j)] * beta[static_cast<size_t>(j)];
        rad += basis.rows[static_cast<size_t>(2 * k + 1)][static_cast<size_t>(j)] * beta[static_cast<size_t>(j)];
      }
      s[static_cast<size_t>(k)] = PartScale{1.0 + 0.5 * len, 1.0 + 0.5 * rad};
    }
    return s;
  }
};

struct PoseParams {
  Vec3 root_translation{0, 0, 0};
  std::array<double, 3 * kNumParts> joint_rotations{};

  Vec3 rotation(int part) const {
    return {joint_rotations[static_cast<size_t>(3 * part)],
            joint_rotations[static_cast<size_t>(3 * part + 1)],
            joint_rotations[static_cast<size_t>(3 * part + 2)]};
  }
};

struct BodyState {
  int num_parts = 0;
  std::vector<BoneTransform> transforms;
  std::vector<Capsule> capsules;  // canonical frame; empty for external bodies
  std::vector<PartBox> boxes;     // canonical frame, padded
  std::vector<std::pair<int, int>> adjacency;

  bool adjacent(int i, int j) const {
    for (const auto& [a, b] : adjacency)
      if ((a == i && b == j) || (a == j && b == i)) return true;
    return false;
  }
};

inline std::vector<std::pair<int, int>> tree_adjacency() {
  std::vector<std::pair<int, int>> adj;
  const auto& parts = rest_parts();
  for (int k = 0; k < kNumParts; ++k)
    if (parts[static_cast<size_t>(k)].parent >= 0)
      adj.emplace_back(parts[static_cast<size_t>(k)].parent, k);
  return adj;
}

// tight canonical AABB with each half-extent inflated by padding * extent
inline PartBox padded_box(const Capsule& cap, double padding) {
  PartBox b;
  for (int i = 0; i < 3; ++i) {
    const double lo = std::min(cap.a[i], cap.b[i]) - cap.radius;
    const double hi = std::max(cap.a[i], cap.b[i]) + cap.radius;
    const double pad = padding * (hi - lo);
    b.lo[i] = lo - pad;
    b.hi[i] = hi + pad;
  }
  return b;
}

inline std::vector<PartBox> compute_part_boxes(const BodyState& body, double padding) {
  require(padding >= 0.0, "compute_part_boxes: padding must be >= 0");
  require(!body.capsules.empty(), "compute_part_boxes: body has no capsule geometry");
  std::vector<PartBox> boxes;
  boxes.reserve(body.capsules.size());
  for (const Capsule& c : body.capsules) boxes.push_back(padded_box(c, padding));
  return boxes;
}

inline BodyState forward_kinematics(const ShapeParams& beta, const PoseParams& theta,
                                    double padding = kDefaultPadding) {
  for (double v : theta.joint_rotations)
    require(std::isfinite(v), "forward_kinematics: non-finite joint rotation");
  for (double v : theta.root_translation)
    require(std::isfinite(v), "forward_kinematics: non-finite root translation");
  require(padding >= 0.0, "forward_kinematics: padding must be >= 0");

  const auto& parts = rest_parts();
  const auto s = beta.scales();

  BodyState body;
  body.num_parts = kNumParts;
  body.transforms.resize(kNumParts);
  body.capsules.resize(kNumParts);
  body.adjacency = tree_adjacency();

  for (int k = 0; k < kNumParts; ++k) {
    const RestPart& p = parts[static_cast<size_t>(k)];
    const Mat3 local = axis_angle_rotation(theta.rotation(k));
    BoneTransform& g = body.transforms[static_cast<size_t>(k)];
    if (p.parent < 0) {
      g.R = local;
      g.t = theta.root_translation;
    } else {
      const BoneTransform& gp = body.transforms[static_cast<size_t>(p.parent)];
      const RestPart& pp = parts[static_cast<size_t>(p.parent)];
      const double parent_len = s[static_cast<size_t>(p.parent)].length * pp.length;
      const Vec3 offset = p.lateral + (p.attach_frac * parent_len) * pp.axis;
      g.R = gp.R * local;
      g.t = gp.R.apply(offset) + gp.t;
    }
    Capsule& c = body.capsules[static_cast<size_t>(k)];
    c.a = {0, 0, 0};
    c.b = (s[static_cast<size_t>(k)].length * p.length) * p.axis;
    c.radius = s[static_cast<size_t>(k)].radius * p.radius;
  }
  body.boxes = compute_part_boxes(body, padding);
  return body;
}

// min over parts of the per-box SDF in each part's canonical frame; strictly
// positive iff x lies outside every padded box (negative means inside some box)
inline double analytic_box_sdf(const Vec3& x, const BodyState& body) {
  double best = std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < body.boxes.size(); ++k) {
    const double d = body.boxes[k].sdf(body.transforms[k].to_canonical(x));
    if (d < best) best = d;
  }
  return best;
}

// world-space capsule of part k
inline Capsule world_capsule(const BodyState& body, int k) {
  const Capsule& c = body.capsules[static_cast<size_t>(k)];
  const BoneTransform& g = body.transforms[static_cast<size_t>(k)];
  return Capsule{g.to_world(c.a), g.to_world(c.b), c.radius};
}

}  // namespace avsdf::body
