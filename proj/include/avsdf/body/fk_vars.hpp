#pragma once

// Tape twin of forward_kinematics: the same tree walk recorded through the
// autodiff ops, so poses (and shapes) can be optimized by gradient descent.
// Translations are carried as [1,3] rows; points transform as row vectors.

#include <vector>

#include "avsdf/body/body.hpp"
#include "avsdf/core/tape.hpp"

namespace avsdf::body {

using num::Tape;
using num::Tensor;
using num::Var;

struct FkVars {
  Var scales;               // [30], (length, radius) pairs per part
  std::vector<Var> R;       // [3,3] canonical -> world
  std::vector<Var> t;       // [1,3]
  std::vector<Var> cap_a;   // [1,3] world endpoints
  std::vector<Var> cap_b;   // [1,3]
  std::vector<Var> radius;  // [1]
};

namespace detail {

inline Tensor shape_basis_tensor() {
  const auto& basis = shape_basis();
  Tensor bt({10, 2 * kNumParts});
  for (int i = 0; i < 2 * kNumParts; ++i)
    for (int j = 0; j < 10; ++j)
      bt.at(j, i) = static_cast<float>(basis.rows[static_cast<size_t>(i)][static_cast<size_t>(j)]);
  return bt;
}

inline Var rotation_vars(const Var& w) {
  Var t2 = num::affine(num::sum(num::mul(w, w)), 1.0f, 1e-16f);
  Var th = num::sqrt(t2);
  Var a = num::div(num::sin(th), th);
  Var hs = num::sin(num::affine(th, 0.5f, 0.0f));
  Var b = num::div(num::affine(num::mul(hs, hs), 2.0f, 0.0f), t2);
  Var k = num::skew3(w);
  Var k2 = num::matmul(k, k);
  static const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  return num::add(num::add(Var(eye), num::smul(a, k)), num::smul(b, k2));
}

}  // namespace detail

inline FkVars fk_vars(Tape& tape, const Var& beta, const Var& root_translation, const Var& joints) {
  require(beta.v.numel() == 10, "fk_vars: beta must have 10 coefficients");
  require(root_translation.v.numel() == 3, "fk_vars: root translation must be a 3-vector");
  require(joints.v.numel() == 3 * kNumParts, "fk_vars: joints must hold 3 values per part");
  (void)tape;

  static const Tensor basis = detail::shape_basis_tensor();
  const auto& parts = rest_parts();

  FkVars fk;
  fk.scales = num::reshape(
      num::affine(num::matmul(num::reshape(beta, {1, 10}), Var(basis)), 0.5f, 1.0f),
      {2 * kNumParts});
  fk.R.resize(kNumParts);
  fk.t.resize(kNumParts);
  fk.cap_a.resize(kNumParts);
  fk.cap_b.resize(kNumParts);
  fk.radius.resize(kNumParts);

  for (int k = 0; k < kNumParts; ++k) {
    const RestPart& p = parts[static_cast<size_t>(k)];
    Var local = detail::rotation_vars(num::slice(joints, 0, 3 * k, 3));
    if (p.parent < 0) {
      fk.R[static_cast<size_t>(k)] = local;
      fk.t[static_cast<size_t>(k)] = num::reshape(root_translation, {1, 3});
    } else {
      const auto pi = static_cast<size_t>(p.parent);
      const RestPart& pp = parts[pi];
      Tensor lat = Tensor::from({1, 3}, {static_cast<float>(p.lateral[0]),
                                         static_cast<float>(p.lateral[1]),
                                         static_cast<float>(p.lateral[2])});
      Tensor along = Tensor::from({1, 3}, {static_cast<float>(p.attach_frac * pp.length * pp.axis[0]),
                                           static_cast<float>(p.attach_frac * pp.length * pp.axis[1]),
                                           static_cast<float>(p.attach_frac * pp.length * pp.axis[2])});
      Var offset = num::add(Var(lat), num::smul(num::slice(fk.scales, 0, 2 * p.parent, 1), Var(along)));
      fk.R[static_cast<size_t>(k)] = num::matmul(fk.R[pi], local);
      fk.t[static_cast<size_t>(k)] =
          num::add(num::matmul(offset, num::transpose(fk.R[pi])), fk.t[pi]);
    }
    Tensor axis_len = Tensor::from({1, 3}, {static_cast<float>(p.length * p.axis[0]),
                                            static_cast<float>(p.length * p.axis[1]),
                                            static_cast<float>(p.length * p.axis[2])});
    Var b_local = num::smul(num::slice(fk.scales, 0, 2 * k, 1), Var(axis_len));
    fk.cap_a[static_cast<size_t>(k)] = fk.t[static_cast<size_t>(k)];
    fk.cap_b[static_cast<size_t>(k)] =
        num::add(num::matmul(b_local, num::transpose(fk.R[static_cast<size_t>(k)])),
                 fk.t[static_cast<size_t>(k)]);
    fk.radius[static_cast<size_t>(k)] =
        num::smul(num::slice(fk.scales, 0, 2 * k + 1, 1), Var(Tensor::scalar(static_cast<float>(p.radius))));
  }
  return fk;
}

// x_k = (x - t) R for row-vector points [N,3]
inline Var canonicalize_vars(const Var& points, const Var& rotation, const Var& translation) {
  require(points.v.rank() == 2 && points.v.dim(1) == 3, "canonicalize_vars: points must be [N,3]");
  Var t3 = translation.v.rank() == 2 ? num::reshape(translation, {3}) : translation;
  return num::matmul(num::sub(points, t3), rotation);
}

}  // namespace avsdf::body
