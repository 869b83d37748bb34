#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "avsdf/core/error.hpp"
#include "avsdf/core/tape.hpp"
#include "avsdf/core/tensor.hpp"

namespace avsdf::num {

struct Adam {
  float lr = 1e-4f;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct Moments {
  Tensor m, v;
};

inline Moments make_moments(const Tensor& p) { return Moments{Tensor(p.shape()), Tensor(p.shape())}; }

namespace detail {

struct AdamScalars {
  double b1, b2, c1, c2, alpha, vcorr, eps;
};

inline AdamScalars adam_scalars(int64_t t, const Adam& a) {
  return AdamScalars{a.beta1,
                     a.beta2,
                     1.0 - a.beta1,
                     1.0 - a.beta2,
                     static_cast<double>(a.lr) / (1.0 - std::pow(a.beta1, static_cast<double>(t))),
                     1.0 - std::pow(a.beta2, static_cast<double>(t)),
                     a.eps};
}

// per-element math in f64 so a fresh first step lands within storage rounding
// of -lr; state and parameters stay f32
inline void adam_element(float& p, float g, float& m, float& v, const AdamScalars& s) {
  const double gd = static_cast<double>(g);
  const double md = s.b1 * static_cast<double>(m) + s.c1 * gd;
  const double vd = s.b2 * static_cast<double>(v) + s.c2 * gd * gd;
  m = static_cast<float>(md);
  v = static_cast<float>(vd);
  p = static_cast<float>(static_cast<double>(p) -
                         s.alpha * md / (std::sqrt(vd / s.vcorr) + s.eps));
}

}  // namespace detail

// One bias-corrected update; t is the 1-based step count including this update.
inline void adam_step(Tensor& p, const Tensor& g, Moments& mo, int64_t t, const Adam& a) {
  check_same_shape(p, g, "adam_step");
  check_same_shape(p, mo.m, "adam_step moments");
  const auto s = detail::adam_scalars(t, a);
  float* pp = p.data();
  float* mp = mo.m.data();
  float* vp = mo.v.data();
  const float* gp = g.data();
  const int64_t n = p.numel();
  for (int64_t i = 0; i < n; ++i) detail::adam_element(pp[i], gp[i], mp[i], vp[i], s);
}

// Same update where the gradient exists only as factored terms
// g[r, j] = sum_t coeff_t[r] * dmat_t[j]. Each gradient row is rebuilt into a
// small f32 scratch buffer (bit-identical to the dense tape gradient) so the
// bank, moments and parameter stream through memory exactly once; this is
// what keeps large-R training off the dense bank-gradient path.
inline void adam_step_factored(Tensor& p, const std::vector<FactoredTerm>& terms, Moments& mo,
                               int64_t t, const Adam& a, std::vector<float>& scratch) {
  check_same_shape(p, mo.m, "adam_step_factored moments");
  require(p.rank() == 2, "adam_step_factored: bank must be [R, W]");
  const int64_t r = p.dim(0), w = p.dim(1);
  for (const FactoredTerm& ft : terms) {
    require(ft.coeff.numel() == r, "adam_step_factored: coeff size mismatch");
    require(ft.dmat.numel() == w, "adam_step_factored: dmat size mismatch");
  }
  if (static_cast<int64_t>(scratch.size()) < w) scratch.assign(static_cast<size_t>(w), 0.0f);
  const auto s = detail::adam_scalars(t, a);
  for (int64_t i = 0; i < r; ++i) {
    float* grow = scratch.data();
    for (int64_t j = 0; j < w; ++j) grow[j] = 0.0f;
    for (const FactoredTerm& ft : terms) {
      const float c = ft.coeff[i];
      const float* dm = ft.dmat.data();
      for (int64_t j = 0; j < w; ++j) grow[j] += c * dm[j];
    }
    float* pp = p.data() + i * w;
    float* mp = mo.m.data() + i * w;
    float* vp = mo.v.data() + i * w;
    for (int64_t j = 0; j < w; ++j) detail::adam_element(pp[j], grow[j], mp[j], vp[j], s);
  }
}

}  // namespace avsdf::num
