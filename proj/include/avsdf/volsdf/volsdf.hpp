#pragma once

// Model core: per-part tiny SDF decoders whose layer weights are composed on
// the fly from a shared base MLP plus per-part banks of shape matrices, with
// the mixing coefficients produced from the part latent by small linear maps
// (neural blend weights). Querying is hybrid: points outside every padded
// part box take the analytic box distance, points inside decode only the
// parts whose boxes contain them, and a conservative analytic clamp keeps
// the candidate restriction from ever reporting more distance than the
// nearest unexamined box allows.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "avsdf/body/body.hpp"
#include "avsdf/body/fk_vars.hpp"
#include "avsdf/core/rng.hpp"
#include "avsdf/core/tape.hpp"
#include "avsdf/core/tensor.hpp"
#include "avsdf/encoder/encoder.hpp"

namespace avsdf::vol {

using body::BodyState;
using body::Vec3;
using num::Shape;
using num::Tape;
using num::Tensor;
using num::Var;

constexpr int kDecoderLayers = 7;
constexpr int kSkipLayer = 2;  // input re-concatenated before the third layer's affine
constexpr int kPeDim = 15;     // x plus two sin/cos frequency levels
constexpr int kMaxRank = 80;

struct DecoderSpec {
  int width = 64;
  int rank = kMaxRank;  // R; 0 degenerates to the plain base MLP
  bool use_pe = true;

  int input_dim() const { return (use_pe ? kPeDim : 3) + enc::kLatentDim; }
  int in_dim(int l) const {
    if (l == 0) return input_dim();
    if (l == kSkipLayer) return width + input_dim();
    return width;
  }
  int out_dim(int l) const { return l == kDecoderLayers - 1 ? 1 : width; }
};

inline void validate_spec(const DecoderSpec& s) {
  require(s.width >= 1 && s.width <= 512, "decoder spec: width out of range");
  require(s.rank >= 0 && s.rank <= kMaxRank, "decoder spec: rank out of range");
}

inline int64_t base_param_count(const DecoderSpec& s) {
  int64_t n = 0;
  for (int l = 0; l < kDecoderLayers; ++l)
    n += static_cast<int64_t>(s.in_dim(l)) * s.out_dim(l) + s.out_dim(l);
  return n;
}

inline int64_t part_param_count(const DecoderSpec& s) {
  if (s.rank == 0) return 0;
  int64_t n = 0;
  for (int l = 0; l < kDecoderLayers; ++l) {
    n += static_cast<int64_t>(s.rank) * s.in_dim(l) * s.out_dim(l);  // shape matrices
    n += static_cast<int64_t>(enc::kLatentDim) * s.rank + s.rank;    // coefficient map
  }
  return n;
}

inline int64_t bank_param_count(const DecoderSpec& s) {
  return base_param_count(s) + body::kNumParts * part_param_count(s);
}

// Shared base layers plus, per part and layer, R shape matrices stacked as
// rows of one [R, in*out] tensor and the latent->coefficient linear map.
struct NbwBank {
  DecoderSpec spec;
  std::vector<Tensor> base_w;  // [in_l, out_l] per layer
  std::vector<Tensor> base_b;  // [out_l] per layer
  struct PartBank {
    std::vector<Tensor> bank;  // [R, in_l*out_l] per layer; absent when R=0
    std::vector<Tensor> a_w;   // [128, R]
    std::vector<Tensor> a_b;   // [R]
  };
  std::vector<PartBank> parts;
};

struct NbwVars {
  DecoderSpec spec;
  std::vector<Var> base_w, base_b;
  struct PartVars {
    std::vector<Var> bank, a_w, a_b;
  };
  std::vector<PartVars> parts;
};

// Base weights Kaiming-uniform, shape matrices at 1e-2 of that so a fresh
// model starts as the base MLP with a small latent-driven refinement, and
// coefficient maps exactly zero so the refinement is off until trained.
inline NbwBank init_bank(Rng& rng, const DecoderSpec& spec = {}) {
  validate_spec(spec);
  NbwBank b;
  b.spec = spec;
  for (int l = 0; l < kDecoderLayers; ++l) {
    b.base_w.push_back(
        enc::detail::kaiming_uniform(rng, spec.in_dim(l), {spec.in_dim(l), spec.out_dim(l)}));
    b.base_b.push_back(Tensor({spec.out_dim(l)}));
  }
  b.parts.resize(body::kNumParts);
  if (spec.rank == 0) return b;
  for (auto& p : b.parts) {
    for (int l = 0; l < kDecoderLayers; ++l) {
      Tensor t = enc::detail::kaiming_uniform(
          rng, spec.in_dim(l),
          {spec.rank, static_cast<int64_t>(spec.in_dim(l)) * spec.out_dim(l)});
      for (int64_t i = 0; i < t.numel(); ++i) t[i] *= 1e-2f;
      p.bank.push_back(std::move(t));
      p.a_w.push_back(Tensor({enc::kLatentDim, spec.rank}));
      p.a_b.push_back(Tensor({spec.rank}));
    }
  }
  return b;
}

template <typename Fn>
void visit_params(NbwBank& b, Fn&& fn) {
  for (int l = 0; l < kDecoderLayers; ++l) {
    fn("dec.w" + std::to_string(l), b.base_w[static_cast<size_t>(l)]);
    fn("dec.b" + std::to_string(l), b.base_b[static_cast<size_t>(l)]);
  }
  if (b.spec.rank == 0) return;
  for (int k = 0; k < body::kNumParts; ++k) {
    auto& p = b.parts[static_cast<size_t>(k)];
    const std::string stem = "nbw.p" + std::to_string(k) + ".";
    for (int l = 0; l < kDecoderLayers; ++l) {
      fn(stem + "bank" + std::to_string(l), p.bank[static_cast<size_t>(l)]);
      fn(stem + "aw" + std::to_string(l), p.a_w[static_cast<size_t>(l)]);
      fn(stem + "ab" + std::to_string(l), p.a_b[static_cast<size_t>(l)]);
    }
  }
}

inline NbwVars bind_bank(Tape& t, NbwBank& b) {
  NbwVars v;
  v.spec = b.spec;
  for (int l = 0; l < kDecoderLayers; ++l) {
    v.base_w.push_back(t.leaf(b.base_w[static_cast<size_t>(l)]));
    v.base_b.push_back(t.leaf(b.base_b[static_cast<size_t>(l)]));
  }
  v.parts.resize(body::kNumParts);
  if (b.spec.rank == 0) return v;
  for (int k = 0; k < body::kNumParts; ++k) {
    auto& p = b.parts[static_cast<size_t>(k)];
    auto& pv = v.parts[static_cast<size_t>(k)];
    for (int l = 0; l < kDecoderLayers; ++l) {
      pv.bank.push_back(t.leaf(p.bank[static_cast<size_t>(l)]));
      pv.a_w.push_back(t.leaf(p.a_w[static_cast<size_t>(l)]));
      pv.a_b.push_back(t.leaf(p.a_b[static_cast<size_t>(l)]));
    }
  }
  return v;
}

inline NbwVars constant_bank(const NbwBank& b) {
  NbwVars v;
  v.spec = b.spec;
  for (int l = 0; l < kDecoderLayers; ++l) {
    v.base_w.push_back(Var(b.base_w[static_cast<size_t>(l)]));
    v.base_b.push_back(Var(b.base_b[static_cast<size_t>(l)]));
  }
  v.parts.resize(body::kNumParts);
  if (b.spec.rank == 0) return v;
  for (int k = 0; k < body::kNumParts; ++k) {
    const auto& p = b.parts[static_cast<size_t>(k)];
    auto& pv = v.parts[static_cast<size_t>(k)];
    for (int l = 0; l < kDecoderLayers; ++l) {
      pv.bank.push_back(Var(p.bank[static_cast<size_t>(l)]));
      pv.a_w.push_back(Var(p.a_w[static_cast<size_t>(l)]));
      pv.a_b.push_back(Var(p.a_b[static_cast<size_t>(l)]));
    }
  }
  return v;
}

// gamma(x) = [x, sin(pi x), cos(pi x), sin(2 pi x), cos(2 pi x)], column
// blocks of 3, so [n,3] -> [n,15]
inline Var positional_encode(const Var& x) {
  require(x.v.rank() == 2 && x.v.dim(1) == 3, "positional_encode: points must be [n,3]");
  constexpr float kPi = 3.14159265358979323846f;
  const Var p1 = num::affine(x, kPi, 0.0f);
  const Var p2 = num::affine(x, 2.0f * kPi, 0.0f);
  Var out = num::concat(x, num::sin(p1), 1);
  out = num::concat(out, num::cos(p1), 1);
  out = num::concat(out, num::sin(p2), 1);
  return num::concat(out, num::cos(p2), 1);
}

// v_k^l = A_k^l(z_k), one [R] vector per layer; empty for a rank-0 bank
inline std::vector<Var> blend_coefficients(const Var& z, const NbwVars& bank, int part) {
  require(z.v.rank() == 2 && z.v.dim(0) == 1 && z.v.dim(1) == enc::kLatentDim,
          "blend_coefficients: latent must be [1,128]");
  require(part >= 0 && part < body::kNumParts, "blend_coefficients: part out of range");
  std::vector<Var> v;
  if (bank.spec.rank == 0) return v;
  const auto& p = bank.parts[static_cast<size_t>(part)];
  for (int l = 0; l < kDecoderLayers; ++l)
    v.push_back(num::reshape(
        num::add(num::matmul(z, p.a_w[static_cast<size_t>(l)]), p.a_b[static_cast<size_t>(l)]),
        {bank.spec.rank}));
  return v;
}

// effective layer weights W^l + sum_r v[r] * W_k^l[r]; the base tensors pass
// through untouched when the bank is rank-0
inline std::vector<Var> compose_weights(const NbwVars& bank, int part,
                                        const std::vector<Var>& coeffs) {
  if (bank.spec.rank == 0) {
    require(coeffs.empty(), "compose_weights: rank-0 bank takes no coefficients");
    return bank.base_w;
  }
  require(static_cast<int>(coeffs.size()) == kDecoderLayers,
          "compose_weights: one coefficient vector per layer");
  const auto& p = bank.parts[static_cast<size_t>(part)];
  std::vector<Var> eff;
  for (int l = 0; l < kDecoderLayers; ++l)
    eff.push_back(num::blend_add(bank.base_w[static_cast<size_t>(l)],
                                 p.bank[static_cast<size_t>(l)], coeffs[static_cast<size_t>(l)]));
  return eff;
}

// MLP over [gamma(x_k), z_k] with the input re-concatenated at the skip
// layer; identity output activation, result flattened to [n]
inline Var decode_sdf(const Var& x_canon, const Var& z, const std::vector<Var>& eff,
                      const NbwVars& bank) {
  require(x_canon.v.rank() == 2 && x_canon.v.dim(1) == 3, "decode_sdf: points must be [n,3]");
  const int64_t n = x_canon.v.dim(0);
  const Var feats = bank.spec.use_pe ? positional_encode(x_canon) : x_canon;
  const Var zrow = num::tile_rows(num::reshape(z, {enc::kLatentDim}), n);
  const Var input = num::concat(feats, zrow, 1);
  Var h = input;
  for (int l = 0; l < kDecoderLayers; ++l) {
    if (l == kSkipLayer) h = num::concat(h, input, 1);
    h = num::add(num::matmul(h, eff[static_cast<size_t>(l)]), bank.base_b[static_cast<size_t>(l)]);
    if (l != kDecoderLayers - 1) h = num::relu(h);
  }
  return num::reshape(h, {n});
}

// single-part convenience: compose for the latent, then decode
inline Var part_sdf(const Var& x_canon, const Var& z, const NbwVars& bank, int part) {
  return decode_sdf(x_canon, z, compose_weights(bank, part, blend_coefficients(z, bank, part)),
                    bank);
}

enum class Branch : uint8_t { kAnalytic, kImplicit };

struct SdfResult {
  double distance = 0.0;
  Branch branch = Branch::kAnalytic;
  int32_t part = -1;  // argmin part; -1 for the analytic branch and the clamp
};

struct QueryOptions {
  bool hybrid = true;   // analytic far field plus candidate gating
  bool full_k = false;  // decode every part for points on the implicit branch
};

struct QueryOut {
  Var d;                       // [n]
  std::vector<Branch> branch;  // per point
  std::vector<int32_t> part;   // argmin part, -1 when analytic or clamped
  int64_t decoded_pairs = 0;   // (point, part) decoder workload
};

namespace detail {

// box SDF through tape ops, for pose-differentiable clamp bounds; mirrors
// PartBox::sdf. Callers only reach this for points outside the box, so the
// sqrt stays away from zero.
inline Var box_sdf_vars(const Var& xc, const body::PartBox& box) {
  const int64_t n = xc.v.dim(0);
  Tensor center({3}), half({3});
  for (int i = 0; i < 3; ++i) {
    center[i] = static_cast<float>(0.5 * (box.lo[i] + box.hi[i]));
    half[i] = static_cast<float>(0.5 * (box.hi[i] - box.lo[i]));
  }
  const Var q = num::sub(num::abs(num::sub(xc, Var(center))), Var(half));
  static const Tensor ones = Tensor::from({3, 1}, {1, 1, 1});
  const Var outside = num::sqrt(num::matmul(num::square(num::relu(q)), Var(ones)));
  Tensor zeros({n});
  const Var inside = num::minimum(num::max_reduce(q, 1).values, zeros);
  return num::add(num::reshape(outside, {n}), inside);
}

inline void check_points(const Tensor& pts) {
  require(pts.rank() == 2 && pts.dim(1) == 3 && pts.dim(0) >= 1, "query: points must be [n,3]");
  for (int64_t i = 0; i < pts.numel(); ++i)
    require(std::isfinite(pts[i]), "query: non-finite point");
}

inline void check_model(const BodyState& body, const Var& latents, const NbwVars& bank) {
  require(body.num_parts == body::kNumParts, "query: body must have the full part set");
  require(!body.boxes.empty(), "query: body has no part boxes");
  require(latents.v.rank() == 2 && latents.v.dim(0) == body::kNumParts &&
              latents.v.dim(1) == enc::kLatentDim,
          "query: latents must be [15,128]");
  require(static_cast<int>(bank.base_w.size()) == kDecoderLayers, "query: malformed bank");
}

// Shared query core. Candidate sets and branches always come from the f64
// body geometry. Canonical decoder inputs and the analytic entries come from
// the f64 transforms when fk is null; with fk they are recorded through the
// tape so gradients reach points and bone transforms as well.
inline QueryOut query_impl(const Tensor& pts, const Var* pts_var, const BodyState& body,
                           const Var& latents, const NbwVars& bank, const QueryOptions& opt,
                           const body::FkVars* fk) {
  check_points(pts);
  check_model(body, latents, bank);
  const int64_t n = pts.dim(0);
  const int K = body::kNumParts;

  std::vector<std::vector<int64_t>> cand(static_cast<size_t>(K)),
      rest(static_cast<size_t>(K));
  std::vector<char> has_cand(static_cast<size_t>(n), 0);
  for (int64_t i = 0; i < n; ++i) {
    const Vec3 x{static_cast<double>(pts[i * 3]), static_cast<double>(pts[i * 3 + 1]),
                 static_cast<double>(pts[i * 3 + 2])};
    for (int k = 0; k < K; ++k) {
      const bool inside =
          body.boxes[static_cast<size_t>(k)].contains(
              body.transforms[static_cast<size_t>(k)].to_canonical(x));
      if (inside) has_cand[static_cast<size_t>(i)] = 1;
      if (!opt.hybrid || inside) cand[static_cast<size_t>(k)].push_back(i);
      else rest[static_cast<size_t>(k)].push_back(i);
    }
  }
  if (opt.hybrid && opt.full_k) {
    // widen candidate sets to every part, but only for points already on the
    // implicit branch; far-field points keep the analytic dispatch
    for (int k = 0; k < K; ++k) {
      cand[static_cast<size_t>(k)].clear();
      rest[static_cast<size_t>(k)].clear();
      for (int64_t i = 0; i < n; ++i) {
        if (has_cand[static_cast<size_t>(i)]) cand[static_cast<size_t>(k)].push_back(i);
        else rest[static_cast<size_t>(k)].push_back(i);
      }
    }
  }

  QueryOut out;
  std::vector<Var> entries;
  std::vector<std::vector<int64_t>> slots;
  std::vector<int32_t> entry_part;  // >=0 decoded part, -1 analytic entry

  auto canonical_rows = [&](const std::vector<int64_t>& ids, int k) -> Var {
    if (fk) {
      const Var rows = num::gather_rows(*pts_var, ids);
      return body::canonicalize_vars(rows, fk->R[static_cast<size_t>(k)],
                                     fk->t[static_cast<size_t>(k)]);
    }
    Tensor xc({static_cast<int64_t>(ids.size()), 3});
    for (size_t j = 0; j < ids.size(); ++j) {
      const int64_t i = ids[j];
      const Vec3 x{static_cast<double>(pts[i * 3]), static_cast<double>(pts[i * 3 + 1]),
                   static_cast<double>(pts[i * 3 + 2])};
      const Vec3 c = body.transforms[static_cast<size_t>(k)].to_canonical(x);
      for (int a = 0; a < 3; ++a) xc[static_cast<int64_t>(j) * 3 + a] = static_cast<float>(c[a]);
    }
    return Var(std::move(xc));
  };

  // decoded candidates, one matrix pass per part
  for (int k = 0; k < K; ++k) {
    const auto& ids = cand[static_cast<size_t>(k)];
    if (ids.empty()) continue;
    const Var z = num::slice(latents, 0, k, 1);
    entries.push_back(part_sdf(canonical_rows(ids, k), z, bank, k));
    slots.push_back(ids);
    entry_part.push_back(static_cast<int32_t>(k));
    out.decoded_pairs += static_cast<int64_t>(ids.size());
  }

  // analytic entries: box distances of the unexamined parts. For implicit
  // points they are the conservative clamp; for far-field points they are
  // the whole answer (their minimum is analytic_box_sdf).
  if (opt.hybrid) {
    for (int k = 0; k < K; ++k) {
      const auto& ids = rest[static_cast<size_t>(k)];
      if (ids.empty()) continue;
      if (fk) {
        entries.push_back(
            box_sdf_vars(canonical_rows(ids, k), body.boxes[static_cast<size_t>(k)]));
      } else {
        Tensor vals({static_cast<int64_t>(ids.size())});
        for (size_t j = 0; j < ids.size(); ++j) {
          const int64_t i = ids[j];
          const Vec3 x{static_cast<double>(pts[i * 3]), static_cast<double>(pts[i * 3 + 1]),
                       static_cast<double>(pts[i * 3 + 2])};
          vals[static_cast<int64_t>(j)] = static_cast<float>(
              body.boxes[static_cast<size_t>(k)].sdf(
                  body.transforms[static_cast<size_t>(k)].to_canonical(x)));
        }
        entries.push_back(Var(std::move(vals)));
      }
      slots.push_back(ids);
      entry_part.push_back(-1);
    }
  }

  auto rm = num::ragged_min(entries, slots, n);
  out.d = rm.values;
  out.branch.resize(static_cast<size_t>(n));
  out.part.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const bool implicit = !opt.hybrid || has_cand[static_cast<size_t>(i)] != 0;
    out.branch[static_cast<size_t>(i)] = implicit ? Branch::kImplicit : Branch::kAnalytic;
    out.part[static_cast<size_t>(i)] =
        implicit ? entry_part[static_cast<size_t>(rm.part[static_cast<size_t>(i)])] : -1;
  }
  return out;
}

}  // namespace detail

// evaluation entry: canonical inputs fixed at their f64 values, gradients
// reach latents and bank only
inline QueryOut query_vars(const Tensor& pts, const BodyState& body, const Var& latents,
                           const NbwVars& bank, const QueryOptions& opt = {}) {
  return detail::query_impl(pts, nullptr, body, latents, bank, opt, nullptr);
}

// pose-differentiable entry: canonicalization and analytic entries recorded
// through the tape transforms in fk, which must describe the same pose the
// body state was built from
inline QueryOut query_vars(const Var& pts, const BodyState& body, const body::FkVars& fk,
                           const Var& latents, const NbwVars& bank, const QueryOptions& opt = {}) {
  return detail::query_impl(pts.v, &pts, body, latents, bank, opt, &fk);
}

inline std::vector<SdfResult> query(const Tensor& pts, const BodyState& body,
                                    const Tensor& latents, const NbwBank& bank,
                                    const QueryOptions& opt = {}) {
  const QueryOut q = query_vars(pts, body, Var(latents), constant_bank(bank), opt);
  std::vector<SdfResult> res(static_cast<size_t>(pts.dim(0)));
  for (size_t i = 0; i < res.size(); ++i) {
    res[i].distance = static_cast<double>(q.d.v[static_cast<int64_t>(i)]);
    res[i].branch = q.branch[i];
    res[i].part = q.part[i];
  }
  return res;
}

struct ImplicitOut {
  double distance = 0.0;
  int32_t part = -1;
};

// single-point implicit evaluation; the caller is responsible for dispatch,
// so a point outside every padded box is a contract violation
inline ImplicitOut implicit_sdf(const Vec3& x, const BodyState& body, const Tensor& latents,
                                const NbwBank& bank, bool full_k = false) {
  bool inside = false;
  for (size_t k = 0; k < body.boxes.size() && !inside; ++k)
    inside = body.boxes[k].contains(body.transforms[k].to_canonical(x));
  require(inside, "implicit_sdf: point outside every padded box, dispatch bug");
  Tensor pts({1, 3});
  for (int a = 0; a < 3; ++a) pts[a] = static_cast<float>(x[a]);
  const std::vector<SdfResult> r =
      query(pts, body, latents, bank, QueryOptions{true, full_k});
  return ImplicitOut{r[0].distance, r[0].part};
}

}  // namespace avsdf::vol
