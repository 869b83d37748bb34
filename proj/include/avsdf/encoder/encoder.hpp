#pragma once

// Shared PointNet over canonicalized part clouds: 3->128 input linear, four
// residual blocks, one global max-pool, 128->128 output head. One weight set
// serves all parts.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "avsdf/body/body.hpp"
#include "avsdf/core/error.hpp"
#include "avsdf/core/rng.hpp"
#include "avsdf/core/tape.hpp"
#include "avsdf/core/tensor.hpp"

namespace avsdf::enc {

using num::Tape;
using num::Tensor;
using num::Var;

inline constexpr int kLatentDim = 128;
inline constexpr int kNumBlocks = 4;

struct EncoderWeights {
  struct Block {
    Tensor w1, b1, w2, b2;
  };
  Tensor w_in, b_in;
  std::array<Block, kNumBlocks> blocks;
  Tensor w_out, b_out;
};

inline constexpr int64_t encoder_param_count() {
  constexpr int64_t d = kLatentDim;
  return (3 * d + d) + kNumBlocks * 2 * (d * d + d) + (d * d + d);
}

namespace detail {

inline Tensor kaiming_uniform(Rng& rng, int64_t fan_in, num::Shape shape) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace detail

inline EncoderWeights init_encoder(Rng& rng) {
  EncoderWeights w;
  w.w_in = detail::kaiming_uniform(rng, 3, {3, kLatentDim});
  w.b_in = Tensor({kLatentDim});
  for (auto& blk : w.blocks) {
    blk.w1 = detail::kaiming_uniform(rng, kLatentDim, {kLatentDim, kLatentDim});
    blk.b1 = Tensor({kLatentDim});
    blk.w2 = detail::kaiming_uniform(rng, kLatentDim, {kLatentDim, kLatentDim});
    blk.b2 = Tensor({kLatentDim});
  }
  w.w_out = detail::kaiming_uniform(rng, kLatentDim, {kLatentDim, kLatentDim});
  w.b_out = Tensor({kLatentDim});
  return w;
}

// stable name order for checkpoints and the optimizer registry
template <class F>
void visit_params(EncoderWeights& w, F&& f) {
  f("enc.w_in", w.w_in);
  f("enc.b_in", w.b_in);
  for (int i = 0; i < kNumBlocks; ++i) {
    const std::string p = "enc.block" + std::to_string(i) + ".";
    f(p + "w1", w.blocks[static_cast<size_t>(i)].w1);
    f(p + "b1", w.blocks[static_cast<size_t>(i)].b1);
    f(p + "w2", w.blocks[static_cast<size_t>(i)].w2);
    f(p + "b2", w.blocks[static_cast<size_t>(i)].b2);
  }
  f("enc.w_out", w.w_out);
  f("enc.b_out", w.b_out);
}

struct EncoderVars {
  struct Block {
    Var w1, b1, w2, b2;
  };
  Var w_in, b_in;
  std::array<Block, kNumBlocks> blocks;
  Var w_out, b_out;
};

// leaves on a tape: gradients flow into the weights
inline EncoderVars bind_encoder(Tape& t, const EncoderWeights& w) {
  EncoderVars v;
  v.w_in = t.leaf(w.w_in);
  v.b_in = t.leaf(w.b_in);
  for (int i = 0; i < kNumBlocks; ++i) {
    v.blocks[static_cast<size_t>(i)].w1 = t.leaf(w.blocks[static_cast<size_t>(i)].w1);
    v.blocks[static_cast<size_t>(i)].b1 = t.leaf(w.blocks[static_cast<size_t>(i)].b1);
    v.blocks[static_cast<size_t>(i)].w2 = t.leaf(w.blocks[static_cast<size_t>(i)].w2);
    v.blocks[static_cast<size_t>(i)].b2 = t.leaf(w.blocks[static_cast<size_t>(i)].b2);
  }
  v.w_out = t.leaf(w.w_out);
  v.b_out = t.leaf(w.b_out);
  return v;
}

// frozen weights: constants, no gradient bookkeeping
inline EncoderVars constant_encoder(const EncoderWeights& w) {
  EncoderVars v;
  v.w_in = Var(w.w_in);
  v.b_in = Var(w.b_in);
  for (int i = 0; i < kNumBlocks; ++i) {
    v.blocks[static_cast<size_t>(i)].w1 = Var(w.blocks[static_cast<size_t>(i)].w1);
    v.blocks[static_cast<size_t>(i)].b1 = Var(w.blocks[static_cast<size_t>(i)].b1);
    v.blocks[static_cast<size_t>(i)].w2 = Var(w.blocks[static_cast<size_t>(i)].w2);
    v.blocks[static_cast<size_t>(i)].b2 = Var(w.blocks[static_cast<size_t>(i)].b2);
  }
  v.w_out = Var(w.w_out);
  v.b_out = Var(w.b_out);
  return v;
}

// per-point feature stack, [n,3] -> [n,128]; rows never interact, so batched
// and per-part forwards agree bit for bit
inline Var point_features(const Var& pts, const EncoderVars& w) {
  Var h = num::add(num::matmul(pts, w.w_in), w.b_in);
  for (const auto& blk : w.blocks) {
    Var u = num::relu(num::add(num::matmul(h, blk.w1), blk.b1));
    u = num::add(num::matmul(u, blk.w2), blk.b2);
    h = num::relu(num::add(h, u));
  }
  return h;
}

namespace detail {

inline void check_cloud(const Tensor& c) {
  require(c.rank() == 2 && c.dim(1) == 3 && c.dim(0) >= 1, "encoder: cloud must be [n>=1, 3]");
  require(c.all_finite(), "encoder: non-finite input point");
}

}  // namespace detail

// z_k as a [1,128] row
inline Var encode_part(const Var& cloud, const EncoderVars& w) {
  detail::check_cloud(cloud.v);
  const Var pooled = num::max_reduce(point_features(cloud, w), 0).values;
  return num::add(num::matmul(num::reshape(pooled, {1, kLatentDim}), w.w_out), w.b_out);
}

// all parts as one stacked forward, returns [15,128] with row k = z_k
inline Var encode_body(const std::vector<Var>& clouds, const EncoderVars& w) {
  require(static_cast<int>(clouds.size()) == body::kNumParts,
          "encode_body: need one cloud per part");
  for (const Var& c : clouds) detail::check_cloud(c.v);

  Var all = clouds[0];
  for (size_t k = 1; k < clouds.size(); ++k) all = num::concat(all, clouds[k], 0);
  const Var feats = point_features(all, w);

  Var pooled;
  int64_t row = 0;
  for (size_t k = 0; k < clouds.size(); ++k) {
    const int64_t n = clouds[k].v.dim(0);
    const Var part = num::max_reduce(num::slice(feats, 0, row, n), 0).values;
    const Var as_row = num::reshape(part, {1, kLatentDim});
    pooled = k == 0 ? as_row : num::concat(pooled, as_row, 0);
    row += n;
  }
  return num::add(num::matmul(pooled, w.w_out), w.b_out);
}

}  // namespace avsdf::enc
