#pragma once

// Trainable bundle: the shared part encoder plus the blend-weight decoder
// bank, with one flat, stably ordered parameter walk shared by the optimizer
// registry and the checkpoint manifest.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "avsdf/body/body.hpp"
#include "avsdf/core/error.hpp"
#include "avsdf/core/rng.hpp"
#include "avsdf/core/tape.hpp"
#include "avsdf/core/tensor.hpp"
#include "avsdf/encoder/encoder.hpp"
#include "avsdf/volsdf/volsdf.hpp"

namespace avsdf::train {

using num::Tape;
using num::Tensor;
using num::Var;

struct TrainConfig {
  int batch_size = 8;
  double lr_start = 1e-4;
  double lr_end = 1e-5;
  int64_t total_steps = 50000;
  uint64_t seed = 0;
  int rank = vol::kMaxRank;
  int width = 64;
  bool use_gamma = true;
  double padding = body::kDefaultPadding;
  int points_per_part = 1000;     // encoder cloud size, resampled every step
  double sign_sharpness = 0.005;  // tau_s, meters

  // supervision draw per part and step, and the pose law for random bodies:
  // joints uniform per axis-angle component, the root over its own range
  int uniform_per_part = 256;
  int near_per_part = 256;
  double near_sigma = 0.1;
  double joint_range = 0.9;
  double root_range = 3.14159265358979323846;

  bool operator==(const TrainConfig&) const = default;
};

inline vol::DecoderSpec decoder_spec(const TrainConfig& c) {
  return vol::DecoderSpec{c.width, c.rank, c.use_gamma};
}

inline void validate_config(const TrainConfig& c) {
  require(c.batch_size >= 1, "config: batch_size must be >= 1");
  require(c.lr_start > 0.0 && c.lr_end > 0.0, "config: learning rates must be positive");
  require(c.lr_end <= c.lr_start, "config: lr_end must not exceed lr_start");
  require(c.total_steps >= 1, "config: total_steps must be >= 1");
  vol::validate_spec(decoder_spec(c));
  require(c.padding >= 0.0 && std::isfinite(c.padding), "config: padding must be >= 0");
  require(c.points_per_part >= 1, "config: points_per_part must be >= 1");
  require(c.sign_sharpness > 0.0, "config: sign_sharpness must be positive");
  require(c.uniform_per_part >= 0 && c.near_per_part >= 0,
          "config: sample counts must be >= 0");
  require(c.uniform_per_part + c.near_per_part >= 1,
          "config: at least one supervision point per part");
  require(c.near_sigma > 0.0, "config: near_sigma must be positive");
  require(c.joint_range >= 0.0 && c.root_range >= 0.0, "config: pose ranges must be >= 0");
}

struct Model {
  enc::EncoderWeights encoder;
  vol::NbwBank bank;
};

template <class F>
void visit_params(Model& m, F&& f) {
  enc::visit_params(m.encoder, f);
  vol::visit_params(m.bank, f);
}

template <class F>
void visit_params(const Model& m, F&& f) {
  visit_params(const_cast<Model&>(m),
               [&](const std::string& n, Tensor& t) { f(n, static_cast<const Tensor&>(t)); });
}

inline int64_t model_param_count(const TrainConfig& c) {
  return enc::encoder_param_count() + vol::bank_param_count(decoder_spec(c));
}

// substream roots under the run seed; training steps salt with (step, slot)
namespace lane {
inline constexpr uint64_t kEncoderInit = 0xE1;
inline constexpr uint64_t kBankInit = 0xB2;
inline constexpr uint64_t kStep = 0x51;
inline constexpr uint64_t kEvalClouds = 0xEC;
inline constexpr uint64_t kEvalPoints = 0xE9;
inline constexpr uint64_t kValidation = 0x7A;
inline constexpr uint64_t kPool = 0x90;
}  // namespace lane

// Fresh weights. The encoder and bank streams are derived independently, and
// init_bank draws the shared base layers before any per-part bank, so models
// that differ only in rank start from the same effective decoder.
inline Model init_model(const TrainConfig& c) {
  validate_config(c);
  Model m;
  Rng erng(Rng::derive(c.seed, lane::kEncoderInit));
  m.encoder = enc::init_encoder(erng);
  Rng brng(Rng::derive(c.seed, lane::kBankInit));
  m.bank = vol::init_bank(brng, decoder_spec(c));
  return m;
}

// correctly shaped zero tensors, for loaders that overwrite every value
inline Model model_shell(const TrainConfig& c) {
  validate_config(c);
  const vol::DecoderSpec spec = decoder_spec(c);
  Model m;
  m.encoder.w_in = Tensor({3, enc::kLatentDim});
  m.encoder.b_in = Tensor({enc::kLatentDim});
  for (auto& blk : m.encoder.blocks) {
    blk.w1 = Tensor({enc::kLatentDim, enc::kLatentDim});
    blk.b1 = Tensor({enc::kLatentDim});
    blk.w2 = Tensor({enc::kLatentDim, enc::kLatentDim});
    blk.b2 = Tensor({enc::kLatentDim});
  }
  m.encoder.w_out = Tensor({enc::kLatentDim, enc::kLatentDim});
  m.encoder.b_out = Tensor({enc::kLatentDim});

  m.bank.spec = spec;
  for (int l = 0; l < vol::kDecoderLayers; ++l) {
    m.bank.base_w.push_back(Tensor({spec.in_dim(l), spec.out_dim(l)}));
    m.bank.base_b.push_back(Tensor({spec.out_dim(l)}));
  }
  m.bank.parts.resize(body::kNumParts);
  if (spec.rank == 0) return m;
  for (auto& p : m.bank.parts) {
    for (int l = 0; l < vol::kDecoderLayers; ++l) {
      p.bank.push_back(
          Tensor({spec.rank, static_cast<int64_t>(spec.in_dim(l)) * spec.out_dim(l)}));
      p.a_w.push_back(Tensor({enc::kLatentDim, spec.rank}));
      p.a_b.push_back(Tensor({spec.rank}));
    }
  }
  return m;
}

inline std::vector<std::pair<std::string, Tensor*>> param_list(Model& m) {
  std::vector<std::pair<std::string, Tensor*>> out;
  visit_params(m, [&](const std::string& n, Tensor& t) { out.emplace_back(n, &t); });
  return out;
}

inline Model clone_model(const TrainConfig& c, const Model& src) {
  Model dst = model_shell(c);
  auto d = param_list(dst);
  auto s = param_list(const_cast<Model&>(src));
  require(d.size() == s.size(), "clone_model: parameter walk mismatch");
  for (size_t i = 0; i < d.size(); ++i) {
    require(d[i].first == s[i].first && d[i].second->same_shape(*s[i].second),
            "clone_model: source does not match the config architecture");
    *d[i].second = s[i].second->clone();
  }
  return dst;
}

struct ModelVars {
  enc::EncoderVars encoder;
  vol::NbwVars bank;
};

// leaves on a tape; with factored_bank the big [R, in*out] bank tensors keep
// their gradients as blend_add factor lists instead of dense buffers
inline ModelVars bind_model(Tape& t, Model& m, bool factored_bank) {
  ModelVars v{enc::bind_encoder(t, m.encoder), vol::bind_bank(t, m.bank)};
  if (factored_bank && m.bank.spec.rank > 0)
    for (auto& p : v.bank.parts)
      for (const Var& b : p.bank) t.mark_factored(b);
  return v;
}

// same names and order as visit_params over the weights
template <class F>
void visit_vars(ModelVars& v, F&& f) {
  f("enc.w_in", v.encoder.w_in);
  f("enc.b_in", v.encoder.b_in);
  for (int i = 0; i < enc::kNumBlocks; ++i) {
    const std::string p = "enc.block" + std::to_string(i) + ".";
    auto& blk = v.encoder.blocks[static_cast<size_t>(i)];
    f(p + "w1", blk.w1);
    f(p + "b1", blk.b1);
    f(p + "w2", blk.w2);
    f(p + "b2", blk.b2);
  }
  f("enc.w_out", v.encoder.w_out);
  f("enc.b_out", v.encoder.b_out);
  for (int l = 0; l < vol::kDecoderLayers; ++l) {
    f("dec.w" + std::to_string(l), v.bank.base_w[static_cast<size_t>(l)]);
    f("dec.b" + std::to_string(l), v.bank.base_b[static_cast<size_t>(l)]);
  }
  if (v.bank.spec.rank == 0) return;
  for (int k = 0; k < body::kNumParts; ++k) {
    auto& p = v.bank.parts[static_cast<size_t>(k)];
    const std::string stem = "nbw.p" + std::to_string(k) + ".";
    for (int l = 0; l < vol::kDecoderLayers; ++l) {
      f(stem + "bank" + std::to_string(l), p.bank[static_cast<size_t>(l)]);
      f(stem + "aw" + std::to_string(l), p.a_w[static_cast<size_t>(l)]);
      f(stem + "ab" + std::to_string(l), p.a_b[static_cast<size_t>(l)]);
    }
  }
}

inline std::vector<std::pair<std::string, Var*>> leaf_list(ModelVars& v) {
  std::vector<std::pair<std::string, Var*>> out;
  visit_vars(v, [&](const std::string& n, Var& x) { out.emplace_back(n, &x); });
  return out;
}

}  // namespace avsdf::train
