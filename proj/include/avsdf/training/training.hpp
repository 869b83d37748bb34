#pragma once

// End-to-end fitting: the sign/magnitude loss, the per-step data pipeline
// over randomly generated bodies, Adam with a linear learning-rate anneal,
// resumable checkpoints, the evaluation harness, and the ablation table.
//
// Determinism contract: every random draw in a run is a pure function of
// (config.seed, step, slot), so identical seeds give bit-identical runs and a
// resumed run continues the interrupted one exactly. The trainer itself is
// single-threaded; gradients accumulate in slot order and the bank gradients
// stay in blend-factor form end to end (the optimizer rebuilds rows on the
// fly, bit-identical to the dense path).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "avsdf/body/body.hpp"
#include "avsdf/core/adam.hpp"
#include "avsdf/core/error.hpp"
#include "avsdf/core/rng.hpp"
#include "avsdf/oracle/oracle.hpp"
#include "avsdf/training/checkpoint.hpp"
#include "avsdf/training/model.hpp"
#include "avsdf/volsdf/volsdf.hpp"

namespace avsdf::train {

using body::Vec3;
using body::operator+;
using body::operator-;
using body::operator*;

// ---- loss -----------------------------------------------------------------

// one sample of the training objective: squared sign surrogate plus squared
// magnitude error; tanh(d/tau) stands in for the hard sign on the prediction
inline double sample_loss(double pred, double gt, double tau) {
  const double sg = gt > 0.0 ? 1.0 : (gt < 0.0 ? -1.0 : 0.0);
  const double st = std::tanh(pred / tau) - sg;
  const double at = std::fabs(pred) - std::fabs(gt);
  return st * st + at * at;
}

inline double loss(const std::vector<oracle::TrainSample>& samples,
                   const std::vector<double>& pred, double tau = 0.005) {
  require(samples.size() == pred.size(), "loss: predictions must align with samples");
  require(!samples.empty(), "loss: empty batch");
  require(tau > 0.0, "loss: tau must be positive");
  double acc = 0.0;
  for (size_t i = 0; i < samples.size(); ++i) acc += sample_loss(pred[i], samples[i].gt_sdf, tau);
  return acc / static_cast<double>(samples.size());
}

// the literal hard-sign variant, reporting only: zero gradient a.e.
inline double hard_sign_loss(const std::vector<oracle::TrainSample>& samples,
                             const std::vector<double>& pred) {
  require(samples.size() == pred.size(), "hard_sign_loss: predictions must align with samples");
  require(!samples.empty(), "hard_sign_loss: empty batch");
  double acc = 0.0;
  for (size_t i = 0; i < samples.size(); ++i) {
    const double d = samples[i].gt_sdf, p = pred[i];
    const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    const double sp = p > 0.0 ? 1.0 : (p < 0.0 ? -1.0 : 0.0);
    const double at = std::fabs(p) - std::fabs(d);
    acc += (sp - sg) * (sp - sg) + at * at;
  }
  return acc / static_cast<double>(samples.size());
}

// per-sample terms on the tape, [m]; sign_gt holds the exact GT signs
inline Var loss_terms(const Var& d, const Tensor& sign_gt, const Tensor& abs_gt, double tau) {
  require(tau > 0.0, "loss_terms: tau must be positive");
  check_same_shape(d.v, sign_gt, "loss_terms sign");
  check_same_shape(d.v, abs_gt, "loss_terms magnitude");
  const Var t = num::tanh(num::affine(d, static_cast<float>(1.0 / tau), 0.0f));
  const Var s = num::square(num::sub(t, Var(sign_gt)));
  const Var a = num::square(num::sub(num::abs(d), Var(abs_gt)));
  return num::add(s, a);
}

// ---- schedule ---------------------------------------------------------------

// linear anneal with exact endpoints: step 0 is lr_start, the last step lr_end
inline double lr_at(const TrainConfig& c, int64_t step) {
  require(step >= 0 && step < c.total_steps, "lr_at: step outside the schedule");
  if (step == 0) return c.total_steps == 1 ? c.lr_end : c.lr_start;
  if (step == c.total_steps - 1) return c.lr_end;
  const double f = static_cast<double>(step) / static_cast<double>(c.total_steps - 1);
  return c.lr_start + (c.lr_end - c.lr_start) * f;
}

// ---- data pipeline ----------------------------------------------------------

// shape standard normal (clamped by ShapeParams), joints uniform per
// axis-angle component, the root part over its own wider range
inline body::BodyState sample_body(const TrainConfig& c, Rng& rng) {
  std::vector<double> beta(10);
  for (double& b : beta) b = rng.normal();
  const body::ShapeParams shape(beta);
  body::PoseParams pose;
  const auto& parts = body::rest_parts();
  for (int k = 0; k < body::kNumParts; ++k) {
    const double range = parts[static_cast<size_t>(k)].parent < 0 ? c.root_range : c.joint_range;
    for (int a = 0; a < 3; ++a)
      pose.joint_rotations[static_cast<size_t>(3 * k + a)] = rng.uniform(-range, range);
  }
  return body::forward_kinematics(shape, pose, c.padding);
}

using BodyGen = std::function<body::BodyState(Rng&)>;

inline BodyGen default_body_gen(const TrainConfig& c) {
  return [c](Rng& rng) { return sample_body(c, rng); };
}

inline BodyGen fixed_body_gen(body::BodyState b) {
  return [b](Rng&) { return b; };
}

inline std::vector<body::BodyState> body_pool(const TrainConfig& c, uint64_t pool_seed, int n) {
  require(n >= 1, "body_pool: need at least one body");
  std::vector<body::BodyState> pool;
  pool.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(Rng::derive(pool_seed, lane::kPool, static_cast<uint64_t>(i)));
    pool.push_back(sample_body(c, rng));
  }
  return pool;
}

inline BodyGen pool_gen(std::vector<body::BodyState> pool) {
  require(!pool.empty(), "pool_gen: empty pool");
  return [pool = std::move(pool)](Rng& rng) { return pool[rng.index(pool.size())]; };
}

namespace detail {

struct Supervised {
  Tensor pts;              // [m,3] world, exactly the f32 values the query sees
  std::vector<double> gt;  // exact distance at those f32 points
  std::vector<int> part;   // generating part
  std::vector<char> near;  // 1 for noisy surface draws
};

// Per part: uniform draws inside the padded box plus surface points pushed
// off by Gaussian noise. Supervision never leaves the padded boxes: noisy
// points are redrawn a bounded number of times and then fall back to a point
// on the part axis, so the count per part is fixed and the analytic branch
// never sees a training target.
inline Supervised sample_supervised(const body::BodyState& body, const TrainConfig& c, Rng& rng) {
  const int per = c.uniform_per_part + c.near_per_part;
  const int64_t m = static_cast<int64_t>(per) * body.num_parts;
  Supervised s;
  s.pts = Tensor({m, 3});
  s.gt.resize(static_cast<size_t>(m));
  s.part.resize(static_cast<size_t>(m));
  s.near.resize(static_cast<size_t>(m));

  int64_t row = 0;
  auto push = [&](const Vec3& x, int k, bool is_near) {
    // the query consumes f32 coordinates, so the box check and the ground
    // truth label are taken at exactly the values the tensor will hold
    const Vec3 xr{num::round_f32(x[0]), num::round_f32(x[1]), num::round_f32(x[2])};
    if (!oracle::detail::inside_any_box(xr, body)) return false;
    for (int a = 0; a < 3; ++a) s.pts[row * 3 + a] = static_cast<float>(xr[a]);
    s.gt[static_cast<size_t>(row)] = oracle::gt_sdf(xr, body);
    s.part[static_cast<size_t>(row)] = k;
    s.near[static_cast<size_t>(row)] = is_near ? 1 : 0;
    ++row;
    return true;
  };

  for (int k = 0; k < body.num_parts; ++k) {
    const auto ku = static_cast<size_t>(k);
    const body::Capsule& cap = body.capsules[ku];
    for (int i = 0; i < c.uniform_per_part; ++i) {
      int tries = 0;
      while (!push(body.transforms[ku].to_world(oracle::detail::uniform_in_box(body.boxes[ku], rng)),
                   k, false))
        require(++tries < 64, "sample_supervised: cannot place a box point");
    }
    for (int i = 0; i < c.near_per_part; ++i) {
      const Vec3 base = body.transforms[ku].to_world(
          oracle::detail::sample_capsule_surface(cap, rng));
      bool placed = false;
      for (int t = 0; t < 16 && !placed; ++t) {
        Vec3 x = base;
        for (int a = 0; a < 3; ++a) x[a] += rng.normal(0.0, c.near_sigma);
        placed = push(x, k, true);
      }
      if (!placed) {
        // strictly interior: the axis midpoint sits a full radius inside
        const Vec3 deep = body.transforms[ku].to_world(0.5 * (cap.a + cap.b));
        require(push(deep, k, true), "sample_supervised: interior fallback escaped its box");
      }
    }
  }
  require(row == m, "sample_supervised: short batch");
  return s;
}

inline void require_finite_loss(double slot_loss, int64_t step, int slot, const Tensor& per,
                                const Tensor& d, const Supervised& sup) {
  if (std::isfinite(slot_loss)) return;
  for (int64_t i = 0; i < per.numel(); ++i) {
    if (std::isfinite(per[i])) continue;
    throw ContractError("fit: non-finite loss at step " + std::to_string(step) + ", slot " +
                        std::to_string(slot) + ", sample " + std::to_string(i) + " (part " +
                        std::to_string(sup.part[static_cast<size_t>(i)]) + ", point [" +
                        std::to_string(sup.pts[i * 3]) + ", " + std::to_string(sup.pts[i * 3 + 1]) +
                        ", " + std::to_string(sup.pts[i * 3 + 2]) + "], gt " +
                        std::to_string(sup.gt[static_cast<size_t>(i)]) + ", prediction " +
                        std::to_string(d[i]) + ")");
  }
  throw ContractError("fit: non-finite loss at step " + std::to_string(step) + ", slot " +
                      std::to_string(slot) + " (per-sample terms finite, reduction overflowed)");
}

}  // namespace detail

// ---- evaluation -------------------------------------------------------------

inline Tensor encode_latents(const Model& m, const std::vector<Tensor>& clouds) {
  std::vector<Var> cv(clouds.begin(), clouds.end());
  return enc::encode_body(cv, enc::constant_encoder(m.encoder)).v;
}

inline oracle::BatchSdf batch_sdf(const Model& m, body::BodyState body, Tensor latents,
                                  vol::QueryOptions opt = {}) {
  const vol::NbwBank bank = m.bank;  // shares storage; cheap
  return [bank, latents = std::move(latents), body = std::move(body),
          opt](const std::vector<Vec3>& xs) {
    std::vector<double> out(xs.size());
    if (xs.empty()) return out;
    Tensor pts({static_cast<int64_t>(xs.size()), 3});
    for (size_t i = 0; i < xs.size(); ++i)
      for (int a = 0; a < 3; ++a)
        pts[static_cast<int64_t>(i) * 3 + a] = static_cast<float>(xs[i][a]);
    const std::vector<vol::SdfResult> res = vol::query(pts, body, latents, bank, opt);
    for (size_t i = 0; i < xs.size(); ++i) out[i] = res[i].distance;
    return out;
  };
}

inline oracle::EvalReport evaluate_model(const Model& m, const body::BodyState& body,
                                         uint64_t eval_seed, int n_uniform = 30000,
                                         int n_near = 30000, int cloud_points = 1000,
                                         double sigma = 0.1) {
  Rng crng(Rng::derive(eval_seed, lane::kEvalClouds));
  const Tensor latents = encode_latents(m, oracle::sample_surface(body, cloud_points, crng));
  Rng erng(Rng::derive(eval_seed, lane::kEvalPoints));
  return oracle::evaluate(batch_sdf(m, body, latents), body, erng, n_uniform, n_near, sigma);
}

// training objective on freshly derived validation bodies; forward only, so
// identical streams let runs that differ just in rank share their data
inline double validation_loss(const Model& m, const TrainConfig& cfg, uint64_t val_seed,
                              int n_bodies) {
  require(n_bodies >= 1, "validation_loss: need at least one body");
  const enc::EncoderVars ev = enc::constant_encoder(m.encoder);
  const vol::NbwVars bv = vol::constant_bank(m.bank);
  double acc = 0.0;
  int64_t n = 0;
  for (int b = 0; b < n_bodies; ++b) {
    Rng rng(Rng::derive(val_seed, lane::kValidation, static_cast<uint64_t>(b)));
    const body::BodyState body = sample_body(cfg, rng);
    const std::vector<Tensor> clouds = oracle::sample_surface(body, cfg.points_per_part, rng);
    const detail::Supervised sup = detail::sample_supervised(body, cfg, rng);
    std::vector<Var> cv(clouds.begin(), clouds.end());
    const Var latents = enc::encode_body(cv, ev);
    const vol::QueryOut q = vol::query_vars(sup.pts, body, latents, bv, {});
    for (int64_t i = 0; i < q.d.v.numel(); ++i) {
      acc += sample_loss(static_cast<double>(q.d.v[i]), sup.gt[static_cast<size_t>(i)],
                         cfg.sign_sharpness);
      ++n;
    }
  }
  return acc / static_cast<double>(n);
}

// ---- fit ---------------------------------------------------------------------

struct StepInfo {
  int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct FitHooks {
  std::function<void(const StepInfo&)> on_step;
  int64_t stop_after = 0;  // pause once this many total steps are done (0: run out)

  int64_t eval_every = 0;
  std::vector<body::BodyState> eval_bodies;
  std::function<void(int64_t step, size_t body, const oracle::EvalReport&)> on_eval;
  int eval_uniform = 2000;
  int eval_near = 2000;
  uint64_t eval_seed = 0;

  int64_t checkpoint_every = 0;
  std::string checkpoint_path;
};

inline Checkpoint fit(const TrainConfig& cfg, const BodyGen& gen, const FitHooks& hooks = {},
                      const Checkpoint* resume = nullptr) {
  validate_config(cfg);
  require(static_cast<bool>(gen), "fit: body generator required");

  Checkpoint ck;
  ck.config = cfg;
  if (resume) {
    require(resume->config == cfg, "fit: resume checkpoint was trained under a different config");
    require(!resume->moments.empty(), "fit: checkpoint carries no optimizer state to resume from");
    require(resume->step <= cfg.total_steps, "fit: checkpoint is past the end of the schedule");
    ck.model = clone_model(cfg, resume->model);
    for (const auto& [n, mo] : resume->moments)
      ck.moments.emplace(n, num::Moments{mo.m.clone(), mo.v.clone()});
    ck.adam_steps = resume->adam_steps;
    ck.step = resume->step;
  } else {
    ck.model = init_model(cfg);
  }

  auto params = param_list(ck.model);
  if (!resume)
    for (auto& [n, t] : params) ck.moments.emplace(n, num::make_moments(*t));
  std::vector<char> factored(params.size(), 0);
  for (size_t p = 0; p < params.size(); ++p)
    factored[p] = (cfg.rank > 0 && params[p].first.find(".bank") != std::string::npos) ? 1 : 0;

  const int64_t m_slot =
      static_cast<int64_t>(cfg.uniform_per_part + cfg.near_per_part) * body::kNumParts;
  const double inv_total = 1.0 / (static_cast<double>(m_slot) * cfg.batch_size);
  std::vector<float> scratch;
  bool checked_walk = false;

  for (int64_t s = ck.step; s < cfg.total_steps; ++s) {
    std::vector<Tensor> dense(params.size());
    std::vector<std::vector<num::FactoredTerm>> terms(params.size());
    double step_loss = 0.0;

    for (int slot = 0; slot < cfg.batch_size; ++slot) {
      Rng rng(Rng::derive(cfg.seed, lane::kStep, static_cast<uint64_t>(s),
                          static_cast<uint64_t>(slot)));
      const body::BodyState body = gen(rng);
      require(body.num_parts == body::kNumParts && !body.capsules.empty(),
              "fit: generator must produce the full capsule body");
      const std::vector<Tensor> clouds = oracle::sample_surface(body, cfg.points_per_part, rng);
      const detail::Supervised sup = detail::sample_supervised(body, cfg, rng);

      Tape tape;
      ModelVars mv = bind_model(tape, ck.model, cfg.rank > 0);
      auto leaves = leaf_list(mv);
      if (!checked_walk) {
        require(leaves.size() == params.size(), "fit: leaf walk does not match parameter walk");
        for (size_t p = 0; p < params.size(); ++p)
          require(leaves[p].first == params[p].first, "fit: leaf order drifted at " +
                                                          params[p].first);
        checked_walk = true;
      }

      std::vector<Var> cv(clouds.begin(), clouds.end());
      const Var latents = enc::encode_body(cv, mv.encoder);
      const vol::QueryOut q = vol::query_vars(sup.pts, body, latents, mv.bank, {});
      for (size_t i = 0; i < q.branch.size(); ++i)
        require(q.branch[i] == vol::Branch::kImplicit,
                "fit: supervision point escaped the padded boxes at step " + std::to_string(s));

      Tensor sgn({m_slot}), agt({m_slot});
      for (int64_t i = 0; i < m_slot; ++i) {
        const double g = sup.gt[static_cast<size_t>(i)];
        sgn[i] = g > 0.0 ? 1.0f : (g < 0.0 ? -1.0f : 0.0f);
        agt[i] = static_cast<float>(std::fabs(g));
      }
      const Var per = loss_terms(q.d, sgn, agt, cfg.sign_sharpness);
      const Var slot_loss = num::affine(num::sum(per), static_cast<float>(inv_total), 0.0f);
      detail::require_finite_loss(static_cast<double>(slot_loss.v[0]), s, slot, per.v, q.d.v, sup);
      step_loss += static_cast<double>(slot_loss.v[0]);
      tape.backward(slot_loss);

      for (size_t p = 0; p < params.size(); ++p) {
        const Var& lv = *leaves[p].second;
        if (factored[p]) {
          require(!tape.has_grad(lv.id), "fit: factored bank received a dense gradient");
          auto& src = tape.factored_terms(lv.id);
          terms[p].insert(terms[p].end(), src.begin(), src.end());
        } else if (tape.has_grad(lv.id)) {
          const Tensor& g = tape.grad(lv.id);
          if (!dense[p].defined()) {
            dense[p] = g.clone();
          } else {
            float* a = dense[p].data();
            const float* gp = g.data();
            for (int64_t i = 0; i < g.numel(); ++i) a[i] += gp[i];
          }
        }
      }
    }

    num::Adam ad;
    ad.lr = static_cast<float>(lr_at(cfg, s));
    const int64_t t_adam = ck.adam_steps + 1;
    for (size_t p = 0; p < params.size(); ++p) {
      num::Moments& mo = ck.moments.at(params[p].first);
      if (factored[p]) {
        num::adam_step_factored(*params[p].second, terms[p], mo, t_adam, ad, scratch);
      } else {
        if (!dense[p].defined()) dense[p] = Tensor(params[p].second->shape());
        num::adam_step(*params[p].second, dense[p], mo, t_adam, ad);
      }
    }
    ck.adam_steps = t_adam;
    ck.step = s + 1;

    if (hooks.on_step) hooks.on_step(StepInfo{s, step_loss, lr_at(cfg, s)});
    if (hooks.eval_every > 0 && hooks.on_eval &&
        (ck.step % hooks.eval_every == 0 || ck.step == cfg.total_steps)) {
      for (size_t b = 0; b < hooks.eval_bodies.size(); ++b)
        hooks.on_eval(ck.step, b,
                      evaluate_model(ck.model, hooks.eval_bodies[b],
                                     Rng::derive(hooks.eval_seed, lane::kEvalPoints, b),
                                     hooks.eval_uniform, hooks.eval_near, cfg.points_per_part,
                                     cfg.near_sigma));
    }
    if (hooks.checkpoint_every > 0 && !hooks.checkpoint_path.empty() &&
        (ck.step % hooks.checkpoint_every == 0 || ck.step == cfg.total_steps))
      save_checkpoint(hooks.checkpoint_path, ck);
    if (hooks.stop_after > 0 && ck.step >= hooks.stop_after) break;
  }
  return ck;
}

// ---- ablation ------------------------------------------------------------------

struct AblationSpec {
  TrainConfig config;
  std::string axis;  // which sweep the row belongs to
  bool is_default = false;
};

// R, width, padding and encoder cloud sweeps around a base configuration; the
// row equal to the base is flagged as the default
inline std::vector<AblationSpec> default_sweeps(const TrainConfig& base) {
  std::vector<AblationSpec> out;
  for (int r : {0, 20, 40, 80}) {
    AblationSpec s{base, "rank", false};
    s.config.rank = r;
    s.is_default = s.config == base;
    out.push_back(std::move(s));
  }
  for (int w : {32, 40, 50, 64}) {
    AblationSpec s{base, "width", false};
    s.config.width = w;
    s.is_default = s.config == base;
    out.push_back(std::move(s));
  }
  for (double p : {0.0, 0.0625, 0.125, 0.25}) {
    AblationSpec s{base, "padding", false};
    s.config.padding = p;
    s.is_default = s.config == base;
    out.push_back(std::move(s));
  }
  for (int n : {250, 500, 1000}) {
    AblationSpec s{base, "points_per_part", false};
    s.config.points_per_part = n;
    s.is_default = s.config == base;
    out.push_back(std::move(s));
  }
  return out;
}

struct AblationRow {
  TrainConfig config;
  std::string axis;
  bool is_default = false;
  oracle::EvalReport report;  // means over the held-out bodies
  double train_seconds = 0.0;
  int64_t params = 0;
};

struct AblationOptions {
  uint64_t eval_seed = 0;
  int eval_bodies = 4;
  int eval_uniform = 8000;
  int eval_near = 8000;
};

inline std::vector<AblationRow> ablation_matrix(const std::vector<AblationSpec>& specs,
                                                const AblationOptions& opt = {}) {
  require(!specs.empty(), "ablation_matrix: no configurations");
  require(opt.eval_bodies >= 1, "ablation_matrix: need at least one eval body");
  std::vector<AblationRow> rows;
  for (const AblationSpec& spec : specs) {
    AblationRow row{spec.config, spec.axis, spec.is_default, {}, 0.0,
                    model_param_count(spec.config)};
    const auto t0 = std::chrono::steady_clock::now();
    const Checkpoint ck = fit(spec.config, default_body_gen(spec.config));
    row.train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    oracle::EvalReport mean;
    for (int b = 0; b < opt.eval_bodies; ++b) {
      Rng rng(Rng::derive(opt.eval_seed, lane::kPool, static_cast<uint64_t>(b)));
      const body::BodyState body = sample_body(spec.config, rng);
      const oracle::EvalReport r = evaluate_model(
          ck.model, body, Rng::derive(opt.eval_seed, lane::kEvalPoints, static_cast<uint64_t>(b)),
          opt.eval_uniform, opt.eval_near, spec.config.points_per_part, spec.config.near_sigma);
      mean.iou_mean += r.iou_mean;
      mean.iou_surf += r.iou_surf;
      mean.iou_unif += r.iou_unif;
      mean.mse_sdf += r.mse_sdf;
      mean.mse_abs_sdf += r.mse_abs_sdf;
      mean.query_time += r.query_time;
      mean.points_evaluated += r.points_evaluated;
    }
    const double nb = opt.eval_bodies;
    mean.iou_mean /= nb;
    mean.iou_surf /= nb;
    mean.iou_unif /= nb;
    mean.mse_sdf /= nb;
    mean.mse_abs_sdf /= nb;
    mean.query_time /= nb;
    row.report = mean;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<AblationRow> ablation_matrix(const std::vector<TrainConfig>& configs,
                                                const AblationOptions& opt = {}) {
  std::vector<AblationSpec> specs;
  specs.reserve(configs.size());
  for (const TrainConfig& c : configs) specs.push_back(AblationSpec{c, "", false});
  return ablation_matrix(specs, opt);
}

// timing is wall clock and not reproducible; leaving it out keeps the table
// byte-identical across reruns of the same seed
inline nlohmann::json ablation_table_json(const std::vector<AblationRow>& rows,
                                          bool include_timing = false) {
  nlohmann::json arr = nlohmann::json::array();
  for (const AblationRow& r : rows) {
    nlohmann::json row{{"axis", r.axis},
                       {"default", r.is_default},
                       {"rank", r.config.rank},
                       {"width", r.config.width},
                       {"padding", r.config.padding},
                       {"points_per_part", r.config.points_per_part},
                       {"iou_mean", r.report.iou_mean},
                       {"iou_surf", r.report.iou_surf},
                       {"iou_unif", r.report.iou_unif},
                       {"mse_sdf", r.report.mse_sdf},
                       {"mse_abs_sdf", r.report.mse_abs_sdf},
                       {"params", r.params}};
    row["train_seconds"] =
        include_timing ? nlohmann::json(r.train_seconds) : nlohmann::json(nullptr);
    arr.push_back(std::move(row));
  }
  return nlohmann::json{{"schema", "avsdf.ablation.v1"}, {"rows", arr}};
}

}  // namespace avsdf::train
