#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "avsdf/oracle/oracle.hpp"
#include "avsdf/training/checkpoint.hpp"
#include "avsdf/training/model.hpp"
#include "avsdf/training/training.hpp"
#include "support/fd.hpp"

using namespace avsdf;
using namespace avsdf::num;
using namespace avsdf::train;
using test::fd_check;

namespace {

constexpr uint64_t kSeed = 0x7125ULL;

// small enough to train for a handful of steps inside a unit test
TrainConfig tiny_config() {
  TrainConfig c;
  c.batch_size = 1;
  c.total_steps = 4;
  c.rank = 2;
  c.width = 8;
  c.points_per_part = 12;
  c.uniform_per_part = 4;
  c.near_per_part = 4;
  c.seed = kSeed;
  return c;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) return false;
  return std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * sizeof(float)) == 0;
}

bool same_params(Model& a, Model& b) {
  auto pa = param_list(a);
  auto pb = param_list(b);
  if (pa.size() != pb.size()) return false;
  for (size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].first != pb[i].first) return false;
    if (!same_bits(*pa[i].second, *pb[i].second)) return false;
  }
  return true;
}

std::filesystem::path tmp_file(const char* stem) {
  return std::filesystem::temp_directory_path() / stem;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

}  // namespace

TEST_CASE("loss saturates on correct signs and penalizes flips", "[training]") {
  const double tau = 0.005;

  // magnitudes right, signs right, predictions far past the transition band
  std::vector<oracle::TrainSample> samples(4);
  std::vector<double> pred(4);
  const double ds[4] = {0.03, -0.04, 0.1, -0.2};
  for (int i = 0; i < 4; ++i) {
    samples[static_cast<size_t>(i)].gt_sdf = ds[i];
    pred[static_cast<size_t>(i)] = ds[i];
  }
  REQUIRE(loss(samples, pred, tau) <= 1e-6);

  // a flipped sign with the right magnitude leaves only the sign term, ~4
  std::vector<oracle::TrainSample> flip(1);
  flip[0].gt_sdf = 0.05;
  const double lf = loss(flip, {-0.05}, tau);
  REQUIRE(std::fabs(lf - 4.0) < 5e-4);
  REQUIRE(hard_sign_loss(flip, {-0.05}) == 4.0);

  // never negative, and the mean matches the per-sample law
  Rng rng(Rng::derive(kSeed, 1));
  std::vector<oracle::TrainSample> rs(64);
  std::vector<double> rp(64);
  double acc = 0.0;
  for (size_t i = 0; i < rs.size(); ++i) {
    rs[i].gt_sdf = rng.uniform(-0.3, 0.3);
    rp[i] = rng.uniform(-0.3, 0.3);
    acc += sample_loss(rp[i], rs[i].gt_sdf, tau);
  }
  const double l = loss(rs, rp, tau);
  REQUIRE(l >= 0.0);
  REQUIRE(l == Catch::Approx(acc / 64.0).epsilon(1e-12));

  REQUIRE_THROWS_AS(loss({}, {}, tau), ContractError);
  REQUIRE_THROWS_AS(loss(rs, {1.0}, tau), ContractError);
}

TEST_CASE("loss terms match finite differences", "[training]") {
  // smooth regime: wide tau keeps the tanh out of saturation
  {
    Rng rng(Rng::derive(kSeed, 2));
    const int64_t m = 24;
    Tensor d({m}), sgn({m}), agt({m});
    for (int64_t i = 0; i < m; ++i) {
      const double gt = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.02, 0.15);
      double p = gt + rng.normal(0.0, 0.03);
      if (std::fabs(p) < 5e-3) p = p < 0 ? -5e-3 : 5e-3;  // keep clear of the abs kink
      d[i] = static_cast<float>(p);
      sgn[i] = gt > 0 ? 1.0f : -1.0f;
      agt[i] = static_cast<float>(std::fabs(gt));
    }
    const auto res = fd_check(
        {d},
        [&](Tape&, std::vector<Var>& leaves) { return loss_terms(leaves[0], sgn, agt, 0.05); },
        Rng::derive(kSeed, 3), -1, 1e-4);
    INFO("max rel err " << res.max_err << " at index " << res.index);
    REQUIRE(res.max_err <= 1e-3);
    REQUIRE(res.probes > 0);
  }

  // training regime: tau 0.005, small steps, kink filtering for tanh overflow
  {
    Rng rng(Rng::derive(kSeed, 4));
    const int64_t m = 16;
    Tensor d({m}), sgn({m}), agt({m});
    for (int64_t i = 0; i < m; ++i) {
      const double gt = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.002, 0.02);
      double p = gt * rng.uniform(0.5, 1.5);
      if (std::fabs(p) < 1e-3) p = p < 0 ? -1e-3 : 1e-3;
      d[i] = static_cast<float>(p);
      sgn[i] = gt > 0 ? 1.0f : -1.0f;
      agt[i] = static_cast<float>(std::fabs(gt));
    }
    const auto res = fd_check(
        {d},
        [&](Tape&, std::vector<Var>& leaves) { return loss_terms(leaves[0], sgn, agt, 0.005); },
        Rng::derive(kSeed, 5), -1, 2e-5, true);
    INFO("max rel err " << res.max_err << ", skipped " << res.skipped << "/" << res.probes);
    REQUIRE(res.max_err <= 1e-3);
    REQUIRE(res.skipped * 5 < res.probes * 2);  // the filter may not eat the test
  }
}

TEST_CASE("learning rate anneal hits its endpoints exactly", "[training]") {
  TrainConfig c;
  c.lr_start = 1e-4;
  c.lr_end = 1e-5;
  c.total_steps = 50000;
  REQUIRE(lr_at(c, 0) == 1e-4);
  REQUIRE(lr_at(c, c.total_steps - 1) == 1e-5);
  for (int64_t s = 1; s < 200; ++s) REQUIRE(lr_at(c, s) <= lr_at(c, s - 1));
  REQUIRE(lr_at(c, 24999) == Catch::Approx(0.5 * (1e-4 + 1e-5)).epsilon(1e-3));

  TrainConfig one = c;
  one.total_steps = 1;
  REQUIRE(lr_at(one, 0) == 1e-5);
  REQUIRE_THROWS_AS(lr_at(c, -1), ContractError);
  REQUIRE_THROWS_AS(lr_at(c, c.total_steps), ContractError);
}

TEST_CASE("config validation rejects bad settings", "[training]") {
  auto bad = [](auto&& mutate) {
    TrainConfig c;
    mutate(c);
    return c;
  };
  REQUIRE_NOTHROW(validate_config(TrainConfig{}));
  REQUIRE_THROWS_AS(validate_config(bad([](auto& c) { c.batch_size = 0; })), ContractError);
  REQUIRE_THROWS_AS(validate_config(bad([](auto& c) { c.lr_end = 2e-4; })), ContractError);
  REQUIRE_THROWS_AS(validate_config(bad([](auto& c) { c.lr_start = 0.0; })), ContractError);
  REQUIRE_THROWS_AS(validate_config(bad([](auto& c) { c.total_steps = 0; })), ContractError);
  REQUIRE_THROWS_AS(validate_config(bad([](auto& c) { c.rank = vol::kMaxRank + 1; })),
                    ContractError);
  REQUIRE_THROWS_AS(validate_config(bad([](auto& c) { c.padding = -0.1; })), ContractError);
  REQUIRE_THROWS_AS(validate_config(bad([](auto& c) { c.sign_sharpness = 0.0; })), ContractError);
  REQUIRE_THROWS_AS(validate_config(bad([](auto& c) {
                      c.uniform_per_part = 0;
                      c.near_per_part = 0;
                    })),
                    ContractError);
}

TEST_CASE("random bodies and pools are deterministic", "[training]") {
  TrainConfig c;
  Rng r1(Rng::derive(kSeed, 8)), r2(Rng::derive(kSeed, 8));
  const body::BodyState a = sample_body(c, r1);
  const body::BodyState b = sample_body(c, r2);
  REQUIRE(a.num_parts == body::kNumParts);
  for (int k = 0; k < a.num_parts; ++k) {
    const auto ku = static_cast<size_t>(k);
    REQUIRE(a.transforms[ku].t == b.transforms[ku].t);
    REQUIRE(a.capsules[ku].radius == b.capsules[ku].radius);
  }

  Rng r3(Rng::derive(kSeed, 9));
  const body::BodyState other = sample_body(c, r3);
  REQUIRE(a.transforms[3].t != other.transforms[3].t);

  const auto pool = body_pool(c, kSeed, 3);
  const auto pool2 = body_pool(c, kSeed, 3);
  REQUIRE(pool.size() == 3);
  for (size_t i = 0; i < pool.size(); ++i)
    REQUIRE(pool[i].transforms[5].t == pool2[i].transforms[5].t);

  auto gen = pool_gen(pool);
  Rng r4(Rng::derive(kSeed, 10));
  const body::BodyState pick = gen(r4);
  bool found = false;
  for (const auto& p : pool) found = found || p.transforms[5].t == pick.transforms[5].t;
  REQUIRE(found);
}

TEST_CASE("supervised draws stay inside the padded boxes with exact labels", "[training]") {
  TrainConfig c = tiny_config();
  c.uniform_per_part = 16;
  c.near_per_part = 16;

  for (uint64_t salt = 0; salt < 4; ++salt) {
    Rng brng(Rng::derive(kSeed, 11, salt));
    const body::BodyState body = sample_body(c, brng);
    Rng srng(Rng::derive(kSeed, 12, salt));
    const auto sup = train::detail::sample_supervised(body, c, srng);

    const int64_t m = static_cast<int64_t>(c.uniform_per_part + c.near_per_part) * body.num_parts;
    REQUIRE(sup.pts.dim(0) == m);
    int64_t near_count = 0;
    for (int64_t i = 0; i < m; ++i) {
      const body::Vec3 x{static_cast<double>(sup.pts[i * 3]),
                         static_cast<double>(sup.pts[i * 3 + 1]),
                         static_cast<double>(sup.pts[i * 3 + 2])};
      INFO("salt " << salt << " sample " << i);
      REQUIRE(oracle::detail::inside_any_box(x, body));
      REQUIRE(sup.gt[static_cast<size_t>(i)] == oracle::gt_sdf(x, body));
      near_count += sup.near[static_cast<size_t>(i)];
      REQUIRE(sup.part[static_cast<size_t>(i)] == static_cast<int>(i / (m / body.num_parts)));
    }
    REQUIRE(near_count == static_cast<int64_t>(c.near_per_part) * body.num_parts);
  }

  // tight boxes and fat noise force the retry and interior-fallback paths
  TrainConfig t = tiny_config();
  t.padding = 0.0;
  t.near_sigma = 0.5;
  t.near_per_part = 32;
  Rng brng(Rng::derive(kSeed, 13));
  const body::BodyState body =
      body::forward_kinematics(body::ShapeParams{}, body::PoseParams{}, 0.0);
  Rng srng(Rng::derive(kSeed, 14));
  const auto sup = train::detail::sample_supervised(body, t, srng);
  for (int64_t i = 0; i < sup.pts.dim(0); ++i) {
    const body::Vec3 x{static_cast<double>(sup.pts[i * 3]),
                       static_cast<double>(sup.pts[i * 3 + 1]),
                       static_cast<double>(sup.pts[i * 3 + 2])};
    REQUIRE(oracle::detail::inside_any_box(x, body));
  }
}

TEST_CASE("training points always take the implicit branch", "[training]") {
  TrainConfig c = tiny_config();
  Model m = init_model(c);
  for (uint64_t salt = 0; salt < 3; ++salt) {
    Rng rng(Rng::derive(kSeed, 15, salt));
    const body::BodyState body = sample_body(c, rng);
    const auto clouds = oracle::sample_surface(body, c.points_per_part, rng);
    const auto sup = train::detail::sample_supervised(body, c, rng);
    const Tensor latents = encode_latents(m, clouds);
    const vol::QueryOut q =
        vol::query_vars(sup.pts, body, Var(latents), vol::constant_bank(m.bank), {});
    for (size_t i = 0; i < q.branch.size(); ++i)
      REQUIRE(q.branch[i] == vol::Branch::kImplicit);
  }
}

TEST_CASE("non-finite losses abort with the offending sample", "[training]") {
  train::detail::Supervised sup;
  sup.pts = Tensor({2, 3});
  sup.pts[3] = 1.5f;
  sup.gt = {0.1, -0.2};
  sup.part = {0, 7};
  sup.near = {0, 1};
  Tensor per({2}), d({2});
  per[0] = 0.5f;
  per[1] = std::numeric_limits<float>::quiet_NaN();
  d[1] = 2.0f;

  REQUIRE_NOTHROW(train::detail::require_finite_loss(0.5, 7, 0, per, d, sup));
  try {
    train::detail::require_finite_loss(std::numeric_limits<double>::quiet_NaN(), 7, 0, per, d, sup);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("step 7") != std::string::npos);
    REQUIRE(msg.find("sample 1") != std::string::npos);
    REQUIRE(msg.find("part 7") != std::string::npos);
  }
}

TEST_CASE("parameter and leaf walks stay aligned", "[training]") {
  TrainConfig c = tiny_config();
  Model m = init_model(c);

  std::vector<std::string> pnames;
  int64_t total = 0;
  visit_params(m, [&](const std::string& n, const Tensor& t) {
    pnames.push_back(n);
    total += t.numel();
  });
  REQUIRE(total == model_param_count(c));
  REQUIRE(pnames.front() == "enc.w_in");

  Tape tape;
  ModelVars mv = bind_model(tape, m, true);
  auto leaves = leaf_list(mv);
  REQUIRE(leaves.size() == pnames.size());
  for (size_t i = 0; i < leaves.size(); ++i) REQUIRE(leaves[i].first == pnames[i]);

  auto params = param_list(m);
  REQUIRE(params.size() == pnames.size());
  for (size_t i = 0; i < params.size(); ++i) REQUIRE(params[i].first == pnames[i]);

  // bank leaves carry factored gradients, everything else stays dense
  for (auto& [n, v] : leaves)
    REQUIRE(tape.is_factored(v->id) == (n.find(".bank") != std::string::npos));
}

TEST_CASE("cloned models are independent", "[training]") {
  TrainConfig c = tiny_config();
  Model a = init_model(c);
  Model b = clone_model(c, a);
  REQUIRE(same_params(a, b));
  param_list(b)[0].second->data()[0] += 1.0f;
  REQUIRE_FALSE(same_params(a, b));

  TrainConfig other = c;
  other.width = c.width * 2;
  REQUIRE_THROWS_AS(clone_model(other, a), ContractError);
}

TEST_CASE("fit is deterministic bit for bit", "[training]") {
  const TrainConfig c = tiny_config();
  std::vector<double> la, lb;
  FitHooks ha, hb;
  ha.on_step = [&](const StepInfo& s) { la.push_back(s.loss); };
  hb.on_step = [&](const StepInfo& s) { lb.push_back(s.loss); };
  Checkpoint a = fit(c, default_body_gen(c), ha);
  Checkpoint b = fit(c, default_body_gen(c), hb);

  REQUIRE(la.size() == 4);
  REQUIRE(la == lb);
  REQUIRE(same_params(a.model, b.model));
  REQUIRE(a.step == 4);
  REQUIRE(a.adam_steps == 4);
  for (auto& [n, mo] : a.moments) {
    REQUIRE(same_bits(mo.m, b.moments.at(n).m));
    REQUIRE(same_bits(mo.v, b.moments.at(n).v));
  }
  for (double l : la) REQUIRE(std::isfinite(l));
}

TEST_CASE("first step loss is rank invariant", "[training]") {
  // untrained coefficient maps are zero, so the blended decoder equals the
  // shared base decoder no matter how many bank rows exist
  TrainConfig c = tiny_config();
  c.width = 32;
  std::map<int, double> first;
  for (int r : {0, 20, 80}) {
    TrainConfig cr = c;
    cr.rank = r;
    FitHooks h;
    h.stop_after = 1;
    double l0 = -1.0;
    h.on_step = [&](const StepInfo& s) {
      if (s.step == 0) l0 = s.loss;
    };
    fit(cr, default_body_gen(cr), h);
    first[r] = l0;
  }
  REQUIRE(first[0] > 0.0);
  REQUIRE(first[20] == first[0]);
  REQUIRE(first[80] == first[0]);
}

TEST_CASE("factored and dense gradients agree through a full step", "[training]") {
  TrainConfig c = tiny_config();
  c.total_steps = 1;
  Rng brng(Rng::derive(kSeed, 16));
  const body::BodyState body = sample_body(c, brng);

  FitHooks h;
  Checkpoint ck = fit(c, fixed_body_gen(body), h);

  // replay the same step with dense bank gradients and a hand-rolled update
  Model m = init_model(c);
  Rng rng(Rng::derive(c.seed, lane::kStep, 0, 0));
  const auto clouds = oracle::sample_surface(body, c.points_per_part, rng);
  const auto sup = train::detail::sample_supervised(body, c, rng);

  Tape tape;
  ModelVars mv = bind_model(tape, m, false);
  std::vector<Var> cv(clouds.begin(), clouds.end());
  const Var latents = enc::encode_body(cv, mv.encoder);
  const vol::QueryOut q = vol::query_vars(sup.pts, body, latents, mv.bank, {});

  const int64_t msl = sup.pts.dim(0);
  Tensor sgn({msl}), agt({msl});
  for (int64_t i = 0; i < msl; ++i) {
    const double g = sup.gt[static_cast<size_t>(i)];
    sgn[i] = g > 0.0 ? 1.0f : (g < 0.0 ? -1.0f : 0.0f);
    agt[i] = static_cast<float>(std::fabs(g));
  }
  const Var per = loss_terms(q.d, sgn, agt, c.sign_sharpness);
  const Var slot_loss =
      num::affine(num::sum(per), static_cast<float>(1.0 / static_cast<double>(msl)), 0.0f);
  tape.backward(slot_loss);

  num::Adam ad;
  ad.lr = static_cast<float>(lr_at(c, 0));
  auto leaves = leaf_list(mv);
  auto params = param_list(m);
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor g = tape.grad_dense(*leaves[p].second);
    num::Moments mo = num::make_moments(*params[p].second);
    num::adam_step(*params[p].second, g, mo, 1, ad);
  }
  REQUIRE(same_params(ck.model, m));
}

TEST_CASE("resume reproduces the unbroken run", "[training]") {
  TrainConfig c = tiny_config();
  c.total_steps = 6;
  c.batch_size = 2;

  std::vector<double> full;
  FitHooks hf;
  hf.on_step = [&](const StepInfo& s) { full.push_back(s.loss); };
  Checkpoint whole = fit(c, default_body_gen(c), hf);

  FitHooks h1;
  h1.stop_after = 3;
  Checkpoint half = fit(c, default_body_gen(c), h1);
  REQUIRE(half.step == 3);

  std::vector<double> tail;
  FitHooks h2;
  h2.on_step = [&](const StepInfo& s) { tail.push_back(s.loss); };
  Checkpoint resumed = fit(c, default_body_gen(c), h2, &half);

  REQUIRE(resumed.step == 6);
  REQUIRE(resumed.adam_steps == whole.adam_steps);
  REQUIRE(same_params(resumed.model, whole.model));
  for (auto& [n, mo] : whole.moments) {
    REQUIRE(same_bits(mo.m, resumed.moments.at(n).m));
    REQUIRE(same_bits(mo.v, resumed.moments.at(n).v));
  }
  REQUIRE(tail.size() == 3);
  for (size_t i = 0; i < 3; ++i) REQUIRE(tail[i] == full[i + 3]);

  // resuming under a different config is refused
  TrainConfig other = c;
  other.lr_end = c.lr_end * 0.5;
  REQUIRE_THROWS_AS(fit(other, default_body_gen(other), {}, &half), ContractError);
  Checkpoint hollow;
  hollow.config = c;
  hollow.model = clone_model(c, half.model);
  REQUIRE_THROWS_AS(fit(c, default_body_gen(c), {}, &hollow), ContractError);
}

TEST_CASE("checkpoints round trip byte for byte", "[training]") {
  TrainConfig c = tiny_config();
  c.total_steps = 2;
  Checkpoint ck = fit(c, default_body_gen(c));

  const auto p1 = tmp_file("avsdf_ck_a.avsc");
  const auto p2 = tmp_file("avsdf_ck_b.avsc");
  save_checkpoint(p1.string(), ck);
  Checkpoint back = load_checkpoint(p1.string());
  save_checkpoint(p2.string(), back);

  REQUIRE(slurp(p1) == slurp(p2));
  REQUIRE(back.step == 2);
  REQUIRE(back.adam_steps == 2);
  REQUIRE(back.config == c);
  REQUIRE(same_params(back.model, ck.model));
  REQUIRE(back.moments.size() == ck.moments.size());
  for (auto& [n, mo] : ck.moments) {
    REQUIRE(same_bits(mo.m, back.moments.at(n).m));
    REQUIRE(same_bits(mo.v, back.moments.at(n).v));
  }

  // a checkpoint that went through disk resumes exactly like the live one
  TrainConfig c6 = c;
  c6.total_steps = 4;
  Checkpoint live = fit(c6, default_body_gen(c6), {}, nullptr);
  FitHooks stop2;
  stop2.stop_after = 2;
  Checkpoint half = fit(c6, default_body_gen(c6), stop2);
  const auto p3 = tmp_file("avsdf_ck_half.avsc");
  save_checkpoint(p3.string(), half);
  Checkpoint reloaded = load_checkpoint(p3.string(), c6);
  Checkpoint resumed = fit(c6, default_body_gen(c6), {}, &reloaded);
  REQUIRE(same_params(resumed.model, live.model));

  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
  std::filesystem::remove(p3);
}

TEST_CASE("checkpoint header carries the manifest and optimizer", "[training]") {
  TrainConfig c = tiny_config();
  c.total_steps = 1;
  Checkpoint ck = fit(c, default_body_gen(c));
  const auto path = tmp_file("avsdf_ck_header.avsc");
  save_checkpoint(path.string(), ck);

  const std::string blob = slurp(path);
  REQUIRE(blob.size() > 12);
  REQUIRE(blob.substr(0, 4) == "AVSC");
  uint32_t version = 0, hlen = 0;
  std::memcpy(&version, blob.data() + 4, 4);
  std::memcpy(&hlen, blob.data() + 8, 4);
  REQUIRE(version == kCheckpointVersion);
  const auto header = nlohmann::json::parse(blob.substr(12, hlen));

  REQUIRE(header.at("rng").at("scheme") == "derive");
  REQUIRE(header.at("rng").at("seed") == c.seed);
  REQUIRE(header.at("step") == 1);
  REQUIRE(header.at("optimizer").at("t") == 1);
  REQUIRE(header.at("config").at("rank") == c.rank);

  const auto& man = header.at("manifest");
  REQUIRE(man.at(0).at("name") == "enc.w_in");
  REQUIRE(man.at(0).at("offset") == 0);
  size_t adam_rows = 0;
  int64_t prev_off = -1;
  for (const auto& row : man) {
    const int64_t off = row.at("offset").get<int64_t>();
    REQUIRE(off > prev_off);
    prev_off = off;
    if (row.at("name").get<std::string>().rfind("adam.", 0) == 0) ++adam_rows;
  }
  REQUIRE(adam_rows == 2 * ck.moments.size());
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loading rejects damage and mismatches", "[training]") {
  TrainConfig c = tiny_config();
  c.total_steps = 1;
  Checkpoint ck = fit(c, default_body_gen(c));
  const auto path = tmp_file("avsdf_ck_damage.avsc");
  save_checkpoint(path.string(), ck);
  const std::string good = slurp(path);

  auto rewrite = [&](std::string blob) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  };

  // architecture mismatch against the expectation overload
  TrainConfig other = c;
  other.rank = c.rank + 1;
  REQUIRE_THROWS_AS(load_checkpoint(path.string(), other), ContractError);
  REQUIRE_NOTHROW(load_checkpoint(path.string(), c));

  std::string bad = good;
  bad[0] = 'X';
  rewrite(bad);
  REQUIRE_THROWS_AS(load_checkpoint(path.string()), IoError);

  bad = good;
  bad[4] = 9;  // unsupported container version
  rewrite(bad);
  REQUIRE_THROWS_AS(load_checkpoint(path.string()), IoError);

  rewrite(good.substr(0, good.size() - 5));
  REQUIRE_THROWS_AS(load_checkpoint(path.string()), IoError);

  rewrite(good + "junk");
  REQUIRE_THROWS_AS(load_checkpoint(path.string()), IoError);

  REQUIRE_THROWS_AS(load_checkpoint((tmp_file("avsdf_ck_missing.avsc")).string()), IoError);

  rewrite(good);
  REQUIRE_NOTHROW(load_checkpoint(path.string()));
  std::filesystem::remove(path);
}

TEST_CASE("fit fires eval and checkpoint hooks", "[training]") {
  TrainConfig c = tiny_config();
  c.total_steps = 6;
  Rng rng(Rng::derive(kSeed, 17));
  FitHooks h;
  h.eval_every = 3;
  h.eval_bodies = {sample_body(c, rng)};
  h.eval_uniform = 200;
  h.eval_near = 200;
  std::vector<std::pair<int64_t, double>> evals;
  h.on_eval = [&](int64_t step, size_t, const oracle::EvalReport& r) {
    evals.emplace_back(step, r.iou_mean);
  };
  const auto path = tmp_file("avsdf_ck_hooks.avsc");
  h.checkpoint_every = 3;
  h.checkpoint_path = path.string();

  fit(c, default_body_gen(c), h);

  REQUIRE(evals.size() == 2);
  REQUIRE(evals[0].first == 3);
  REQUIRE(evals[1].first == 6);
  for (const auto& e : evals) {
    REQUIRE(e.second >= 0.0);
    REQUIRE(e.second <= 100.0);
  }
  Checkpoint saved = load_checkpoint(path.string(), c);
  REQUIRE(saved.step == 6);
  std::filesystem::remove(path);
}

TEST_CASE("evaluation is deterministic and bounded", "[training]") {
  TrainConfig c = tiny_config();
  Model m = init_model(c);
  Rng rng(Rng::derive(kSeed, 18));
  const body::BodyState body = sample_body(c, rng);

  const auto r1 = evaluate_model(m, body, 55, 300, 300, 16);
  const auto r2 = evaluate_model(m, body, 55, 300, 300, 16);
  REQUIRE(r1.iou_mean == r2.iou_mean);
  REQUIRE(r1.mse_sdf == r2.mse_sdf);
  REQUIRE(r1.mse_abs_sdf == r2.mse_abs_sdf);
  REQUIRE(r1.iou_mean >= 0.0);
  REQUIRE(r1.iou_mean <= 100.0);
  REQUIRE(r1.mse_sdf >= 0.0);
  REQUIRE(r1.points_evaluated > 0);

  const auto r3 = evaluate_model(m, body, 56, 300, 300, 16);
  REQUIRE(r3.mse_sdf != r1.mse_sdf);
}

TEST_CASE("validation loss is finite and repeatable", "[training]") {
  TrainConfig c = tiny_config();
  Model m = init_model(c);
  const double v1 = validation_loss(m, c, 77, 2);
  const double v2 = validation_loss(m, c, 77, 2);
  REQUIRE(std::isfinite(v1));
  REQUIRE(v1 > 0.0);
  REQUIRE(v1 == v2);
  REQUIRE(validation_loss(m, c, 78, 2) != v1);
}

TEST_CASE("ablation sweeps flag the default and report the matrix", "[training]") {
  TrainConfig base;
  const auto sweeps = default_sweeps(base);
  REQUIRE(sweeps.size() == 15);
  size_t defaults = 0;
  for (const auto& s : sweeps) {
    REQUIRE_NOTHROW(validate_config(s.config));
    if (s.is_default) {
      ++defaults;
      REQUIRE(s.config == base);
    }
  }
  REQUIRE(defaults == 4);  // one row per axis revisits the base setting

  std::vector<TrainConfig> tiny;
  for (int r : {0, 2}) {
    TrainConfig c = tiny_config();
    c.total_steps = 2;
    c.rank = r;
    tiny.push_back(c);
  }
  AblationOptions opt;
  opt.eval_bodies = 1;
  opt.eval_uniform = 200;
  opt.eval_near = 200;
  const auto rows = ablation_matrix(tiny, opt);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    REQUIRE(r.params == model_param_count(r.config));
    REQUIRE(std::isfinite(r.report.iou_mean));
    REQUIRE(std::isfinite(r.report.mse_sdf));
    REQUIRE(r.train_seconds >= 0.0);
  }
  REQUIRE(rows[0].params < rows[1].params);

  const auto table = ablation_table_json(rows);
  REQUIRE(table.at("schema") == "avsdf.ablation.v1");
  REQUIRE(table.at("rows").size() == 2);
  REQUIRE(table.at("rows").at(0).at("train_seconds").is_null());
  REQUIRE(table.at("rows").at(0).at("rank") == 0);
  const auto timed = ablation_table_json(rows, true);
  REQUIRE(timed.at("rows").at(0).at("train_seconds").is_number());
}
