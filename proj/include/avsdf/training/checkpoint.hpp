#pragma once

// Checkpoint file (AVSC), binary little-endian:
//   magic 'AVSC', u32 version=1, u32 header length, that many bytes of JSON
//   (config, step, rng root, optional optimizer step count, tensor manifest
//   with name/shape/byte offset), then the f32 payloads in manifest order.
// Model tensors come first in the walk order of visit_params; when optimizer
// state is kept, the Adam moments follow as adam.m.<name> / adam.v.<name>.
// The RNG entry records the derivation root: every sampling stream is a pure
// function of (seed, step, slot), so (seed, step) is the whole resume state.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "avsdf/core/adam.hpp"
#include "avsdf/core/error.hpp"
#include "avsdf/training/model.hpp"

namespace avsdf::train {

static_assert(std::endian::native == std::endian::little, "AVSC io assumes a little-endian host");

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  Model model;
  std::map<std::string, num::Moments> moments;  // empty when optimizer state was dropped
  int64_t adam_steps = 0;                       // Adam updates applied, for bias correction
  int64_t step = 0;                             // completed training steps
};

inline void require_architecture(const TrainConfig& want, const TrainConfig& got) {
  require(want.rank == got.rank && want.width == got.width && want.use_gamma == got.use_gamma,
          "checkpoint: architecture mismatch (want rank " + std::to_string(want.rank) +
              " width " + std::to_string(want.width) + ", file has rank " +
              std::to_string(got.rank) + " width " + std::to_string(got.width) + ")");
}

namespace detail {

using nlohmann::json;

inline json config_json(const TrainConfig& c) {
  return json{{"batch_size", c.batch_size},
              {"lr_start", c.lr_start},
              {"lr_end", c.lr_end},
              {"total_steps", c.total_steps},
              {"seed", c.seed},
              {"rank", c.rank},
              {"width", c.width},
              {"use_gamma", c.use_gamma},
              {"padding", c.padding},
              {"points_per_part", c.points_per_part},
              {"sign_sharpness", c.sign_sharpness},
              {"uniform_per_part", c.uniform_per_part},
              {"near_per_part", c.near_per_part},
              {"near_sigma", c.near_sigma},
              {"joint_range", c.joint_range},
              {"root_range", c.root_range}};
}

inline TrainConfig config_from_json(const json& j) {
  if (!j.is_object()) throw IoError("AVSC: config must be an object");
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<int>();
  c.lr_start = j.at("lr_start").get<double>();
  c.lr_end = j.at("lr_end").get<double>();
  c.total_steps = j.at("total_steps").get<int64_t>();
  c.seed = j.at("seed").get<uint64_t>();
  c.rank = j.at("rank").get<int>();
  c.width = j.at("width").get<int>();
  c.use_gamma = j.at("use_gamma").get<bool>();
  c.padding = j.at("padding").get<double>();
  c.points_per_part = j.at("points_per_part").get<int>();
  c.sign_sharpness = j.at("sign_sharpness").get<double>();
  c.uniform_per_part = j.at("uniform_per_part").get<int>();
  c.near_per_part = j.at("near_per_part").get<int>();
  c.near_sigma = j.at("near_sigma").get<double>();
  c.joint_range = j.at("joint_range").get<double>();
  c.root_range = j.at("root_range").get<double>();
  if (j.size() != config_json(c).size()) throw IoError("AVSC: unknown config field");
  return c;
}

// tensors in payload order: the model walk, then m/v moment pairs per name
template <class F>
void visit_payload(const Checkpoint& ck, F&& f) {
  visit_params(ck.model, [&](const std::string& n, const Tensor& t) { f(n, t); });
  if (ck.moments.empty()) return;
  visit_params(ck.model, [&](const std::string& n, const Tensor&) {
    const auto it = ck.moments.find(n);
    require(it != ck.moments.end(), "checkpoint: missing optimizer moments for " + n);
    f("adam.m." + n, it->second.m);
    f("adam.v." + n, it->second.v);
  });
}

inline json manifest_json(const Checkpoint& ck) {
  json rows = json::array();
  int64_t off = 0;
  visit_payload(ck, [&](const std::string& n, const Tensor& t) {
    rows.push_back(json{{"name", n}, {"shape", t.shape()}, {"offset", off}});
    off += t.numel() * static_cast<int64_t>(sizeof(float));
  });
  return rows;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  validate_config(ck.config);
  require(ck.step >= 0 && ck.adam_steps >= 0, "checkpoint: negative step count");
  if (!ck.moments.empty())
    require(ck.moments.size() == param_list(const_cast<Model&>(ck.model)).size(),
            "checkpoint: moments do not cover the parameter set");

  detail::json j;
  j["version"] = kCheckpointVersion;
  j["config"] = detail::config_json(ck.config);
  j["step"] = ck.step;
  j["rng"] = detail::json{{"scheme", "derive"}, {"seed", ck.config.seed}};
  if (!ck.moments.empty()) j["optimizer"] = detail::json{{"t", ck.adam_steps}};
  j["manifest"] = detail::manifest_json(ck);
  const std::string header = j.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("AVSC: cannot open for writing: " + path);
  os.write("AVSC", 4);
  const uint32_t version = kCheckpointVersion;
  const auto hlen = static_cast<uint32_t>(header.size());
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&hlen), 4);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  detail::visit_payload(ck, [&](const std::string&, const Tensor& t) {
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.numel())));
  });
  if (!os) throw IoError("AVSC: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("AVSC: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "AVSC", 4) != 0) throw IoError("AVSC: bad magic");
  uint32_t version = 0, hlen = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&hlen), 4);
  if (!is || version != kCheckpointVersion)
    throw IoError("AVSC: unsupported version " + std::to_string(version));
  if (hlen == 0 || hlen > (1u << 24)) throw IoError("AVSC: implausible header length");
  std::string header(hlen, '\0');
  is.read(header.data(), hlen);
  if (!is) throw IoError("AVSC: truncated header");

  Checkpoint ck;
  try {
    const detail::json j = detail::json::parse(header);
    if (j.at("version").get<uint32_t>() != version)
      throw IoError("AVSC: header/container version disagree");
    ck.config = detail::config_from_json(j.at("config"));
    ck.step = j.at("step").get<int64_t>();
    if (ck.step < 0) throw IoError("AVSC: negative step");
    const detail::json& rng = j.at("rng");
    if (rng.at("scheme").get<std::string>() != "derive")
      throw IoError("AVSC: unknown rng scheme");
    if (rng.at("seed").get<uint64_t>() != ck.config.seed)
      throw IoError("AVSC: rng root disagrees with the config seed");

    ck.model = model_shell(ck.config);
    if (j.contains("optimizer")) {
      ck.adam_steps = j.at("optimizer").at("t").get<int64_t>();
      if (ck.adam_steps < 0) throw IoError("AVSC: negative optimizer step");
      for (auto& [n, t] : param_list(ck.model)) ck.moments.emplace(n, num::make_moments(*t));
    }

    // the manifest must be exactly what this architecture produces
    const detail::json want = detail::manifest_json(ck);
    if (j.at("manifest") != want) throw IoError("AVSC: manifest does not match the architecture");
  } catch (const detail::json::exception& e) {
    throw IoError(std::string("AVSC: malformed header: ") + e.what());
  }

  detail::visit_payload(ck, [&](const std::string& n, const Tensor& t) {
    auto& dst = const_cast<Tensor&>(t);
    is.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(dst.numel())));
    if (!is) throw IoError("AVSC: truncated payload at " + n);
    if (!dst.all_finite()) throw IoError("AVSC: non-finite values in " + n);
  });
  is.peek();
  if (!is.eof()) throw IoError("AVSC: trailing bytes");
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path, const TrainConfig& expect) {
  Checkpoint ck = load_checkpoint(path);
  require_architecture(expect, ck.config);
  return ck;
}

}  // namespace avsdf::train
