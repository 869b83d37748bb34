#pragma once

// External body format (AVSB), binary little-endian:
//   magic 'AVSB', u32 version=1, u32 K, u32 points_per_part,
//   per part: 12 x f64 transform (row-major 3x4, canonical->world),
//             6 x f32 padded box (lo, hi), points_per_part x 3 x f32 canonical cloud,
//   optional GT block: u64 count, count x 4 x f32 (world xyz + signed distance).

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "avsdf/body/body.hpp"
#include "avsdf/core/error.hpp"
#include "avsdf/core/tensor.hpp"

namespace avsdf::body {

static_assert(std::endian::native == std::endian::little, "AVSB io assumes a little-endian host");

struct GtSample {
  float x, y, z, d;
};

struct ExternalBody {
  BodyState body;
  std::vector<num::Tensor> clouds;  // per part [P,3], canonical frame
  std::vector<GtSample> gt;
};

namespace detail {

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError(std::string("AVSB: truncated while reading ") + what);
  return v;
}

inline void check_rigid(const Mat3& r) {
  double residual = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot_ij = 0.0;
      for (int k = 0; k < 3; ++k) dot_ij += r(k, i) * r(k, j);
      residual = std::max(residual, std::fabs(dot_ij - (i == j ? 1.0 : 0.0)));
    }
  if (residual > 1e-4) throw IoError("AVSB: non-rigid transform (orthonormality residual > 1e-4)");
  if (r.det() < 0.9) throw IoError("AVSB: non-rigid transform (reflection or degenerate rotation)");
}

}  // namespace detail

inline void save_external_body(const std::string& path, const BodyState& body,
                               const std::vector<num::Tensor>& clouds,
                               const std::vector<GtSample>* gt = nullptr) {
  require(static_cast<int>(clouds.size()) == body.num_parts,
          "save_external_body: one cloud per part required");
  require(!clouds.empty(), "save_external_body: empty body");
  const int64_t ppp = clouds[0].dim(0);
  for (const num::Tensor& c : clouds)
    require(c.rank() == 2 && c.dim(1) == 3 && c.dim(0) == ppp,
            "save_external_body: clouds must share shape [P,3]");

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("AVSB: cannot open for writing: " + path);
  os.write("AVSB", 4);
  detail::put(os, static_cast<uint32_t>(1));
  detail::put(os, static_cast<uint32_t>(body.num_parts));
  detail::put(os, static_cast<uint32_t>(ppp));
  for (int k = 0; k < body.num_parts; ++k) {
    const BoneTransform& g = body.transforms[static_cast<size_t>(k)];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) detail::put(os, g.R(i, j));
      detail::put(os, g.t[static_cast<size_t>(i)]);
    }
    const PartBox& b = body.boxes[static_cast<size_t>(k)];
    for (int i = 0; i < 3; ++i) detail::put(os, static_cast<float>(b.lo[static_cast<size_t>(i)]));
    for (int i = 0; i < 3; ++i) detail::put(os, static_cast<float>(b.hi[static_cast<size_t>(i)]));
    const num::Tensor& c = clouds[static_cast<size_t>(k)];
    os.write(reinterpret_cast<const char*>(c.data()),
             static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(c.numel())));
  }
  if (gt) {
    detail::put(os, static_cast<uint64_t>(gt->size()));
    os.write(reinterpret_cast<const char*>(gt->data()),
             static_cast<std::streamsize>(sizeof(GtSample) * gt->size()));
  }
  if (!os) throw IoError("AVSB: write failed: " + path);
}

inline ExternalBody load_external_body(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("AVSB: cannot open: " + path);

  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "AVSB", 4) != 0) throw IoError("AVSB: bad magic");
  const auto version = detail::get<uint32_t>(is, "version");
  if (version != 1) throw IoError("AVSB: unsupported version " + std::to_string(version));
  const auto num_parts = detail::get<uint32_t>(is, "part count");
  const auto ppp = detail::get<uint32_t>(is, "points per part");
  if (num_parts == 0 || num_parts > 1024) throw IoError("AVSB: implausible part count");
  if (ppp == 0) throw IoError("AVSB: empty part clouds");

  ExternalBody out;
  out.body.num_parts = static_cast<int>(num_parts);
  for (uint32_t k = 0; k < num_parts; ++k) {
    BoneTransform g;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) g.R(i, j) = detail::get<double>(is, "transform");
      g.t[static_cast<size_t>(i)] = detail::get<double>(is, "transform");
    }
    for (double v : g.R.m)
      if (!std::isfinite(v)) throw IoError("AVSB: non-finite transform");
    detail::check_rigid(g.R);
    out.body.transforms.push_back(g);

    PartBox b;
    for (int i = 0; i < 3; ++i) b.lo[static_cast<size_t>(i)] = detail::get<float>(is, "box");
    for (int i = 0; i < 3; ++i) b.hi[static_cast<size_t>(i)] = detail::get<float>(is, "box");
    for (int i = 0; i < 3; ++i)
      if (!(b.lo[static_cast<size_t>(i)] < b.hi[static_cast<size_t>(i)]))
        throw IoError("AVSB: degenerate part box");
    out.body.boxes.push_back(b);

    num::Tensor cloud({static_cast<int64_t>(ppp), 3});
    is.read(reinterpret_cast<char*>(cloud.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(cloud.numel())));
    if (!is) throw IoError("AVSB: truncated cloud");
    if (!cloud.all_finite()) throw IoError("AVSB: non-finite cloud");
    out.clouds.push_back(std::move(cloud));
  }
  if (num_parts == kNumParts) out.body.adjacency = tree_adjacency();

  // trailing GT block is optional, but partial trailers are corruption
  uint64_t count = 0;
  is.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (is) {
    out.gt.resize(count);
    if (count > 0) {
      is.read(reinterpret_cast<char*>(out.gt.data()),
              static_cast<std::streamsize>(sizeof(GtSample) * count));
      if (!is) throw IoError("AVSB: truncated GT block");
    }
    is.peek();
    if (!is.eof()) throw IoError("AVSB: trailing bytes after GT block");
  } else if (is.gcount() != 0) {
    throw IoError("AVSB: trailing bytes");
  }
  return out;
}

}  // namespace avsdf::body
