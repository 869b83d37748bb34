#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "avsdf/core/error.hpp"

namespace avsdf::num {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

// Dense f32 tensor, row-major, shared storage. Ops never mutate their inputs;
// the optimizer mutates parameters in place between recorded passes.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<float>>(shape_numel(shape_), fill)) {
    check_shape();
  }

  static Tensor from(Shape shape, std::vector<float> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    require(shape_numel(t.shape_) == static_cast<int64_t>(values.size()),
            "tensor: value count " + std::to_string(values.size()) +
                " does not match shape " + shape_str(t.shape_));
    t.data_ = std::make_shared<std::vector<float>>(std::move(values));
    t.check_shape();
    return t;
  }

  static Tensor scalar(float v) { return from({1}, {v}); }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

  int64_t rows() const { return rank() == 2 ? dim(0) : (rank() == 1 ? 1 : -1); }
  int64_t cols() const { return rank() == 2 ? dim(1) : (rank() == 1 ? dim(0) : -1); }

  const float* data() const { return data_->data(); }
  float* data() { return data_->data(); }
  float operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }
  float& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }
  float at(int64_t r, int64_t c) const { return (*data_)[static_cast<size_t>(r * dim(1) + c)]; }
  float& at(int64_t r, int64_t c) { return (*data_)[static_cast<size_t>(r * dim(1) + c)]; }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<float>>(*data_);
    return t;
  }

  // shares storage, reinterprets shape
  Tensor viewed(Shape shape) const {
    require(shape_numel(shape) == numel(), "view: numel mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (float v : *data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(float v) { std::fill(data_->begin(), data_->end(), v); }

 private:
  void check_shape() const {
    for (int64_t d : shape_) require(d > 0, "tensor: nonpositive dim in " + shape_str(shape_));
  }

  Shape shape_;
  std::shared_ptr<std::vector<float>> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.same_shape(b), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                               " vs " + shape_str(b.shape()));
}

// What a double becomes after a trip through f32 storage. The volatile is
// load-bearing: gcc 11 at -O3 SLP-vectorizes paired casts and forwards the
// unrounded doubles through, so a plain double->float->double round-trip in
// registers can silently skip the rounding.
inline double round_f32(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

#if !defined(NDEBUG) || defined(AVSDF_FINITE_CHECKS)
inline void debug_check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw ContractError(std::string(op) + ": non-finite value produced");
}
#else
inline void debug_check_finite(const Tensor&, const char*) {}
#endif

}  // namespace avsdf::num
