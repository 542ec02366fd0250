#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "optlab/errors.hpp"

namespace optlab {

namespace detail {

// Activation tensors are a few MB each and are allocated and freed once per
// graph op. With glibc defaults those land in mmap/munmap, paying kernel
// zero-fill on every step; raising the thresholds keeps them on the heap.
struct HeapTuning {
  HeapTuning() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 512 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  }
};
inline HeapTuning heap_tuning;

// Tensor storage is 64-byte aligned so vectorized kernels split work at
// offsets that depend only on the shape, never on where the allocator
// happened to place the buffer. Reductions then accumulate in the same
// order on every run, which the bitwise-determinism contracts rely on.
template <typename T, size_t Align>
struct AlignedAlloc {
  using value_type = T;
  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U, Align>&) {}
  T* allocate(size_t n) {
    void* p = nullptr;
    if (posix_memalign(&p, Align, n * sizeof(T)) != 0) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, size_t) { std::free(p); }
  template <class U>
  struct rebind {
    using other = AlignedAlloc<U, Align>;
  };
  bool operator==(const AlignedAlloc&) const { return true; }
  bool operator!=(const AlignedAlloc&) const { return false; }
};

using AlignedDoubles = std::vector<double, AlignedAlloc<double, 64>>;

}  // namespace detail

// Dense row-major tensor of doubles. Plain value type: copy copies, no views.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape)
      : shape_(std::move(shape)), values_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<int64_t> shape, const std::vector<double>& values)
      : shape_(std::move(shape)), values_(values.begin(), values.end()) {
    if (checked_numel(shape_) != static_cast<int64_t>(values_.size())) {
      throw ShapeError("Tensor: shape " + shape_string(shape_) + " does not match " +
                       std::to_string(values_.size()) + " values");
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  static Tensor full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.values_) x = v;
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(values_.size()); }
  bool is_scalar() const { return numel() == 1; }

  // Rows/cols of a rank-2 tensor.
  int64_t rows() const {
    require_rank(2);
    return shape_[0];
  }
  int64_t cols() const {
    require_rank(2);
    return shape_[1];
  }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  double item() const {
    if (!is_scalar()) throw ContractError("Tensor::item: tensor is not scalar");
    return values_[0];
  }

  double operator[](int64_t i) const { return values_[static_cast<size_t>(i)]; }
  double& operator[](int64_t i) { return values_[static_cast<size_t>(i)]; }

  // NaN/Inf detection is a queryable predicate; construction never rejects.
  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static std::string shape_string(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
  }
  std::string shape_string() const { return shape_string(shape_); }

 private:
  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d <= 0) throw ShapeError("Tensor: dimensions must be positive, got " + shape_string(shape));
      n *= d;
    }
    return n;
  }

  void require_rank(int r) const {
    if (rank() != r) {
      throw ShapeError("Tensor: expected rank " + std::to_string(r) + ", got " + shape_string());
    }
  }

  std::vector<int64_t> shape_;
  detail::AlignedDoubles values_;
};

inline double tensor_rms(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s / static_cast<double>(t.numel()));
}

}  // namespace optlab
