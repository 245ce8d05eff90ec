#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace mld {

#ifdef MLD_REAL_F64
using real = double;
#else
using real = float;
#endif

using Shape = std::vector<size_t>;

/// Cache-line aligned storage. Eigen's vectorized reductions peel a different number of
/// leading elements depending on the start address, which changes summation order; a
/// fixed alignment keeps results identical for identical inputs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using RealBuffer = std::vector<real, AlignedAllocator<real>>;

std::string shape_str(const Shape& dims);
size_t shape_numel(const Shape& dims);

/// Dense row-major tensor. Dims are positive; product(dims) == size().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims);
  Tensor(Shape dims, const std::vector<real>& data);
  Tensor(Shape dims, RealBuffer data);
  Tensor(Shape dims, std::initializer_list<real> data) : Tensor(std::move(dims), RealBuffer(data)) {}

  static Tensor zeros(Shape dims) { return Tensor(std::move(dims)); }
  static Tensor filled(Shape dims, real value);
  static Tensor scalar(real value) { return Tensor({1, 1}, {value}); }
  static Tensor matrix(size_t rows, size_t cols, std::initializer_list<real> values);

  const Shape& dims() const noexcept { return dims_; }
  size_t rank() const noexcept { return dims_.size(); }
  size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Matrix view: rows = dims[0], cols = product of remaining dims.
  size_t rows() const noexcept { return dims_.empty() ? 0 : dims_[0]; }
  size_t cols() const noexcept { return rows() == 0 ? 0 : data_.size() / rows(); }

  std::span<const real> data() const noexcept { return data_; }
  std::span<real> data() noexcept { return data_; }
  const real* ptr() const noexcept { return data_.data(); }
  real* ptr() noexcept { return data_.data(); }

  real& operator[](size_t i) { return data_[i]; }
  real operator[](size_t i) const { return data_[i]; }
  real& at(size_t r, size_t c) { return data_[r * cols() + c]; }
  real at(size_t r, size_t c) const { return data_[r * cols() + c]; }

  /// Value of a one-element tensor.
  real item() const;

  Tensor reshaped(Shape dims) const;
  std::span<const real> row(size_t r) const { return {data_.data() + r * cols(), cols()}; }
  std::span<real> row(size_t r) { return {data_.data() + r * cols(), cols()}; }

  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return dims_ == other.dims_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  Shape dims_;
  RealBuffer data_;
};

/// Stacks equal-width matrices vertically.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& t, size_t begin, size_t count);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace mld
