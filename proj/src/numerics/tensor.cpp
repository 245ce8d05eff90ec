#include "mld/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mld/error.hpp"

namespace mld {

std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ')';
  return os.str();
}

size_t shape_numel(const Shape& dims) {
  size_t n = 1;
  for (size_t d : dims) n *= d;
  return n;
}

namespace {
void check_dims(const Shape& dims) {
  for (size_t d : dims)
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(dims));
}
}  // namespace

Tensor::Tensor(Shape dims) : dims_(std::move(dims)) {
  check_dims(dims_);
  data_.assign(shape_numel(dims_), real(0));
}

Tensor::Tensor(Shape dims, const std::vector<real>& data) : Tensor(std::move(dims), RealBuffer(data.begin(), data.end())) {}

Tensor::Tensor(Shape dims, RealBuffer data) : dims_(std::move(dims)), data_(std::move(data)) {
  check_dims(dims_);
  if (shape_numel(dims_) != data_.size())
    throw ShapeError("tensor payload of " + std::to_string(data_.size()) + " values does not match dims " +
                     shape_str(dims_));
}

Tensor Tensor::filled(Shape dims, real value) {
  Tensor t(std::move(dims));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::matrix(size_t rows, size_t cols, std::initializer_list<real> values) {
  return Tensor({rows, cols}, std::vector<real>(values));
}

real Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor with dims " + shape_str(dims_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape dims) const {
  if (shape_numel(dims) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(dims_) + " to " + shape_str(dims));
  return Tensor(std::move(dims), data_);
}

bool Tensor::all_finite() const noexcept {
  for (real v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const size_t cols = parts[0].cols();
  size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows width mismatch");
    rows += p.rows();
  }
  RealBuffer data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor({rows, cols}, std::move(data));
}

Tensor slice_rows(const Tensor& t, size_t begin, size_t count) {
  if (begin + count > t.rows() || count == 0) throw ShapeError("slice_rows out of range");
  const size_t c = t.cols();
  RealBuffer data(t.data().begin() + begin * c, t.data().begin() + (begin + count) * c);
  return Tensor({count, c}, std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff size mismatch");
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace mld
