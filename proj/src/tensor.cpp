#include "sdb/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "sdb/errors.hpp"

namespace sdb {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_volume(shape_))
    throw ParameterError("tensor: " + std::to_string(data_.size()) + " values for shape " + shape_string(shape_));
}

void Tensor::reshape(Shape shape) {
  if (shape_volume(shape) != data_.size())
    throw ParameterError("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
  shape_ = std::move(shape);
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin > end || end > shape_[0]) throw ParameterError("slice_rows out of range");
  Shape s = shape_;
  s[0] = end - begin;
  const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
  std::vector<Real> v(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                      data_.begin() + static_cast<std::ptrdiff_t>(end * stride));
  return Tensor(std::move(s), std::move(v));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1))
    throw ParameterError("concat_rows: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Shape s = a.shape();
  s[0] += b.dim(0);
  std::vector<Real> v;
  v.reserve(a.size() + b.size());
  v.insert(v.end(), a.storage().begin(), a.storage().end());
  v.insert(v.end(), b.storage().begin(), b.storage().end());
  return Tensor(std::move(s), std::move(v));
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  const std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) throw ParameterError("concat_cols: row mismatch");
    cols += p.dim(1);
  }
  Tensor out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy_n(p.data() + r * p.dim(1), p.dim(1), out.data() + r * cols + off);
      off += p.dim(1);
    }
  }
  return out;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (dst.size() != src.size()) throw ParameterError("add_inplace: size mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace sdb
