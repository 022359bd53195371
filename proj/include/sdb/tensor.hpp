#ifndef SDB_TENSOR_HPP_
#define SDB_TENSOR_HPP_

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace sdb {

using Real = double;
using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_volume(const Shape& shape);

// Dense row-major array. Feature maps use NCHW, embeddings (n, d).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = 0);
  Tensor(Shape shape, std::vector<Real> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  std::vector<Real>& storage() noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  Real operator[](std::size_t i) const noexcept { return data_[i]; }

  // 4-d accessor for NCHW tensors.
  Real& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Real at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  // 2-d accessor.
  Real& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  Real at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  void reshape(Shape shape);
  void fill(Real v);
  void zero() { fill(0); }

  // Rows [begin, end) along dimension 0.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

// Concatenate along dimension 0; trailing dims must match.
Tensor concat_rows(const Tensor& a, const Tensor& b);
// Concatenate 2-d tensors along dimension 1.
Tensor concat_cols(std::span<const Tensor> parts);

void add_inplace(Tensor& dst, const Tensor& src);

}  // namespace sdb

#endif  // SDB_TENSOR_HPP_
