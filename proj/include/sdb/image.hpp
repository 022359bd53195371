#ifndef SDB_IMAGE_HPP_
#define SDB_IMAGE_HPP_

#include <cstddef>
#include <vector>

#include "sdb/tensor.hpp"

namespace sdb {

struct Dims {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const Dims&) const = default;
};

// H x W x 3, interleaved channels, real valued. Raw images live in [0, 1];
// after the pipeline they are in normalized space.
class ImageTensor {
 public:
  static constexpr std::size_t kChannels = 3;

  ImageTensor() = default;
  ImageTensor(std::size_t height, std::size_t width, Real fill = 0)
      : dims_{height, width}, data_(height * width * kChannels, fill) {}

  Dims dims() const noexcept { return dims_; }
  std::size_t height() const noexcept { return dims_.height; }
  std::size_t width() const noexcept { return dims_.width; }
  bool empty() const noexcept { return data_.empty(); }

  Real& at(std::size_t y, std::size_t x, std::size_t c) { return data_[(y * dims_.width + x) * kChannels + c]; }
  Real at(std::size_t y, std::size_t x, std::size_t c) const { return data_[(y * dims_.width + x) * kChannels + c]; }

  std::vector<Real>& storage() noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  bool operator==(const ImageTensor&) const = default;

 private:
  Dims dims_;
  std::vector<Real> data_;
};

// Packs images (all the same size) into an (n, 3, H, W) tensor.
Tensor to_nchw(const std::vector<ImageTensor>& images);

}  // namespace sdb

#endif  // SDB_IMAGE_HPP_
