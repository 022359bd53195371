#ifndef SDB_AUGMENT_HPP_
#define SDB_AUGMENT_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "sdb/image.hpp"

namespace sdb {

using Rng = std::mt19937_64;

enum class DropMode { kSlowDropBlock, kDropBlock, kBatchDropBlock, kCutout, kRandomErasing, kNone };

std::string_view to_string(DropMode mode);
DropMode parse_drop_mode(std::string_view name);

// Parameters of a structured dropping pattern. `prob` is the chance a
// per-image occlusion (cutout / random erasing / dropblock) fires at all.
struct DropSpec {
  double r_h = 0.3;
  double r_w = 1.0;
  int q = 5;
  DropMode mode = DropMode::kSlowDropBlock;
  double prob = 1.0;

  void validate() const;
  bool operator==(const DropSpec&) const = default;
};

// Realized occlusion rectangle [y0, y0+drop_h) x [x0, x0+drop_w).
struct DropMask {
  std::size_t y0 = 0;
  std::size_t drop_h = 0;
  std::size_t x0 = 0;
  std::size_t drop_w = 0;
  Dims image_dims;

  bool empty() const noexcept { return drop_h == 0 || drop_w == 0; }
  std::size_t area() const noexcept { return drop_h * drop_w; }
  bool contains(std::size_t y, std::size_t x) const noexcept {
    return y >= y0 && y < y0 + drop_h && x >= x0 && x < x0 + drop_w;
  }
  bool operator==(const DropMask&) const = default;
};

// drop_h = floor(r_h * H), drop_w = floor(r_w * W); the corner is uniform over
// all positions that keep the block inside the image.
DropMask make_drop_mask(const DropSpec& spec, Dims dims, Rng& rng);

ImageTensor apply_mask(const ImageTensor& img, const DropMask& mask, Real fill = 0);
void apply_mask_inplace(ImageTensor& img, const DropMask& mask, Real fill = 0);

// One mask shared by every image of a dropping batch, redrawn every q batches.
// Single owner; not safe to share between threads.
class MaskStream {
 public:
  MaskStream(DropSpec spec, Dims dims, std::uint64_t seed);

  // Returns the mask for the next batch.
  const DropMask& next();

  const DropSpec& spec() const noexcept { return spec_; }
  Dims dims() const noexcept { return dims_; }
  std::uint64_t batch_counter() const noexcept { return counter_; }
  int effective_q() const noexcept;

  std::string save_state() const;
  void load_state(const std::string& state);

 private:
  DropSpec spec_;
  Dims dims_;
  Rng rng_;
  std::uint64_t counter_ = 0;
  DropMask current_;
};

// Per-image rectangular occlusion baselines: cutout (zero square with area
// ratio r_h * r_w), random erasing (uniform [0,1) noise rectangle) and
// DropBlock (fresh zero block per image).
ImageTensor rect_occlude(const ImageTensor& img, const DropSpec& spec, Rng& rng);

struct Normalization {
  std::array<Real, 3> mean{0.485, 0.456, 0.406};
  std::array<Real, 3> std{0.229, 0.224, 0.225};
  bool operator==(const Normalization&) const = default;
};

struct PipelineConfig {
  Dims resize_to{384, 128};
  double flip_prob = 0.5;
  std::optional<DropSpec> cutout;
  std::optional<DropSpec> random_erasing;
  Normalization normalization;

  void validate() const;
};

ImageTensor resize_bilinear(const ImageTensor& img, Dims dims);
ImageTensor flip_horizontal(const ImageTensor& img);
void normalize_inplace(ImageTensor& img, const Normalization& norm);

// train: resize, random flip, cutout, random erasing, normalize.
// test: resize, normalize. Nothing stochastic happens at test time.
ImageTensor standard_pipeline(const ImageTensor& raw, const PipelineConfig& cfg, bool train, Rng& rng);

}  // namespace sdb

#endif  // SDB_AUGMENT_HPP_
