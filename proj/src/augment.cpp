#include "sdb/augment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sdb/errors.hpp"

namespace sdb {

Tensor to_nchw(const std::vector<ImageTensor>& images) {
  if (images.empty()) return {};
  const Dims d = images.front().dims();
  Tensor out({images.size(), ImageTensor::kChannels, d.height, d.width});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].dims() != d) throw ParameterError("to_nchw: images differ in size");
    for (std::size_t y = 0; y < d.height; ++y)
      for (std::size_t x = 0; x < d.width; ++x)
        for (std::size_t c = 0; c < ImageTensor::kChannels; ++c) out.at(n, c, y, x) = images[n].at(y, x, c);
  }
  return out;
}

std::string_view to_string(DropMode mode) {
  switch (mode) {
    case DropMode::kSlowDropBlock: return "slow_dropblock";
    case DropMode::kDropBlock: return "dropblock";
    case DropMode::kBatchDropBlock: return "batch_dropblock";
    case DropMode::kCutout: return "cutout";
    case DropMode::kRandomErasing: return "random_erasing";
    case DropMode::kNone: return "none";
  }
  return "none";
}

DropMode parse_drop_mode(std::string_view name) {
  for (auto m : {DropMode::kSlowDropBlock, DropMode::kDropBlock, DropMode::kBatchDropBlock, DropMode::kCutout,
                 DropMode::kRandomErasing, DropMode::kNone})
    if (to_string(m) == name) return m;
  throw ParameterError("unknown drop mode '" + std::string(name) + "'");
}

void DropSpec::validate() const {
  if (!(r_h >= 0 && r_h <= 1)) throw ParameterError("r_h must be in [0,1], got " + std::to_string(r_h));
  if (!(r_w >= 0 && r_w <= 1)) throw ParameterError("r_w must be in [0,1], got " + std::to_string(r_w));
  if (q < 1) throw ParameterError("q must be >= 1, got " + std::to_string(q));
  if (!(prob >= 0 && prob <= 1)) throw ParameterError("prob must be in [0,1], got " + std::to_string(prob));
}

namespace {

std::size_t uniform_index(Rng& rng, std::size_t max_inclusive) {
  return std::uniform_int_distribution<std::size_t>(0, max_inclusive)(rng);
}

bool fires(double prob, Rng& rng) {
  if (prob >= 1) return true;
  return std::uniform_real_distribution<double>(0, 1)(rng) < prob;
}

}  // namespace

DropMask make_drop_mask(const DropSpec& spec, Dims dims, Rng& rng) {
  spec.validate();
  if (dims.height == 0 || dims.width == 0) throw ParameterError("make_drop_mask: empty image dims");
  DropMask m;
  m.image_dims = dims;
  if (spec.mode == DropMode::kNone) return m;
  m.drop_h = std::min(dims.height, static_cast<std::size_t>(std::floor(spec.r_h * static_cast<double>(dims.height))));
  m.drop_w = std::min(dims.width, static_cast<std::size_t>(std::floor(spec.r_w * static_cast<double>(dims.width))));
  m.y0 = uniform_index(rng, dims.height - m.drop_h);
  m.x0 = uniform_index(rng, dims.width - m.drop_w);
  return m;
}

void apply_mask_inplace(ImageTensor& img, const DropMask& mask, Real fill) {
  if (img.dims() != mask.image_dims) throw ParameterError("apply_mask: mask dims do not match image");
  for (std::size_t y = mask.y0; y < mask.y0 + mask.drop_h; ++y)
    for (std::size_t x = mask.x0; x < mask.x0 + mask.drop_w; ++x)
      for (std::size_t c = 0; c < ImageTensor::kChannels; ++c) img.at(y, x, c) = fill;
}

ImageTensor apply_mask(const ImageTensor& img, const DropMask& mask, Real fill) {
  ImageTensor out = img;
  apply_mask_inplace(out, mask, fill);
  return out;
}

MaskStream::MaskStream(DropSpec spec, Dims dims, std::uint64_t seed) : spec_(spec), dims_(dims), rng_(seed) {
  spec_.validate();
  current_.image_dims = dims_;
}

int MaskStream::effective_q() const noexcept { return spec_.mode == DropMode::kBatchDropBlock ? 1 : spec_.q; }

const DropMask& MaskStream::next() {
  if (counter_ % static_cast<std::uint64_t>(effective_q()) == 0) current_ = make_drop_mask(spec_, dims_, rng_);
  ++counter_;
  return current_;
}

std::string MaskStream::save_state() const {
  std::ostringstream os;
  os << counter_ << ' ' << current_.y0 << ' ' << current_.drop_h << ' ' << current_.x0 << ' ' << current_.drop_w
     << ' ' << rng_;
  return os.str();
}

void MaskStream::load_state(const std::string& state) {
  std::istringstream is(state);
  is >> counter_ >> current_.y0 >> current_.drop_h >> current_.x0 >> current_.drop_w >> rng_;
  if (!is) throw ParseError("mask stream state is corrupt");
  current_.image_dims = dims_;
}

ImageTensor rect_occlude(const ImageTensor& img, const DropSpec& spec, Rng& rng) {
  spec.validate();
  const Dims d = img.dims();
  switch (spec.mode) {
    case DropMode::kCutout: {
      if (!fires(spec.prob, rng)) return img;
      const double area = spec.r_h * spec.r_w * static_cast<double>(d.height * d.width);
      const auto side = std::min({static_cast<std::size_t>(std::floor(std::sqrt(area))), d.height, d.width});
      DropMask m{0, side, 0, side, d};
      if (side == 0) return img;
      m.y0 = uniform_index(rng, d.height - side);
      m.x0 = uniform_index(rng, d.width - side);
      return apply_mask(img, m, 0);
    }
    case DropMode::kRandomErasing: {
      if (!fires(spec.prob, rng)) return img;
      DropSpec rect = spec;
      rect.mode = DropMode::kDropBlock;
      const DropMask m = make_drop_mask(rect, d, rng);
      ImageTensor out = img;
      std::uniform_real_distribution<Real> value(0, 1);
      for (std::size_t y = m.y0; y < m.y0 + m.drop_h; ++y)
        for (std::size_t x = m.x0; x < m.x0 + m.drop_w; ++x)
          for (std::size_t c = 0; c < ImageTensor::kChannels; ++c) out.at(y, x, c) = value(rng);
      return out;
    }
    case DropMode::kDropBlock: {
      if (!fires(spec.prob, rng)) return img;
      return apply_mask(img, make_drop_mask(spec, d, rng), 0);
    }
    default:
      throw ParameterError("rect_occlude: unsupported mode '" + std::string(to_string(spec.mode)) + "'");
  }
}

void PipelineConfig::validate() const {
  if (resize_to.height == 0 || resize_to.width == 0) throw ParameterError("resize_to must be positive");
  if (!(flip_prob >= 0 && flip_prob <= 1)) throw ParameterError("flip_prob must be in [0,1]");
  if (cutout) cutout->validate();
  if (random_erasing) random_erasing->validate();
  for (Real s : normalization.std)
    if (!(s > 0)) throw ParameterError("normalization std must be positive");
}

ImageTensor resize_bilinear(const ImageTensor& img, Dims dims) {
  if (img.dims() == dims) return img;
  ImageTensor out(dims.height, dims.width);
  const double sy = static_cast<double>(img.height()) / static_cast<double>(dims.height);
  const double sx = static_cast<double>(img.width()) / static_cast<double>(dims.width);
  const auto max_y = static_cast<double>(img.height() - 1);
  const auto max_x = static_cast<double>(img.width() - 1);
  for (std::size_t y = 0; y < dims.height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height() - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < dims.width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width() - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < ImageTensor::kChannels; ++c) {
        const Real top = img.at(y0, x0, c) * (1 - wx) + img.at(y0, x1, c) * wx;
        const Real bottom = img.at(y1, x0, c) * (1 - wx) + img.at(y1, x1, c) * wx;
        out.at(y, x, c) = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

ImageTensor flip_horizontal(const ImageTensor& img) {
  ImageTensor out(img.height(), img.width());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < ImageTensor::kChannels; ++c) out.at(y, x, c) = img.at(y, img.width() - 1 - x, c);
  return out;
}

void normalize_inplace(ImageTensor& img, const Normalization& norm) {
  auto& v = img.storage();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t c = i % ImageTensor::kChannels;
    v[i] = (v[i] - norm.mean[c]) / norm.std[c];
  }
}

ImageTensor standard_pipeline(const ImageTensor& raw, const PipelineConfig& cfg, bool train, Rng& rng) {
  if (raw.empty() || raw.height() == 0 || raw.width() == 0 ||
      raw.storage().size() != raw.height() * raw.width() * ImageTensor::kChannels)
    throw DataError("standard_pipeline: input image is empty or ill-shaped");
  ImageTensor img = resize_bilinear(raw, cfg.resize_to);
  if (train) {
    if (cfg.flip_prob > 0 && std::uniform_real_distribution<double>(0, 1)(rng) < cfg.flip_prob)
      img = flip_horizontal(img);
    if (cfg.cutout && cfg.cutout->mode != DropMode::kNone) img = rect_occlude(img, *cfg.cutout, rng);
    if (cfg.random_erasing && cfg.random_erasing->mode != DropMode::kNone)
      img = rect_occlude(img, *cfg.random_erasing, rng);
  }
  normalize_inplace(img, cfg.normalization);
  return img;
}

}  // namespace sdb
