#ifndef SDB_NN_HPP_
#define SDB_NN_HPP_

// Layers with explicit forward/backward. Each layer caches what its backward
// needs from the most recent forward call; backward accumulates parameter
// gradients (+=) and returns the gradient w.r.t. its input.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sdb/augment.hpp"
#include "sdb/kernels.hpp"
#include "sdb/tensor.hpp"

namespace sdb::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

using ParamRefs = std::vector<Parameter*>;
using BufferRefs = std::vector<std::pair<std::string, Tensor*>>;

void zero_grads(const ParamRefs& params);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride, std::size_t pad, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void collect(ParamRefs& out) { out.push_back(&weight_); }

  std::size_t out_channels() const { return out_channels_; }

 private:
  kernels::ConvGeometry geometry(const Tensor& x) const;

  std::size_t in_channels_ = 0, out_channels_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  Parameter weight_;
  Tensor input_;
};

// Batch normalization over (n, h, w) for NCHW input or over n for (n, c).
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t channels, Real momentum = 0.1, Real eps = 1e-5);

  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
  void collect(ParamRefs& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void collect_buffers(BufferRefs& out) {
    out.emplace_back(name_ + ".running_mean", &running_mean_);
    out.emplace_back(name_ + ".running_var", &running_var_);
  }

 private:
  std::string name_;
  std::size_t channels_ = 0;
  Real momentum_ = 0.1, eps_ = 1e-5;
  Parameter gamma_, beta_;
  Tensor running_mean_, running_var_;
  // cache
  bool train_ = false;
  Tensor xhat_;
  std::vector<Real> inv_std_;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;

 private:
  std::vector<std::uint8_t> active_;
};

class MaxPool2d {
 public:
  MaxPool2d(std::size_t kernel = 3, std::size_t stride = 2, std::size_t pad = 1)
      : kernel_(kernel), stride_(stride), pad_(pad) {}
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;

 private:
  std::size_t kernel_, stride_, pad_;
  Shape in_shape_;
  kernels::PoolGeometry geom_;
  std::vector<std::uint32_t> argmax_;
};

enum class PoolKind { kAverage, kMax };

// (n, c, h, w) -> (n, c).
class GlobalPool {
 public:
  explicit GlobalPool(PoolKind kind = PoolKind::kAverage) : kind_(kind) {}
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;
  PoolKind kind() const { return kind_; }

 private:
  PoolKind kind_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

// y = x W^T (+ b), W is (out, in).
class Linear {
 public:
  enum class Init { kKaiming, kClassifier };

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, bool bias, Init init, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void collect(ParamRefs& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

 private:
  std::size_t in_ = 0, out_ = 0;
  bool has_bias_ = false;
  Parameter weight_, bias_;
  Tensor input_;
};

// Residual bottleneck: 1x1 reduce, 3x3 (carries the stride), 1x1 expand, with a
// projection shortcut whenever the shape changes.
class Bottleneck {
 public:
  Bottleneck(const std::string& name, std::size_t in, std::size_t mid, std::size_t out, std::size_t stride, Rng& rng);

  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
  void collect(ParamRefs& out);
  void collect_buffers(BufferRefs& out);

 private:
  Conv2d conv1_, conv2_, conv3_;
  BatchNorm bn1_, bn2_, bn3_;
  ReLU relu1_, relu2_, relu_out_;
  bool projection_ = false;
  Conv2d proj_conv_;
  BatchNorm proj_bn_;
};

}  // namespace sdb::nn

#endif  // SDB_NN_HPP_
