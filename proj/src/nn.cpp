#include "sdb/nn.hpp"

#include <cmath>
#include <limits>

#include "sdb/errors.hpp"

namespace sdb::nn {

void zero_grads(const ParamRefs& params) {
  for (auto* p : params) p->grad.zero();
}

namespace {

Tensor normal_tensor(Shape shape, Real stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<Real> dist(0, stddev);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

void expect_rank(const Tensor& x, std::size_t rank, const char* who) {
  if (x.rank() != rank) throw ParameterError(std::string(who) + ": expected rank " + std::to_string(rank) +
                                             " input, got " + shape_string(x.shape()));
}

}  // namespace

// ---- Conv2d

Conv2d::Conv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, std::size_t pad, Rng& rng)
    : in_channels_(in_channels), out_channels_(out_channels), kernel_(kernel), stride_(stride), pad_(pad) {
  const auto fan_in = static_cast<Real>(in_channels * kernel * kernel);
  weight_ = Parameter(name + ".weight",
                      normal_tensor({out_channels, in_channels, kernel, kernel}, std::sqrt(2.0 / fan_in), rng));
}

kernels::ConvGeometry Conv2d::geometry(const Tensor& x) const {
  expect_rank(x, 4, "conv2d");
  if (x.dim(1) != in_channels_)
    throw ParameterError(weight_.name + ": expected " + std::to_string(in_channels_) + " channels, got " +
                         shape_string(x.shape()));
  return {in_channels_, x.dim(2), x.dim(3), out_channels_, kernel_, stride_, pad_};
}

Tensor Conv2d::forward(const Tensor& x) {
  const auto g = geometry(x);
  input_ = x;
  Tensor out({x.dim(0), out_channels_, g.out_h(), g.out_w()});
  kernels::conv2d_forward(g, x.dim(0), x.data(), weight_.value.data(), out.data());
  return out;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const auto g = geometry(input_);
  kernels::conv2d_backward_weight(g, input_.dim(0), input_.data(), dy.data(), weight_.grad.data());
  Tensor dx(input_.shape());
  kernels::conv2d_backward_data(g, input_.dim(0), dy.data(), weight_.value.data(), dx.data());
  return dx;
}

// ---- BatchNorm

BatchNorm::BatchNorm(const std::string& name, std::size_t channels, Real momentum, Real eps)
    : name_(name),
      channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(name + ".gamma", Tensor({channels}, 1)),
      beta_(name + ".beta", Tensor({channels}, 0)),
      running_mean_({channels}, 0),
      running_var_({channels}, 1) {}

Tensor BatchNorm::forward(const Tensor& x, bool train) {
  if ((x.rank() != 2 && x.rank() != 4) || x.dim(1) != channels_)
    throw ParameterError(name_ + ": bad input " + shape_string(x.shape()));
  const std::size_t n = x.dim(0);
  const std::size_t plane = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  const std::size_t count = n * plane;
  train_ = train;
  xhat_ = Tensor(x.shape());
  inv_std_.assign(channels_, 0);
  Tensor y(x.shape());
  if (train && count < 2) throw ParameterError(name_ + ": batch statistics need at least 2 values per channel");
#pragma omp parallel for schedule(static) if (x.size() > (1 << 15))
  for (std::size_t c = 0; c < channels_; ++c) {
    Real mean, var;
    if (train) {
      Real sum = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < plane; ++p) sum += x[(i * channels_ + c) * plane + p];
      mean = sum / static_cast<Real>(count);
      Real sq = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < plane; ++p) {
          const Real d = x[(i * channels_ + c) * plane + p] - mean;
          sq += d * d;
        }
      var = sq / static_cast<Real>(count);
      running_mean_[c] = (1 - momentum_) * running_mean_[c] + momentum_ * mean;
      running_var_[c] =
          (1 - momentum_) * running_var_[c] + momentum_ * sq / static_cast<Real>(count - 1);
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const Real inv = 1 / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t idx = (i * channels_ + c) * plane + p;
        xhat_[idx] = (x[idx] - mean) * inv;
        y[idx] = gamma_.value[c] * xhat_[idx] + beta_.value[c];
      }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
  const std::size_t n = dy.dim(0);
  const std::size_t plane = dy.rank() == 4 ? dy.dim(2) * dy.dim(3) : 1;
  const auto count = static_cast<Real>(n * plane);
  Tensor dx(dy.shape());
#pragma omp parallel for schedule(static) if (dy.size() > (1 << 15))
  for (std::size_t c = 0; c < channels_; ++c) {
    Real dgamma = 0, dbeta = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t idx = (i * channels_ + c) * plane + p;
        dgamma += dy[idx] * xhat_[idx];
        dbeta += dy[idx];
      }
    gamma_.grad[c] += dgamma;
    beta_.grad[c] += dbeta;
    const Real g = gamma_.value[c] * inv_std_[c];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t idx = (i * channels_ + c) * plane + p;
        dx[idx] = train_ ? g * (dy[idx] - dbeta / count - xhat_[idx] * dgamma / count) : g * dy[idx];
      }
  }
  return dx;
}

// ---- ReLU

Tensor ReLU::forward(const Tensor& x) {
  Tensor y(x.shape());
  active_.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    active_[i] = x[i] > 0;
    y[i] = active_[i] ? x[i] : 0;
  }
  return y;
}

Tensor ReLU::backward(const Tensor& dy) const {
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = active_[i] ? dy[i] : 0;
  return dx;
}

// ---- MaxPool2d

Tensor MaxPool2d::forward(const Tensor& x) {
  expect_rank(x, 4, "max_pool2d");
  in_shape_ = x.shape();
  geom_ = {x.dim(1), x.dim(2), x.dim(3), kernel_, stride_, pad_};
  Tensor y({x.dim(0), x.dim(1), geom_.out_h(), geom_.out_w()});
  argmax_.resize(y.size());
  kernels::max_pool2d_forward(geom_, x.dim(0), x.data(), y.data(), argmax_.data());
  return y;
}

Tensor MaxPool2d::backward(const Tensor& dy) const {
  Tensor dx(in_shape_);
  kernels::max_pool2d_backward(geom_, in_shape_[0], dy.data(), argmax_.data(), dx.data());
  return dx;
}

// ---- GlobalPool

Tensor GlobalPool::forward(const Tensor& x) {
  expect_rank(x, 4, "global_pool");
  in_shape_ = x.shape();
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  if (kind_ == PoolKind::kMax) argmax_.assign(n * c, 0);
  for (std::size_t i = 0; i < n * c; ++i) {
    const Real* src = x.data() + i * plane;
    if (kind_ == PoolKind::kAverage) {
      Real s = 0;
      for (std::size_t p = 0; p < plane; ++p) s += src[p];
      y[i] = s / static_cast<Real>(plane);
    } else {
      std::size_t best = 0;
      for (std::size_t p = 1; p < plane; ++p)
        if (src[p] > src[best]) best = p;
      argmax_[i] = best;
      y[i] = src[best];
    }
  }
  return y;
}

Tensor GlobalPool::backward(const Tensor& dy) const {
  Tensor dx(in_shape_);
  const std::size_t plane = in_shape_[2] * in_shape_[3];
  for (std::size_t i = 0; i < dy.size(); ++i) {
    Real* dst = dx.data() + i * plane;
    if (kind_ == PoolKind::kAverage) {
      const Real g = dy[i] / static_cast<Real>(plane);
      for (std::size_t p = 0; p < plane; ++p) dst[p] = g;
    } else {
      dst[argmax_[i]] = dy[i];
    }
  }
  return dx;
}

// ---- Linear

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, bool bias, Init init, Rng& rng)
    : in_(in), out_(out), has_bias_(bias) {
  const Real stddev = init == Init::kKaiming ? std::sqrt(2.0 / static_cast<Real>(in)) : 0.001;
  weight_ = Parameter(name + ".weight", normal_tensor({out, in}, stddev, rng));
  if (bias) bias_ = Parameter(name + ".bias", Tensor({out}, 0));
}

Tensor Linear::forward(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != in_) throw ParameterError(weight_.name + ": bad input " + shape_string(x.shape()));
  input_ = x;
  const std::size_t n = x.dim(0);
  Tensor y({n, out_});
  kernels::gemm(kernels::Trans::kNo, kernels::Trans::kYes, n, out_, in_, 1, x.data(), weight_.value.data(), 0,
                y.data());
  if (has_bias_)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out_; ++o) y.at(i, o) += bias_.value[o];
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  const std::size_t n = dy.dim(0);
  kernels::gemm(kernels::Trans::kYes, kernels::Trans::kNo, out_, in_, n, 1, dy.data(), input_.data(), 1,
                weight_.grad.data());
  if (has_bias_)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += dy.at(i, o);
  Tensor dx({n, in_});
  kernels::gemm(kernels::Trans::kNo, kernels::Trans::kNo, n, in_, out_, 1, dy.data(), weight_.value.data(), 0,
                dx.data());
  return dx;
}

// ---- Bottleneck

Bottleneck::Bottleneck(const std::string& name, std::size_t in, std::size_t mid, std::size_t out, std::size_t stride,
                       Rng& rng)
    : conv1_(name + ".conv1", in, mid, 1, 1, 0, rng),
      conv2_(name + ".conv2", mid, mid, 3, stride, 1, rng),
      conv3_(name + ".conv3", mid, out, 1, 1, 0, rng),
      bn1_(name + ".bn1", mid),
      bn2_(name + ".bn2", mid),
      bn3_(name + ".bn3", out),
      projection_(in != out || stride != 1) {
  if (projection_) {
    proj_conv_ = Conv2d(name + ".downsample.conv", in, out, 1, stride, 0, rng);
    proj_bn_ = BatchNorm(name + ".downsample.bn", out);
  }
}

Tensor Bottleneck::forward(const Tensor& x, bool train) {
  Tensor h = relu1_.forward(bn1_.forward(conv1_.forward(x), train));
  h = relu2_.forward(bn2_.forward(conv2_.forward(h), train));
  h = bn3_.forward(conv3_.forward(h), train);
  if (projection_)
    add_inplace(h, proj_bn_.forward(proj_conv_.forward(x), train));
  else
    add_inplace(h, x);
  return relu_out_.forward(h);
}

Tensor Bottleneck::backward(const Tensor& dy) {
  const Tensor dsum = relu_out_.backward(dy);
  Tensor dx = conv1_.backward(bn1_.backward(relu1_.backward(
      conv2_.backward(bn2_.backward(relu2_.backward(conv3_.backward(bn3_.backward(dsum))))))));
  if (projection_)
    add_inplace(dx, proj_conv_.backward(proj_bn_.backward(dsum)));
  else
    add_inplace(dx, dsum);
  return dx;
}

void Bottleneck::collect(ParamRefs& out) {
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
  conv3_.collect(out);
  bn3_.collect(out);
  if (projection_) {
    proj_conv_.collect(out);
    proj_bn_.collect(out);
  }
}

void Bottleneck::collect_buffers(BufferRefs& out) {
  bn1_.collect_buffers(out);
  bn2_.collect_buffers(out);
  bn3_.collect_buffers(out);
  if (projection_) proj_bn_.collect_buffers(out);
}

}  // namespace sdb::nn
