#include <doctest.h>

#include "sdb/attention.hpp"
#include "sdb/gradcheck.hpp"
#include "sdb/nn.hpp"
#include "test_util.hpp"

using namespace sdb;
using sdb::test::dot;
using sdb::test::random_tensor;

namespace {

constexpr double kTol = 1e-4;

// Checks d/dx and d/dparams of dot(forward(x), w) for a layer.
template <class Fwd, class Bwd>
void check_layer(Tensor x, Fwd fwd, Bwd bwd, nn::ParamRefs params, Rng& rng) {
  const Tensor y = fwd(x);
  const Tensor w = random_tensor(y.shape(), rng);
  nn::zero_grads(params);
  const Tensor dx = bwd(w);
  auto loss = [&] { return dot(fwd(x), w); };
  CHECK(check_gradient(loss, x, dx).max_rel_error < kTol);
  for (auto* p : params) {
    INFO(p->name);
    const Tensor g = p->grad;
    CHECK(check_gradient(loss, p->value, g).max_rel_error < kTol);
  }
}

}  // namespace

TEST_CASE("conv2d gradients") {
  Rng rng(1);
  for (auto [k, s, p] : std::vector<std::tuple<int, int, int>>{{3, 1, 1}, {3, 2, 1}, {1, 1, 0}}) {
    nn::Conv2d conv("c", 2, 3, k, s, p, rng);
    nn::ParamRefs ps;
    conv.collect(ps);
    check_layer(random_tensor({2, 2, 5, 4}, rng), [&](const Tensor& x) { return conv.forward(x); },
                [&](const Tensor& dy) { return conv.backward(dy); }, ps, rng);
  }
}

TEST_CASE("batchnorm gradients in train mode, 4-d and 2-d") {
  Rng rng(2);
  nn::BatchNorm bn("bn", 3);
  nn::ParamRefs ps;
  bn.collect(ps);
  // non-trivial affine so that gamma/beta gradients are exercised
  ps[0]->value = random_tensor({3}, rng);
  ps[1]->value = random_tensor({3}, rng);
  check_layer(random_tensor({4, 3, 2, 3}, rng), [&](const Tensor& x) { return bn.forward(x, true); },
              [&](const Tensor& dy) { return bn.backward(dy); }, ps, rng);
  check_layer(random_tensor({6, 3}, rng), [&](const Tensor& x) { return bn.forward(x, true); },
              [&](const Tensor& dy) { return bn.backward(dy); }, ps, rng);
}

TEST_CASE("batchnorm eval mode uses running statistics") {
  nn::BatchNorm bn("bn", 1, 1.0);
  const Tensor x({4, 1}, {1, 2, 3, 4});
  bn.forward(x, true);  // momentum 1: running stats become the batch stats
  const Tensor y = bn.forward(Tensor({1, 1}, {2.5}), false);
  CHECK(y[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("linear, relu, pooling gradients") {
  Rng rng(3);
  nn::Linear lin("fc", 5, 4, true, nn::Linear::Init::kKaiming, rng);
  nn::ParamRefs ps;
  lin.collect(ps);
  ps[1]->value = random_tensor({4}, rng);
  check_layer(random_tensor({3, 5}, rng), [&](const Tensor& x) { return lin.forward(x); },
              [&](const Tensor& dy) { return lin.backward(dy); }, ps, rng);

  nn::ReLU relu;
  check_layer(random_tensor({3, 7}, rng), [&](const Tensor& x) { return relu.forward(x); },
              [&](const Tensor& dy) { return relu.backward(dy); }, {}, rng);

  nn::MaxPool2d mp;
  check_layer(random_tensor({2, 2, 6, 5}, rng), [&](const Tensor& x) { return mp.forward(x); },
              [&](const Tensor& dy) { return mp.backward(dy); }, {}, rng);

  for (auto kind : {nn::PoolKind::kAverage, nn::PoolKind::kMax}) {
    nn::GlobalPool gp(kind);
    check_layer(random_tensor({2, 3, 4, 2}, rng), [&](const Tensor& x) { return gp.forward(x); },
                [&](const Tensor& dy) { return gp.backward(dy); }, {}, rng);
  }
}

TEST_CASE("bottleneck gradients, with and without projection") {
  Rng rng(4);
  for (auto [in, out, stride] : std::vector<std::tuple<int, int, int>>{{4, 4, 1}, {3, 6, 2}}) {
    nn::Bottleneck b("b", in, 2, out, stride, rng);
    nn::ParamRefs ps;
    b.collect(ps);
    check_layer(random_tensor({3, static_cast<std::size_t>(in), 4, 4}, rng),
                [&](const Tensor& x) { return b.forward(x, true); }, [&](const Tensor& dy) { return b.backward(dy); },
                ps, rng);
  }
}

TEST_CASE("attention layer gradients, including lambda") {
  Rng rng(5);
  for (auto kind : {nn::Attention::Kind::kSpatial, nn::Attention::Kind::kChannel})
    for (auto norm : {AffinityNorm::kRowSoftmax, AffinityNorm::kGlobalL1}) {
      nn::Attention att("att", kind, 0.1, norm);
      nn::ParamRefs ps;
      att.collect(ps);
      ps[0]->value[0] = 0.6;
      check_layer(random_tensor({2, 3, 2, 3}, rng, 0.7), [&](const Tensor& x) { return att.forward(x); },
                  [&](const Tensor& dy) { return att.backward(dy); }, ps, rng);
    }
}

TEST_CASE("attention layer starts as the identity") {
  Rng rng(6);
  nn::Attention att("att", nn::Attention::Kind::kSpatial, 0, AffinityNorm::kRowSoftmax);
  const Tensor x = random_tensor({2, 3, 2, 2}, rng);
  CHECK(att.lambda() == 0);
  CHECK(att.forward(x).storage() == x.storage());
}
