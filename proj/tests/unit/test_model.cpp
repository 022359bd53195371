#include <doctest.h>

#include "sdb/errors.hpp"
#include "sdb/model.hpp"
#include "test_util.hpp"

using namespace sdb;
using sdb::test::random_tensor;

namespace {

ModelConfig toy(int branches = 2) {
  ModelConfig c;
  c.num_branches = branches;
  c.backbone = BackboneSpec::toy();
  c.embed_dim = 16;
  c.num_classes = 5;
  c.input_dims = {64, 32};
  return c;
}

}  // namespace

TEST_CASE("ResNet-50 layout: stride-16 feature map and embedding widths") {
  ModelConfig c;
  CHECK(c.feature_shape(1) == Shape{1, 2048, 24, 8});
  CHECK(c.branch_dim() == 512);
  c.num_branches = 2;
  CHECK(c.branch_dim() * c.num_branches == 1024);
  c.num_branches = 4;
  CHECK(c.branch_dim() * c.num_branches == 2048);
  c.use_dim_reduction = false;
  CHECK(c.branch_dim() == 2048);
}

TEST_CASE("toy network shapes") {
  SdbNet net(toy(3), 1);
  CHECK(net.num_branches() == 3);
  Rng rng(1);
  const Tensor x = random_tensor({4, 3, 64, 32}, rng);
  const Tensor f = net.backbone_forward(x, false);
  CHECK(f.shape() == net.config().feature_shape(4));
  CHECK(f.shape() == Shape{4, 128, 4, 2});
  const BranchOutputs o = net.branch_forward(f, 2, false);
  CHECK(o.embedding.shape() == Shape{4, 16});
  CHECK(o.logits.shape() == Shape{4, 5});
  CHECK(o.branch_id == 2);
  CHECK(net.forward_eval(x).shape() == Shape{4, 48});
  const std::vector<int> global{0};
  CHECK(net.forward_eval(x, global).shape() == Shape{4, 16});
}

TEST_CASE("double-batch split feeds each half to its branch") {
  SdbNet net(toy(2), 2);
  Rng rng(2);
  const Tensor x = random_tensor({6, 3, 64, 32}, rng);
  auto [g, l] = net.forward_train(x, 1);
  CHECK(g.embedding.dim(0) == 3);
  CHECK(l.embedding.dim(0) == 3);
  CHECK(g.branch_id == 0);
  CHECK(l.branch_id == 1);
  CHECK_THROWS_AS(net.forward_train(x, 0), ParameterError);
  CHECK_THROWS_AS(net.forward_train(random_tensor({5, 3, 64, 32}, rng), 1), ParameterError);
}

TEST_CASE("evaluation forward is deterministic and leaves buffers alone") {
  SdbNet net(toy(2), 3);
  Rng rng(3);
  // move running stats away from their init
  net.forward_train(random_tensor({8, 3, 64, 32}, rng), 1);
  std::vector<Tensor> before;
  for (auto& [name, t] : net.buffers()) before.push_back(*t);
  const Tensor x = random_tensor({3, 3, 64, 32}, rng);
  const Tensor a = net.forward_eval(x), b = net.forward_eval(x);
  CHECK(a.storage() == b.storage());
  std::size_t i = 0;
  for (auto& [name, t] : net.buffers()) CHECK(t->storage() == before[i++].storage());
  // a sample's embedding does not depend on the rest of the batch
  const Tensor one = net.forward_eval(x.slice_rows(1, 2));
  for (std::size_t d = 0; d < one.size(); ++d) CHECK(one[d] == doctest::Approx(a.at(1, d)).epsilon(1e-12));
}

TEST_CASE("same seed, same weights") {
  SdbNet a(toy(), 5), b(toy(), 5), c(toy(), 6);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->value.storage() == pb[i]->value.storage());
    differs = differs || pa[i]->value.storage() != pc[i]->value.storage();
  }
  CHECK(differs);
}

TEST_CASE("parameter groups partition the network") {
  SdbNet net(toy(3), 1);
  std::size_t n = net.backbone_parameters().size();
  for (int b = 0; b < 3; ++b) n += net.branch_parameters(b).size();
  CHECK(n == net.parameters().size());
  for (auto* p : net.branch_parameters(2)) CHECK(p->name.rfind("branch.local2", 0) == 0);
  CHECK_THROWS_AS(net.branch_parameters(3), ParameterError);
}

TEST_CASE("model configuration errors") {
  ModelConfig c = toy();
  c.num_branches = 1;
  CHECK_THROWS_AS(SdbNet(c, 1), ConfigError);
  c = toy();
  c.backbone.stages[3].stride = 2;
  CHECK_THROWS_AS(SdbNet(c, 1), ConfigError);
  SdbNet net(toy(), 1);
  Rng rng(1);
  CHECK_THROWS_AS(net.forward_eval(random_tensor({1, 3, 32, 32}, rng)), ConfigError);
}

TEST_CASE("ablated variants build and run") {
  ModelConfig c = toy();
  c.use_attention = false;
  c.use_dim_reduction = false;
  SdbNet net(c, 1);
  Rng rng(1);
  CHECK(net.forward_eval(random_tensor({2, 3, 64, 32}, rng)).shape() == Shape{2, 256});
}
