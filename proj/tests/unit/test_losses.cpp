#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdb/errors.hpp"
#include "sdb/losses.hpp"
#include "test_util.hpp"

using namespace sdb;
using sdb::test::random_tensor;

namespace {

double softplus(double x) { return std::log1p(std::exp(x)); }

// Explicit batch-hard soft-margin triplet, straight from the definition.
double triplet_bruteforce(const Tensor& e, const std::vector<int>& y) {
  const std::size_t n = e.dim(0), d = e.dim(1);
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += (e.at(i, c) - e.at(j, c)) * (e.at(i, c) - e.at(j, c));
    return std::sqrt(s);
  };
  double total = 0;
  for (std::size_t a = 0; a < n; ++a) {
    double hp = 0, hn = 1e300;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (y[j] == y[a]) hp = std::max(hp, dist(a, j));
      else hn = std::min(hn, dist(a, j));
    }
    total += softplus(hp - hn);
  }
  return total / n;
}

}  // namespace

TEST_CASE("triplet loss hand values") {
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(triplet_soft_margin(Tensor({4, 1}, {0, 0, 1, 1}), y).value == doctest::Approx(0.31326).epsilon(1e-5));
  CHECK(triplet_soft_margin(Tensor({4, 1}, {0, 0, 10, 10}), y).value ==
        doctest::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-9));
  CHECK(triplet_soft_margin(Tensor({4, 1}, {0, 0, 10, 10}), y).value == doctest::Approx(4.54e-5).epsilon(1e-3));
  const Tensor e({4, 1}, {0, 0.1, 1, 1.1});
  CHECK(triplet_soft_margin(e, y).value == doctest::Approx((softplus(-0.9) + softplus(-0.8)) / 2).epsilon(1e-12));
}

TEST_CASE("triplet loss matches the brute-force definition on random batches") {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const Tensor e = random_tensor({12, 5}, rng);
    std::vector<int> y;
    for (int i = 0; i < 12; ++i) y.push_back(i / 3);
    CHECK(triplet_soft_margin(e, y).value == doctest::Approx(triplet_bruteforce(e, y)).epsilon(1e-12));
  }
}

TEST_CASE("identical embeddings give ln 2; uniform logits give ln K") {
  CHECK(std::abs(triplet_soft_margin(Tensor({6, 3}, 0.4), std::vector<int>{0, 0, 1, 1, 2, 2}).value - std::log(2.0)) <
        1e-9);
  for (std::size_t k : {2u, 5u, 751u}) {
    std::vector<int> y{0, 1, 0, 1};
    CHECK(std::abs(id_loss(Tensor({4, k}, -3.0), y).value - std::log(static_cast<double>(k))) < 1e-9);
  }
}

TEST_CASE("triplet loss is permutation and translation invariant") {
  Rng rng(2);
  const Tensor e = random_tensor({8, 4}, rng);
  const std::vector<int> y{0, 0, 1, 1, 2, 2, 3, 3};
  const double base = triplet_soft_margin(e, y).value;

  std::vector<std::size_t> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor ep({8, 4});
  std::vector<int> yp(8);
  for (std::size_t i = 0; i < 8; ++i) {
    yp[i] = y[perm[i]];
    for (std::size_t c = 0; c < 4; ++c) ep.at(i, c) = e.at(perm[i], c);
  }
  CHECK(triplet_soft_margin(ep, yp).value == doctest::Approx(base).epsilon(1e-12));

  Tensor et = e;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t c = 0; c < 4; ++c) et.at(i, c) += 3.0 * (c + 1);
  CHECK(triplet_soft_margin(et, y).value == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("triplet loss needs a positive and a negative for every anchor") {
  CHECK_THROWS_AS(triplet_soft_margin(Tensor({2, 2}), std::vector<int>{0, 1}), ParameterError);
  CHECK_THROWS_AS(triplet_soft_margin(Tensor({2, 2}), std::vector<int>{0, 0}), ParameterError);
}

TEST_CASE("id loss is stable for huge logits and rejects bad labels") {
  Tensor logits({2, 3}, {1000, 0, -1000, 0, 1000, 0});
  const LossGrad g = id_loss(logits, std::vector<int>{0, 1});
  CHECK(std::isfinite(g.value));
  CHECK(g.value == doctest::Approx(0).epsilon(1e-12));
  CHECK_THROWS_AS(id_loss(logits, std::vector<int>{0, 3}), ParameterError);
}

TEST_CASE("center loss values") {
  const Tensor e({2, 2}, {1, 0, 3, 0});
  const Tensor c({1, 2}, {2, 0});
  const CenterLossGrad g = center_loss(e, std::vector<int>{0, 0}, c);
  CHECK(g.value == doctest::Approx(0.5));
  // at the centers the loss and its gradient vanish
  const CenterLossGrad z = center_loss(Tensor({2, 2}, {2, 0, 2, 0}), std::vector<int>{0, 0}, c);
  CHECK(z.value == 0);
  for (Real v : z.d_embeddings.values()) CHECK(v == 0);
}

TEST_CASE("total loss weighting") {
  const std::vector<BranchLoss> b{{1, 0.5, 1}, {1, 0.5, 2}};
  CHECK(total_loss(b, LossWeights{}) == doctest::Approx(3.0015).epsilon(1e-12));
  LossWeights w;
  w.gamma_c = -1;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}
