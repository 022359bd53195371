#include <doctest.h>

#include <vector>

#include "sdb/kernels.hpp"
#include "test_util.hpp"

using namespace sdb;
namespace k = sdb::kernels;

namespace {

std::vector<Real> rvec(std::size_t n, Rng& rng) {
  std::normal_distribution<Real> d(0, 1);
  std::vector<Real> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double maxdiff(const std::vector<Real>& a, const std::vector<Real>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("gemm matches reference for all transpose combinations") {
  Rng rng(1);
  for (auto ta : {k::Trans::kNo, k::Trans::kYes})
    for (auto tb : {k::Trans::kNo, k::Trans::kYes})
      for (auto [m, n, kk] : std::vector<std::tuple<int, int, int>>{{1, 1, 1}, {7, 13, 5}, {70, 33, 129}}) {
        const auto a = rvec(m * kk, rng), b = rvec(kk * n, rng);
        auto c1 = rvec(m * n, rng);
        auto c2 = c1;
        k::gemm(ta, tb, m, n, kk, 0.7, a.data(), b.data(), 0.3, c1.data());
        k::reference::gemm(ta, tb, m, n, kk, 0.7, a.data(), b.data(), 0.3, c2.data());
        CHECK(maxdiff(c1, c2) < 1e-10);
      }
}

TEST_CASE("gemm with beta 0 ignores NaN in C") {
  std::vector<Real> a{1, 2}, b{3, 4}, c{std::nan(""), std::nan(""), std::nan(""), std::nan("")};
  k::gemm(k::Trans::kNo, k::Trans::kNo, 2, 2, 1, 1, a.data(), b.data(), 0, c.data());
  CHECK(c == std::vector<Real>{3, 4, 6, 8});
}

TEST_CASE("convolution kernels match reference") {
  Rng rng(2);
  const std::vector<k::ConvGeometry> geoms{
      {3, 9, 7, 4, 3, 1, 1}, {4, 8, 6, 5, 3, 2, 1}, {5, 6, 4, 6, 1, 1, 0}, {3, 10, 10, 2, 7, 2, 3}, {2, 5, 5, 3, 1, 2, 0}};
  for (const auto& g : geoms) {
    const std::size_t batch = 3;
    const auto in = rvec(batch * g.in_channels * g.in_h * g.in_w, rng);
    const auto w = rvec(g.out_channels * g.patch(), rng);
    const std::size_t on = batch * g.out_channels * g.out_h() * g.out_w();
    const auto dout = rvec(on, rng);

    std::vector<Real> o1(on), o2(on);
    k::conv2d_forward(g, batch, in.data(), w.data(), o1.data());
    k::reference::conv2d_forward(g, batch, in.data(), w.data(), o2.data());
    CHECK(maxdiff(o1, o2) < 1e-10);

    std::vector<Real> d1(in.size(), 5.0), d2(in.size(), -5.0);  // must be overwritten
    k::conv2d_backward_data(g, batch, dout.data(), w.data(), d1.data());
    k::reference::conv2d_backward_data(g, batch, dout.data(), w.data(), d2.data());
    CHECK(maxdiff(d1, d2) < 1e-10);

    std::vector<Real> w1(w.size(), 1.0), w2(w.size(), 1.0);  // accumulated into
    k::conv2d_backward_weight(g, batch, in.data(), dout.data(), w1.data());
    k::reference::conv2d_backward_weight(g, batch, in.data(), dout.data(), w2.data());
    CHECK(maxdiff(w1, w2) < 1e-9);
  }
}

TEST_CASE("max pooling matches reference") {
  Rng rng(3);
  for (const auto& g : {k::PoolGeometry{3, 9, 7, 3, 2, 1}, k::PoolGeometry{2, 8, 8, 2, 2, 0}}) {
    const std::size_t batch = 2;
    const auto in = rvec(batch * g.channels * g.in_h * g.in_w, rng);
    const std::size_t on = batch * g.channels * g.out_h() * g.out_w();
    std::vector<Real> o1(on), o2(on);
    std::vector<std::uint32_t> a1(on), a2(on);
    k::max_pool2d_forward(g, batch, in.data(), o1.data(), a1.data());
    k::reference::max_pool2d_forward(g, batch, in.data(), o2.data(), a2.data());
    CHECK(o1 == o2);
    CHECK(a1 == a2);
    const auto dout = rvec(on, rng);
    std::vector<Real> d1(in.size(), 3.0), d2(in.size(), 3.0);
    k::max_pool2d_backward(g, batch, dout.data(), a1.data(), d1.data());
    k::reference::max_pool2d_backward(g, batch, dout.data(), a2.data(), d2.data());
    CHECK(maxdiff(d1, d2) < 1e-12);
  }
}

TEST_CASE("pairwise squared distances match reference") {
  Rng rng(4);
  const auto a = rvec(17 * 9, rng), b = rvec(23 * 9, rng);
  std::vector<Real> o1(17 * 23), o2(17 * 23);
  k::pairwise_sq_euclidean(a.data(), 17, b.data(), 23, 9, o1.data());
  k::reference::pairwise_sq_euclidean(a.data(), 17, b.data(), 23, 9, o2.data());
  CHECK(maxdiff(o1, o2) < 1e-10);
  for (Real v : o1) CHECK(v >= 0);
}
