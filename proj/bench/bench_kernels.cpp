// Times the OpenMP kernels against the serial reference versions on
// toy-network and ResNet-50 shapes. Prints one line per kernel with the
// median wall time of each route and the max abs difference of the outputs.
//
//   bench_kernels [--reps N]

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sdb/kernels.hpp"

using namespace sdb;
namespace k = sdb::kernels;

namespace {

std::vector<Real> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<Real> d(0, 1);
  std::vector<Real> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double median_ms(int reps, const std::function<void()>& fn) {
  std::vector<double> t;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

double max_diff(const std::vector<Real>& a, const std::vector<Real>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void report(const std::string& name, double par, double ref, double diff) {
  std::printf("%-34s parallel %9.3f ms  reference %9.3f ms  speedup %5.2fx  max|diff| %.2e\n", name.c_str(), par,
              ref, ref / par, diff);
}

void bench_gemm(std::size_t m, std::size_t n, std::size_t kk, int reps, std::mt19937_64& rng) {
  const auto a = random_vec(m * kk, rng), b = random_vec(kk * n, rng);
  std::vector<Real> c1(m * n), c2(m * n);
  const double par = median_ms(reps, [&] { k::gemm(k::Trans::kNo, k::Trans::kNo, m, n, kk, 1, a.data(), b.data(), 0, c1.data()); });
  const double ref = median_ms(reps, [&] {
    k::reference::gemm(k::Trans::kNo, k::Trans::kNo, m, n, kk, 1, a.data(), b.data(), 0, c2.data());
  });
  report("gemm " + std::to_string(m) + "x" + std::to_string(n) + "x" + std::to_string(kk), par, ref, max_diff(c1, c2));
}

void bench_conv(const k::ConvGeometry& g, std::size_t batch, int reps, std::mt19937_64& rng) {
  const auto in = random_vec(batch * g.in_channels * g.in_h * g.in_w, rng);
  const auto w = random_vec(g.out_channels * g.patch(), rng);
  const std::size_t on = batch * g.out_channels * g.out_h() * g.out_w();
  const auto dout = random_vec(on, rng);
  std::vector<Real> o1(on), o2(on);
  const std::string shape = std::to_string(g.in_channels) + "->" + std::to_string(g.out_channels) + " k" +
                            std::to_string(g.kernel) + " " + std::to_string(g.in_h) + "x" + std::to_string(g.in_w);
  double par = median_ms(reps, [&] { k::conv2d_forward(g, batch, in.data(), w.data(), o1.data()); });
  double ref = median_ms(reps, [&] { k::reference::conv2d_forward(g, batch, in.data(), w.data(), o2.data()); });
  report("conv fwd " + shape, par, ref, max_diff(o1, o2));

  std::vector<Real> d1(in.size()), d2(in.size());
  par = median_ms(reps, [&] { k::conv2d_backward_data(g, batch, dout.data(), w.data(), d1.data()); });
  ref = median_ms(reps, [&] { k::reference::conv2d_backward_data(g, batch, dout.data(), w.data(), d2.data()); });
  report("conv bwd data " + shape, par, ref, max_diff(d1, d2));

  std::vector<Real> w1(w.size()), w2(w.size());
  par = median_ms(reps, [&] {
    std::fill(w1.begin(), w1.end(), 0);
    k::conv2d_backward_weight(g, batch, in.data(), dout.data(), w1.data());
  });
  ref = median_ms(reps, [&] {
    std::fill(w2.begin(), w2.end(), 0);
    k::reference::conv2d_backward_weight(g, batch, in.data(), dout.data(), w2.data());
  });
  report("conv bwd weight " + shape, par, ref, max_diff(w1, w2));
}

void bench_pool(const k::PoolGeometry& g, std::size_t batch, int reps, std::mt19937_64& rng) {
  const auto in = random_vec(batch * g.channels * g.in_h * g.in_w, rng);
  const std::size_t on = batch * g.channels * g.out_h() * g.out_w();
  std::vector<Real> o1(on), o2(on);
  std::vector<std::uint32_t> a1(on), a2(on);
  const double par = median_ms(reps, [&] { k::max_pool2d_forward(g, batch, in.data(), o1.data(), a1.data()); });
  const double ref = median_ms(reps, [&] { k::reference::max_pool2d_forward(g, batch, in.data(), o2.data(), a2.data()); });
  report("maxpool fwd " + std::to_string(g.channels) + "x" + std::to_string(g.in_h) + "x" + std::to_string(g.in_w), par,
         ref, max_diff(o1, o2));
}

void bench_dist(std::size_t na, std::size_t nb, std::size_t d, int reps, std::mt19937_64& rng) {
  const auto a = random_vec(na * d, rng), b = random_vec(nb * d, rng);
  std::vector<Real> o1(na * nb), o2(na * nb);
  const double par = median_ms(reps, [&] { k::pairwise_sq_euclidean(a.data(), na, b.data(), nb, d, o1.data()); });
  const double ref = median_ms(reps, [&] { k::reference::pairwise_sq_euclidean(a.data(), na, b.data(), nb, d, o2.data()); });
  report("distances " + std::to_string(na) + "x" + std::to_string(nb) + " d" + std::to_string(d), par, ref,
         max_diff(o1, o2));
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::strcmp(argv[i], "--reps") == 0) reps = std::max(1, std::atoi(argv[i + 1]));
  std::printf("threads %d, reps %d\n", omp_get_max_threads(), reps);
  std::mt19937_64 rng(42);

  bench_gemm(256, 256, 256, reps, rng);
  bench_gemm(64, 1024, 512, reps, rng);
  // toy backbone, batch of 64
  bench_conv({3, 64, 32, 16, 3, 1, 1}, 64, reps, rng);
  bench_conv({32, 16, 8, 64, 3, 1, 1}, 64, reps, rng);
  bench_conv({64, 16, 8, 128, 1, 1, 0}, 64, reps, rng);
  // ResNet-50 stage-4 bottleneck 3x3 at 24x8, batch of 2
  bench_conv({512, 24, 8, 512, 3, 1, 1}, 2, reps, rng);
  bench_pool({16, 64, 32, 3, 2, 1}, 64, reps, rng);
  bench_dist(1000, 5000, 256, reps, rng);
  return 0;
}
