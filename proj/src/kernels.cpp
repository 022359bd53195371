#include "sdb/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <limits>
#include <vector>

namespace sdb::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

void gemm_row(Trans ta, Trans tb, std::size_t i, std::size_t m, std::size_t n, std::size_t k, Real alpha,
              const Real* a, const Real* b, Real beta, Real* c, std::vector<Real>& arow) {
  Real* crow = c + i * n;
  if (beta == 0) {
    std::fill_n(crow, n, Real{0});
  } else if (beta != 1) {
    for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
  }
  const Real* ai = a + i * k;
  if (ta == Trans::kYes) {
    arow.resize(k);
    for (std::size_t kk = 0; kk < k; ++kk) arow[kk] = a[kk * m + i];
    ai = arow.data();
  }
  if (tb == Trans::kNo) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const Real s = alpha * ai[kk];
      const Real* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      const Real* bj = b + j * k;
      Real acc = 0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
      crow[j] += alpha * acc;
    }
  }
}

void gemm_serial(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, Real alpha, const Real* a,
                 const Real* b, Real beta, Real* c) {
  std::vector<Real> arow;
  for (std::size_t i = 0; i < m; ++i) gemm_row(ta, tb, i, m, n, k, alpha, a, b, beta, c, arow);
}

void im2col(const ConvGeometry& g, const Real* in, Real* cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), plane = oh * ow;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const Real* src = in + c * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        Real* dst = cols + ((c * g.kernel + ki) * g.kernel + kj) * plane;
        for (std::size_t y = 0; y < oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          Real* row = dst + y * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill_n(row, ow, Real{0});
            continue;
          }
          const Real* srow = src + static_cast<std::size_t>(iy) * g.in_w;
          for (std::size_t x = 0; x < ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            row[x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) ? Real{0} : srow[ix];
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const Real* cols, Real* out) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), plane = oh * ow;
  std::fill_n(out, g.in_channels * g.in_h * g.in_w, Real{0});
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    Real* dst = out + c * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const Real* src = cols + ((c * g.kernel + ki) * g.kernel + kj) * plane;
        for (std::size_t y = 0; y < oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          Real* drow = dst + static_cast<std::size_t>(iy) * g.in_w;
          for (std::size_t x = 0; x < ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) drow[ix] += src[y * ow + x];
          }
        }
      }
    }
  }
}

bool image_parallel(std::size_t batch) { return batch > 1 && static_cast<int>(batch) >= omp_get_max_threads(); }

}  // namespace

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, Real alpha, const Real* a, const Real* b,
          Real beta, Real* c) {
  const bool par = m * n * k >= kParallelWork;
#pragma omp parallel if (par)
  {
    std::vector<Real> arow;
#pragma omp for schedule(static)
    for (std::size_t i = 0; i < m; ++i) gemm_row(ta, tb, i, m, n, k, alpha, a, b, beta, c, arow);
  }
}

void conv2d_forward(const ConvGeometry& g, std::size_t batch, const Real* in, const Real* weight, Real* out) {
  const std::size_t in_size = g.in_channels * g.in_h * g.in_w;
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t out_size = g.out_channels * plane;
  const bool per_image = image_parallel(batch);
#pragma omp parallel if (per_image)
  {
    std::vector<Real> cols(g.pointwise() ? 0 : g.patch() * plane);
#pragma omp for schedule(static)
    for (std::size_t n = 0; n < batch; ++n) {
      const Real* src = in + n * in_size;
      if (!g.pointwise()) {
        im2col(g, src, cols.data());
        src = cols.data();
      }
      if (per_image)
        gemm_serial(Trans::kNo, Trans::kNo, g.out_channels, plane, g.patch(), 1, weight, src, 0, out + n * out_size);
      else
        gemm(Trans::kNo, Trans::kNo, g.out_channels, plane, g.patch(), 1, weight, src, 0, out + n * out_size);
    }
  }
}

void conv2d_backward_data(const ConvGeometry& g, std::size_t batch, const Real* dout, const Real* weight,
                          Real* din) {
  const std::size_t in_size = g.in_channels * g.in_h * g.in_w;
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t out_size = g.out_channels * plane;
  const bool per_image = image_parallel(batch);
#pragma omp parallel if (per_image)
  {
    std::vector<Real> cols(g.pointwise() ? 0 : g.patch() * plane);
#pragma omp for schedule(static)
    for (std::size_t n = 0; n < batch; ++n) {
      Real* dst = g.pointwise() ? din + n * in_size : cols.data();
      if (per_image)
        gemm_serial(Trans::kYes, Trans::kNo, g.patch(), plane, g.out_channels, 1, weight, dout + n * out_size, 0,
                    dst);
      else
        gemm(Trans::kYes, Trans::kNo, g.patch(), plane, g.out_channels, 1, weight, dout + n * out_size, 0, dst);
      if (!g.pointwise()) col2im(g, cols.data(), din + n * in_size);
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::size_t batch, const Real* in, const Real* dout,
                            Real* dweight) {
  const std::size_t in_size = g.in_channels * g.in_h * g.in_w;
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t patch = g.patch();
  const Real* cols = in;
  std::vector<Real> buffer;
  if (!g.pointwise()) {
    buffer.resize(batch * patch * plane);
#pragma omp parallel for schedule(static) if (batch > 1)
    for (std::size_t n = 0; n < batch; ++n) im2col(g, in + n * in_size, buffer.data() + n * patch * plane);
    cols = buffer.data();
  }
  // Rows of dweight are independent; every row sums images in order.
#pragma omp parallel for schedule(static) if (g.out_channels * patch * plane * batch >= kParallelWork)
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    Real* drow = dweight + o * patch;
    for (std::size_t n = 0; n < batch; ++n) {
      const Real* dy = dout + (n * g.out_channels + o) * plane;
      const Real* cn = cols + n * patch * plane;
      for (std::size_t p = 0; p < patch; ++p) {
        const Real* crow = cn + p * plane;
        Real acc = 0;
        for (std::size_t q = 0; q < plane; ++q) acc += dy[q] * crow[q];
        drow[p] += acc;
      }
    }
  }
}

void max_pool2d_forward(const PoolGeometry& g, std::size_t batch, const Real* in, Real* out, std::uint32_t* argmax) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t planes = batch * g.channels;
#pragma omp parallel for schedule(static) if (planes * oh * ow >= kParallelWork)
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* src = in + p * g.in_h * g.in_w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        Real best = -std::numeric_limits<Real>::infinity();
        std::uint32_t best_idx = 0;
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
          const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t kj = 0; kj < g.kernel; ++kj) {
            const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            const auto idx = static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix);
            if (src[idx] > best) {
              best = src[idx];
              best_idx = static_cast<std::uint32_t>(idx);
            }
          }
        }
        out[(p * oh + y) * ow + x] = best;
        argmax[(p * oh + y) * ow + x] = best_idx;
      }
    }
  }
}

void max_pool2d_backward(const PoolGeometry& g, std::size_t batch, const Real* dout, const std::uint32_t* argmax,
                         Real* din) {
  const std::size_t plane_out = g.out_h() * g.out_w();
  const std::size_t plane_in = g.in_h * g.in_w;
  const std::size_t planes = batch * g.channels;
#pragma omp parallel for schedule(static) if (planes * plane_out >= kParallelWork)
  for (std::size_t p = 0; p < planes; ++p) {
    Real* dst = din + p * plane_in;
    std::fill_n(dst, plane_in, Real{0});
    for (std::size_t q = 0; q < plane_out; ++q) dst[argmax[p * plane_out + q]] += dout[p * plane_out + q];
  }
}

void pairwise_sq_euclidean(const Real* a, std::size_t na, const Real* b, std::size_t nb, std::size_t d, Real* out) {
#pragma omp parallel for schedule(static) if (na * nb * d >= kParallelWork)
  for (std::size_t i = 0; i < na; ++i) {
    const Real* ai = a + i * d;
    for (std::size_t j = 0; j < nb; ++j) {
      const Real* bj = b + j * d;
      Real acc = 0;
      for (std::size_t t = 0; t < d; ++t) {
        const Real diff = ai[t] - bj[t];
        acc += diff * diff;
      }
      out[i * nb + j] = acc;
    }
  }
}

}  // namespace sdb::kernels
