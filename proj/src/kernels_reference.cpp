// Serial loop-nest kernels. Deliberately naive: direct convolution without
// im2col, textbook triple-loop gemm.

#include <limits>

#include "sdb/kernels.hpp"

namespace sdb::kernels::reference {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, Real alpha, const Real* a, const Real* b,
          Real beta, Real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t t = 0; t < k; ++t) {
        const Real av = ta == Trans::kNo ? a[i * k + t] : a[t * m + i];
        const Real bv = tb == Trans::kNo ? b[t * n + j] : b[j * k + t];
        acc += av * bv;
      }
      c[i * n + j] = alpha * acc + (beta == 0 ? Real{0} : beta * c[i * n + j]);
    }
  }
}

namespace {

bool source_pixel(const ConvGeometry& g, std::size_t y, std::size_t x, std::size_t ki, std::size_t kj,
                  std::size_t& iy, std::size_t& ix) {
  const auto sy = static_cast<std::ptrdiff_t>(y * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
  const auto sx = static_cast<std::ptrdiff_t>(x * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
  if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(g.in_h) || sx >= static_cast<std::ptrdiff_t>(g.in_w))
    return false;
  iy = static_cast<std::size_t>(sy);
  ix = static_cast<std::size_t>(sx);
  return true;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::size_t batch, const Real* in, const Real* weight, Real* out) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          Real acc = 0;
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ki = 0; ki < g.kernel; ++ki)
              for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                std::size_t iy, ix;
                if (!source_pixel(g, y, x, ki, kj, iy, ix)) continue;
                acc += weight[((o * g.in_channels + c) * g.kernel + ki) * g.kernel + kj] *
                       in[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix];
              }
          out[((n * g.out_channels + o) * oh + y) * ow + x] = acc;
        }
}

void conv2d_backward_data(const ConvGeometry& g, std::size_t batch, const Real* dout, const Real* weight,
                          Real* din) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t i = 0; i < batch * g.in_channels * g.in_h * g.in_w; ++i) din[i] = 0;
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const Real dy = dout[((n * g.out_channels + o) * oh + y) * ow + x];
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ki = 0; ki < g.kernel; ++ki)
              for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                std::size_t iy, ix;
                if (!source_pixel(g, y, x, ki, kj, iy, ix)) continue;
                din[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix] +=
                    dy * weight[((o * g.in_channels + c) * g.kernel + ki) * g.kernel + kj];
              }
        }
}

void conv2d_backward_weight(const ConvGeometry& g, std::size_t batch, const Real* in, const Real* dout,
                            Real* dweight) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const Real dy = dout[((n * g.out_channels + o) * oh + y) * ow + x];
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ki = 0; ki < g.kernel; ++ki)
              for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                std::size_t iy, ix;
                if (!source_pixel(g, y, x, ki, kj, iy, ix)) continue;
                dweight[((o * g.in_channels + c) * g.kernel + ki) * g.kernel + kj] +=
                    dy * in[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix];
              }
        }
}

void max_pool2d_forward(const PoolGeometry& g, std::size_t batch, const Real* in, Real* out, std::uint32_t* argmax) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t p = 0; p < batch * g.channels; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        Real best = -std::numeric_limits<Real>::infinity();
        std::uint32_t idx = 0;
        for (std::size_t iy = 0; iy < g.in_h; ++iy)
          for (std::size_t ix = 0; ix < g.in_w; ++ix) {
            const auto dy = static_cast<std::ptrdiff_t>(iy + g.pad) - static_cast<std::ptrdiff_t>(y * g.stride);
            const auto dx = static_cast<std::ptrdiff_t>(ix + g.pad) - static_cast<std::ptrdiff_t>(x * g.stride);
            if (dy < 0 || dx < 0 || dy >= static_cast<std::ptrdiff_t>(g.kernel) ||
                dx >= static_cast<std::ptrdiff_t>(g.kernel))
              continue;
            const Real v = in[(p * g.in_h + iy) * g.in_w + ix];
            if (v > best) {
              best = v;
              idx = static_cast<std::uint32_t>(iy * g.in_w + ix);
            }
          }
        out[(p * oh + y) * ow + x] = best;
        argmax[(p * oh + y) * ow + x] = idx;
      }
}

void max_pool2d_backward(const PoolGeometry& g, std::size_t batch, const Real* dout, const std::uint32_t* argmax,
                         Real* din) {
  const std::size_t plane_out = g.out_h() * g.out_w();
  const std::size_t plane_in = g.in_h * g.in_w;
  for (std::size_t i = 0; i < batch * g.channels * plane_in; ++i) din[i] = 0;
  for (std::size_t p = 0; p < batch * g.channels; ++p)
    for (std::size_t q = 0; q < plane_out; ++q) din[p * plane_in + argmax[p * plane_out + q]] += dout[p * plane_out + q];
}

void pairwise_sq_euclidean(const Real* a, std::size_t na, const Real* b, std::size_t nb, std::size_t d, Real* out) {
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      Real acc = 0;
      for (std::size_t t = 0; t < d; ++t) acc += (a[i * d + t] - b[j * d + t]) * (a[i * d + t] - b[j * d + t]);
      out[i * nb + j] = acc;
    }
}

}  // namespace sdb::kernels::reference
