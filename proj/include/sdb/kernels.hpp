#ifndef SDB_KERNELS_HPP_
#define SDB_KERNELS_HPP_

// Dense compute kernels. The functions in `sdb::kernels` are OpenMP-parallel
// and are what the network layers call; `sdb::kernels::reference` holds plain
// serial loop versions with identical signatures, used by the unit tests and
// the kernel benchmark as an independent route.
//
// All parallel kernels partition over independent outputs (rows, planes,
// images), so results do not depend on the thread count.

#include <cstddef>
#include <cstdint>

#include "sdb/tensor.hpp"

namespace sdb::kernels {

enum class Trans { kNo, kYes };

// C(MxN) = alpha * op(A)(MxK) * op(B)(KxN) + beta * C. Row-major, contiguous.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, Real alpha, const Real* a, const Real* b,
          Real beta, Real* c);

struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t patch() const { return in_channels * kernel * kernel; }
  bool pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

// Weight layout (out_channels, in_channels, kernel, kernel); no bias.
void conv2d_forward(const ConvGeometry& g, std::size_t batch, const Real* in, const Real* weight, Real* out);
// Overwrites `din`.
void conv2d_backward_data(const ConvGeometry& g, std::size_t batch, const Real* dout, const Real* weight, Real* din);
// Accumulates into `dweight`.
void conv2d_backward_weight(const ConvGeometry& g, std::size_t batch, const Real* in, const Real* dout,
                            Real* dweight);

struct PoolGeometry {
  std::size_t channels = 0;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t pad = 1;

  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
};

// `argmax` receives, per output element, the flat in-plane index of the winner.
void max_pool2d_forward(const PoolGeometry& g, std::size_t batch, const Real* in, Real* out, std::uint32_t* argmax);
// Overwrites `din`.
void max_pool2d_backward(const PoolGeometry& g, std::size_t batch, const Real* dout, const std::uint32_t* argmax,
                         Real* din);

// out(na x nb) = squared euclidean distances between rows of a (na x d) and b (nb x d).
void pairwise_sq_euclidean(const Real* a, std::size_t na, const Real* b, std::size_t nb, std::size_t d, Real* out);

namespace reference {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, Real alpha, const Real* a, const Real* b,
          Real beta, Real* c);
void conv2d_forward(const ConvGeometry& g, std::size_t batch, const Real* in, const Real* weight, Real* out);
void conv2d_backward_data(const ConvGeometry& g, std::size_t batch, const Real* dout, const Real* weight, Real* din);
void conv2d_backward_weight(const ConvGeometry& g, std::size_t batch, const Real* in, const Real* dout,
                            Real* dweight);
void max_pool2d_forward(const PoolGeometry& g, std::size_t batch, const Real* in, Real* out, std::uint32_t* argmax);
void max_pool2d_backward(const PoolGeometry& g, std::size_t batch, const Real* dout, const std::uint32_t* argmax,
                         Real* din);
void pairwise_sq_euclidean(const Real* a, std::size_t na, const Real* b, std::size_t nb, std::size_t d, Real* out);

}  // namespace reference

}  // namespace sdb::kernels

#endif  // SDB_KERNELS_HPP_
