#include "sdb/attention.hpp"

#include <algorithm>
#include <cmath>

#include "sdb/errors.hpp"
#include "sdb/kernels.hpp"

namespace sdb {
namespace {

using kernels::Trans;

void check_input(const Tensor& x) {
  if (x.rank() != 4 || x.size() == 0) throw ParameterError("attention: expected a non-empty (n,c,h,w) feature map");
  if (!x.all_finite()) throw NumericError("attention: non-finite input");
}

// Affinity from a square score matrix of size m x m, in place.
void normalize_affinity(Real* s, std::size_t m, AffinityNorm norm) {
  if (norm == AffinityNorm::kRowSoftmax) {
    for (std::size_t i = 0; i < m; ++i) {
      Real* row = s + i * m;
      const Real mx = *std::max_element(row, row + m);
      Real sum = 0;
      for (std::size_t j = 0; j < m; ++j) sum += (row[j] = std::exp(row[j] - mx));
      for (std::size_t j = 0; j < m; ++j) row[j] /= sum;
    }
  } else {
    const Real mx = *std::max_element(s, s + m * m);
    Real sum = 0;
    for (std::size_t i = 0; i < m * m; ++i) sum += (s[i] = std::exp(s[i] - mx));
    for (std::size_t i = 0; i < m * m; ++i) s[i] /= sum;
  }
}

// dscore from daffinity, in place into `g`.
void affinity_backward(const Real* a, Real* g, std::size_t m, AffinityNorm norm) {
  if (norm == AffinityNorm::kRowSoftmax) {
    for (std::size_t i = 0; i < m; ++i) {
      Real dot = 0;
      for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * a[i * m + j];
      for (std::size_t j = 0; j < m; ++j) g[i * m + j] = a[i * m + j] * (g[i * m + j] - dot);
    }
  } else {
    Real dot = 0;
    for (std::size_t i = 0; i < m * m; ++i) dot += g[i] * a[i];
    for (std::size_t i = 0; i < m * m; ++i) g[i] = a[i] * (g[i] - dot);
  }
}

// Stored block A is (c x l): A[ch][i] = X[i][ch].
//
// Spatial: scores = A^T A - beta s s^T with s_i = sum_ch A[ch][i]  (l x l).
// Channel: scores = A A^T - beta t t^T with t_ch = sum_i A[ch][i]  (c x c).
void scores(const Real* a, std::size_t c, std::size_t l, bool spatial, Real beta, Real* out,
            std::vector<Real>& sums) {
  if (spatial) {
    kernels::gemm(Trans::kYes, Trans::kNo, l, l, c, 1, a, a, 0, out);
    sums.assign(l, 0);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < l; ++i) sums[i] += a[ch * l + i];
  } else {
    kernels::gemm(Trans::kNo, Trans::kYes, c, c, l, 1, a, a, 0, out);
    sums.assign(c, 0);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < l; ++i) sums[ch] += a[ch * l + i];
  }
  if (beta != 0) {
    const std::size_t m = sums.size();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] -= beta * sums[i] * sums[j];
  }
}

// z = attended term (c x l) for one sample given affinity.
void attend(const Real* a, const Real* aff, std::size_t c, std::size_t l, bool spatial, Real* z) {
  if (spatial)
    kernels::gemm(Trans::kNo, Trans::kYes, c, l, l, 1, a, aff, 0, z);  // A Lambda^T
  else
    kernels::gemm(Trans::kNo, Trans::kNo, c, l, c, 1, aff, a, 0, z);  // Lambda A
}

Tensor attention_forward(const Tensor& x, const AttentionParams& p, bool spatial, std::vector<Tensor>* affinity) {
  check_input(x);
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2) * x.dim(3);
  const std::size_t m = spatial ? l : c;
  const Real lambda = spatial ? p.lambda_s : p.lambda_c;
  Tensor y = x;
  if (affinity) affinity->clear();
  std::vector<Real> aff(m * m), z(c * l), sums;
  for (std::size_t s = 0; s < n; ++s) {
    const Real* a = x.data() + s * c * l;
    scores(a, c, l, spatial, p.beta, aff.data(), sums);
    normalize_affinity(aff.data(), m, p.norm);
    if (affinity) affinity->push_back(Tensor({m, m}, aff));
    attend(a, aff.data(), c, l, spatial, z.data());
    // X + lambda Z written as (1+lambda) X + lambda (Z - X): with a single
    // position (or channel) Z == X and the result is (1+lambda) X to the bit.
    Real* out = y.data() + s * c * l;
    for (std::size_t i = 0; i < c * l; ++i) out[i] = (1 + lambda) * a[i] + lambda * (z[i] - a[i]);
  }
  return y;
}

AttentionGrad attention_backward(const Tensor& x, const AttentionParams& p, const Tensor& dy, bool spatial) {
  check_input(x);
  if (dy.shape() != x.shape()) throw ParameterError("attention backward: gradient shape mismatch");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2) * x.dim(3);
  const std::size_t m = spatial ? l : c;
  const Real lambda = spatial ? p.lambda_s : p.lambda_c;
  AttentionGrad out{dy, 0};
  std::vector<Real> aff(m * m), daff(m * m), sym(m * m), z(c * l), dz(c * l), sums;
  for (std::size_t s = 0; s < n; ++s) {
    const Real* a = x.data() + s * c * l;
    const Real* g = dy.data() + s * c * l;
    Real* da = out.dx.data() + s * c * l;
    scores(a, c, l, spatial, p.beta, aff.data(), sums);
    normalize_affinity(aff.data(), m, p.norm);
    attend(a, aff.data(), c, l, spatial, z.data());
    for (std::size_t i = 0; i < c * l; ++i) {
      out.dlambda += g[i] * z[i];
      dz[i] = lambda * g[i];
    }
    if (spatial) {
      // z = A Lambda^T
      kernels::gemm(Trans::kNo, Trans::kNo, c, l, l, 1, dz.data(), aff.data(), 1, da);
      kernels::gemm(Trans::kYes, Trans::kNo, l, l, c, 1, dz.data(), a, 0, daff.data());
    } else {
      // z = Lambda A
      kernels::gemm(Trans::kYes, Trans::kNo, c, l, c, 1, aff.data(), dz.data(), 1, da);
      kernels::gemm(Trans::kNo, Trans::kYes, c, c, l, 1, dz.data(), a, 0, daff.data());
    }
    affinity_backward(aff.data(), daff.data(), m, p.norm);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) sym[i * m + j] = daff[i * m + j] + daff[j * m + i];
    if (spatial)
      kernels::gemm(Trans::kNo, Trans::kNo, c, l, l, 1, a, sym.data(), 1, da);  // A S
    else
      kernels::gemm(Trans::kNo, Trans::kNo, c, l, c, 1, sym.data(), a, 1, da);  // S A
    if (p.beta != 0) {
      std::vector<Real> dsum(m, 0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) dsum[i] -= p.beta * sym[i * m + j] * sums[j];
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < l; ++i) da[ch * l + i] += spatial ? dsum[i] : dsum[ch];
    }
  }
  return out;
}

}  // namespace

Tensor spatial_attention(const Tensor& x, const AttentionParams& p, std::vector<Tensor>* affinity) {
  return attention_forward(x, p, true, affinity);
}

AttentionGrad spatial_attention_backward(const Tensor& x, const AttentionParams& p, const Tensor& dy) {
  return attention_backward(x, p, dy, true);
}

Tensor channel_attention(const Tensor& x, const AttentionParams& p, std::vector<Tensor>* affinity) {
  return attention_forward(x, p, false, affinity);
}

AttentionGrad channel_attention_backward(const Tensor& x, const AttentionParams& p, const Tensor& dy) {
  return attention_backward(x, p, dy, false);
}

namespace nn {

Attention::Attention(const std::string& name, Kind kind, Real beta, AffinityNorm norm)
    : kind_(kind), beta_(beta), norm_(norm), lambda_(name + ".lambda", Tensor({1}, 0)) {}

AttentionParams Attention::params() const {
  AttentionParams p;
  p.beta = beta_;
  p.norm = norm_;
  (kind_ == Kind::kSpatial ? p.lambda_s : p.lambda_c) = lambda_.value[0];
  return p;
}

Tensor Attention::forward(const Tensor& x) {
  input_ = x;
  return kind_ == Kind::kSpatial ? spatial_attention(x, params()) : channel_attention(x, params());
}

Tensor Attention::backward(const Tensor& dy) {
  AttentionGrad g = kind_ == Kind::kSpatial ? spatial_attention_backward(input_, params(), dy)
                                            : channel_attention_backward(input_, params(), dy);
  lambda_.grad[0] += g.dlambda;
  return std::move(g.dx);
}

}  // namespace nn

}  // namespace sdb
