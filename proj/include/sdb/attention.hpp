#ifndef SDB_ATTENTION_HPP_
#define SDB_ATTENTION_HPP_

// Spatial (SAM) and channel (CAM) self-attention over an NCHW feature map.
//
// Per sample, view the map as X (l x c) with l = h*w.
//   SAM: Xi = X (I - beta*1) X^T (l x l),  Lambda = norm(exp(Xi)),  Y = X + lambda_s * Lambda X
//   CAM: Xi = X^T (I - beta*1) X (c x c),  Lambda = norm(exp(Xi)),  Y = X + lambda_c * X Lambda^T
// where 1 is the all-ones matrix of the inner dimension and norm divides each
// row by its L1 norm (default) or the whole matrix by its L1 norm.

#include <string>
#include <vector>

#include "sdb/nn.hpp"
#include "sdb/tensor.hpp"

namespace sdb {

enum class AffinityNorm { kRowSoftmax, kGlobalL1 };

struct AttentionParams {
  Real lambda_s = 0;
  Real lambda_c = 0;
  Real beta = 0;
  AffinityNorm norm = AffinityNorm::kRowSoftmax;
};

struct AttentionGrad {
  Tensor dx;
  Real dlambda = 0;
};

// `affinity`, if given, receives one Lambda matrix per sample.
Tensor spatial_attention(const Tensor& x, const AttentionParams& p, std::vector<Tensor>* affinity = nullptr);
AttentionGrad spatial_attention_backward(const Tensor& x, const AttentionParams& p, const Tensor& dy);

Tensor channel_attention(const Tensor& x, const AttentionParams& p, std::vector<Tensor>* affinity = nullptr);
AttentionGrad channel_attention_backward(const Tensor& x, const AttentionParams& p, const Tensor& dy);

namespace nn {

// Attention layer with a learnable scalar lambda (initialised to 0, so the
// layer starts as the identity).
class Attention {
 public:
  enum class Kind { kSpatial, kChannel };

  Attention(const std::string& name, Kind kind, Real beta, AffinityNorm norm);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void collect(ParamRefs& out) { out.push_back(&lambda_); }
  Real lambda() const { return lambda_.value[0]; }

 private:
  AttentionParams params() const;

  Kind kind_;
  Real beta_;
  AffinityNorm norm_;
  Parameter lambda_;
  Tensor input_;
};

}  // namespace nn

}  // namespace sdb

#endif  // SDB_ATTENTION_HPP_
