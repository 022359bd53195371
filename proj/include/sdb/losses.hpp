#ifndef SDB_LOSSES_HPP_
#define SDB_LOSSES_HPP_

#include <span>
#include <vector>

#include "sdb/tensor.hpp"

namespace sdb {

struct LossWeights {
  double gamma_t = 1.0;
  double gamma_c = 5e-4;
  void validate() const;
};

// Scalar loss with its gradient w.r.t. the primary input.
struct LossGrad {
  Real value = 0;
  Tensor grad;
};

// Mean softmax cross-entropy. labels are class indices in [0, K).
LossGrad id_loss(const Tensor& logits, std::span<const int> labels);

// ln(1 + e^x) and its derivative. Swappable so the self-check can inject a
// broken implementation as a negative control.
struct Softplus {
  Real (*value)(Real);
  Real (*derivative)(Real);
};
extern const Softplus kStableSoftplus;

// Batch-hard soft-margin triplet loss on euclidean distances:
// mean_a softplus(max_{p~a} d(a,p) - min_{n!~a} d(a,n)).
LossGrad triplet_soft_margin(const Tensor& embeddings, std::span<const int> labels,
                             const Softplus& softplus = kStableSoftplus);

struct CenterLossGrad {
  Real value = 0;
  Tensor d_embeddings;
  Tensor d_centers;
};

// (1 / 2B) sum_i ||f_i - c_{y_i}||^2; centers is (num_classes, d).
CenterLossGrad center_loss(const Tensor& embeddings, std::span<const int> labels, const Tensor& centers);

struct BranchLoss {
  Real id = 0;
  Real triplet = 0;
  Real center = 0;
};

// sum over branches of L_id + gamma_t L_triplet + gamma_c L_center.
Real total_loss(std::span<const BranchLoss> per_branch, const LossWeights& w);

}  // namespace sdb

#endif  // SDB_LOSSES_HPP_
