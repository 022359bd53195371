#include "sdb/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sdb/errors.hpp"

namespace sdb {

void LossWeights::validate() const {
  if (!(gamma_t >= 0)) throw ConfigError("loss.gamma_t", "must be >= 0");
  if (!(gamma_c >= 0)) throw ConfigError("loss.gamma_c", "must be >= 0");
}

LossGrad id_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty())
    throw ParameterError("id_loss: logits " + shape_string(logits.shape()) + " vs " + std::to_string(labels.size()) +
                         " labels");
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  LossGrad out{0, Tensor(logits.shape())};
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw ParameterError("id_loss: label " + std::to_string(labels[i]) + " outside [0," + std::to_string(k) + ")");
    const Real* row = logits.data() + i * k;
    const Real mx = *std::max_element(row, row + k);
    Real sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    const Real lse = mx + std::log(sum);
    out.value += lse - row[labels[i]];
    for (std::size_t j = 0; j < k; ++j) out.grad.at(i, j) = std::exp(row[j] - lse) / static_cast<Real>(b);
    out.grad.at(i, static_cast<std::size_t>(labels[i])) -= 1 / static_cast<Real>(b);
  }
  out.value /= static_cast<Real>(b);
  return out;
}

namespace {

Real softplus_value(Real x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
Real softplus_derivative(Real x) { return x >= 0 ? 1 / (1 + std::exp(-x)) : std::exp(x) / (1 + std::exp(x)); }

constexpr Real kDistanceEps = 1e-12;

}  // namespace

const Softplus kStableSoftplus{&softplus_value, &softplus_derivative};

LossGrad triplet_soft_margin(const Tensor& embeddings, std::span<const int> labels, const Softplus& softplus) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size() || labels.empty())
    throw ParameterError("triplet: embeddings " + shape_string(embeddings.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t b = embeddings.dim(0), d = embeddings.dim(1);
  std::vector<Real> dist(b * b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      Real sq = 0;
      for (std::size_t t = 0; t < d; ++t) {
        const Real diff = embeddings.at(i, t) - embeddings.at(j, t);
        sq += diff * diff;
      }
      dist[i * b + j] = std::sqrt(sq + kDistanceEps);
    }

  LossGrad out{0, Tensor(embeddings.shape())};
  auto add_distance_grad = [&](std::size_t i, std::size_t j, Real g) {
    const Real scale = g / dist[i * b + j];
    for (std::size_t t = 0; t < d; ++t) {
      const Real diff = embeddings.at(i, t) - embeddings.at(j, t);
      out.grad.at(i, t) += scale * diff;
      out.grad.at(j, t) -= scale * diff;
    }
  };
  for (std::size_t a = 0; a < b; ++a) {
    std::size_t hard_pos = b, hard_neg = b;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (hard_pos == b || dist[a * b + j] > dist[a * b + hard_pos]) hard_pos = j;
      } else if (hard_neg == b || dist[a * b + j] < dist[a * b + hard_neg]) {
        hard_neg = j;
      }
    }
    if (hard_pos == b || hard_neg == b)
      throw ParameterError("triplet: label " + std::to_string(labels[a]) +
                           " lacks a positive or a negative in the batch (P x K sampling required)");
    const Real margin = dist[a * b + hard_pos] - dist[a * b + hard_neg];
    out.value += softplus.value(margin);
    const Real g = softplus.derivative(margin) / static_cast<Real>(b);
    add_distance_grad(a, hard_pos, g);
    add_distance_grad(a, hard_neg, -g);
  }
  out.value /= static_cast<Real>(b);
  return out;
}

CenterLossGrad center_loss(const Tensor& embeddings, std::span<const int> labels, const Tensor& centers) {
  if (embeddings.rank() != 2 || centers.rank() != 2 || embeddings.dim(1) != centers.dim(1) ||
      embeddings.dim(0) != labels.size() || labels.empty())
    throw ParameterError("center_loss: embeddings " + shape_string(embeddings.shape()) + ", centers " +
                         shape_string(centers.shape()));
  const std::size_t b = embeddings.dim(0), d = embeddings.dim(1);
  CenterLossGrad out{0, Tensor(embeddings.shape()), Tensor(centers.shape())};
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= centers.dim(0))
      throw ParameterError("center_loss: label " + std::to_string(labels[i]) + " exceeds " +
                           std::to_string(centers.dim(0)) + " centers");
    const auto y = static_cast<std::size_t>(labels[i]);
    for (std::size_t t = 0; t < d; ++t) {
      const Real diff = embeddings.at(i, t) - centers.at(y, t);
      out.value += diff * diff;
      out.d_embeddings.at(i, t) = diff / static_cast<Real>(b);
      out.d_centers.at(y, t) -= diff / static_cast<Real>(b);
    }
  }
  out.value /= 2 * static_cast<Real>(b);
  return out;
}

Real total_loss(std::span<const BranchLoss> per_branch, const LossWeights& w) {
  Real total = 0;
  for (const auto& l : per_branch) total += l.id + w.gamma_t * l.triplet + w.gamma_c * l.center;
  return total;
}

}  // namespace sdb
