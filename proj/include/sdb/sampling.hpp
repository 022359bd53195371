#ifndef SDB_SAMPLING_HPP_
#define SDB_SAMPLING_HPP_

#include <map>
#include <span>
#include <vector>

#include "sdb/augment.hpp"
#include "sdb/data.hpp"
#include "sdb/tensor.hpp"

namespace sdb {

// p identities x k instances, grouped by identity.
struct BatchPlan {
  std::vector<SampleMeta> items;
  int p = 0;
  int k = 0;

  std::size_t batch_size() const { return static_cast<std::size_t>(p) * static_cast<std::size_t>(k); }
  // Throws ParameterError unless items form exactly p runs of k equal ids.
  void check() const;
};

// Each identity's images are shuffled, cycled up to a multiple of k and cut
// into chunks of k. Plans repeatedly take one chunk from each of p distinct
// identities drawn at random; the epoch ends when fewer than p identities
// have chunks left.
std::vector<BatchPlan> build_epoch_plan(const std::vector<SampleMeta>& train, int p, int k, Rng& rng);

// person_id -> class index in [0, K), ascending by person id.
class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(const std::vector<SampleMeta>& train);
  explicit LabelMap(std::vector<int> person_ids);

  int operator()(int person_id) const;
  std::size_t size() const { return ids_.size(); }
  const std::vector<int>& person_ids() const { return ids_; }

 private:
  std::vector<int> ids_;
  std::map<int, int> index_;
};

struct SuperBatch {
  Tensor images;            // (2B, 3, H, W); [0, B) conventional, [B, 2B) dropped
  std::vector<int> labels;  // class indices, labels[i] == labels[i + B]
  std::size_t b = 0;
  DropMask mask_used;       // empty for per-image drop modes

  Tensor conventional() const { return images.slice_rows(0, b); }
  Tensor dropped() const { return images.slice_rows(b, 2 * b); }
  std::span<const int> half_labels() const { return {labels.data(), b}; }
};

// Both halves run the training pipeline with independent draws; the dropped
// half then gets the stream's shared mask (slow_dropblock / batch_dropblock,
// one stream.next() per call) or a per-image occlusion (other modes).
SuperBatch make_super_batch(const BatchPlan& plan, const PipelineConfig& pipeline, MaskStream& stream, Rng& rng,
                            ImageCache& cache, const LabelMap& labels);

// Conventional half only: (B, 3, H, W) plus labels.
struct PlainBatch {
  Tensor images;
  std::vector<int> labels;
};
PlainBatch make_plain_batch(const BatchPlan& plan, const PipelineConfig& pipeline, Rng& rng, ImageCache& cache,
                            const LabelMap& labels);

}  // namespace sdb

#endif  // SDB_SAMPLING_HPP_
