#ifndef SDB_MODEL_HPP_
#define SDB_MODEL_HPP_

// The SDB-L network: a ResNet-style shared net (stages 1-4, stage-4 stride
// removed, SAM+CAM after stages 3 and 4), one global branch and L-1 local
// branches. Every branch is bottleneck -> SAM -> pool -> reduction -> classifier;
// the global branch pools with GAP, local branches with GMP.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdb/attention.hpp"
#include "sdb/image.hpp"
#include "sdb/nn.hpp"

namespace sdb {

struct StageSpec {
  std::size_t blocks = 1;
  std::size_t mid_channels = 64;
  std::size_t out_channels = 256;
  std::size_t stride = 1;
  bool operator==(const StageSpec&) const = default;
};

struct BackboneSpec {
  std::size_t stem_channels = 64;
  std::size_t stem_kernel = 7;
  std::size_t stem_stride = 2;
  bool stem_pool = true;
  std::vector<StageSpec> stages;

  // ResNet-50 layout, stage-4 down-sampling removed: 2048 x H/16 x W/16.
  static BackboneSpec resnet50();
  // Same stride pattern with a handful of channels, for desk-scale runs.
  static BackboneSpec toy();

  std::size_t out_channels() const { return stages.empty() ? stem_channels : stages.back().out_channels; }
  std::size_t total_stride() const;
  bool operator==(const BackboneSpec&) const = default;
};

struct ModelConfig {
  int num_branches = 2;  // L
  BackboneSpec backbone = BackboneSpec::resnet50();
  std::size_t embed_dim = 512;
  std::size_t num_classes = 751;
  bool use_attention = true;
  bool use_dim_reduction = true;
  Dims input_dims{384, 128};
  Real attention_beta = 0;
  AffinityNorm affinity_norm = AffinityNorm::kRowSoftmax;

  void validate() const;
  // Width of one branch's embedding (embed_dim, or the pooled width when the
  // reduction layer is disabled).
  std::size_t branch_dim() const { return use_dim_reduction ? embed_dim : backbone.out_channels(); }
  Shape feature_shape(std::size_t n) const;
};

struct BranchOutputs {
  Tensor embedding;  // (B, branch_dim)
  Tensor logits;     // (B, num_classes)
  int branch_id = 0; // 0 = global, l = local_l
};

class Backbone {
 public:
  Backbone(const ModelConfig& cfg, Rng rng);

  Tensor forward(const Tensor& images, bool train);
  Tensor backward(const Tensor& dfeat);
  void collect(nn::ParamRefs& out);
  void collect_buffers(nn::BufferRefs& out);

 private:
  nn::Conv2d stem_conv_;
  nn::BatchNorm stem_bn_;
  nn::ReLU stem_relu_;
  bool stem_pool_;
  nn::MaxPool2d pool_;
  std::vector<std::vector<nn::Bottleneck>> stages_;
  // attention after stage index 2 and 3, SAM then CAM
  std::vector<std::pair<std::unique_ptr<nn::Attention>, std::unique_ptr<nn::Attention>>> attention_;
};

class Branch {
 public:
  Branch(const ModelConfig& cfg, int branch_id, Rng& rng);

  BranchOutputs forward(const Tensor& feat, bool train);
  // Gradients w.r.t. the embedding (from metric losses) and logits (ID loss).
  Tensor backward(const Tensor& d_embedding, const Tensor& d_logits);
  void collect(nn::ParamRefs& out);
  void collect_buffers(nn::BufferRefs& out);
  int id() const { return id_; }
  std::string name() const;

 private:
  int id_;
  bool use_attention_, use_reduction_;
  nn::Bottleneck block_;
  std::unique_ptr<nn::Attention> sam_;
  nn::GlobalPool pool_;
  nn::Linear reduce_;
  nn::BatchNorm reduce_bn_;
  nn::ReLU reduce_relu_;
  nn::Linear classifier_;
};

class SdbNet {
 public:
  SdbNet(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::size_t num_branches() const { return branches_.size(); }

  Tensor backbone_forward(const Tensor& images, bool train);
  Tensor backbone_backward(const Tensor& dfeat) { return backbone_.backward(dfeat); }

  // branch 0 is global, 1..L-1 local.
  BranchOutputs branch_forward(const Tensor& feat, int branch, bool train);
  Tensor branch_backward(int branch, const Tensor& d_embedding, const Tensor& d_logits);

  // Double-batch split: one backbone pass over 2B images, first half to the
  // global branch, second half to local branch l.
  std::pair<BranchOutputs, BranchOutputs> forward_train(const Tensor& super_batch, int l);
  // Backward of forward_train.
  void backward_train(int l, const Tensor& d_emb_global, const Tensor& d_logits_global, const Tensor& d_emb_local,
                      const Tensor& d_logits_local);

  // Inference embedding: selected branches (default all) concatenated in
  // branch order. Eval mode throughout, so repeated calls are bit-identical.
  Tensor forward_eval(const Tensor& images, std::span<const int> branches = {});

  nn::ParamRefs parameters();
  nn::ParamRefs backbone_parameters();
  nn::ParamRefs branch_parameters(int branch);
  nn::BufferRefs buffers();
  void zero_grad();

 private:
  void check_branch(int branch) const;
  void check_images(const Tensor& images) const;

  ModelConfig cfg_;
  Backbone backbone_;
  std::vector<std::unique_ptr<Branch>> branches_;
};

}  // namespace sdb

#endif  // SDB_MODEL_HPP_
