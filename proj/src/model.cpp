#include "sdb/model.hpp"

#include <algorithm>

#include "sdb/errors.hpp"

namespace sdb {

BackboneSpec BackboneSpec::resnet50() {
  BackboneSpec s;
  s.stem_channels = 64;
  s.stem_kernel = 7;
  s.stem_stride = 2;
  s.stem_pool = true;
  s.stages = {{3, 64, 256, 1}, {4, 128, 512, 2}, {6, 256, 1024, 2}, {3, 512, 2048, 1}};
  return s;
}

BackboneSpec BackboneSpec::toy() {
  BackboneSpec s;
  s.stem_channels = 16;
  s.stem_kernel = 3;
  s.stem_stride = 2;
  s.stem_pool = true;
  s.stages = {{1, 8, 32, 1}, {1, 16, 64, 2}, {1, 16, 64, 2}, {1, 32, 128, 1}};
  return s;
}

std::size_t BackboneSpec::total_stride() const {
  std::size_t s = stem_stride * (stem_pool ? 2 : 1);
  for (const auto& st : stages) s *= st.stride;
  return s;
}

void ModelConfig::validate() const {
  if (num_branches < 2) throw ConfigError("model.num_branches", "L must be >= 2");
  if (embed_dim < 1) throw ConfigError("model.embed_dim", "must be >= 1");
  if (num_classes < 1) throw ConfigError("model.num_classes", "must be >= 1");
  if (backbone.stages.size() != 4) throw ConfigError("model.backbone.stages", "exactly 4 stages are required");
  if (backbone.stages.back().stride != 1)
    throw ConfigError("model.backbone.stages", "stage-4 stride must be 1 (down-sampling removed)");
  for (const auto& st : backbone.stages)
    if (st.blocks < 1 || st.mid_channels < 1 || st.out_channels < 1 || st.stride < 1)
      throw ConfigError("model.backbone.stages", "stage entries must be positive");
  if (backbone.stem_channels < 1 || backbone.stem_kernel < 1 || backbone.stem_stride < 1)
    throw ConfigError("model.backbone", "stem entries must be positive");
  if (backbone.out_channels() < 4) throw ConfigError("model.backbone", "output channels must be >= 4");
  const std::size_t s = backbone.total_stride();
  if (input_dims.height == 0 || input_dims.width == 0 || input_dims.height % s || input_dims.width % s)
    throw ConfigError("model.input_dims", "must be positive multiples of the backbone stride " + std::to_string(s));
}

Shape ModelConfig::feature_shape(std::size_t n) const {
  const std::size_t s = backbone.total_stride();
  return {n, backbone.out_channels(), input_dims.height / s, input_dims.width / s};
}

// ---- Backbone

Backbone::Backbone(const ModelConfig& cfg, Rng rng)
    : stem_conv_("backbone.stem.conv", 3, cfg.backbone.stem_channels, cfg.backbone.stem_kernel,
                 cfg.backbone.stem_stride, cfg.backbone.stem_kernel / 2, rng),
      stem_bn_("backbone.stem.bn", cfg.backbone.stem_channels),
      stem_pool_(cfg.backbone.stem_pool) {
  std::size_t in = cfg.backbone.stem_channels;
  for (std::size_t si = 0; si < cfg.backbone.stages.size(); ++si) {
    const auto& st = cfg.backbone.stages[si];
    std::vector<nn::Bottleneck> blocks;
    for (std::size_t b = 0; b < st.blocks; ++b) {
      const std::string name = "backbone.stage" + std::to_string(si + 1) + "." + std::to_string(b);
      blocks.emplace_back(name, in, st.mid_channels, st.out_channels, b == 0 ? st.stride : 1, rng);
      in = st.out_channels;
    }
    stages_.push_back(std::move(blocks));
    if (cfg.use_attention && si >= 2) {
      const std::string name = "backbone.stage" + std::to_string(si + 1);
      attention_.emplace_back(
          std::make_unique<nn::Attention>(name + ".sam", nn::Attention::Kind::kSpatial, cfg.attention_beta,
                                          cfg.affinity_norm),
          std::make_unique<nn::Attention>(name + ".cam", nn::Attention::Kind::kChannel, cfg.attention_beta,
                                          cfg.affinity_norm));
    } else {
      attention_.emplace_back(nullptr, nullptr);
    }
  }
}

Tensor Backbone::forward(const Tensor& images, bool train) {
  Tensor h = stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(images), train));
  if (stem_pool_) h = pool_.forward(h);
  for (std::size_t si = 0; si < stages_.size(); ++si) {
    for (auto& b : stages_[si]) h = b.forward(h, train);
    if (attention_[si].first) h = attention_[si].second->forward(attention_[si].first->forward(h));
  }
  return h;
}

Tensor Backbone::backward(const Tensor& dfeat) {
  Tensor d = dfeat;
  for (std::size_t si = stages_.size(); si-- > 0;) {
    if (attention_[si].first) d = attention_[si].first->backward(attention_[si].second->backward(d));
    for (auto it = stages_[si].rbegin(); it != stages_[si].rend(); ++it) d = it->backward(d);
  }
  if (stem_pool_) d = pool_.backward(d);
  return stem_conv_.backward(stem_bn_.backward(stem_relu_.backward(d)));
}

void Backbone::collect(nn::ParamRefs& out) {
  stem_conv_.collect(out);
  stem_bn_.collect(out);
  for (std::size_t si = 0; si < stages_.size(); ++si) {
    for (auto& b : stages_[si]) b.collect(out);
    if (attention_[si].first) {
      attention_[si].first->collect(out);
      attention_[si].second->collect(out);
    }
  }
}

void Backbone::collect_buffers(nn::BufferRefs& out) {
  stem_bn_.collect_buffers(out);
  for (auto& stage : stages_)
    for (auto& b : stage) b.collect_buffers(out);
}

// ---- Branch

namespace {

std::string branch_name(int id) { return id == 0 ? "global" : "local" + std::to_string(id); }

}  // namespace

Branch::Branch(const ModelConfig& cfg, int branch_id, Rng& rng)
    : id_(branch_id),
      use_attention_(cfg.use_attention),
      use_reduction_(cfg.use_dim_reduction),
      block_("branch." + branch_name(branch_id) + ".bottleneck", cfg.backbone.out_channels(),
             cfg.backbone.out_channels() / 4, cfg.backbone.out_channels(), 1, rng),
      pool_(branch_id == 0 ? nn::PoolKind::kAverage : nn::PoolKind::kMax) {
  const std::string prefix = "branch." + branch_name(branch_id);
  const std::size_t c = cfg.backbone.out_channels();
  if (use_attention_)
    sam_ = std::make_unique<nn::Attention>(prefix + ".sam", nn::Attention::Kind::kSpatial, cfg.attention_beta,
                                           cfg.affinity_norm);
  if (use_reduction_) {
    // Global: 1x1 conv on the pooled 1x1 map; local: fully-connected. Both are
    // the same affine map on the pooled vector.
    reduce_ = nn::Linear(prefix + (branch_id == 0 ? ".reduce_conv1x1" : ".reduce_fc"), c, cfg.embed_dim, false,
                         nn::Linear::Init::kKaiming, rng);
    reduce_bn_ = nn::BatchNorm(prefix + ".reduce_bn", cfg.embed_dim);
  }
  classifier_ = nn::Linear(prefix + ".classifier", cfg.branch_dim(), cfg.num_classes, false,
                           nn::Linear::Init::kClassifier, rng);
}

std::string Branch::name() const { return branch_name(id_); }

BranchOutputs Branch::forward(const Tensor& feat, bool train) {
  Tensor h = block_.forward(feat, train);
  if (sam_) h = sam_->forward(h);
  Tensor emb = pool_.forward(h);
  if (use_reduction_) emb = reduce_relu_.forward(reduce_bn_.forward(reduce_.forward(emb), train));
  BranchOutputs out;
  out.logits = classifier_.forward(emb);
  out.embedding = std::move(emb);
  out.branch_id = id_;
  return out;
}

Tensor Branch::backward(const Tensor& d_embedding, const Tensor& d_logits) {
  Tensor d = classifier_.backward(d_logits);
  if (!d_embedding.empty()) add_inplace(d, d_embedding);
  if (use_reduction_) d = reduce_.backward(reduce_bn_.backward(reduce_relu_.backward(d)));
  d = pool_.backward(d);
  if (sam_) d = sam_->backward(d);
  return block_.backward(d);
}

void Branch::collect(nn::ParamRefs& out) {
  block_.collect(out);
  if (sam_) sam_->collect(out);
  if (use_reduction_) {
    reduce_.collect(out);
    reduce_bn_.collect(out);
  }
  classifier_.collect(out);
}

void Branch::collect_buffers(nn::BufferRefs& out) {
  block_.collect_buffers(out);
  if (use_reduction_) reduce_bn_.collect_buffers(out);
}

// ---- SdbNet

namespace {

ModelConfig validated(ModelConfig cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

SdbNet::SdbNet(ModelConfig cfg, std::uint64_t seed) : cfg_(validated(std::move(cfg))), backbone_(cfg_, Rng(seed)) {
  for (int b = 0; b < cfg_.num_branches; ++b) {
    Rng rng(seed + 1000003ULL * static_cast<std::uint64_t>(b + 1));
    branches_.push_back(std::make_unique<Branch>(cfg_, b, rng));
  }
}

void SdbNet::check_branch(int branch) const {
  if (branch < 0 || branch >= static_cast<int>(branches_.size()))
    throw ParameterError("unknown branch id " + std::to_string(branch) + " (L=" + std::to_string(branches_.size()) +
                         ")");
}

void SdbNet::check_images(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != cfg_.input_dims.height ||
      images.dim(3) != cfg_.input_dims.width)
    throw ConfigError("model.input_dims", "images " + shape_string(images.shape()) + " do not match configured " +
                                              std::to_string(cfg_.input_dims.height) + "x" +
                                              std::to_string(cfg_.input_dims.width));
}

Tensor SdbNet::backbone_forward(const Tensor& images, bool train) {
  check_images(images);
  return backbone_.forward(images, train);
}

BranchOutputs SdbNet::branch_forward(const Tensor& feat, int branch, bool train) {
  check_branch(branch);
  return branches_[static_cast<std::size_t>(branch)]->forward(feat, train);
}

Tensor SdbNet::branch_backward(int branch, const Tensor& d_embedding, const Tensor& d_logits) {
  check_branch(branch);
  return branches_[static_cast<std::size_t>(branch)]->backward(d_embedding, d_logits);
}

std::pair<BranchOutputs, BranchOutputs> SdbNet::forward_train(const Tensor& super_batch, int l) {
  if (l < 1 || l >= static_cast<int>(branches_.size()))
    throw ParameterError("local branch index must be in [1, L-1], got " + std::to_string(l));
  if (super_batch.rank() != 4 || super_batch.dim(0) < 4 || super_batch.dim(0) % 2)
    throw ParameterError("super-batch must hold 2B images, got " + shape_string(super_batch.shape()));
  const std::size_t b = super_batch.dim(0) / 2;
  const Tensor feat = backbone_forward(super_batch, true);
  auto global = branch_forward(feat.slice_rows(0, b), 0, true);
  auto local = branch_forward(feat.slice_rows(b, 2 * b), l, true);
  return {std::move(global), std::move(local)};
}

void SdbNet::backward_train(int l, const Tensor& d_emb_global, const Tensor& d_logits_global,
                            const Tensor& d_emb_local, const Tensor& d_logits_local) {
  const Tensor dg = branch_backward(0, d_emb_global, d_logits_global);
  const Tensor dl = branch_backward(l, d_emb_local, d_logits_local);
  backbone_.backward(concat_rows(dg, dl));
}

Tensor SdbNet::forward_eval(const Tensor& images, std::span<const int> branches) {
  std::vector<int> all;
  if (branches.empty()) {
    for (int b = 0; b < static_cast<int>(branches_.size()); ++b) all.push_back(b);
    branches = all;
  }
  const Tensor feat = backbone_forward(images, false);
  std::vector<Tensor> parts;
  for (int b : branches) parts.push_back(branch_forward(feat, b, false).embedding);
  return concat_cols(parts);
}

nn::ParamRefs SdbNet::backbone_parameters() {
  nn::ParamRefs out;
  backbone_.collect(out);
  return out;
}

nn::ParamRefs SdbNet::branch_parameters(int branch) {
  check_branch(branch);
  nn::ParamRefs out;
  branches_[static_cast<std::size_t>(branch)]->collect(out);
  return out;
}

nn::ParamRefs SdbNet::parameters() {
  nn::ParamRefs out = backbone_parameters();
  for (auto& b : branches_) b->collect(out);
  return out;
}

nn::BufferRefs SdbNet::buffers() {
  nn::BufferRefs out;
  backbone_.collect_buffers(out);
  for (auto& b : branches_) b->collect_buffers(out);
  return out;
}

void SdbNet::zero_grad() { nn::zero_grads(parameters()); }

}  // namespace sdb
