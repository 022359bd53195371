#include "sdb/sampling.hpp"

#include <algorithm>
#include <deque>

#include "sdb/errors.hpp"

namespace sdb {

void BatchPlan::check() const {
  if (p < 1 || k < 1) throw ParameterError("batch plan: p and k must be positive");
  if (items.size() != batch_size())
    throw ParameterError("batch plan: expected " + std::to_string(batch_size()) + " items, got " +
                         std::to_string(items.size()));
  std::vector<int> seen;
  for (std::size_t g = 0; g < static_cast<std::size_t>(p); ++g) {
    const int id = items[g * static_cast<std::size_t>(k)].person_id;
    for (std::size_t j = 0; j < static_cast<std::size_t>(k); ++j)
      if (items[g * static_cast<std::size_t>(k) + j].person_id != id)
        throw ParameterError("batch plan: identity group " + std::to_string(g) + " is mixed");
    if (std::find(seen.begin(), seen.end(), id) != seen.end())
      throw ParameterError("batch plan: identity " + std::to_string(id) + " appears twice");
    seen.push_back(id);
  }
}

std::vector<BatchPlan> build_epoch_plan(const std::vector<SampleMeta>& train, int p, int k, Rng& rng) {
  if (p < 1 || k < 1) throw ConfigError("sampler", "p and k must be positive");
  std::map<int, std::vector<const SampleMeta*>> by_id;
  for (const auto& m : train) {
    if (m.junk()) throw ParameterError("build_epoch_plan: junk item in training split: " + m.path);
    by_id[m.person_id].push_back(&m);
  }
  if (by_id.size() < static_cast<std::size_t>(p))
    throw ConfigError("sampler.p", "need at least " + std::to_string(p) + " training identities, found " +
                                       std::to_string(by_id.size()));

  const auto uk = static_cast<std::size_t>(k);
  std::map<int, std::deque<std::vector<const SampleMeta*>>> chunks;
  for (auto& [id, items] : by_id) {
    std::vector<const SampleMeta*> pool = items;
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t total = (pool.size() + uk - 1) / uk * uk;
    for (std::size_t i = pool.size(); i < total; ++i) pool.push_back(pool[i % items.size()]);
    auto& q = chunks[id];
    for (std::size_t i = 0; i < total; i += uk) q.emplace_back(pool.begin() + static_cast<long>(i),
                                                               pool.begin() + static_cast<long>(i + uk));
  }

  std::vector<BatchPlan> plans;
  std::vector<int> available;
  for (const auto& [id, q] : chunks) available.push_back(id);
  while (available.size() >= static_cast<std::size_t>(p)) {
    std::shuffle(available.begin(), available.end(), rng);
    BatchPlan plan;
    plan.p = p;
    plan.k = k;
    plan.items.reserve(plan.batch_size());
    for (std::size_t i = 0; i < static_cast<std::size_t>(p); ++i) {
      auto& q = chunks[available[i]];
      for (const auto* m : q.front()) plan.items.push_back(*m);
      q.pop_front();
    }
    std::erase_if(available, [&](int id) { return chunks[id].empty(); });
    plans.push_back(std::move(plan));
  }
  return plans;
}

LabelMap::LabelMap(const std::vector<SampleMeta>& train) {
  std::vector<int> ids;
  for (const auto& m : train)
    if (!m.junk()) ids.push_back(m.person_id);
  *this = LabelMap(std::move(ids));
}

LabelMap::LabelMap(std::vector<int> person_ids) {
  std::sort(person_ids.begin(), person_ids.end());
  person_ids.erase(std::unique(person_ids.begin(), person_ids.end()), person_ids.end());
  ids_ = std::move(person_ids);
  for (std::size_t i = 0; i < ids_.size(); ++i) index_[ids_[i]] = static_cast<int>(i);
}

int LabelMap::operator()(int person_id) const {
  auto it = index_.find(person_id);
  if (it == index_.end()) throw ParameterError("person id " + std::to_string(person_id) + " has no class index");
  return it->second;
}

namespace {

bool batch_level(DropMode mode) { return mode == DropMode::kSlowDropBlock || mode == DropMode::kBatchDropBlock; }

// Runs the training pipeline on `count` images (items cycled), seeding image j
// from seeds[j]; optionally applies `post` after normalization.
template <typename Post>
std::vector<ImageTensor> run_pipeline(const std::vector<const ImageTensor*>& raw, const PipelineConfig& pipeline,
                                      const std::vector<std::uint64_t>& seeds, Post post) {
  std::vector<ImageTensor> out(seeds.size());
  std::vector<std::string> errors(seeds.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t j = 0; j < seeds.size(); ++j) {
    try {
      Rng r(seeds[j]);
      out[j] = standard_pipeline(*raw[j % raw.size()], pipeline, true, r);
      post(j, out[j], r);
    } catch (const std::exception& e) {
      errors[j] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw DataError(e);
  return out;
}

std::vector<const ImageTensor*> load_raw(const BatchPlan& plan, ImageCache& cache) {
  std::vector<const ImageTensor*> raw;
  raw.reserve(plan.items.size());
  for (const auto& m : plan.items) raw.push_back(&cache.get(m));
  return raw;
}

}  // namespace

SuperBatch make_super_batch(const BatchPlan& plan, const PipelineConfig& pipeline, MaskStream& stream, Rng& rng,
                            ImageCache& cache, const LabelMap& labels) {
  plan.check();
  if (stream.dims() != pipeline.resize_to) throw ParameterError("make_super_batch: mask stream dims != resize_to");
  const auto raw = load_raw(plan, cache);
  const std::size_t b = plan.batch_size();

  SuperBatch sb;
  sb.b = b;
  const DropSpec& spec = stream.spec();
  if (batch_level(spec.mode)) sb.mask_used = stream.next();
  else sb.mask_used.image_dims = stream.dims();

  std::vector<std::uint64_t> seeds(2 * b);
  for (auto& s : seeds) s = rng();
  const DropMask mask = sb.mask_used;
  auto images = run_pipeline(raw, pipeline, seeds, [&](std::size_t j, ImageTensor& img, Rng& r) {
    if (j < b || spec.mode == DropMode::kNone) return;
    if (batch_level(spec.mode)) apply_mask_inplace(img, mask, 0);
    else img = rect_occlude(img, spec, r);
  });
  sb.images = to_nchw(images);
  sb.labels.reserve(2 * b);
  for (std::size_t j = 0; j < 2 * b; ++j) sb.labels.push_back(labels(plan.items[j % b].person_id));
  return sb;
}

PlainBatch make_plain_batch(const BatchPlan& plan, const PipelineConfig& pipeline, Rng& rng, ImageCache& cache,
                            const LabelMap& labels) {
  plan.check();
  const auto raw = load_raw(plan, cache);
  std::vector<std::uint64_t> seeds(plan.batch_size());
  for (auto& s : seeds) s = rng();
  PlainBatch out;
  out.images = to_nchw(run_pipeline(raw, pipeline, seeds, [](std::size_t, ImageTensor&, Rng&) {}));
  for (const auto& m : plan.items) out.labels.push_back(labels(m.person_id));
  return out;
}

}  // namespace sdb
