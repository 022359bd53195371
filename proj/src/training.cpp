#include "sdb/training.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "sdb/config.hpp"
#include "sdb/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sdb {

std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kCoTraining: return "co_training";
    case TrainMode::kSingleBatch: return "single_batch";
    case TrainMode::kGlobalOnly: return "global_only";
  }
  return "co_training";
}

TrainMode parse_train_mode(std::string_view name) {
  for (auto m : {TrainMode::kCoTraining, TrainMode::kSingleBatch, TrainMode::kGlobalOnly})
    if (to_string(m) == name) return m;
  throw ParameterError("unknown training mode '" + std::string(name) +
                       "' (co_training | single_batch | global_only)");
}

std::string_view to_string(BranchSchedule s) {
  return s == BranchSchedule::kAllBranches ? "all_branches" : "round_robin";
}

BranchSchedule parse_branch_schedule(std::string_view name) {
  if (name == "round_robin") return BranchSchedule::kRoundRobin;
  if (name == "all_branches") return BranchSchedule::kAllBranches;
  throw ParameterError("unknown branch schedule '" + std::string(name) + "' (round_robin | all_branches)");
}

void TrainConfig::validate() const {
  ModelConfig m = model;
  if (m.num_classes == 0) m.num_classes = 1;  // resolved from the dataset later
  m.validate();
  if (drops.size() != static_cast<std::size_t>(model.num_branches - 1))
    throw ConfigError("drop", "need one entry per local branch (" + std::to_string(model.num_branches - 1) +
                                  "), got " + std::to_string(drops.size()));
  for (std::size_t i = 0; i < drops.size(); ++i) {
    try {
      drops[i].validate();
    } catch (const ParameterError& e) {
      throw ConfigError("drop[" + std::to_string(i) + "]", e.what());
    }
  }
  try {
    pipeline.validate();
  } catch (const ParameterError& e) {
    throw ConfigError("pipeline", e.what());
  }
  if (pipeline.resize_to != model.input_dims)
    throw ConfigError("pipeline.resize_to", "must equal model.input_dims");
  schedule.validate();
  loss.validate();
  if (p < 2) throw ConfigError("sampler.p", "need at least 2 identities per batch for negatives");
  if (k < 2) throw ConfigError("sampler.k", "need at least 2 instances per identity for positives");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0))
    throw ConfigError("training.adam", "need 0 <= beta < 1 and eps > 0");
}

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace

TrainState TrainState::create(TrainConfig cfg, LabelMap labels) {
  if (labels.size() < 2) throw ConfigError("dataset", "training split needs at least 2 identities");
  if (cfg.model.num_classes != 0 && cfg.model.num_classes != labels.size())
    throw ConfigError("model.num_classes", "configured " + std::to_string(cfg.model.num_classes) +
                                               " but the training split has " + std::to_string(labels.size()) +
                                               " identities");
  cfg.model.num_classes = labels.size();
  cfg.validate();

  TrainState s;
  s.cfg = cfg;
  s.labels = std::move(labels);
  s.model = std::make_unique<SdbNet>(cfg.model, derive_seed(cfg.seed, 1));
  s.adam = Adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  for (int b = 0; b < cfg.model.num_branches; ++b)
    s.centers.emplace_back((b == 0 ? std::string("center.global") : "center.local" + std::to_string(b)),
                           Tensor({cfg.model.num_classes, cfg.model.branch_dim()}));
  for (std::size_t l = 0; l < cfg.drops.size(); ++l)
    s.streams.emplace_back(cfg.drops[l], cfg.pipeline.resize_to, derive_seed(cfg.seed, 100 + l));
  s.sample_rng.seed(derive_seed(cfg.seed, 2));
  s.augment_rng.seed(derive_seed(cfg.seed, 3));
  return s;
}

nn::ParamRefs TrainState::active_parameters(std::span<const int> branches) {
  nn::ParamRefs out = model->backbone_parameters();
  for (int b : branches) {
    auto bp = model->branch_parameters(b);
    out.insert(out.end(), bp.begin(), bp.end());
    out.push_back(&centers[static_cast<std::size_t>(b)]);
  }
  return out;
}

nn::ParamRefs TrainState::all_parameters() {
  nn::ParamRefs out = model->parameters();
  for (auto& c : centers) out.push_back(&c);
  return out;
}

int TrainState::round_robin_branch() const {
  return static_cast<int>(step % static_cast<long long>(cfg.model.num_branches - 1)) + 1;
}

std::string format_step(const StepMetrics& m) {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "step=" << m.step << " epoch=" << m.epoch << " lr=" << m.lr << " total=" << m.total;
  for (std::size_t i = 0; i < m.losses.size(); ++i) {
    const std::string tag = m.branches[i] == 0 ? "global" : "local" + std::to_string(m.branches[i]);
    os << " id." << tag << "=" << m.losses[i].id << " triplet." << tag << "=" << m.losses[i].triplet << " center."
       << tag << "=" << m.losses[i].center;
  }
  return os.str();
}

namespace {

struct BranchGrads {
  BranchLoss loss;
  Tensor d_embedding;
  Tensor d_logits;
};

// Losses of one branch output; center gradients go straight into the bank.
BranchGrads branch_losses(TrainState& s, const BranchOutputs& out, std::span<const int> labels) {
  const LossWeights& w = s.cfg.loss;
  BranchGrads g;
  LossGrad id = id_loss(out.logits, labels);
  LossGrad tri = triplet_soft_margin(out.embedding, labels);
  auto& bank = s.centers[static_cast<std::size_t>(out.branch_id)];
  CenterLossGrad cen = center_loss(out.embedding, labels, bank.value);
  g.loss = {id.value, tri.value, cen.value};
  g.d_logits = std::move(id.grad);
  g.d_embedding = std::move(tri.grad);
  for (std::size_t i = 0; i < g.d_embedding.size(); ++i)
    g.d_embedding[i] = w.gamma_t * g.d_embedding[i] + w.gamma_c * cen.d_embeddings[i];
  for (std::size_t i = 0; i < bank.grad.size(); ++i) bank.grad[i] += w.gamma_c * cen.d_centers[i];
  return g;
}

std::string tensor_stats(const Tensor& t) {
  Real lo = std::numeric_limits<Real>::infinity(), hi = -lo, sum = 0;
  std::size_t bad = 0;
  for (Real v : t.values()) {
    if (!std::isfinite(v)) {
      ++bad;
      continue;
    }
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  std::ostringstream os;
  os << "shape=" << shape_string(t.shape()) << " min=" << lo << " max=" << hi
     << " mean=" << (t.size() ? sum / static_cast<Real>(t.size()) : 0) << " non_finite=" << bad;
  return os.str();
}

[[noreturn]] void numeric_failure(TrainState& s, const StepMetrics& m, const Tensor& images,
                                  std::span<const int> labels) {
  std::error_code ec;
  fs::create_directories(s.diagnostics_dir, ec);
  const fs::path file = s.diagnostics_dir / ("diagnostic_step" + std::to_string(m.step) + ".txt");
  std::ofstream os(file);
  os << format_step(m) << "\n";
  os << "images " << tensor_stats(images) << "\n";
  os << "labels";
  for (int l : labels) os << ' ' << l;
  os << "\n";
  for (std::size_t i = 0; i < s.streams.size(); ++i) os << "mask_stream." << i + 1 << " " << s.streams[i].save_state() << "\n";
  for (auto* p : s.all_parameters())
    if (!p->value.all_finite() || !p->grad.all_finite()) os << "non-finite parameter " << p->name << "\n";
  throw NumericError("non-finite loss at step " + std::to_string(m.step) + "; diagnostics in " + file.string());
}

void check_finite(TrainState& s, const StepMetrics& m, const Tensor& images, std::span<const int> labels) {
  if (std::isfinite(m.total)) return;
  numeric_failure(s, m, images, labels);
}

StepMetrics begin_step(TrainState& s, double lr) {
  StepMetrics m;
  m.step = s.step;
  m.epoch = s.epoch;
  m.lr = lr;
  nn::zero_grads(s.all_parameters());
  return m;
}

void record(StepMetrics& m, int branch, const BranchLoss& loss, const LossWeights& w) {
  m.branches.push_back(branch);
  m.losses.push_back(loss);
  m.total += loss.id + w.gamma_t * loss.triplet + w.gamma_c * loss.center;
}

void finish_step(TrainState& s, std::vector<int> touched, double lr) {
  std::sort(touched.begin(), touched.end());
  touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
  s.adam.step(s.active_parameters(touched), lr);
  ++s.step;
}

// Forward + backward of one super-batch on local branch l; gradients accumulate.
void accumulate(TrainState& s, StepMetrics& m, const SuperBatch& sb, int l) {
  auto& net = *s.model;
  if (s.cfg.mode == TrainMode::kSingleBatch) {
    const Tensor dropped = sb.dropped();
    const auto labels = sb.half_labels();
    const Tensor feat = net.backbone_forward(dropped, true);
    const BranchOutputs g = net.branch_forward(feat, 0, true);
    const BranchOutputs lo = net.branch_forward(feat, l, true);
    BranchGrads gg = branch_losses(s, g, labels);
    BranchGrads lg = branch_losses(s, lo, labels);
    record(m, 0, gg.loss, s.cfg.loss);
    record(m, l, lg.loss, s.cfg.loss);
    check_finite(s, m, sb.images, sb.labels);
    Tensor dfeat = net.branch_backward(0, gg.d_embedding, gg.d_logits);
    add_inplace(dfeat, net.branch_backward(l, lg.d_embedding, lg.d_logits));
    net.backbone_backward(dfeat);
    return;
  }
  auto [g, lo] = net.forward_train(sb.images, l);
  const auto labels = sb.half_labels();
  BranchGrads gg = branch_losses(s, g, labels);
  BranchGrads lg = branch_losses(s, lo, std::span<const int>(sb.labels.data() + sb.b, sb.b));
  record(m, 0, gg.loss, s.cfg.loss);
  record(m, l, lg.loss, s.cfg.loss);
  check_finite(s, m, sb.images, sb.labels);
  net.backward_train(l, gg.d_embedding, gg.d_logits, lg.d_embedding, lg.d_logits);
}

}  // namespace

StepMetrics train_step(TrainState& state, const SuperBatch& sb, int l, double lr) {
  const SuperBatch* one = &sb;
  return train_step(state, std::span<const SuperBatch>(one, 1), std::span<const int>(&l, 1), lr);
}

StepMetrics train_step(TrainState& state, std::span<const SuperBatch> sbs, std::span<const int> ls, double lr) {
  if (sbs.empty() || sbs.size() != ls.size()) throw ParameterError("train_step: need one local branch per super-batch");
  if (state.cfg.mode == TrainMode::kGlobalOnly)
    throw ParameterError("train_step: global_only mode trains from plain batches");
  StepMetrics m = begin_step(state, lr);
  std::vector<int> touched{0};
  for (std::size_t i = 0; i < sbs.size(); ++i) {
    if (ls[i] < 1 || ls[i] >= state.cfg.model.num_branches)
      throw ParameterError("train_step: local branch must be in [1, L-1], got " + std::to_string(ls[i]));
    accumulate(state, m, sbs[i], ls[i]);
    touched.push_back(ls[i]);
  }
  finish_step(state, std::move(touched), lr);
  return m;
}

StepMetrics train_step_global(TrainState& state, const PlainBatch& batch, double lr) {
  StepMetrics m = begin_step(state, lr);
  auto& net = *state.model;
  const Tensor feat = net.backbone_forward(batch.images, true);
  const BranchOutputs g = net.branch_forward(feat, 0, true);
  BranchGrads gg = branch_losses(state, g, batch.labels);
  record(m, 0, gg.loss, state.cfg.loss);
  check_finite(state, m, batch.images, batch.labels);
  net.backbone_backward(net.branch_backward(0, gg.d_embedding, gg.d_logits));
  finish_step(state, {0}, lr);
  return m;
}

StepMetrics run_plan(TrainState& state, const BatchPlan& plan, ImageCache& cache, double lr) {
  const auto& pipeline = state.cfg.pipeline;
  if (state.cfg.mode == TrainMode::kGlobalOnly)
    return train_step_global(state, make_plain_batch(plan, pipeline, state.augment_rng, cache, state.labels), lr);
  std::vector<int> ls;
  if (state.cfg.branch_schedule == BranchSchedule::kAllBranches) {
    for (int l = 1; l < state.cfg.model.num_branches; ++l) ls.push_back(l);
  } else {
    ls.push_back(state.round_robin_branch());
  }
  std::vector<SuperBatch> sbs;
  for (int l : ls)
    sbs.push_back(make_super_batch(plan, pipeline, state.streams[static_cast<std::size_t>(l - 1)], state.augment_rng,
                                   cache, state.labels));
  return train_step(state, sbs, ls, lr);
}

// ---- checkpoints

namespace {

constexpr char kMagic[8] = {'S', 'D', 'B', 'C', 'K', 'P', 'T', '\n'};
constexpr std::uint32_t kVersion = 1;

std::string rng_state(const Rng& r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

void load_rng(Rng& r, const std::string& s) {
  std::istringstream is(s);
  is >> r;
  if (!is) throw ParseError("checkpoint: corrupt RNG state");
}

struct ArrayRef {
  std::string name;
  const Tensor* tensor;
};

}  // namespace

void save_checkpoint(const TrainState& state, const fs::path& file) {
  auto& s = const_cast<TrainState&>(state);  // parameter collection is non-const; nothing is modified
  std::vector<ArrayRef> arrays;
  for (auto* p : s.all_parameters()) arrays.push_back({"param/" + p->name, &p->value});
  for (auto& [name, t] : s.model->buffers()) arrays.push_back({"buffer/" + name, t});
  json adam_t = json::object();
  for (const auto& [name, slot] : s.adam.slots()) {
    arrays.push_back({"adam.m/" + name, &slot.m});
    arrays.push_back({"adam.v/" + name, &slot.v});
    adam_t[name] = slot.t;
  }
  json index = json::array();
  std::uint64_t offset = 0;
  for (const auto& a : arrays) {
    index.push_back({{"name", a.name}, {"shape", a.tensor->shape()}, {"offset", offset}});
    offset += a.tensor->size();
  }
  json streams = json::array();
  for (const auto& st : s.streams) streams.push_back(st.save_state());
  const json header = {{"format", "sdb-checkpoint"},
                       {"version", kVersion},
                       {"config", to_json(s.cfg)},
                       {"person_ids", s.labels.person_ids()},
                       {"step", s.step},
                       {"epoch", s.epoch},
                       {"rng", {{"sample", rng_state(s.sample_rng)}, {"augment", rng_state(s.augment_rng)}}},
                       {"mask_streams", streams},
                       {"adam_t", adam_t},
                       {"arrays", index}};
  const std::string text = header.dump();

  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    const std::uint32_t version = kVersion;
    const std::uint64_t len = text.size();
    os.write(reinterpret_cast<const char*>(&version), sizeof version);
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : arrays)
      os.write(reinterpret_cast<const char*>(a.tensor->data()),
               static_cast<std::streamsize>(a.tensor->size() * sizeof(Real)));
    if (!os) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, file, ec);
  if (ec) throw DataError("cannot move checkpoint into place at " + file.string() + ": " + ec.message());
}

TrainState load_checkpoint(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint " + file.string());
  char magic[sizeof kMagic];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  is.read(magic, sizeof magic);
  is.read(reinterpret_cast<char*>(&version), sizeof version);
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw ParseError(file.string() + " is not an sdb checkpoint");
  if (version != kVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw ParseError("truncated checkpoint header in " + file.string());
  const json header = json::parse(text);
  const auto data_start = is.tellg();

  TrainConfig cfg = train_config_from_json(header.at("config"));
  TrainState s = TrainState::create(cfg, LabelMap(header.at("person_ids").get<std::vector<int>>()));
  s.step = header.at("step").get<long long>();
  s.epoch = header.at("epoch").get<int>();
  load_rng(s.sample_rng, header.at("rng").at("sample").get<std::string>());
  load_rng(s.augment_rng, header.at("rng").at("augment").get<std::string>());
  const auto& streams = header.at("mask_streams");
  if (streams.size() != s.streams.size()) throw ParseError("checkpoint: mask stream count mismatch");
  for (std::size_t i = 0; i < s.streams.size(); ++i) s.streams[i].load_state(streams[i].get<std::string>());

  std::map<std::string, Tensor*> targets;
  for (auto* p : s.all_parameters()) targets["param/" + p->name] = &p->value;
  for (auto& [name, t] : s.model->buffers()) targets["buffer/" + name] = t;
  for (const auto& [name, t] : header.at("adam_t").items()) {
    auto& slot = s.adam.slots()[name];
    slot.t = t.get<long long>();
    targets["adam.m/" + name] = &slot.m;
    targets["adam.v/" + name] = &slot.v;
  }
  std::size_t filled = 0;
  for (const auto& a : header.at("arrays")) {
    const auto name = a.at("name").get<std::string>();
    const auto shape = a.at("shape").get<Shape>();
    auto it = targets.find(name);
    if (it == targets.end()) throw ParseError("checkpoint: unexpected array " + name);
    Tensor& t = *it->second;
    if (name.starts_with("adam.")) t = Tensor(shape);
    if (t.shape() != shape)
      throw ConfigError(name, "checkpoint shape " + shape_string(shape) + " does not match model " +
                                  shape_string(t.shape()));
    is.seekg(data_start + static_cast<std::streamoff>(a.at("offset").get<std::uint64_t>() * sizeof(Real)));
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Real)));
    if (!is) throw ParseError("truncated checkpoint data for " + name);
    ++filled;
  }
  if (filled != targets.size()) throw ParseError("checkpoint is missing arrays");
  return s;
}

// ---- fit

FitResult fit(TrainState& state, const DatasetManifest& manifest, ImageCache& cache, const FitOptions& opts) {
  if (manifest.train.empty()) throw DataError("dataset has no training split");
  const auto t0 = std::chrono::steady_clock::now();
  FitResult result;
  const fs::path ckpt_dir = opts.output_dir / "checkpoints";
  std::error_code ec;
  fs::create_directories(ckpt_dir, ec);
  if (ec) throw DataError("cannot create " + ckpt_dir.string() + ": " + ec.message());
  state.diagnostics_dir = opts.output_dir;
  result.metrics_log = opts.output_dir / "metrics.log";
  std::ofstream log(result.metrics_log, std::ios::app);
  if (!log) throw DataError("cannot open " + result.metrics_log.string());

  const auto missing = cache.preload(manifest.train);
  if (!missing.empty()) throw DataError("cannot load training image " + (manifest.root / missing.front()).string());

  const int total = state.cfg.schedule.total_epochs;
  while (state.epoch < total) {
    const int e = state.epoch;
    const double lr = lr_at(e, state.cfg.schedule);
    const auto plans = build_epoch_plan(manifest.train, state.cfg.p, state.cfg.k, state.sample_rng);
    for (const auto& plan : plans) {
      result.last = run_plan(state, plan, cache, lr);
      log << format_step(result.last) << "\n";
    }
    log.flush();
    state.epoch = e + 1;
    if (opts.progress)
      *opts.progress << "epoch " << state.epoch << "/" << total << " lr=" << lr << " " << format_step(result.last)
                     << std::endl;
    if (opts.eval_hook && opts.eval_every > 0 && state.epoch % opts.eval_every == 0 && state.epoch < total) {
      log << "eval epoch=" << state.epoch << " " << opts.eval_hook(state, state.epoch) << "\n";
      log.flush();
    }
    const bool stopping = opts.stop_after_epoch >= 0 && state.epoch >= opts.stop_after_epoch;
    const bool last = state.epoch == total;
    if (last || stopping || (opts.checkpoint_every > 0 && state.epoch % opts.checkpoint_every == 0)) {
      char name[64];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", state.epoch);
      result.last_checkpoint = ckpt_dir / name;
      save_checkpoint(state, result.last_checkpoint);
      fs::copy_file(result.last_checkpoint, ckpt_dir / "last.ckpt", fs::copy_options::overwrite_existing);
    }
    if (stopping) break;
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace sdb
