#include "sdb/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "sdb/errors.hpp"

using nlohmann::json;

namespace sdb {

namespace {

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

// Reads keys out of one JSON object, remembering which were consumed so that
// leftovers can be reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(std::string_view key) const { return join(path_, key); }

  const json* find(std::string_view key) {
    auto it = j_.find(std::string(key));
    if (it == j_.end()) return nullptr;
    seen_.insert(std::string(key));
    return &*it;
  }

  void get(std::string_view key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key), "expected a number");
      out = v->get<double>();
    }
  }
  void get(std::string_view key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(std::string_view key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(field(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  template <typename Int>
    requires std::is_integral_v<Int>
  void get(std::string_view key, Int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(field(key), "expected an integer");
      if (std::is_unsigned_v<Int> && v->get<long long>() < 0) throw ConfigError(field(key), "must be >= 0");
      out = v->get<Int>();
    }
  }
  template <typename Parse, typename T>
  void get_enum(std::string_view key, T& out, Parse parse) {
    std::string s;
    if (!find(key)) return;
    get(key, s);
    try {
      out = parse(s);
    } catch (const std::exception& e) {
      throw ConfigError(field(key), e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json dims_json(Dims d) { return json::array({d.height, d.width}); }

Dims read_dims(const json& v, const std::string& field) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_unsigned() || !v[1].is_number_unsigned())
    throw ConfigError(field, "expected [height, width]");
  return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
}

json drop_json(const DropSpec& d) {
  return {{"mode", to_string(d.mode)}, {"r_h", d.r_h}, {"r_w", d.r_w}, {"q", d.q}, {"prob", d.prob}};
}

DropSpec read_drop(const json& j, const std::string& path, DropSpec d) {
  Reader r(j, path);
  r.get_enum("mode", d.mode, parse_drop_mode);
  r.get("r_h", d.r_h);
  r.get("r_w", d.r_w);
  r.get("q", d.q);
  r.get("prob", d.prob);
  r.finish();
  try {
    d.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(path, e.what());
  }
  return d;
}

json backbone_json(const BackboneSpec& b) {
  if (b == BackboneSpec::resnet50()) return "resnet50";
  if (b == BackboneSpec::toy()) return "toy";
  json stages = json::array();
  for (const auto& s : b.stages)
    stages.push_back(
        {{"blocks", s.blocks}, {"mid_channels", s.mid_channels}, {"out_channels", s.out_channels}, {"stride", s.stride}});
  return {{"stem_channels", b.stem_channels},
          {"stem_kernel", b.stem_kernel},
          {"stem_stride", b.stem_stride},
          {"stem_pool", b.stem_pool},
          {"stages", stages}};
}

BackboneSpec read_backbone(const json& j, const std::string& path, BackboneSpec b) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "resnet50") return BackboneSpec::resnet50();
    if (name == "toy") return BackboneSpec::toy();
    throw ConfigError(path, "unknown backbone '" + name + "' (resnet50 | toy | object)");
  }
  Reader r(j, path);
  r.get("stem_channels", b.stem_channels);
  r.get("stem_kernel", b.stem_kernel);
  r.get("stem_stride", b.stem_stride);
  r.get("stem_pool", b.stem_pool);
  if (const json* st = r.find("stages")) {
    if (!st->is_array()) throw ConfigError(r.field("stages"), "expected an array");
    b.stages.clear();
    for (std::size_t i = 0; i < st->size(); ++i) {
      Reader s((*st)[i], r.field("stages") + "[" + std::to_string(i) + "]");
      StageSpec spec;
      s.get("blocks", spec.blocks);
      s.get("mid_channels", spec.mid_channels);
      s.get("out_channels", spec.out_channels);
      s.get("stride", spec.stride);
      s.finish();
      b.stages.push_back(spec);
    }
  }
  r.finish();
  return b;
}

std::string_view to_string(AffinityNorm n) { return n == AffinityNorm::kGlobalL1 ? "global_l1" : "row_softmax"; }

AffinityNorm parse_affinity_norm(std::string_view s) {
  if (s == "row_softmax") return AffinityNorm::kRowSoftmax;
  if (s == "global_l1") return AffinityNorm::kGlobalL1;
  throw ParameterError("unknown affinity norm '" + std::string(s) + "' (row_softmax | global_l1)");
}

json model_json(const ModelConfig& m) {
  return {{"num_branches", m.num_branches},
          {"backbone", backbone_json(m.backbone)},
          {"embed_dim", m.embed_dim},
          {"num_classes", m.num_classes},
          {"use_attention", m.use_attention},
          {"use_dim_reduction", m.use_dim_reduction},
          {"input_dims", dims_json(m.input_dims)},
          {"attention_beta", m.attention_beta},
          {"affinity_norm", to_string(m.affinity_norm)}};
}

ModelConfig read_model(const json& j, const std::string& path, ModelConfig m) {
  Reader r(j, path);
  r.get("num_branches", m.num_branches);
  if (const json* b = r.find("backbone")) m.backbone = read_backbone(*b, r.field("backbone"), m.backbone);
  r.get("embed_dim", m.embed_dim);
  r.get("num_classes", m.num_classes);
  r.get("use_attention", m.use_attention);
  r.get("use_dim_reduction", m.use_dim_reduction);
  if (const json* d = r.find("input_dims")) m.input_dims = read_dims(*d, r.field("input_dims"));
  r.get("attention_beta", m.attention_beta);
  r.get_enum("affinity_norm", m.affinity_norm, parse_affinity_norm);
  r.finish();
  return m;
}

json pipeline_json(const PipelineConfig& p) {
  return {{"resize_to", dims_json(p.resize_to)},
          {"flip_prob", p.flip_prob},
          {"cutout", p.cutout ? drop_json(*p.cutout) : json(nullptr)},
          {"random_erasing", p.random_erasing ? drop_json(*p.random_erasing) : json(nullptr)},
          {"normalization", {{"mean", p.normalization.mean}, {"std", p.normalization.std}}}};
}

std::array<Real, 3> read_triple(const json& v, const std::string& field) {
  if (!v.is_array() || v.size() != 3 || !std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); }))
    throw ConfigError(field, "expected 3 numbers");
  return {v[0].get<Real>(), v[1].get<Real>(), v[2].get<Real>()};
}

PipelineConfig read_pipeline(const json& j, const std::string& path, PipelineConfig p) {
  Reader r(j, path);
  if (const json* d = r.find("resize_to")) p.resize_to = read_dims(*d, r.field("resize_to"));
  r.get("flip_prob", p.flip_prob);
  for (auto [key, slot, mode] : {std::tuple{"cutout", &p.cutout, DropMode::kCutout},
                                 std::tuple{"random_erasing", &p.random_erasing, DropMode::kRandomErasing}}) {
    if (const json* v = r.find(key)) {
      if (v->is_null()) {
        slot->reset();
      } else {
        DropSpec base = slot->value_or(DropSpec{});
        base.mode = mode;
        *slot = read_drop(*v, r.field(key), base);
      }
    }
  }
  if (const json* n = r.find("normalization")) {
    Reader nr(*n, r.field("normalization"));
    if (const json* m = nr.find("mean")) p.normalization.mean = read_triple(*m, nr.field("mean"));
    if (const json* s = nr.find("std")) p.normalization.std = read_triple(*s, nr.field("std"));
    nr.finish();
  }
  r.finish();
  try {
    p.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(path, e.what());
  }
  return p;
}

json schedule_json(const Schedule& s) {
  return {{"base_lr", s.base_lr},           {"peak_lr", s.peak_lr},         {"warmup_epochs", s.warmup_epochs},
          {"decay1_epoch", s.decay1_epoch}, {"decay1_lr", s.decay1_lr},     {"decay2_epoch", s.decay2_epoch},
          {"decay2_lr", s.decay2_lr},       {"total_epochs", s.total_epochs}};
}

Schedule read_schedule(const json& j, const std::string& path, Schedule s) {
  Reader r(j, path);
  std::string preset;
  r.get("preset", preset);
  if (preset == "120") s = Schedule::preset120();
  else if (preset == "150") s = Schedule::preset150();
  else if (!preset.empty()) throw ConfigError(r.field("preset"), "expected \"120\" or \"150\"");
  r.get("base_lr", s.base_lr);
  r.get("peak_lr", s.peak_lr);
  r.get("warmup_epochs", s.warmup_epochs);
  r.get("decay1_epoch", s.decay1_epoch);
  r.get("decay1_lr", s.decay1_lr);
  r.get("decay2_epoch", s.decay2_epoch);
  r.get("decay2_lr", s.decay2_lr);
  r.get("total_epochs", s.total_epochs);
  r.finish();
  return s;
}

json synth_json(const SynthConfig& s) {
  return {{"num_ids", s.num_ids},
          {"num_train_ids", s.num_train_ids},
          {"images_per_id", s.images_per_id},
          {"num_cameras", s.num_cameras},
          {"image_dims", dims_json(s.image_dims)},
          {"noise_level", s.noise_level},
          {"seed", s.seed}};
}

SynthConfig read_synth(const json& j, const std::string& path, SynthConfig s) {
  Reader r(j, path);
  r.get("num_ids", s.num_ids);
  r.get("num_train_ids", s.num_train_ids);
  r.get("images_per_id", s.images_per_id);
  r.get("num_cameras", s.num_cameras);
  if (const json* d = r.find("image_dims")) s.image_dims = read_dims(*d, r.field("image_dims"));
  r.get("noise_level", s.noise_level);
  r.get("seed", s.seed);
  r.finish();
  return s;
}

// Train-side keys live at the top level of an experiment file; this reads
// them from `r` so that both layouts share one parser.
void read_train_keys(Reader& r, TrainConfig& t, int* checkpoint_every) {
  r.get("seed", t.seed);
  if (const json* m = r.find("model")) t.model = read_model(*m, r.field("model"), t.model);
  if (const json* d = r.find("drop")) {
    if (!d->is_array()) throw ConfigError(r.field("drop"), "expected an array with one entry per local branch");
    std::vector<DropSpec> drops;
    for (std::size_t i = 0; i < d->size(); ++i) {
      const DropSpec base = i < t.drops.size() ? t.drops[i] : (t.drops.empty() ? DropSpec{} : t.drops.back());
      drops.push_back(read_drop((*d)[i], r.field("drop") + "[" + std::to_string(i) + "]", base));
    }
    t.drops = std::move(drops);
  }
  if (const json* p = r.find("pipeline")) t.pipeline = read_pipeline(*p, r.field("pipeline"), t.pipeline);
  if (const json* s = r.find("schedule")) t.schedule = read_schedule(*s, r.field("schedule"), t.schedule);
  if (const json* l = r.find("loss")) {
    Reader lr(*l, r.field("loss"));
    lr.get("gamma_t", t.loss.gamma_t);
    lr.get("gamma_c", t.loss.gamma_c);
    lr.finish();
  }
  if (const json* s = r.find("sampler")) {
    Reader sr(*s, r.field("sampler"));
    sr.get("p", t.p);
    sr.get("k", t.k);
    sr.finish();
  }
  if (const json* tr = r.find("training")) {
    Reader tr_r(*tr, r.field("training"));
    tr_r.get_enum("mode", t.mode, parse_train_mode);
    tr_r.get_enum("branch_schedule", t.branch_schedule, parse_branch_schedule);
    if (checkpoint_every) tr_r.get("checkpoint_every", *checkpoint_every);
    if (const json* a = tr_r.find("adam")) {
      Reader ar(*a, tr_r.field("adam"));
      ar.get("beta1", t.adam_beta1);
      ar.get("beta2", t.adam_beta2);
      ar.get("eps", t.adam_eps);
      ar.finish();
    }
    tr_r.finish();
  }
}

json train_keys_json(const TrainConfig& c, int checkpoint_every) {
  json drops = json::array();
  for (const auto& d : c.drops) drops.push_back(drop_json(d));
  json training = {{"mode", to_string(c.mode)},
                   {"branch_schedule", to_string(c.branch_schedule)},
                   {"adam", {{"beta1", c.adam_beta1}, {"beta2", c.adam_beta2}, {"eps", c.adam_eps}}}};
  if (checkpoint_every >= 0) training["checkpoint_every"] = checkpoint_every;
  return {{"seed", c.seed},
          {"model", model_json(c.model)},
          {"drop", drops},
          {"pipeline", pipeline_json(c.pipeline)},
          {"schedule", schedule_json(c.schedule)},
          {"loss", {{"gamma_t", c.loss.gamma_t}, {"gamma_c", c.loss.gamma_c}}},
          {"sampler", {{"p", c.p}, {"k", c.k}}},
          {"training", training}};
}

}  // namespace

json to_json(const TrainConfig& c) { return train_keys_json(c, -1); }

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
  TrainConfig t = base;
  Reader r(j, "");
  read_train_keys(r, t, nullptr);
  r.finish();
  return t;
}

json to_json(const ExperimentConfig& c) {
  json j = train_keys_json(c.train, c.checkpoint_every);
  j["name"] = c.name;
  j["output_dir"] = c.output_dir;
  j["dataset"] = {{"root", c.dataset.root},
                  {"synthetic", c.dataset.synthetic ? synth_json(*c.dataset.synthetic) : json(nullptr)}};
  j["eval"] = {{"metric", to_string(c.eval.metric)},
               {"topk", c.eval.topk},
               {"every", c.eval.every},
               {"batch_size", c.eval.batch_size}};
  return j;
}

ExperimentConfig experiment_from_json(const json& j, const ExperimentConfig& base) {
  ExperimentConfig c = base;
  Reader r(j, "");
  r.find("preset");  // consumed by load_experiment
  r.get("name", c.name);
  r.get("output_dir", c.output_dir);
  read_train_keys(r, c.train, &c.checkpoint_every);
  if (const json* d = r.find("dataset")) {
    Reader dr(*d, "dataset");
    dr.get("root", c.dataset.root);
    if (const json* s = dr.find("synthetic")) {
      if (s->is_null()) c.dataset.synthetic.reset();
      else c.dataset.synthetic = read_synth(*s, "dataset.synthetic", c.dataset.synthetic.value_or(SynthConfig{}));
    }
    dr.finish();
  }
  if (const json* e = r.find("eval")) {
    Reader er(*e, "eval");
    er.get_enum("metric", c.eval.metric, parse_metric);
    er.get("topk", c.eval.topk);
    er.get("every", c.eval.every);
    er.get("batch_size", c.eval.batch_size);
    er.finish();
  }
  r.finish();
  return c;
}

void ExperimentConfig::validate() const {
  train.validate();
  if (dataset.root.empty() && !dataset.synthetic)
    throw ConfigError("dataset.root", "no dataset given (set dataset.root or dataset.synthetic)");
  if (dataset.synthetic) {
    dataset.synthetic->validate();
  }
  if (eval.topk < 1) throw ConfigError("eval.topk", "must be >= 1");
  if (eval.every < 0) throw ConfigError("eval.every", "must be >= 0");
  if (eval.batch_size < 1) throw ConfigError("eval.batch_size", "must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("training.checkpoint_every", "must be >= 0");
}

// ---- presets

namespace {

ExperimentConfig resnet50_preset(int branches) {
  ExperimentConfig c;
  c.name = branches == 2 ? "sdb2_resnet50" : "sdb4_resnet50";
  auto& t = c.train;
  t.model.num_branches = branches;
  t.model.backbone = BackboneSpec::resnet50();
  t.model.embed_dim = 512;
  t.model.num_classes = 0;
  t.model.input_dims = {384, 128};
  t.pipeline.resize_to = {384, 128};
  t.pipeline.flip_prob = 0.5;
  t.pipeline.cutout = DropSpec{0.25, 0.25, 1, DropMode::kCutout, 0.5};
  t.pipeline.random_erasing = DropSpec{0.4, 0.4, 1, DropMode::kRandomErasing, 0.5};
  t.drops.clear();
  if (branches == 2) {
    t.drops.push_back(DropSpec{0.3, 1.0, 5, DropMode::kSlowDropBlock, 1.0});
  } else {
    for (double rh : {0.2, 0.3, 0.4}) t.drops.push_back(DropSpec{rh, 1.0, 5, DropMode::kSlowDropBlock, 1.0});
  }
  t.schedule = Schedule::preset120();
  t.p = 8;
  t.k = 4;
  c.checkpoint_every = 10;
  return c;
}

ExperimentConfig toy_preset(int branches) {
  ExperimentConfig c = resnet50_preset(branches);
  c.name = branches == 2 ? "sdb2_toy" : "sdb4_toy";
  auto& t = c.train;
  t.model.backbone = BackboneSpec::toy();
  t.model.embed_dim = 64;
  t.model.input_dims = {64, 32};
  t.pipeline.resize_to = {64, 32};
  // ~130 steps in total from a random init; needs a hotter, longer plateau
  t.schedule.total_epochs = 30;
  t.schedule.warmup_epochs = 3;
  t.schedule.decay1_epoch = 22;
  t.schedule.decay2_epoch = 27;
  t.schedule.peak_lr = 4e-3;
  t.schedule.base_lr = 4e-4;
  t.schedule.decay1_lr = 4e-4;
  t.schedule.decay2_lr = 4e-5;
  c.dataset.synthetic = SynthConfig{};
  c.checkpoint_every = 10;
  return c;
}

}  // namespace

std::vector<std::string> preset_names() { return {"sdb2_resnet50", "sdb4_resnet50", "sdb2_toy", "sdb4_toy"}; }

ExperimentConfig preset(std::string_view name) {
  if (name == "sdb2_resnet50") return resnet50_preset(2);
  if (name == "sdb4_resnet50") return resnet50_preset(4);
  if (name == "sdb2_toy") return toy_preset(2);
  if (name == "sdb4_toy") return toy_preset(4);
  throw ConfigError("preset", "unknown preset '" + std::string(name) + "'");
}

ExperimentConfig load_experiment(const std::string& name_or_path) {
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end()) return preset(name_or_path);
  std::ifstream is(name_or_path);
  if (!is) throw ConfigError("config", "'" + name_or_path + "' is neither a preset nor a readable file");
  json j;
  try {
    j = json::parse(is, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", name_or_path + ": " + e.what());
  }
  ExperimentConfig base;
  if (j.is_object() && j.contains("preset")) {
    if (!j["preset"].is_string()) throw ConfigError("preset", "expected a string");
    base = preset(j["preset"].get<std::string>());
  }
  return experiment_from_json(j, base);
}

void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("--set", "expected key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json j = to_json(cfg);
  // drop entries are addressed as drop.<index>.<field>
  json::json_pointer ptr("/" + [&] {
    std::string s = key;
    std::replace(s.begin(), s.end(), '.', '/');
    return s;
  }());
  if (!j.contains(ptr.parent_pointer()) && !ptr.parent_pointer().empty())
    throw ConfigError(key, "unknown key");
  j[ptr] = value;
  cfg = experiment_from_json(j, cfg);
}

void apply_ablation(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("--ablation", "expected name=value");
  const std::string key(assignment.substr(0, eq));
  const std::string value(assignment.substr(eq + 1));
  auto on_off = [&]() {
    if (value == "on") return true;
    if (value == "off") return false;
    throw ConfigError("ablation." + key, "expected on or off");
  };
  auto& t = cfg.train;
  if (key == "co_training") {
    t.mode = on_off() ? TrainMode::kCoTraining : TrainMode::kSingleBatch;
  } else if (key == "attention") {
    t.model.use_attention = on_off();
  } else if (key == "dim_reduction") {
    t.model.use_dim_reduction = on_off();
  } else if (key == "q" || key == "r_h") {
    double v = 0;
    try {
      std::size_t used = 0;
      v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw ConfigError("ablation." + key, "expected a number");
    }
    for (auto& d : t.drops) {
      if (key == "q") {
        if (v < 1 || v != static_cast<int>(v)) throw ConfigError("ablation.q", "expected an integer >= 1");
        d.q = static_cast<int>(v);
      } else {
        if (v < 0 || v > 1) throw ConfigError("ablation.r_h", "expected a ratio in [0,1]");
        d.r_h = v;
      }
    }
  } else {
    throw ConfigError("ablation." + key, "unknown ablation (co_training, attention, q, r_h, dim_reduction)");
  }
  cfg.name += "-" + key + "_" + value;
}

}  // namespace sdb
