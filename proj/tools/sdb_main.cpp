// sdb: train / eval / retrieve / selfcheck / synth / presets.
//
// Exit codes: 0 success, 1 runtime failure (or failing self-check),
// 2 usage or configuration error.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdb/config.hpp"
#include "sdb/errors.hpp"
#include "sdb/experiment.hpp"
#include "sdb/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace sdb;

namespace {

struct CommonOpts {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::string> ablations;
  std::string output;
  long long seed = -1;
};

void add_config_opts(CLI::App* cmd, CommonOpts& o, bool required) {
  auto* c = cmd->add_option("--config", o.config, "preset name or JSON config file");
  if (required) c->required();
  cmd->add_option("--set", o.sets, "override a config key: a.b.c=value (repeatable)");
  cmd->add_option("--ablation", o.ablations,
                  "co_training=on|off, attention=on|off, q=N, r_h=X, dim_reduction=on|off (repeatable)");
  cmd->add_option("--seed", o.seed, "training seed");
  cmd->add_option("--output", o.output, "output directory (file for eval)");
}

ExperimentConfig build_config(const CommonOpts& o) {
  ExperimentConfig cfg = load_experiment(o.config);
  for (const auto& a : o.ablations) apply_ablation(cfg, a);
  for (const auto& s : o.sets) apply_override(cfg, s);
  if (o.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(o.seed);
  cfg.validate();
  return cfg;
}

// Config for a checkpoint: explicit --config, else the run's resolved snapshot.
ExperimentConfig config_for_checkpoint(const CommonOpts& o, const fs::path& ckpt) {
  if (!o.config.empty()) return build_config(o);
  const fs::path snapshot = ckpt.parent_path().parent_path() / "config.resolved.json";
  if (!fs::exists(snapshot))
    throw ConfigError("config", "no --config given and no " + snapshot.string() + " next to the checkpoint");
  CommonOpts with = o;
  with.config = snapshot.string();
  return build_config(with);
}

int cmd_train(const CommonOpts& o, const std::string& resume, bool quiet) {
  const ExperimentConfig cfg = build_config(o);
  TrainRunOptions ro;
  ro.output_dir = resolve_output_dir(cfg, o.output);
  ro.progress = quiet ? nullptr : &std::cout;
  if (!resume.empty()) {
    ro.resume = resume == "auto" ? ro.output_dir / "checkpoints" / "last.ckpt" : fs::path(resume);
    if (!fs::exists(ro.resume)) throw DataError("checkpoint not found: " + ro.resume.string());
  }
  const TrainRun run = run_training(cfg, ro);
  std::cout << "output " << run.output_dir.string() << "\n";
  std::cout << "checkpoint " << run.checkpoint.string() << "\n";
  std::cout << "steps " << run.steps << " train_seconds " << run.train_seconds << "\n";
  if (run.final_eval.num_queries) std::cout << format_metrics(run.final_eval);
  return 0;
}

struct Loaded {
  ExperimentConfig cfg;
  TrainState state;
  DatasetManifest manifest;
  fs::path out;
};

Loaded load_for_eval(const CommonOpts& o, const std::string& checkpoint) {
  Loaded l{config_for_checkpoint(o, checkpoint), load_checkpoint(checkpoint), {}, {}};
  const fs::path run_dir = fs::path(checkpoint).parent_path().parent_path();
  std::vector<std::string> warnings;
  l.manifest = prepare_dataset(l.cfg, l.cfg.dataset.root.empty() ? run_dir : fs::path(), &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  if (l.state.cfg.model.input_dims != l.cfg.train.model.input_dims)
    throw ConfigError("model.input_dims", "checkpoint and config disagree on the input size");
  return l;
}

int cmd_eval(const CommonOpts& o, const std::string& checkpoint, const std::string& metric) {
  Loaded l = load_for_eval(o, checkpoint);
  const Metric m = metric.empty() ? l.cfg.eval.metric : parse_metric(metric);
  const RetrievalMetrics r = run_eval(l.state, l.manifest, m, static_cast<std::size_t>(l.cfg.eval.batch_size));
  const std::string text = "metric=" + std::string(to_string(m)) + "\n" + format_metrics(r);
  std::cout << text;
  if (!o.output.empty()) {
    std::ofstream os(o.output);
    if (!os) throw DataError("cannot write " + o.output);
    os << text;
  }
  return 0;
}

int cmd_retrieve(const CommonOpts& o, const std::string& checkpoint, const std::string& metric, int topk) {
  Loaded l = load_for_eval(o, checkpoint);
  const Metric m = metric.empty() ? l.cfg.eval.metric : parse_metric(metric);
  if (topk < 1) throw ConfigError("topk", "must be >= 1");
  // unreadable images are listed in the report instead of aborting
  ImageCache cache(l.manifest);
  std::vector<std::string> missing = cache.preload(l.manifest.query);
  const auto missing_g = cache.preload(l.manifest.gallery);
  missing.insert(missing.end(), missing_g.begin(), missing_g.end());
  auto keep = [&](const std::vector<SampleMeta>& items) {
    std::vector<SampleMeta> out;
    for (const auto& it : items)
      if (std::find(missing.begin(), missing.end(), it.path) == missing.end()) out.push_back(it);
    return out;
  };
  const auto queries = keep(l.manifest.query), gallery = keep(l.manifest.gallery);
  const auto branches = eval_branches(l.state.cfg);
  const Tensor q = extract_embeddings(*l.state.model, queries, cache, l.state.cfg.pipeline, branches);
  const Tensor g = extract_embeddings(*l.state.model, gallery, cache, l.state.cfg.pipeline, branches);
  RetrievalReport report = retrieve_topk(pairwise_distances(q, g, m), queries, gallery, static_cast<std::size_t>(topk));
  report.missing = missing;
  const fs::path out = o.output.empty() ? fs::path(checkpoint).parent_path().parent_path() / "retrieval" : fs::path(o.output);
  fs::create_directories(out);
  std::ofstream(out / "retrieval.txt") << format_retrieval_text(report);
  std::ofstream(out / "retrieval.html") << format_retrieval_html(report, fs::absolute(l.manifest.root));
  std::cout << "wrote " << (out / "retrieval.txt").string() << " and " << (out / "retrieval.html").string() << "\n";
  if (!missing.empty()) std::cout << missing.size() << " images could not be loaded (listed in the report)\n";
  return 0;
}

int cmd_selfcheck(const std::string& fault) {
  SelfcheckOptions so;
  if (fault == "softplus") so.softplus = broken_softplus();
  else if (!fault.empty()) throw ConfigError("inject-fault", "unknown fault '" + fault + "' (softplus)");
  bool ok = true;
  double total = 0;
  for (const auto& r : run_selfcheck(so)) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.detail << "  (" << r.seconds << " s)\n";
    ok = ok && r.passed;
    total += r.seconds;
  }
  std::cout << (ok ? "selfcheck passed" : "selfcheck FAILED") << " in " << total << " s\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slow-DropBlock person re-identification toolkit"};
  app.require_subcommand(1);

  CommonOpts train_o, eval_o, retr_o;
  std::string resume, checkpoint, metric, fault;
  int topk = 10;
  bool quiet = false;

  auto* train = app.add_subcommand("train", "train a model from a config or preset");
  add_config_opts(train, train_o, true);
  train->add_option("--resume", resume, "checkpoint to continue from, or 'auto' for <output>/checkpoints/last.ckpt");
  train->add_flag("--quiet", quiet, "no per-epoch progress");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (mAP, rank-1/5/10)");
  add_config_opts(eval, eval_o, false);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--metric", metric, "euclidean | cosine");

  auto* retrieve = app.add_subcommand("retrieve", "top-k retrieval report (text + HTML)");
  add_config_opts(retrieve, retr_o, false);
  retrieve->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  retrieve->add_option("--metric", metric, "euclidean | cosine");
  retrieve->add_option("--topk", topk, "gallery items per query");

  auto* selfcheck = app.add_subcommand("selfcheck", "fast property suite");
  selfcheck->add_option("--inject-fault", fault, "negative control: softplus");

  SynthConfig synth_cfg;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  synth->add_option("--output", synth_out, "output directory")->required();
  synth->add_option("--ids", synth_cfg.num_ids, "identities");
  synth->add_option("--train-ids", synth_cfg.num_train_ids, "identities in the training split");
  synth->add_option("--images-per-id", synth_cfg.images_per_id, "images per identity");
  synth->add_option("--cameras", synth_cfg.num_cameras, "cameras");
  synth->add_option("--noise", synth_cfg.noise_level, "pixel noise std");
  synth->add_option("--seed", synth_cfg.seed, "seed");

  std::string show;
  auto* presets = app.add_subcommand("presets", "list presets or print one as JSON");
  presets->add_option("--show", show, "preset to print");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(train_o, resume, quiet);
    if (*eval) return cmd_eval(eval_o, checkpoint, metric);
    if (*retrieve) return cmd_retrieve(retr_o, checkpoint, metric, topk);
    if (*selfcheck) return cmd_selfcheck(fault);
    if (*synth) {
      const DatasetManifest m = generate_synthetic(synth_cfg, synth_out);
      std::cout << "wrote " << m.train.size() + m.query.size() + m.gallery.size() << " images and "
                << (fs::path(synth_out) / "manifest.txt").string() << "\n";
      return 0;
    }
    if (*presets) {
      if (show.empty()) {
        for (const auto& n : preset_names()) std::cout << n << "\n";
      } else {
        std::cout << to_json(preset(show)).dump(2) << "\n";
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
