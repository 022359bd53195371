#include "sdb/experiment.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sdb/errors.hpp"

namespace fs = std::filesystem;

namespace sdb {

fs::path resolve_output_dir(const ExperimentConfig& cfg, const std::string& cli_output) {
  if (!cli_output.empty()) return cli_output;
  fs::path dir = cfg.output_dir.empty() ? fs::path("runs") / cfg.name : fs::path(cfg.output_dir);
  if (dir.is_relative()) {
    if (const char* root = std::getenv("SDB_OUTPUT_ROOT"); root && *root) dir = fs::path(root) / dir;
  }
  return dir;
}

DatasetManifest prepare_dataset(const ExperimentConfig& cfg, const fs::path& output_dir,
                                std::vector<std::string>* warnings) {
  if (cfg.dataset.root.empty()) {
    if (!cfg.dataset.synthetic) throw ConfigError("dataset.root", "no dataset given");
    return generate_synthetic(*cfg.dataset.synthetic, output_dir / "data");
  }
  const fs::path root = cfg.dataset.root;
  if (!fs::exists(root)) throw ConfigError("dataset.root", "path does not exist: " + root.string());
  if (fs::exists(root / "manifest.txt")) return read_manifest(root / "manifest.txt");
  return load_split(root, Layout::kMarket, warnings);
}

std::vector<int> eval_branches(const TrainConfig& cfg) {
  if (cfg.mode == TrainMode::kGlobalOnly) return {0};
  std::vector<int> all;
  for (int b = 0; b < cfg.model.num_branches; ++b) all.push_back(b);
  return all;
}

RetrievalMetrics run_eval(TrainState& state, const DatasetManifest& manifest, Metric metric, std::size_t batch_size) {
  ImageCache cache(manifest);
  const auto branches = eval_branches(state.cfg);
  const Tensor q = extract_embeddings(*state.model, manifest.query, cache, state.cfg.pipeline, branches, batch_size);
  const Tensor g =
      extract_embeddings(*state.model, manifest.gallery, cache, state.cfg.pipeline, branches, batch_size);
  if (q.empty() || g.empty()) throw EvaluationError("evaluation needs non-empty query and gallery splits");
  return cmc_map(pairwise_distances(q, g, metric), manifest.query, manifest.gallery);
}

TrainRun run_training(const ExperimentConfig& cfg_in, const TrainRunOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = cfg_in;
  cfg.validate();
  TrainRun run;
  run.output_dir = opts.output_dir.empty() ? resolve_output_dir(cfg) : opts.output_dir;
  std::error_code ec;
  fs::create_directories(run.output_dir, ec);
  if (ec) throw DataError("cannot create output directory " + run.output_dir.string() + ": " + ec.message());

  std::vector<std::string> warnings;
  const DatasetManifest manifest = prepare_dataset(cfg, run.output_dir, &warnings);
  if (opts.progress)
    for (const auto& w : warnings) *opts.progress << "warning: " << w << "\n";

  TrainState state = opts.resume.empty() ? TrainState::create(cfg.train, LabelMap(manifest.train))
                                         : load_checkpoint(opts.resume);
  if (!opts.resume.empty() && opts.progress)
    *opts.progress << "resumed from " << opts.resume.string() << " at epoch " << state.epoch << ", step "
                   << state.step << "\n";
  cfg.train = state.cfg;
  cfg.output_dir = run.output_dir.string();
  {
    std::ofstream os(run.output_dir / "config.resolved.json");
    if (!os) throw DataError("cannot write " + (run.output_dir / "config.resolved.json").string());
    os << to_json(cfg).dump(2) << "\n";
  }

  FitOptions fo;
  fo.output_dir = run.output_dir;
  fo.checkpoint_every = cfg.checkpoint_every;
  fo.eval_every = cfg.eval.every;
  fo.stop_after_epoch = opts.stop_after_epoch;
  fo.progress = opts.progress;
  fo.eval_hook = [&](TrainState& s, int) {
    const RetrievalMetrics m = run_eval(s, manifest, cfg.eval.metric, static_cast<std::size_t>(cfg.eval.batch_size));
    std::ostringstream os;
    os << "mAP=" << m.map << " rank1=" << m.rank1 << " rank5=" << m.rank5 << " rank10=" << m.rank10;
    if (opts.progress) *opts.progress << "eval " << os.str() << std::endl;
    return os.str();
  };
  ImageCache cache(manifest);
  const FitResult fr = fit(state, manifest, cache, fo);
  run.checkpoint = fr.last_checkpoint;
  run.metrics_log = fr.metrics_log;
  run.train_seconds = fr.seconds;
  run.steps = state.step;

  if (opts.final_eval && state.epoch == state.cfg.schedule.total_epochs) {
    run.final_eval = run_eval(state, manifest, cfg.eval.metric, static_cast<std::size_t>(cfg.eval.batch_size));
    write_metrics(run.final_eval, run.output_dir / "eval.txt");
  }
  run.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

}  // namespace sdb
