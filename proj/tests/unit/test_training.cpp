#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sdb/config.hpp"
#include "sdb/errors.hpp"
#include "sdb/training.hpp"
#include "test_util.hpp"

using namespace sdb;
namespace fs = std::filesystem;

namespace {

// Small and fast: SDB-L toy net on 20x8 synthetic images, 4 ids x 2 instances.
struct Fixture {
  test::TempDir dir{"training"};
  DatasetManifest manifest;
  ImageCache cache;

  Fixture() : manifest(generate_synthetic(SynthConfig{}, dir.path() / "data")), cache(manifest) {}

  TrainConfig config(int branches = 2) const {
    TrainConfig c = preset(branches == 2 ? "sdb2_toy" : "sdb4_toy").train;
    c.model.embed_dim = 16;
    c.p = 4;
    c.k = 2;
    c.schedule.total_epochs = 4;
    c.schedule.warmup_epochs = 1;
    c.schedule.decay1_epoch = 2;
    c.schedule.decay2_epoch = 3;
    c.seed = 11;
    return c;
  }
  TrainState state(const TrainConfig& c) const { return TrainState::create(c, LabelMap(manifest.train)); }
};

std::vector<std::vector<Real>> snapshot(const nn::ParamRefs& ps) {
  std::vector<std::vector<Real>> out;
  for (auto* p : ps) out.push_back(p->value.storage());
  return out;
}

std::vector<std::string> run_steps(TrainState& s, ImageCache& cache, const DatasetManifest& m, int steps) {
  std::vector<std::string> log;
  while (static_cast<int>(log.size()) < steps)
    for (const auto& plan : build_epoch_plan(m.train, s.cfg.p, s.cfg.k, s.sample_rng)) {
      if (static_cast<int>(log.size()) == steps) break;
      log.push_back(format_step(run_plan(s, plan, cache, 1e-3)));
    }
  return log;
}

double total_of(const std::string& line) {
  const auto at = line.find("total=");
  return std::stod(line.substr(at + 6));
}

}  // namespace

TEST_CASE("a round-robin step leaves other local branches bit-identical") {
  Fixture f;
  TrainState s = f.state(f.config(4));
  CHECK(s.round_robin_branch() == 1);
  const auto b2 = snapshot(s.model->branch_parameters(2)), b3 = snapshot(s.model->branch_parameters(3));
  const auto b1 = snapshot(s.model->branch_parameters(1)), b0 = snapshot(s.model->branch_parameters(0));
  const auto c2 = s.centers[2].value.storage();
  Rng rng(1);
  const auto plans = build_epoch_plan(f.manifest.train, 4, 2, rng);
  const SuperBatch sb = make_super_batch(plans[0], s.cfg.pipeline, s.streams[0], s.augment_rng, f.cache, s.labels);
  const StepMetrics m = train_step(s, sb, 1, 1e-3);
  CHECK(m.branches == std::vector<int>{0, 1});
  CHECK(snapshot(s.model->branch_parameters(2)) == b2);
  CHECK(snapshot(s.model->branch_parameters(3)) == b3);
  CHECK(s.centers[2].value.storage() == c2);
  CHECK(snapshot(s.model->branch_parameters(1)) != b1);
  CHECK(snapshot(s.model->branch_parameters(0)) != b0);
  for (const auto& [name, slot] : s.adam.slots()) CHECK(name.find("local2") == std::string::npos);
  CHECK(s.round_robin_branch() == 2);
}

TEST_CASE("all_branches schedule updates every local branch in one step") {
  Fixture f;
  TrainConfig c = f.config(4);
  c.branch_schedule = BranchSchedule::kAllBranches;
  TrainState s = f.state(c);
  const auto b3 = snapshot(s.model->branch_parameters(3));
  Rng rng(1);
  const auto plans = build_epoch_plan(f.manifest.train, 4, 2, rng);
  const StepMetrics m = run_plan(s, plans[0], f.cache, 1e-3);
  // each super-batch trains the global branch on its conventional half
  CHECK(m.branches == std::vector<int>{0, 1, 0, 2, 0, 3});
  CHECK(snapshot(s.model->branch_parameters(3)) != b3);
  for (const auto& st : s.streams) CHECK(st.batch_counter() == 1);
}

TEST_CASE("training is deterministic over 100 steps and the loss goes down") {
  Fixture f;
  TrainState a = f.state(f.config()), b = f.state(f.config());
  const auto la = run_steps(a, f.cache, f.manifest, 100);
  const auto lb = run_steps(b, f.cache, f.manifest, 100);
  CHECK(la == lb);
  CHECK(snapshot(a.all_parameters()) == snapshot(b.all_parameters()));
  double first = 0, last = 0;
  for (int i = 0; i < 20; ++i) {
    first += total_of(la[i]);
    last += total_of(la[80 + i]);
  }
  CHECK(last < first);
}

TEST_CASE("other training modes step") {
  Fixture f;
  for (auto mode : {TrainMode::kSingleBatch, TrainMode::kGlobalOnly}) {
    TrainConfig c = f.config();
    c.mode = mode;
    TrainState s = f.state(c);
    const auto b1 = snapshot(s.model->branch_parameters(1));
    const auto log = run_steps(s, f.cache, f.manifest, 3);
    CHECK(log.size() == 3);
    if (mode == TrainMode::kGlobalOnly) {
      CHECK(snapshot(s.model->branch_parameters(1)) == b1);
      CHECK(log[0].find("local1") == std::string::npos);
    } else {
      CHECK(snapshot(s.model->branch_parameters(1)) != b1);
    }
  }
}

TEST_CASE("checkpoint round-trip continues bit-identically") {
  Fixture f;
  TrainState a = f.state(f.config());
  run_steps(a, f.cache, f.manifest, 3);
  const fs::path file = f.dir.path() / "state.ckpt";
  save_checkpoint(a, file);
  TrainState b = load_checkpoint(file);
  CHECK(b.step == a.step);
  CHECK(b.labels.person_ids() == a.labels.person_ids());
  CHECK(snapshot(b.all_parameters()) == snapshot(a.all_parameters()));
  CHECK(run_steps(a, f.cache, f.manifest, 4) == run_steps(b, f.cache, f.manifest, 4));
  CHECK(snapshot(b.all_parameters()) == snapshot(a.all_parameters()));

  std::ofstream(f.dir.path() / "junk.ckpt") << "definitely not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(f.dir.path() / "junk.ckpt"), ParseError);
  CHECK_THROWS_AS(load_checkpoint(f.dir.path() / "missing.ckpt"), DataError);
  // truncated
  std::ifstream is(file, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), {});
  std::ofstream(f.dir.path() / "cut.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(f.dir.path() / "cut.ckpt"), ParseError);
}

TEST_CASE("interrupted fit resumes to the same result") {
  Fixture f;
  FitOptions whole;
  whole.output_dir = f.dir.path() / "whole";
  TrainState a = f.state(f.config());
  const FitResult ra = fit(a, f.manifest, f.cache, whole);
  CHECK(a.epoch == 4);
  CHECK(fs::exists(ra.last_checkpoint));
  CHECK(fs::exists(whole.output_dir / "checkpoints" / "last.ckpt"));

  FitOptions part = whole;
  part.output_dir = f.dir.path() / "part";
  part.stop_after_epoch = 2;
  TrainState b = f.state(f.config());
  fit(b, f.manifest, f.cache, part);
  CHECK(b.epoch == 2);
  TrainState c = load_checkpoint(part.output_dir / "checkpoints" / "last.ckpt");
  part.stop_after_epoch = -1;
  fit(c, f.manifest, f.cache, part);
  CHECK(c.step == a.step);
  CHECK(snapshot(c.all_parameters()) == snapshot(a.all_parameters()));

  auto read = [](const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  CHECK(read(whole.output_dir / "metrics.log") == read(part.output_dir / "metrics.log"));
}

TEST_CASE("non-finite loss writes a diagnostic and stops") {
  Fixture f;
  TrainState s = f.state(f.config());
  s.diagnostics_dir = f.dir.path() / "diag";
  s.centers[0].value.fill(std::nan(""));
  Rng rng(1);
  const auto plans = build_epoch_plan(f.manifest.train, 4, 2, rng);
  CHECK_THROWS_AS(run_plan(s, plans[0], f.cache, 1e-3), NumericError);
  CHECK(fs::exists(s.diagnostics_dir / "diagnostic_step0.txt"));
}

TEST_CASE("training configuration errors") {
  Fixture f;
  TrainConfig c = f.config();
  c.drops.push_back(DropSpec{});
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = f.config();
  c.k = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = f.config();
  c.model.num_classes = 7;
  CHECK_THROWS_AS(f.state(c), ConfigError);
  CHECK_THROWS_AS(parse_train_mode("both"), ParameterError);
}
