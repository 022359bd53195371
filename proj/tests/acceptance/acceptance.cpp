// Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.
//
//   acceptance [--only N[,N...]] [--workdir DIR]
//
// Criteria 6 and 7 train the toy network 10 times (about 4 minutes on one
// core); the rest take seconds.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sdb/attention.hpp"
#include "sdb/augment.hpp"
#include "sdb/config.hpp"
#include "sdb/errors.hpp"
#include "sdb/evaluation.hpp"
#include "sdb/experiment.hpp"
#include "sdb/losses.hpp"
#include "sdb/model.hpp"
#include "sdb/schedule.hpp"
#include "sdb/selfcheck.hpp"

using namespace sdb;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor random_tensor(Shape shape, Rng& rng, Real scale = 1) {
  Tensor t(std::move(shape));
  std::normal_distribution<Real> n(0, scale);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// 1. cmc_map against the brute-force oracle on 200 random instances.
Outcome metric_oracle() {
  Rng rng(20240101);
  std::uniform_int_distribution<int> nq_d(1, 20), id_d(-1, 6), cam_d(1, 4), dist_d(0, 40);
  int agreed = 0, scored = 0;
  double worst = 0;
  for (int t = 0; t < 200; ++t) {
    const int nq = nq_d(rng), ng = 50;
    std::vector<SampleMeta> q, g;
    for (int i = 0; i < nq; ++i) q.push_back({"q", std::max(0, id_d(rng)), cam_d(rng), Split::kQuery});
    for (int j = 0; j < ng; ++j) g.push_back({"g", id_d(rng), cam_d(rng), Split::kGallery});
    Tensor dist({static_cast<std::size_t>(nq), static_cast<std::size_t>(ng)});
    // coarse grid so that distance ties are common
    for (auto& v : dist.values()) v = dist_d(rng) / 8.0;
    int thrown = 0;
    RetrievalMetrics a, b;
    try {
      a = cmc_map(dist, q, g);
    } catch (const EvaluationError&) {
      ++thrown;
    }
    try {
      b = cmc_map_bruteforce(dist, q, g);
    } catch (const EvaluationError&) {
      ++thrown;
    }
    if (thrown == 2) {
      ++agreed;
      continue;
    }
    if (thrown == 1) continue;
    ++scored;
    double e = std::abs(a.map - b.map);
    for (std::size_t k = 0; k < a.cmc.size(); ++k) e = std::max(e, std::abs(a.cmc[k] - b.cmc[k]));
    if (a.num_queries != b.num_queries || a.cmc.size() != b.cmc.size()) e = 1;
    worst = std::max(worst, e);
    if (e <= 1e-9) ++agreed;
  }
  const std::vector<SampleMeta> q{{"q", 1, 1, Split::kQuery}};
  const std::vector<SampleMeta> g{
      {"a", 1, 2, Split::kGallery}, {"b", 2, 2, Split::kGallery}, {"c", 1, 2, Split::kGallery}, {"d", 3, 2, Split::kGallery}};
  const double ap = cmc_map(Tensor({1, 4}, {0.1, 0.2, 0.3, 0.4}), q, g).map;
  const bool ap_ok = std::abs(ap - 0.8333) < 5e-5;
  std::ostringstream os;
  os << agreed << "/200 instances agree (" << scored << " scored, max diff " << worst << "); AP for ranks {1,3} of 4 = "
     << ap;
  return {agreed == 200 && ap_ok, os.str()};
}

// 2. Finite-difference gradient suite, under 30 s.
Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream os;
  bool ok = true;
  int n = 0;
  for (const auto& r : run_selfcheck()) {
    if (r.name.rfind("gradient.", 0) != 0) continue;
    ++n;
    ok = ok && r.passed;
    os << r.name.substr(9) << " " << (r.passed ? "ok" : "FAILED") << " (" << r.detail << "); ";
  }
  const double s = seconds_since(t0);
  os << "total " << s << " s";
  return {ok && n == 5 && s < 30, os.str()};
}

// 3. Mask persistence at 384x128, r_h = 0.3.
Outcome mask_persistence() {
  const Dims dims{384, 128};
  DropSpec spec{0.3, 1.0, 5, DropMode::kSlowDropBlock, 1.0};

  MaskStream slow(spec, dims, 0);
  std::vector<DropMask> masks;
  for (int i = 0; i < 100; ++i) masks.push_back(slow.next());
  // runs of identical consecutive masks
  std::vector<int> runs{1};
  for (int i = 1; i < 100; ++i) {
    if (masks[i] == masks[i - 1]) ++runs.back();
    else runs.push_back(1);
  }
  std::set<std::size_t> distinct_q5;
  for (const auto& m : masks) distinct_q5.insert(m.y0);
  bool blocks_ok = true;
  for (int i = 0; i < 100; ++i) blocks_ok = blocks_ok && masks[i] == masks[i - i % 5];
  const bool q5_ok = distinct_q5.size() == 20 && runs.size() == 20 && blocks_ok &&
                     std::all_of(runs.begin(), runs.end(), [](int r) { return r == 5; });

  spec.q = 1;
  MaskStream fast(spec, dims, 0);
  std::set<std::size_t> distinct_q1;
  for (int i = 0; i < 100; ++i) distinct_q1.insert(fast.next().y0);
  const bool q1_ok = distinct_q1.size() >= 95;

  std::ostringstream os;
  os << "Q=5: " << distinct_q5.size() << " distinct masks in " << runs.size() << " runs (blocks of 5: "
     << (blocks_ok ? "yes" : "no") << "); Q=1: " << distinct_q1.size() << " distinct positions of 100 (need >= 95; "
     << (dims.height - static_cast<std::size_t>(0.3 * dims.height) + 1) << " possible positions)";
  return {q5_ok && q1_ok, os.str()};
}

// 4. ResNet-50 configuration shapes, from real forward passes.
Outcome shape_contract() {
  Rng rng(4);
  const Tensor img = random_tensor({1, 3, 384, 128}, rng);
  std::ostringstream os;
  bool ok = true;
  for (int L : {2, 4}) {
    ModelConfig cfg;
    cfg.num_branches = L;
    SdbNet net(cfg, 1);
    if (L == 2) {
      const Tensor f = net.backbone_forward(img, false);
      os << "feature map " << shape_string(f.shape()) << "; ";
      ok = ok && f.shape() == Shape{1, 2048, 24, 8};
    }
    const Tensor e = net.forward_eval(img);
    os << "SDB-" << L << " embedding " << e.dim(1) << "-d; ";
    ok = ok && e.dim(1) == (L == 2 ? 1024u : 2048u);
  }
  return {ok, os.str()};
}

// 5. Schedule table.
Outcome schedule_table() {
  const Schedule s = Schedule::preset120();
  const std::vector<std::pair<double, double>> table{{0, 3.5e-5}, {10, 3.5e-4}, {41, 3.5e-5}, {70, 3.5e-6}};
  std::ostringstream os;
  bool ok = true;
  for (auto [e, want] : table) {
    const double got = lr_at(e, s);
    ok = ok && got == want;
    os << "epoch " << e << ": " << got << "; ";
  }
  return {ok, os.str()};
}

struct ToyRun {
  RetrievalMetrics metrics;
  double seconds = 0;
};

ToyRun toy_run(const fs::path& workdir, std::uint64_t seed, TrainMode mode) {
  ExperimentConfig cfg = preset("sdb2_toy");
  cfg.train.seed = seed;
  cfg.train.mode = mode;
  TrainRunOptions opts;
  opts.output_dir = workdir / (std::string(to_string(mode)) + "_seed" + std::to_string(seed));
  fs::remove_all(opts.output_dir);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainRun run = run_training(cfg, opts);
  return {run.final_eval, seconds_since(t0)};
}

std::map<std::uint64_t, ToyRun> co_runs;

// 6. Toy end-to-end.
Outcome toy_end_to_end(const fs::path& workdir) {
  const ExperimentConfig cfg = preset("sdb2_toy");
  const ToyRun r = toy_run(workdir, cfg.train.seed, TrainMode::kCoTraining);
  co_runs[cfg.train.seed] = r;
  const auto& sc = *cfg.dataset.synthetic;
  std::ostringstream os;
  os << sc.num_train_ids << " train + " << sc.num_ids - sc.num_train_ids << " eval ids, " << sc.num_cameras
     << " cameras, " << sc.image_dims.height << "x" << sc.image_dims.width << ", SDB-2 toy backbone, "
     << cfg.train.schedule.total_epochs << " epochs, seed " << cfg.train.seed << ": rank-1 " << r.metrics.rank1
     << ", mAP " << r.metrics.map << ", " << r.seconds << " s";
  const bool ok = r.metrics.rank1 >= 0.90 && r.metrics.map >= 0.70 && r.seconds < 600 &&
                  cfg.train.schedule.total_epochs == 30 && sc.num_train_ids == 20 && sc.num_ids == 30 &&
                  sc.num_cameras == 2 && sc.image_dims == Dims{64, 32} && cfg.train.model.num_branches == 2;
  return {ok, os.str()};
}

// 7. Co-training versus the global-branch-only baseline.
Outcome co_training_direction(const fs::path& workdir) {
  int wins = 0;
  std::ostringstream os;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    if (!co_runs.count(seed)) co_runs[seed] = toy_run(workdir, seed, TrainMode::kCoTraining);
    const ToyRun base = toy_run(workdir, seed, TrainMode::kGlobalOnly);
    const double co = co_runs[seed].metrics.map, gl = base.metrics.map;
    wins += co >= gl;
    os << "seed " << seed << ": " << co << " vs " << gl << "; ";
  }
  os << wins << "/5 seeds with co-training mAP >= global-only";
  return {wins >= 4, os.str()};
}

// 8. Attention unit values.
Outcome attention_values() {
  Rng rng(8);
  bool exact = true;
  AttentionParams p;
  p.lambda_s = 0.37;
  p.lambda_c = -0.61;
  for (int t = 0; t < 10; ++t) {
    const Tensor x = random_tensor({2, 6, 1, 1}, rng);
    const Tensor y = spatial_attention(x, p);
    for (std::size_t i = 0; i < x.size(); ++i) exact = exact && y[i] == (1 + p.lambda_s) * x[i];
    const Tensor xc = random_tensor({2, 1, 3, 2}, rng);
    const Tensor yc = channel_attention(xc, p);
    for (std::size_t i = 0; i < xc.size(); ++i) exact = exact && yc[i] == (1 + p.lambda_c) * xc[i];
  }
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    const Tensor x = random_tensor({2, 5, 3, 4}, rng, 1.5);
    for (bool spatial : {true, false}) {
      std::vector<Tensor> aff;
      spatial ? spatial_attention(x, p, &aff) : channel_attention(x, p, &aff);
      for (const auto& a : aff)
        for (std::size_t r = 0; r < a.dim(0); ++r) {
          double s = 0;
          for (std::size_t c = 0; c < a.dim(1); ++c) s += a.at(r, c);
          worst = std::max(worst, std::abs(s - 1));
        }
    }
  }
  std::ostringstream os;
  os << "l=1 gives (1+lambda)X bit-exactly: " << (exact ? "yes" : "no") << "; max |row sum - 1| = " << worst;
  return {exact && worst <= 1e-6, os.str()};
}

// 9. Loss constants.
Outcome loss_constants() {
  const double tri = triplet_soft_margin(Tensor({8, 5}, 0.3), std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3}).value;
  double worst_id = 0;
  for (std::size_t k : {2u, 10u, 751u}) {
    std::vector<int> y{0, 1, 1, 0};
    worst_id = std::max(worst_id, std::abs(id_loss(Tensor({4, k}, 0.7), y).value - std::log(static_cast<double>(k))));
  }
  std::ostringstream os;
  os << "|triplet - ln 2| = " << std::abs(tri - std::log(2.0)) << "; max |id - ln K| = " << worst_id;
  return {std::abs(tri - std::log(2.0)) <= 1e-9 && worst_id <= 1e-9, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path workdir = fs::temp_directory_path() / "sdb_acceptance";
  for (int i = 1; i + 1 < argc; i += 2) {
    if (std::strcmp(argv[i], "--only") == 0) {
      std::stringstream ss(argv[i + 1]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    } else if (std::strcmp(argv[i], "--workdir") == 0) {
      workdir = argv[i + 1];
    }
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric oracle", metric_oracle},
      {"gradient suite", gradient_suite},
      {"mask persistence", mask_persistence},
      {"shape contract", shape_contract},
      {"schedule table", schedule_table},
      {"toy end-to-end", [&] { return toy_end_to_end(workdir); }},
      {"co-training direction", [&] { return co_training_direction(workdir); }},
      {"attention unit values", attention_values},
      {"loss constants", loss_constants},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::error_code ec;
  fs::remove_all(workdir, ec);
  return failed == 0 ? 0 : 1;
}
