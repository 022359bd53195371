#include "sdb/selfcheck.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <tuple>

#include "sdb/attention.hpp"
#include "sdb/augment.hpp"
#include "sdb/errors.hpp"
#include "sdb/evaluation.hpp"
#include "sdb/gradcheck.hpp"
#include "sdb/schedule.hpp"

namespace sdb {

namespace {

constexpr double kGradTolerance = 1e-4;

Real broken_derivative(Real x) { return 1 / (1 + std::exp(x)); }
Real plain_softplus(Real x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

Tensor random_tensor(Shape shape, Rng& rng, Real scale = 1) {
  Tensor t(std::move(shape));
  std::normal_distribution<Real> n(0, scale);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

Real dot(const Tensor& a, const Tensor& b) {
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::string fmt_err(const char* what, double e) {
  std::ostringstream os;
  os << what << " max rel err " << e;
  return os.str();
}

CheckResult attention_check(bool spatial, Rng& rng) {
  Tensor x = random_tensor({2, 3, 2, 2}, rng);
  const Tensor w = random_tensor({2, 3, 2, 2}, rng);
  AttentionParams p;
  p.lambda_s = p.lambda_c = 0.7;
  p.beta = 0;
  auto fwd = spatial ? spatial_attention : channel_attention;
  auto bwd = spatial ? spatial_attention_backward : channel_attention_backward;
  const AttentionGrad g = bwd(x, p, w);
  Real& lambda = spatial ? p.lambda_s : p.lambda_c;
  auto loss = [&] { return dot(fwd(x, p, nullptr), w); };
  const GradCheck dx = check_gradient(loss, x, g.dx);
  const GradCheck dl = check_gradient(loss, lambda, g.dlambda);
  const double e = std::max(dx.max_rel_error, dl.max_rel_error);
  return {spatial ? "gradient.spatial_attention" : "gradient.channel_attention", e <= kGradTolerance,
          fmt_err("dX, dlambda", e)};
}

std::vector<int> pk_labels(int p, int k) {
  std::vector<int> labels;
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < k; ++j) labels.push_back(i);
  return labels;
}

CheckResult id_check(Rng& rng) {
  Tensor logits = random_tensor({8, 4}, rng);
  const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3};
  const LossGrad g = id_loss(logits, labels);
  const GradCheck r = check_gradient([&] { return id_loss(logits, labels).value; }, logits, g.grad);
  return {"gradient.id_loss", r.max_rel_error <= kGradTolerance, fmt_err("dlogits", r.max_rel_error)};
}

CheckResult triplet_check(Rng& rng, const Softplus& sp) {
  Tensor emb = random_tensor({8, 4}, rng);
  const auto labels = pk_labels(4, 2);
  const LossGrad g = triplet_soft_margin(emb, labels, sp);
  const GradCheck r =
      check_gradient([&] { return triplet_soft_margin(emb, labels, sp).value; }, emb, g.grad);
  return {"gradient.triplet_soft_margin", r.max_rel_error <= kGradTolerance, fmt_err("demb", r.max_rel_error)};
}

CheckResult center_check(Rng& rng) {
  Tensor emb = random_tensor({8, 4}, rng);
  Tensor centers = random_tensor({4, 4}, rng);
  const auto labels = pk_labels(4, 2);
  const CenterLossGrad g = center_loss(emb, labels, centers);
  auto loss = [&] { return center_loss(emb, labels, centers).value; };
  const double e = std::max(check_gradient(loss, emb, g.d_embeddings).max_rel_error,
                            check_gradient(loss, centers, g.d_centers).max_rel_error);
  return {"gradient.center_loss", e <= kGradTolerance, fmt_err("demb, dcenters", e)};
}

CheckResult mask_check() {
  MaskStream slow(DropSpec{0.3, 1.0, 5, DropMode::kSlowDropBlock, 1.0}, {384, 128}, 7);
  std::vector<DropMask> masks;
  for (int i = 0; i < 100; ++i) masks.push_back(slow.next());
  bool runs_ok = true;
  for (std::size_t i = 1; i < masks.size(); ++i)
    if (i % 5 != 0) runs_ok = runs_ok && masks[i] == masks[i - 1];
  // Q=1 redraws every batch: consecutive masks should almost never coincide
  MaskStream bdb(DropSpec{0.3, 1.0, 1, DropMode::kSlowDropBlock, 1.0}, {384, 128}, 7);
  DropMask prev = bdb.next();
  int changes = 0;
  for (int i = 1; i < 100; ++i) {
    const DropMask m = bdb.next();
    changes += m == prev ? 0 : 1;
    prev = m;
  }
  std::ostringstream os;
  os << "Q=5 masks constant within each block of 5: " << (runs_ok ? "yes" : "no") << ", Q=1 changes "
     << changes << "/99";
  return {"mask_persistence", runs_ok && slow.batch_counter() == 100 && changes >= 95, os.str()};
}

CheckResult metric_check(Rng& rng, int instances) {
  std::uniform_int_distribution<int> nq_d(1, 20), ng_d(1, 50), id_d(-1, 5), cam_d(1, 3), dist_d(0, 30);
  double worst = 0;
  int agreed = 0;
  for (int t = 0; t < instances; ++t) {
    const int nq = nq_d(rng), ng = ng_d(rng);
    std::vector<SampleMeta> q, g;
    for (int i = 0; i < nq; ++i) q.push_back({"q", std::max(0, id_d(rng)), cam_d(rng), Split::kQuery});
    for (int j = 0; j < ng; ++j) g.push_back({"g", id_d(rng), cam_d(rng), Split::kGallery});
    Tensor dist({static_cast<std::size_t>(nq), static_cast<std::size_t>(ng)});
    for (auto& v : dist.values()) v = dist_d(rng) / 10.0;  // coarse grid, so ties occur
    bool fast_threw = false, slow_threw = false;
    RetrievalMetrics a, b;
    try {
      a = cmc_map(dist, q, g);
    } catch (const EvaluationError&) {
      fast_threw = true;
    }
    try {
      b = cmc_map_bruteforce(dist, q, g);
    } catch (const EvaluationError&) {
      slow_threw = true;
    }
    if (fast_threw != slow_threw) continue;
    if (!fast_threw) {
      double e = std::max({std::abs(a.map - b.map), std::abs(a.rank1 - b.rank1), std::abs(a.rank5 - b.rank5),
                           std::abs(a.rank10 - b.rank10)});
      if (a.num_queries != b.num_queries || a.skipped_queries != b.skipped_queries) e = 1;
      worst = std::max(worst, e);
      if (e > 1e-9) continue;
    }
    ++agreed;
  }
  // matches at ranks 1 and 3 of 4 valid items
  const std::vector<SampleMeta> q{{"q", 1, 1, Split::kQuery}};
  const std::vector<SampleMeta> g{
      {"a", 1, 2, Split::kGallery}, {"b", 2, 2, Split::kGallery}, {"c", 1, 2, Split::kGallery}, {"d", 3, 2, Split::kGallery}};
  const Tensor dist({1, 4}, {0.1, 0.2, 0.3, 0.4});
  const double ap = cmc_map(dist, q, g).map;
  const bool ap_ok = std::abs(ap - (1.0 + 2.0 / 3.0) / 2.0) <= 1e-12;
  std::ostringstream os;
  os << agreed << "/" << instances << " instances agree (max diff " << worst << "), AP example " << ap;
  return {"metric_oracle", agreed == instances && ap_ok, os.str()};
}

CheckResult schedule_check() {
  const Schedule s = Schedule::preset120();
  const std::vector<std::pair<double, double>> table{{0, 3.5e-5}, {10, 3.5e-4}, {40, 3.5e-4}, {41, 3.5e-5},
                                                     {65, 3.5e-5}, {70, 3.5e-6}, {120, 3.5e-6}};
  std::ostringstream os;
  bool ok = true;
  for (auto [epoch, want] : table) {
    const double got = lr_at(epoch, s);
    if (got != want) {
      ok = false;
      os << "epoch " << epoch << ": " << got << " != " << want << "; ";
    }
  }
  const double mid = lr_at(5, s);
  if (std::abs(mid - 1.925e-4) > 1e-15) {
    ok = false;
    os << "epoch 5: " << mid;
  }
  return {"schedule_table", ok, ok ? "epochs 0,5,10,40,41,65,70,120 exact" : os.str()};
}

CheckResult constants_check(const Softplus& sp) {
  const Tensor same({8, 4}, 0.25);
  const double tri = triplet_soft_margin(same, pk_labels(4, 2), sp).value;
  const Tensor uniform({6, 7}, 1.5);
  const double id = id_loss(uniform, std::vector<int>{0, 1, 2, 3, 4, 5}).value;
  const double e = std::max(std::abs(tri - std::log(2.0)), std::abs(id - std::log(7.0)));
  std::ostringstream os;
  os << "triplet " << tri << " vs ln2, id " << id << " vs ln7";
  return {"loss_constants", e <= 1e-9, os.str()};
}

}  // namespace

Softplus broken_softplus() { return {&plain_softplus, &broken_derivative}; }

std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& opts) {
  Rng rng(opts.seed);
  std::vector<std::pair<std::string, std::function<CheckResult()>>> checks{
      {"gradient.spatial_attention", [&] { return attention_check(true, rng); }},
      {"gradient.channel_attention", [&] { return attention_check(false, rng); }},
      {"gradient.id_loss", [&] { return id_check(rng); }},
      {"gradient.triplet_soft_margin", [&] { return triplet_check(rng, opts.softplus); }},
      {"gradient.center_loss", [&] { return center_check(rng); }},
      {"mask_persistence", [] { return mask_check(); }},
      {"metric_oracle", [&] { return metric_check(rng, opts.metric_instances); }},
      {"schedule_table", [] { return schedule_check(); }},
      {"loss_constants", [&] { return constants_check(opts.softplus); }},
  };
  std::vector<CheckResult> out;
  for (auto& [name, run] : checks) {
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = run();
    } catch (const std::exception& e) {
      r = {name, false, std::string("exception: ") + e.what()};
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace sdb
