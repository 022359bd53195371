#include "sdb/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "sdb/errors.hpp"
#include "sdb/kernels.hpp"
#include "sdb/model.hpp"

namespace sdb {

std::string_view to_string(Metric m) { return m == Metric::kCosine ? "cosine" : "euclidean"; }

Metric parse_metric(std::string_view name) {
  if (name == "euclidean") return Metric::kEuclidean;
  if (name == "cosine") return Metric::kCosine;
  throw ParameterError("unknown metric '" + std::string(name) + "' (euclidean | cosine)");
}

Tensor pairwise_distances(const Tensor& q, const Tensor& g, Metric metric) {
  if (q.rank() != 2 || g.rank() != 2 || q.dim(1) != g.dim(1))
    throw ParameterError("pairwise_distances: expected (nq, d) and (ng, d), got " + shape_string(q.shape()) +
                         " and " + shape_string(g.shape()));
  const std::size_t nq = q.dim(0), ng = g.dim(0), d = q.dim(1);
  Tensor out({nq, ng});
  if (metric == Metric::kEuclidean) {
    kernels::pairwise_sq_euclidean(q.data(), nq, g.data(), ng, d, out.data());
    for (auto& v : out.values()) v = std::sqrt(std::max(v, Real{0}));
    return out;
  }
  auto norms = [d](const Tensor& t) {
    std::vector<Real> n(t.dim(0));
    for (std::size_t i = 0; i < n.size(); ++i) {
      Real s = 0;
      for (std::size_t j = 0; j < d; ++j) s += t.at(i, j) * t.at(i, j);
      n[i] = std::sqrt(s);
    }
    return n;
  };
  const auto nqv = norms(q), ngv = norms(g);
  kernels::gemm(kernels::Trans::kNo, kernels::Trans::kYes, nq, ng, d, 1, q.data(), g.data(), 0, out.data());
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t j = 0; j < ng; ++j) {
      const Real denom = nqv[i] * ngv[j];
      out.at(i, j) = 1 - (denom > 0 ? out.at(i, j) / denom : 0);
    }
  return out;
}

std::vector<std::uint8_t> protocol_filter(const SampleMeta& query, std::span<const SampleMeta> gallery) {
  std::vector<std::uint8_t> valid(gallery.size(), 1);
  for (std::size_t j = 0; j < gallery.size(); ++j) {
    const auto& g = gallery[j];
    if (g.junk() || (g.person_id == query.person_id && g.camera_id == query.camera_id)) valid[j] = 0;
  }
  return valid;
}

namespace {

void check_inputs(const Tensor& dist, std::span<const SampleMeta> queries, std::span<const SampleMeta> gallery) {
  if (dist.rank() != 2 || dist.dim(0) != queries.size() || dist.dim(1) != gallery.size())
    throw ParameterError("distance matrix " + shape_string(dist.shape()) + " does not match " +
                         std::to_string(queries.size()) + " queries x " + std::to_string(gallery.size()) +
                         " gallery items");
}

void finish_metrics(RetrievalMetrics& m, std::size_t max_rank) {
  if (m.num_queries == 0) throw EvaluationError("no query has a valid positive in the gallery");
  const auto n = static_cast<double>(m.num_queries);
  m.map /= n;
  for (auto& c : m.cmc) c /= n;
  auto at = [&](std::size_t k) { return m.cmc.empty() ? 0.0 : m.cmc[std::min(k, max_rank) - 1]; };
  m.rank1 = at(1);
  m.rank5 = at(5);
  m.rank10 = at(10);
}

}  // namespace

RankingResult rank_gallery(const Tensor& dist, std::span<const SampleMeta> queries,
                           std::span<const SampleMeta> gallery) {
  check_inputs(dist, queries, gallery);
  RankingResult r;
  r.queries.resize(queries.size());
  const std::size_t ng = gallery.size();
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto& qr = r.queries[i];
    qr.order.resize(ng);
    std::iota(qr.order.begin(), qr.order.end(), std::size_t{0});
    const Real* row = dist.data() + i * ng;
    std::stable_sort(qr.order.begin(), qr.order.end(), [row](std::size_t a, std::size_t b) { return row[a] < row[b]; });
    const auto valid = protocol_filter(queries[i], gallery);
    qr.valid.resize(ng);
    qr.match.resize(ng);
    for (std::size_t pos = 0; pos < ng; ++pos) {
      const std::size_t j = qr.order[pos];
      qr.valid[pos] = valid[j];
      qr.match[pos] = valid[j] && gallery[j].person_id == queries[i].person_id;
    }
  }
  return r;
}

RetrievalMetrics cmc_map(const Tensor& dist, std::span<const SampleMeta> queries, std::span<const SampleMeta> gallery,
                         std::size_t max_rank) {
  if (max_rank < 1) throw ParameterError("cmc_map: max_rank must be >= 1");
  const RankingResult ranking = rank_gallery(dist, queries, gallery);
  RetrievalMetrics m;
  m.cmc.assign(max_rank, 0);
  for (const auto& qr : ranking.queries) {
    std::size_t rank = 0, hits = 0;
    std::size_t first = 0;
    double ap = 0;
    for (std::size_t pos = 0; pos < qr.order.size(); ++pos) {
      if (!qr.valid[pos]) continue;
      ++rank;
      if (qr.match[pos]) {
        ++hits;
        if (first == 0) first = rank;
        ap += static_cast<double>(hits) / static_cast<double>(rank);
      }
    }
    if (hits == 0) {
      ++m.skipped_queries;
      continue;
    }
    ++m.num_queries;
    m.map += ap / static_cast<double>(hits);
    for (std::size_t k = first; k <= max_rank; ++k) m.cmc[k - 1] += 1;
  }
  finish_metrics(m, max_rank);
  return m;
}

RetrievalMetrics cmc_map_bruteforce(const Tensor& dist, std::span<const SampleMeta> queries,
                                    std::span<const SampleMeta> gallery, std::size_t max_rank) {
  check_inputs(dist, queries, gallery);
  RetrievalMetrics m;
  m.cmc.assign(max_rank, 0);
  const std::size_t ng = gallery.size();
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    auto valid = [&](std::size_t j) {
      return !(gallery[j].person_id < 0 || (gallery[j].person_id == q.person_id && gallery[j].camera_id == q.camera_id));
    };
    auto positive = [&](std::size_t j) { return valid(j) && gallery[j].person_id == q.person_id; };
    // 1-based rank of j among valid items: items strictly closer, or equally close with a smaller index, come first
    auto rank_of = [&](std::size_t j) {
      std::size_t r = 1;
      for (std::size_t t = 0; t < ng; ++t)
        if (t != j && valid(t) && (dist.at(i, t) < dist.at(i, j) || (dist.at(i, t) == dist.at(i, j) && t < j))) ++r;
      return r;
    };
    std::vector<std::size_t> pos_ranks;
    for (std::size_t j = 0; j < ng; ++j)
      if (positive(j)) pos_ranks.push_back(rank_of(j));
    if (pos_ranks.empty()) {
      ++m.skipped_queries;
      continue;
    }
    ++m.num_queries;
    double ap = 0;
    for (std::size_t a : pos_ranks) {
      std::size_t above = 0;
      for (std::size_t b : pos_ranks)
        if (b <= a) ++above;
      ap += static_cast<double>(above) / static_cast<double>(a);
    }
    m.map += ap / static_cast<double>(pos_ranks.size());
    const std::size_t best = *std::min_element(pos_ranks.begin(), pos_ranks.end());
    for (std::size_t k = 1; k <= max_rank; ++k)
      if (best <= k) m.cmc[k - 1] += 1;
  }
  finish_metrics(m, max_rank);
  return m;
}

std::string format_metrics(const RetrievalMetrics& m) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "mAP=" << m.map << "\n";
  os << "rank1=" << m.rank1 << "\n";
  os << "rank5=" << m.rank5 << "\n";
  os << "rank10=" << m.rank10 << "\n";
  os << "num_queries=" << m.num_queries << "\n";
  os << "skipped_queries=" << m.skipped_queries << "\n";
  return os.str();
}

void write_metrics(const RetrievalMetrics& m, const std::filesystem::path& file) {
  std::ofstream os(file);
  if (!os) throw DataError("cannot write " + file.string());
  os << format_metrics(m);
}

RetrievalReport retrieve_topk(const Tensor& dist, std::span<const SampleMeta> queries,
                              std::span<const SampleMeta> gallery, std::size_t k) {
  if (k < 1) throw ParameterError("retrieve_topk: k must be >= 1");
  const RankingResult ranking = rank_gallery(dist, queries, gallery);
  RetrievalReport r;
  r.k = k;
  r.queries.assign(queries.begin(), queries.end());
  r.gallery.assign(gallery.begin(), gallery.end());
  r.topk.resize(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& qr = ranking.queries[i];
    for (std::size_t pos = 0; pos < qr.order.size() && r.topk[i].size() < k; ++pos) {
      if (!qr.valid[pos]) continue;
      const std::size_t j = qr.order[pos];
      r.topk[i].push_back({j, dist.at(i, j), qr.match[pos] != 0});
    }
  }
  return r;
}

std::string format_retrieval_text(const RetrievalReport& r) {
  std::ostringstream os;
  os << "# top-" << r.k << " retrieval; '+' correct, 'x' incorrect\n";
  for (std::size_t i = 0; i < r.queries.size(); ++i) {
    const auto& q = r.queries[i];
    os << "query " << q.path << " id=" << q.person_id << " cam=" << q.camera_id << "\n";
    for (std::size_t t = 0; t < r.topk[i].size(); ++t) {
      const auto& e = r.topk[i][t];
      const auto& g = r.gallery[e.gallery_index];
      os << "  " << std::setw(2) << t + 1 << ' ' << (e.correct ? '+' : 'x') << ' ' << g.path << " id=" << g.person_id
         << " cam=" << g.camera_id << " d=" << std::setprecision(6) << e.distance << "\n";
    }
  }
  if (!r.missing.empty()) {
    os << "# missing images (" << r.missing.size() << ")\n";
    for (const auto& p : r.missing) os << "missing " << p << "\n";
  }
  return os.str();
}

namespace {

std::string html_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string format_retrieval_html(const RetrievalReport& r, const std::filesystem::path& image_root) {
  std::ostringstream os;
  os << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>top-" << r.k << " retrieval</title>\n"
     << "<style>td{padding:2px;text-align:center;font:10px monospace}img{height:96px;display:block}"
     << ".ok{border:3px solid #2a2}.bad{border:3px solid #d22}.q{border:3px solid #888}</style></head><body>\n"
     << "<table>\n<tr><th>query</th>";
  for (std::size_t t = 1; t <= r.k; ++t) os << "<th>" << t << "</th>";
  os << "</tr>\n";
  auto img = [&](const SampleMeta& m, const char* cls) {
    os << "<td><img class=\"" << cls << "\" src=\"" << html_escape((image_root / m.path).generic_string())
       << "\"><br>id " << m.person_id << " c" << m.camera_id << "</td>";
  };
  for (std::size_t i = 0; i < r.queries.size(); ++i) {
    os << "<tr>";
    img(r.queries[i], "q");
    for (const auto& e : r.topk[i]) img(r.gallery[e.gallery_index], e.correct ? "ok" : "bad");
    for (std::size_t t = r.topk[i].size(); t < r.k; ++t) os << "<td></td>";
    os << "</tr>\n";
  }
  os << "</table>\n";
  if (!r.missing.empty()) {
    os << "<h3>missing images</h3><ul>\n";
    for (const auto& p : r.missing) os << "<li>" << html_escape(p) << "</li>\n";
    os << "</ul>\n";
  }
  os << "</body></html>\n";
  return os.str();
}

Tensor extract_embeddings(SdbNet& model, std::span<const SampleMeta> items, ImageCache& cache,
                          const PipelineConfig& pipeline, std::span<const int> branches, std::size_t batch_size) {
  if (batch_size < 1) throw ParameterError("extract_embeddings: batch_size must be >= 1");
  Tensor out;
  for (std::size_t begin = 0; begin < items.size(); begin += batch_size) {
    const std::size_t end = std::min(items.size(), begin + batch_size);
    std::vector<const ImageTensor*> raw;
    for (std::size_t i = begin; i < end; ++i) raw.push_back(&cache.get(items[i]));
    std::vector<ImageTensor> prepared(raw.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < raw.size(); ++i) {
      Rng r(0);
      prepared[i] = standard_pipeline(*raw[i], pipeline, false, r);
    }
    Tensor emb = model.forward_eval(to_nchw(prepared), branches);
    out = out.empty() ? std::move(emb) : concat_rows(out, emb);
  }
  return out;
}

RetrievalMetrics evaluate(SdbNet& model, const DatasetManifest& manifest, ImageCache& cache,
                          const PipelineConfig& pipeline, Metric metric, std::span<const int> branches) {
  const Tensor q = extract_embeddings(model, manifest.query, cache, pipeline, branches);
  const Tensor g = extract_embeddings(model, manifest.gallery, cache, pipeline, branches);
  if (q.empty() || g.empty()) throw EvaluationError("evaluation needs non-empty query and gallery splits");
  return cmc_map(pairwise_distances(q, g, metric), manifest.query, manifest.gallery);
}

}  // namespace sdb
