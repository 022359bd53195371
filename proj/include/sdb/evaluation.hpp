#ifndef SDB_EVALUATION_HPP_
#define SDB_EVALUATION_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdb/augment.hpp"
#include "sdb/data.hpp"
#include "sdb/tensor.hpp"

namespace sdb {

enum class Metric { kEuclidean, kCosine };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view name);

// (nq, ng) distances between the rows of q (nq, d) and g (ng, d). Euclidean
// is the true (square-rooted) distance; cosine is 1 - cos.
Tensor pairwise_distances(const Tensor& q, const Tensor& g, Metric metric = Metric::kEuclidean);

// Gallery items sharing both person id and camera with the query, and junk
// items, are invalid (0); everything else is valid (1).
std::vector<std::uint8_t> protocol_filter(const SampleMeta& query, std::span<const SampleMeta> gallery);

struct QueryRanking {
  std::vector<std::size_t> order;    // all gallery indices by ascending distance, ties by index
  std::vector<std::uint8_t> valid;   // per position in `order`
  std::vector<std::uint8_t> match;   // valid and same person id
};

struct RankingResult {
  std::vector<QueryRanking> queries;
};

RankingResult rank_gallery(const Tensor& dist, std::span<const SampleMeta> queries,
                           std::span<const SampleMeta> gallery);

struct RetrievalMetrics {
  double map = 0;
  double rank1 = 0, rank5 = 0, rank10 = 0;
  std::vector<double> cmc;  // cmc[k-1] = rank-k
  std::size_t num_queries = 0;      // queries that were scored
  std::size_t skipped_queries = 0;  // no valid positive in the gallery
};

// Throws EvaluationError when no query has a valid positive.
RetrievalMetrics cmc_map(const Tensor& dist, std::span<const SampleMeta> queries, std::span<const SampleMeta> gallery,
                         std::size_t max_rank = 50);

// Independent explicit-loop implementation of the same protocol (no sorting
// of index arrays: each item's rank is counted directly). Used as an oracle.
RetrievalMetrics cmc_map_bruteforce(const Tensor& dist, std::span<const SampleMeta> queries,
                                    std::span<const SampleMeta> gallery, std::size_t max_rank = 50);

// Key-value report: one `key=value` per line.
std::string format_metrics(const RetrievalMetrics& m);
void write_metrics(const RetrievalMetrics& m, const std::filesystem::path& file);

struct RetrievalEntry {
  std::size_t gallery_index = 0;
  Real distance = 0;
  bool correct = false;
};

struct RetrievalReport {
  std::vector<SampleMeta> queries;
  std::vector<SampleMeta> gallery;
  std::vector<std::vector<RetrievalEntry>> topk;  // per query, k valid entries at most
  std::vector<std::string> missing;                // items that could not be loaded
  std::size_t k = 0;
};

// Top-k valid gallery items per query (protocol-filtered), ranking as in rank_gallery.
RetrievalReport retrieve_topk(const Tensor& dist, std::span<const SampleMeta> queries,
                              std::span<const SampleMeta> gallery, std::size_t k);

std::string format_retrieval_text(const RetrievalReport& r);
// Image grid; `image_root` prefixes the manifest paths in <img> tags.
std::string format_retrieval_html(const RetrievalReport& r, const std::filesystem::path& image_root);

class SdbNet;

// Test-pipeline embeddings for `items`, (n, D), computed in batches. `branches`
// selects which branch embeddings are concatenated (default all).
Tensor extract_embeddings(SdbNet& model, std::span<const SampleMeta> items, ImageCache& cache,
                          const PipelineConfig& pipeline, std::span<const int> branches = {},
                          std::size_t batch_size = 32);

// Query/gallery embeddings plus cmc_map.
RetrievalMetrics evaluate(SdbNet& model, const DatasetManifest& manifest, ImageCache& cache,
                          const PipelineConfig& pipeline, Metric metric = Metric::kEuclidean,
                          std::span<const int> branches = {});

}  // namespace sdb

#endif  // SDB_EVALUATION_HPP_
