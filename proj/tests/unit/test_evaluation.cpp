#include <doctest.h>

#include <cmath>

#include "sdb/errors.hpp"
#include "sdb/evaluation.hpp"
#include "test_util.hpp"

using namespace sdb;

namespace {

SampleMeta q(int id, int cam) { return {"q", id, cam, Split::kQuery}; }
SampleMeta g(int id, int cam, std::string path = "g") { return {std::move(path), id, cam, Split::kGallery}; }

}  // namespace

TEST_CASE("distances") {
  const Tensor a({1, 2}, {0, 0}), b({2, 2}, {3, 4, 0, 1});
  const Tensor d = pairwise_distances(a, b);
  CHECK(d.at(0, 0) == doctest::Approx(5));
  CHECK(d.at(0, 1) == doctest::Approx(1));
  const Tensor c = pairwise_distances(Tensor({1, 2}, {1, 0}), Tensor({3, 2}, {2, 0, 0, 5, -1, 0}), Metric::kCosine);
  CHECK(c.at(0, 0) == doctest::Approx(0));
  CHECK(c.at(0, 1) == doctest::Approx(1));
  CHECK(c.at(0, 2) == doctest::Approx(2));
  CHECK(parse_metric("cosine") == Metric::kCosine);
  CHECK_THROWS(parse_metric("manhattan"));
}

TEST_CASE("protocol filter") {
  const std::vector<SampleMeta> gal{g(1, 1), g(1, 2), g(2, 1), g(-1, 2), g(0, 1)};
  const auto v = protocol_filter(q(1, 1), gal);
  CHECK(v == std::vector<std::uint8_t>{0, 1, 1, 0, 1});
}

TEST_CASE("AP for matches at ranks 1 and 3 of 4") {
  const std::vector<SampleMeta> qs{q(1, 1)};
  const std::vector<SampleMeta> gs{g(1, 2), g(2, 2), g(1, 2), g(3, 2)};
  const RetrievalMetrics m = cmc_map(Tensor({1, 4}, {0.1, 0.2, 0.3, 0.4}), qs, gs);
  CHECK(m.map == doctest::Approx(0.8333).epsilon(1e-4));
  CHECK(m.rank1 == 1);
  CHECK(m.cmc.size() == 50);
}

TEST_CASE("invalid items are skipped when ranking") {
  // same-camera match at rank 1 does not count
  const std::vector<SampleMeta> qs{q(1, 1)};
  const std::vector<SampleMeta> gs{g(1, 1), g(2, 2), g(1, 2)};
  const RetrievalMetrics m = cmc_map(Tensor({1, 3}, {0.1, 0.2, 0.3}), qs, gs);
  CHECK(m.rank1 == 0);
  CHECK(m.rank5 == 1);
  CHECK(m.map == doctest::Approx(0.5));
}

TEST_CASE("ties break by gallery index") {
  const std::vector<SampleMeta> qs{q(1, 1)};
  CHECK(cmc_map(Tensor({1, 2}, {0.5, 0.5}), qs, std::vector<SampleMeta>{g(1, 2), g(2, 2)}).rank1 == 1);
  CHECK(cmc_map(Tensor({1, 2}, {0.5, 0.5}), qs, std::vector<SampleMeta>{g(2, 2), g(1, 2)}).rank1 == 0);
}

TEST_CASE("queries without a valid positive are skipped; none at all throws") {
  const std::vector<SampleMeta> qs{q(1, 1), q(7, 1)};
  const std::vector<SampleMeta> gs{g(1, 2), g(7, 1)};
  const RetrievalMetrics m = cmc_map(Tensor({2, 2}, {0.1, 0.2, 0.1, 0.2}), qs, gs);
  CHECK(m.num_queries == 1);
  CHECK(m.skipped_queries == 1);
  CHECK_THROWS_AS(cmc_map(Tensor({1, 1}, {0.1}), std::vector<SampleMeta>{q(7, 1)}, std::vector<SampleMeta>{g(7, 1)}),
                  EvaluationError);
}

TEST_CASE("random instances: CMC is monotone, metrics match the brute-force oracle, invalid items are inert") {
  Rng rng(1);
  std::uniform_int_distribution<int> id_d(-1, 4), cam_d(1, 3), dist_d(0, 20);
  int scored = 0;
  for (int t = 0; t < 300; ++t) {
    std::vector<SampleMeta> qs, gs;
    for (int i = 0; i < 6; ++i) qs.push_back(q(std::max(0, id_d(rng)), cam_d(rng)));
    for (int j = 0; j < 30; ++j) gs.push_back(g(id_d(rng), cam_d(rng)));
    Tensor d({6, 30});
    for (auto& v : d.values()) v = dist_d(rng) / 10.0;
    RetrievalMetrics a;
    try {
      a = cmc_map(d, qs, gs);
    } catch (const EvaluationError&) {
      CHECK_THROWS_AS(cmc_map_bruteforce(d, qs, gs), EvaluationError);
      continue;
    }
    ++scored;
    const RetrievalMetrics b = cmc_map_bruteforce(d, qs, gs);
    CHECK(std::abs(a.map - b.map) < 1e-9);
    for (std::size_t k = 0; k < a.cmc.size(); ++k) CHECK(std::abs(a.cmc[k] - b.cmc[k]) < 1e-9);
    for (std::size_t k = 1; k < a.cmc.size(); ++k) CHECK(a.cmc[k] >= a.cmc[k - 1]);
    CHECK(a.map <= a.cmc.back() + 1e-12);

    // a junk item at distance 0 changes nothing
    auto gs2 = gs;
    gs2.push_back(g(-1, 1));
    Tensor d2({6, 31});
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 30; ++j) d2.at(i, j) = d.at(i, j);
    const RetrievalMetrics c = cmc_map(d2, qs, gs2);
    CHECK(c.map == a.map);
    CHECK(c.cmc == a.cmc);
  }
  CHECK(scored > 200);
}

TEST_CASE("top-k retrieval lists valid items in rank order") {
  const std::vector<SampleMeta> qs{q(1, 1)};
  const std::vector<SampleMeta> gs{g(1, 1, "same_cam"), g(2, 2, "b"), g(1, 2, "a"), g(-1, 2, "junk")};
  const RetrievalReport r = retrieve_topk(Tensor({1, 4}, {0.0, 0.2, 0.3, 0.1}), qs, gs, 5);
  REQUIRE(r.topk.size() == 1);
  REQUIRE(r.topk[0].size() == 2);
  CHECK(r.topk[0][0].gallery_index == 1);
  CHECK(!r.topk[0][0].correct);
  CHECK(r.topk[0][1].gallery_index == 2);
  CHECK(r.topk[0][1].correct);
  const std::string text = format_retrieval_text(r);
  CHECK(text.find("a") != std::string::npos);
  const std::string html = format_retrieval_html(r, "/data");
  CHECK(html.find("<html") != std::string::npos);
  CHECK(html.find("/data/a") != std::string::npos);
}

TEST_CASE("metrics report is key=value") {
  RetrievalMetrics m;
  m.map = 0.5;
  m.rank1 = 0.25;
  const std::string s = format_metrics(m);
  CHECK(s.find("mAP=0.5") != std::string::npos);
  CHECK(s.find("rank1=0.25") != std::string::npos);
}
