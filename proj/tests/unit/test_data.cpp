#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "sdb/data.hpp"
#include "sdb/errors.hpp"
#include "sdb/evaluation.hpp"
#include "test_util.hpp"

using namespace sdb;
namespace fs = std::filesystem;

namespace {

void touch_png(const fs::path& p) {
  fs::create_directories(p.parent_path());
  save_png(ImageTensor(8, 4, 0.5), p);
}

}  // namespace

TEST_CASE("benchmark filenames") {
  const SampleMeta a = parse_benchmark_filename("0002_c1s1_000451_03.jpg");
  CHECK(a.person_id == 2);
  CHECK(a.camera_id == 1);
  const SampleMeta j = parse_benchmark_filename("-1_c3s2_012345_01.jpg");
  CHECK(j.junk());
  CHECK(j.camera_id == 3);
  const SampleMeta d = parse_benchmark_filename("0005_c2_f0046985.jpg");
  CHECK(d.person_id == 5);
  CHECK(d.camera_id == 2);
  CHECK_THROWS_AS(parse_benchmark_filename("Thumbs.db"), ParseError);
  CHECK_THROWS_AS(parse_benchmark_filename("abc_c1s1_0_0.jpg"), ParseError);
}

TEST_CASE("manifest round-trip") {
  DatasetManifest m;
  m.name = "tiny";
  m.root = "/x";
  m.train = {{"a.png", 1, 1, Split::kTrain}, {"b.png", 2, 2, Split::kTrain}};
  m.query = {{"q.png", 3, 1, Split::kQuery}};
  m.gallery = {{"g.png", 3, 2, Split::kGallery}, {"j.png", -1, 2, Split::kGallery}};
  const DatasetManifest r = parse_manifest(serialize_manifest(m), "/x");
  CHECK(r.name == "tiny");
  CHECK(r.train == m.train);
  CHECK(r.query == m.query);
  CHECK(r.gallery == m.gallery);
  CHECK(r.num_identities(Split::kTrain) == 2);
  CHECK_THROWS_AS(parse_manifest("# sdb-manifest v1\tname=x\nbad line\n", "/x"), ParseError);
}

TEST_CASE("benchmark layout loading") {
  test::TempDir dir("layout");
  const fs::path root = dir.path() / "market_tiny";
  touch_png(root / "bounding_box_train" / "0001_c1s1_000001_00.jpg");
  touch_png(root / "bounding_box_train" / "0001_c2s1_000002_00.jpg");
  touch_png(root / "bounding_box_train" / "-1_c2s1_000003_00.jpg");
  touch_png(root / "query" / "0002_c1s1_000004_00.jpg");
  touch_png(root / "bounding_box_test" / "0002_c2s1_000005_00.jpg");
  touch_png(root / "bounding_box_test" / "-1_c2s1_000006_00.jpg");
  std::ofstream(root / "bounding_box_test" / "notes.txt") << "x";

  std::vector<std::string> warnings;
  const DatasetManifest m = load_split(root, Layout::kMarket, &warnings);
  CHECK(m.train.size() == 2);
  CHECK(m.query.size() == 1);
  CHECK(m.gallery.size() == 2);
  CHECK(!warnings.empty());  // junk in train, counts far from the benchmark

  SUBCASE("empty split warns") {
    fs::remove(root / "query" / "0002_c1s1_000004_00.jpg");
    warnings.clear();
    const DatasetManifest e = load_split(root, Layout::kMarket, &warnings);
    CHECK(e.query.empty());
    bool mentions = false;
    for (const auto& w : warnings) mentions = mentions || w.find("query") != std::string::npos;
    CHECK(mentions);
  }
  SUBCASE("duplicate filenames across splits are rejected") {
    touch_png(root / "query" / "0002_c2s1_000005_00.jpg");
    CHECK_THROWS_AS(load_split(root, Layout::kMarket, &warnings), DataError);
  }
  SUBCASE("missing directory") {
    fs::remove_all(root / "bounding_box_test");
    CHECK_THROWS_AS(load_split(root, Layout::kMarket, &warnings), DataError);
  }
}

TEST_CASE("synthetic dataset structure") {
  test::TempDir dir("synth");
  SynthConfig cfg;
  const DatasetManifest m = generate_synthetic(cfg, dir.path());
  CHECK(m.train.size() == 160);
  CHECK(m.num_identities(Split::kTrain) == 20);
  CHECK(m.num_identities(Split::kQuery) == 10);
  CHECK(m.query.size() == 20);
  CHECK(m.gallery.size() == 40);
  for (const auto& q : m.query) {
    bool cross = false;
    for (const auto& g : m.gallery) cross = cross || (g.person_id == q.person_id && g.camera_id != q.camera_id);
    CHECK(cross);
  }
  CHECK(fs::exists(dir.path() / "manifest.txt"));
  const DatasetManifest back = read_manifest(dir.path() / "manifest.txt");
  CHECK(back.train == m.train);
  ImageCache cache(back);
  const ImageTensor& img = cache.get(back.train[5]);
  CHECK(img.dims() == Dims{64, 32});
  // 8-bit PNG storage
  const ImageTensor direct = render_synthetic(cfg, back.train[5].person_id, 5);
  for (std::size_t i = 0; i < img.storage().size(); ++i)
    CHECK(std::abs(img.storage()[i] - direct.storage()[i]) <= 0.5 / 255 + 1e-12);
}

TEST_CASE("synthetic rendering is deterministic and seed dependent") {
  SynthConfig cfg;
  CHECK(render_synthetic(cfg, 3, 2) == render_synthetic(cfg, 3, 2));
  SynthConfig other = cfg;
  other.seed = 9;
  CHECK(!(render_synthetic(cfg, 3, 2) == render_synthetic(other, 3, 2)));
  SynthConfig bad = cfg;
  bad.num_train_ids = 40;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("noise-free synthetic identities are separable by raw pixels") {
  SynthConfig cfg;
  cfg.noise_level = 0;
  test::TempDir dir("clean");
  const DatasetManifest m = generate_synthetic(cfg, dir.path());
  ImageCache cache(m);
  auto pixels = [&](const std::vector<SampleMeta>& items) {
    const std::size_t d = 64 * 32 * 3;
    Tensor t({items.size(), d});
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& s = cache.get(items[i]).storage();
      std::copy(s.begin(), s.end(), t.data() + i * d);
    }
    return t;
  };
  const RetrievalMetrics r = cmc_map(pairwise_distances(pixels(m.query), pixels(m.gallery)), m.query, m.gallery);
  CHECK(r.rank1 == 1.0);
}

TEST_CASE("image io errors") {
  CHECK_THROWS_AS(load_image("/nonexistent/x.png"), DataError);
  test::TempDir dir("io");
  std::ofstream(dir.path() / "broken.png") << "not a png";
  CHECK_THROWS_AS(load_image(dir.path() / "broken.png"), DataError);
  DatasetManifest m;
  m.root = dir.path();
  m.train = {{"broken.png", 1, 1, Split::kTrain}, {"gone.png", 1, 1, Split::kTrain}};
  ImageCache cache(m);
  CHECK(cache.preload(m.train).size() == 2);
}
