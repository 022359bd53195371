#include "sdb/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "sdb/augment.hpp"
#include "sdb/errors.hpp"

namespace fs = std::filesystem;

namespace sdb {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kQuery: return "query";
    case Split::kGallery: return "gallery";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "query") return Split::kQuery;
  if (name == "gallery") return Split::kGallery;
  throw ParseError("unknown split '" + std::string(name) + "'");
}

const std::vector<SampleMeta>& DatasetManifest::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kQuery: return query;
    case Split::kGallery: return gallery;
  }
  return train;
}

std::size_t DatasetManifest::num_identities(Split s) const {
  std::set<int> ids;
  for (const auto& m : split(s))
    if (!m.junk()) ids.insert(m.person_id);
  return ids.size();
}

SampleMeta parse_benchmark_filename(std::string_view name) {
  static const std::regex grammar(R"(^(-1|\d+)_c(\d+)(s\d+)?_[A-Za-z0-9_]+\.(jpg|jpeg|png)$)",
                                  std::regex::icase);
  const std::string s(name);
  std::smatch m;
  if (!std::regex_match(s, m, grammar)) throw ParseError("not a benchmark image name: '" + s + "'");
  SampleMeta meta;
  meta.path = s;
  meta.person_id = std::stoi(m[1].str());
  meta.camera_id = std::stoi(m[2].str());
  return meta;
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

struct KnownStats {
  std::size_t train_images, train_ids, query_images, gallery_images;
};

// Published split sizes, keyed by a substring of the dataset root name.
const std::map<std::string, KnownStats>& known_stats() {
  static const std::map<std::string, KnownStats> stats{
      {"market", {12936, 751, 3368, 15913}},
      {"duke", {16522, 702, 2228, 17661}},
  };
  return stats;
}

void check_duplicates(const DatasetManifest& m) {
  std::set<std::string> seen;
  for (auto s : {Split::kTrain, Split::kQuery, Split::kGallery})
    for (const auto& item : m.split(s)) {
      const std::string key = fs::path(item.path).filename().string();
      if (!seen.insert(key).second) throw DataError("duplicate image name in manifest: " + item.path);
    }
}

}  // namespace

DatasetManifest load_split(const fs::path& root, Layout layout, std::vector<std::string>* warnings) {
  (void)layout;
  auto warn = [&](std::string w) {
    if (warnings) warnings->push_back(std::move(w));
  };
  DatasetManifest m;
  m.root = root;
  m.name = root.filename().string();
  if (m.name.empty()) m.name = root.parent_path().filename().string();
  const std::array<std::pair<const char*, Split>, 3> dirs{
      {{"bounding_box_train", Split::kTrain}, {"query", Split::kQuery}, {"bounding_box_test", Split::kGallery}}};
  for (const auto& [dir, split] : dirs) {
    const fs::path d = root / dir;
    if (!fs::is_directory(d)) throw DataError("missing directory " + d.string());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(d))
      if (e.is_regular_file() && is_image_file(e.path())) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    auto& out = split == Split::kTrain ? m.train : split == Split::kQuery ? m.query : m.gallery;
    for (const auto& n : names) {
      SampleMeta meta = parse_benchmark_filename(n);
      meta.path = (fs::path(dir) / n).generic_string();
      meta.split = split;
      if (split == Split::kTrain && meta.junk()) {
        warn("junk image excluded from training: " + meta.path);
        continue;
      }
      out.push_back(std::move(meta));
    }
    if (out.empty()) warn(std::string("split '") + dir + "' is empty");
  }
  check_duplicates(m);

  std::string lower = m.name;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const auto& [key, st] : known_stats()) {
    if (lower.find(key) == std::string::npos) continue;
    auto cmp = [&](const char* what, std::size_t got, std::size_t want) {
      if (got != want)
        warn(std::string(what) + ": found " + std::to_string(got) + ", expected " + std::to_string(want));
    };
    cmp("train images", m.train.size(), st.train_images);
    cmp("train identities", m.num_identities(Split::kTrain), st.train_ids);
    cmp("query images", m.query.size(), st.query_images);
    cmp("gallery images", m.gallery.size(), st.gallery_images);
  }
  return m;
}

std::string serialize_manifest(const DatasetManifest& m) {
  std::ostringstream os;
  os << "# sdb-manifest v1\tname=" << m.name << "\n";
  os << "# path\tperson_id\tcamera_id\tsplit\n";
  for (auto s : {Split::kTrain, Split::kQuery, Split::kGallery})
    for (const auto& item : m.split(s))
      os << item.path << '\t' << item.person_id << '\t' << item.camera_id << '\t' << to_string(item.split) << '\n';
  return os.str();
}

namespace {

int parse_int(std::string_view s, std::size_t line) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError("manifest line " + std::to_string(line) + ": bad integer '" + std::string(s) + "'");
  return v;
}

}  // namespace

DatasetManifest parse_manifest(std::string_view text, const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header = false;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line.starts_with("# sdb-manifest v1")) {
      header = true;
      const auto k = line.find("name=");
      if (k != std::string_view::npos) m.name = std::string(line.substr(k + 5));
      continue;
    }
    if (line.front() == '#') continue;
    if (!header) throw ParseError("manifest: missing '# sdb-manifest v1' header");
    std::vector<std::string_view> f;
    std::size_t s = 0;
    while (true) {
      const auto t = line.find('\t', s);
      f.push_back(line.substr(s, t == std::string_view::npos ? std::string_view::npos : t - s));
      if (t == std::string_view::npos) break;
      s = t + 1;
    }
    if (f.size() != 4) throw ParseError("manifest line " + std::to_string(line_no) + ": expected 4 fields");
    SampleMeta meta{std::string(f[0]), parse_int(f[1], line_no), parse_int(f[2], line_no), parse_split(f[3])};
    auto& out = meta.split == Split::kTrain ? m.train : meta.split == Split::kQuery ? m.query : m.gallery;
    out.push_back(std::move(meta));
    if (pos > text.size()) break;
  }
  if (!header) throw ParseError("manifest: missing '# sdb-manifest v1' header");
  check_duplicates(m);
  return m;
}

void write_manifest(const DatasetManifest& m, const fs::path& file) {
  std::ofstream os(file);
  if (!os) throw DataError("cannot write manifest " + file.string());
  os << serialize_manifest(m);
  if (!os) throw DataError("failed writing manifest " + file.string());
}

DatasetManifest read_manifest(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw DataError("cannot read manifest " + file.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_manifest(ss.str(), file.parent_path());
}

// ---- synthetic data

void SynthConfig::validate() const {
  if (num_ids < 1 || images_per_id < 1 || num_cameras < 1 || image_dims.height == 0 || image_dims.width == 0)
    throw ConfigError("dataset.synthetic", "counts and image dims must be positive");
  if (num_train_ids < 0 || num_train_ids > num_ids)
    throw ConfigError("dataset.synthetic.num_train_ids", "must be in [0, num_ids]");
  if (num_train_ids < num_ids && images_per_id < 2 * num_cameras)
    throw ConfigError("dataset.synthetic.images_per_id",
                      "evaluation identities need at least 2 * num_cameras images");
  if (!(noise_level >= 0)) throw ConfigError("dataset.synthetic.noise_level", "must be >= 0");
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9E3779B97F4A7C15ULL ^ (b + 0x632BE59BD9B4E019ULL + (a << 6) + (a >> 2));
  x ^= x >> 31;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 29;
  return x;
}

// Vertical body-part bands as fractions of the image height.
constexpr std::array<std::array<double, 2>, 5> kParts{{{0.04, 0.18}, {0.18, 0.42}, {0.42, 0.58}, {0.58, 0.88},
                                                      {0.88, 0.97}}};

}  // namespace

ImageTensor render_synthetic(const SynthConfig& cfg, int identity, int index) {
  Rng id_rng(mix(cfg.seed, static_cast<std::uint64_t>(identity) + 1));
  std::uniform_real_distribution<Real> unit(0, 1);
  // two colors for every part: left and right half of the body
  std::array<std::array<std::array<Real, 3>, 2>, kParts.size()> colors{};
  for (auto& part : colors)
    for (auto& side : part)
      for (auto& ch : side) ch = unit(id_rng);
  for (std::size_t p = 0; p < kParts.size(); ++p)
    if (unit(id_rng) < 0.5) colors[p][1] = colors[p][0];

  const int camera = index % cfg.num_cameras;
  Rng cam_rng(mix(cfg.seed ^ 0xC0FFEEULL, static_cast<std::uint64_t>(camera) + 1));
  std::array<Real, 3> tint{};
  for (auto& t : tint) t = std::uniform_real_distribution<Real>(-0.06, 0.06)(cam_rng);

  Rng img_rng(mix(mix(cfg.seed, static_cast<std::uint64_t>(identity) + 7919), static_cast<std::uint64_t>(index)));
  std::normal_distribution<Real> noise(0, 1);

  const std::size_t h = cfg.image_dims.height, w = cfg.image_dims.width;
  const auto x_lo = static_cast<std::size_t>(0.2 * static_cast<double>(w));
  const auto x_hi = static_cast<std::size_t>(std::ceil(0.8 * static_cast<double>(w)));
  const std::size_t x_mid = (x_lo + x_hi) / 2;
  ImageTensor img(h, w, 0.5);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
    int part = -1;
    for (std::size_t p = 0; p < kParts.size(); ++p)
      if (fy >= kParts[p][0] && fy < kParts[p][1]) part = static_cast<int>(p);
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        Real v = 0.5;
        if (part >= 0 && x >= x_lo && x < x_hi) v = colors[static_cast<std::size_t>(part)][x < x_mid ? 0 : 1][c];
        v += tint[c];
        if (cfg.noise_level > 0) v += cfg.noise_level * noise(img_rng);
        img.at(y, x, c) = std::clamp(v, Real{0}, Real{1});
      }
    }
  }
  return img;
}

DatasetManifest generate_synthetic(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw DataError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  DatasetManifest m;
  m.name = "synthetic";
  m.root = out_dir;
  const int per_id = cfg.images_per_id;
  for (int id = 0; id < cfg.num_ids; ++id) {
    const bool train = id < cfg.num_train_ids;
    std::vector<bool> query_taken(static_cast<std::size_t>(cfg.num_cameras), false);
    for (int i = 0; i < per_id; ++i) {
      const int cam = i % cfg.num_cameras;
      char name[64];
      std::snprintf(name, sizeof name, "%04d_c%ds1_%06d_00.png", id, cam + 1, i);
      const std::string rel = (fs::path("images") / name).generic_string();
      save_png(render_synthetic(cfg, id, i), out_dir / rel);
      SampleMeta meta{rel, id, cam + 1, Split::kTrain};
      if (train) {
        m.train.push_back(meta);
      } else if (i < per_id / 2) {
        meta.split = Split::kGallery;
        m.gallery.push_back(meta);
      } else if (!query_taken[static_cast<std::size_t>(cam)]) {
        query_taken[static_cast<std::size_t>(cam)] = true;
        meta.split = Split::kQuery;
        m.query.push_back(meta);
      }
    }
  }
  write_manifest(m, out_dir / "manifest.txt");
  return m;
}

ImageTensor load_image(const fs::path& file) {
  const cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot read image " + file.string());
  ImageTensor img(static_cast<std::size_t>(bgr.rows), static_cast<std::size_t>(bgr.cols));
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), static_cast<std::size_t>(c)) =
            row[x][2 - c] / 255.0;
  }
  return img;
}

void save_png(const ImageTensor& img, const fs::path& file) {
  cv::Mat bgr(static_cast<int>(img.height()), static_cast<int>(img.width()), CV_8UC3);
  for (int y = 0; y < bgr.rows; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x)
      for (int c = 0; c < 3; ++c) {
        const Real v = img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), static_cast<std::size_t>(c));
        row[x][2 - c] = static_cast<unsigned char>(std::lround(std::clamp(v, Real{0}, Real{1}) * 255.0));
      }
  }
  if (!cv::imwrite(file.string(), bgr)) throw DataError("cannot write image " + file.string());
}

std::vector<std::string> ImageCache::preload(const std::vector<SampleMeta>& items) {
  std::vector<const SampleMeta*> todo;
  for (const auto& it : items)
    if (!images_.count(it.path)) todo.push_back(&it);
  std::vector<ImageTensor> loaded(todo.size());
  std::vector<std::uint8_t> failed(todo.size(), 0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < todo.size(); ++i) {
    try {
      loaded[i] = load_image(manifest_->resolve(*todo[i]));
    } catch (const DataError&) {
      failed[i] = 1;
    }
  }
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < todo.size(); ++i) {
    if (failed[i])
      missing.push_back(todo[i]->path);
    else
      images_.emplace(todo[i]->path, std::move(loaded[i]));
  }
  return missing;
}

const ImageTensor& ImageCache::get(const SampleMeta& item) {
  auto it = images_.find(item.path);
  if (it == images_.end()) {
    try {
      it = images_.emplace(item.path, load_image(manifest_->resolve(item))).first;
    } catch (const DataError& e) {
      throw DataError(std::string(e.what()) + " (item " + item.path + ")");
    }
  }
  return it->second;
}

}  // namespace sdb
