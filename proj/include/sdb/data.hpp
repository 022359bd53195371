#ifndef SDB_DATA_HPP_
#define SDB_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sdb/image.hpp"

namespace sdb {

enum class Split { kTrain, kQuery, kGallery };

std::string_view to_string(Split s);
Split parse_split(std::string_view name);

struct SampleMeta {
  std::string path;  // relative to the manifest root
  int person_id = 0; // -1 marks junk
  int camera_id = 0;
  Split split = Split::kTrain;

  bool junk() const { return person_id < 0; }
  bool operator==(const SampleMeta&) const = default;
};

struct DatasetManifest {
  std::string name;
  std::filesystem::path root;
  std::vector<SampleMeta> train, query, gallery;

  const std::vector<SampleMeta>& split(Split s) const;
  std::size_t num_identities(Split s) const;
  std::filesystem::path resolve(const SampleMeta& m) const { return root / m.path; }
};

// `<pid>_c<cam>s<seq>_<frame>_<idx>.jpg` (DukeMTMC's `<pid>_c<cam>_f<frame>.jpg`
// also parses). A leading "-1" marks a junk image.
SampleMeta parse_benchmark_filename(std::string_view name);

enum class Layout { kMarket };

// Reads bounding_box_train / query / bounding_box_test. Count mismatches
// against known benchmark statistics and empty splits go to `warnings`.
DatasetManifest load_split(const std::filesystem::path& root, Layout layout, std::vector<std::string>* warnings);

// Plain-text table: a header line, then `path<TAB>pid<TAB>cam<TAB>split` rows.
std::string serialize_manifest(const DatasetManifest& m);
DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& root);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& file);
DatasetManifest read_manifest(const std::filesystem::path& file);

struct SynthConfig {
  int num_ids = 30;
  int num_train_ids = 20;
  int images_per_id = 8;
  int num_cameras = 2;
  Dims image_dims{64, 32};
  double noise_level = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

// Identity-structured images: each identity gets colored body-part bands,
// each camera a fixed tint, each image pixel noise. The first num_train_ids
// identities form the training split; for the rest, the first half of each
// identity's images is gallery and one further image per camera is a query.
DatasetManifest generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir);
ImageTensor render_synthetic(const SynthConfig& cfg, int identity, int index);

// RGB in [0, 1].
ImageTensor load_image(const std::filesystem::path& file);
void save_png(const ImageTensor& img, const std::filesystem::path& file);

// Decoded images keyed by manifest path. Loading fans out across files.
class ImageCache {
 public:
  explicit ImageCache(const DatasetManifest& manifest) : manifest_(&manifest) {}
  // Loads every listed item not yet cached; returns paths that failed.
  std::vector<std::string> preload(const std::vector<SampleMeta>& items);
  const ImageTensor& get(const SampleMeta& item);

 private:
  const DatasetManifest* manifest_;
  std::map<std::string, ImageTensor> images_;
};

}  // namespace sdb

#endif  // SDB_DATA_HPP_
