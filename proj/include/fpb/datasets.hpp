#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace fpb {

struct ImageRecord {
  std::string path;
  int pid = -1;
  int camid = -1;
  bool junk = false;  // pid == -1
};

struct DatasetIndex {
  std::string root;
  std::vector<ImageRecord> train, query, gallery;

  std::size_t image_count() const { return train.size() + query.size() + gallery.size(); }
  // Distinct non-junk pids in a split.
  static std::vector<int> identities(const std::vector<ImageRecord>& split);
  std::size_t identity_count() const;

  nlohmann::json to_json() const;
  static DatasetIndex from_json(const nlohmann::json& j);
};

// Subfolder names of the Market1501 family.
inline constexpr const char* kTrainDir = "bounding_box_train";
inline constexpr const char* kQueryDir = "query";
inline constexpr const char* kGalleryDir = "bounding_box_test";

struct ParsedName {
  int pid;
  int camid;
};

// `PPPP_cC...` file names, e.g. 0002_c1s1_000451_03.jpg or -1_c3s2_0001.jpg.
std::optional<ParsedName> parse_market_filename(const std::string& filename);

struct IngestOptions {
  // Reuse/write an index cache file; empty disables caching.
  std::string cache_path;
  std::vector<std::string>* warnings = nullptr;
};

// Reads the three standard subfolders. Unparseable names are skipped with a
// warning; an empty split is an error. Records are sorted by file name.
DatasetIndex ingest_market_layout(const std::string& root, const IngestOptions& options = {});

struct ToySpec {
  int num_identities = 20;
  int images_per_identity = 24;
  int height = 384;
  int width = 128;
  std::uint64_t seed = 0;
  int num_cameras = 6;
  int queries_per_identity = 2;
  // Fraction of identities (first ones) used for training.
  double train_fraction = 0.5;
  // Nuisance: per-camera background/illumination plus per-image jitter.
  double background_hue_jitter = 12;  // degrees on the 0..180 OpenCV hue scale
  double brightness_jitter = 0.12;
  double max_shift_fraction = 0.18;   // of width/height
  double scale_jitter = 0.15;
  double occlusion_prob = 0.3;
  double noise_sigma = 6;             // 8-bit levels

  void validate() const;
  nlohmann::json to_json() const;
};

// Writes a Market-layout tree of PNG files under `out_root` and returns its
// index. Identical specs produce byte-identical files.
DatasetIndex generate_toy(const ToySpec& spec, const std::string& out_root);

}  // namespace fpb
