#include "fpb/datasets.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace fs = std::filesystem;

namespace fpb {

std::vector<int> DatasetIndex::identities(const std::vector<ImageRecord>& split) {
  std::set<int> ids;
  for (const auto& r : split)
    if (!r.junk) ids.insert(r.pid);
  return {ids.begin(), ids.end()};
}

std::size_t DatasetIndex::identity_count() const {
  std::set<int> ids;
  for (const auto* split : {&train, &query, &gallery})
    for (const auto& r : *split)
      if (!r.junk) ids.insert(r.pid);
  return ids.size();
}

namespace {

nlohmann::json split_to_json(const std::vector<ImageRecord>& split) {
  auto arr = nlohmann::json::array();
  for (const auto& r : split) arr.push_back({r.path, r.pid, r.camid});
  return arr;
}

std::vector<ImageRecord> split_from_json(const nlohmann::json& arr) {
  std::vector<ImageRecord> out;
  for (const auto& e : arr) {
    ImageRecord r{e.at(0).get<std::string>(), e.at(1).get<int>(), e.at(2).get<int>(), false};
    r.junk = r.pid == -1;
    out.push_back(std::move(r));
  }
  return out;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png" || ext == ".bmp";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return files;
}

// FNV-1a over the sorted listing (names and sizes); detects stale caches.
std::string listing_signature(const fs::path& root) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  };
  for (const char* sub : {kTrainDir, kQueryDir, kGalleryDir})
    for (const auto& f : list_images(root / sub)) {
      mix(std::string(sub) + "/" + f.filename().string());
      mix(std::to_string(fs::file_size(f)));
    }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace

nlohmann::json DatasetIndex::to_json() const {
  return {{"root", root},
          {"train", split_to_json(train)},
          {"query", split_to_json(query)},
          {"gallery", split_to_json(gallery)}};
}

DatasetIndex DatasetIndex::from_json(const nlohmann::json& j) {
  DatasetIndex idx;
  idx.root = j.at("root").get<std::string>();
  idx.train = split_from_json(j.at("train"));
  idx.query = split_from_json(j.at("query"));
  idx.gallery = split_from_json(j.at("gallery"));
  return idx;
}

std::optional<ParsedName> parse_market_filename(const std::string& filename) {
  static const std::regex pattern(R"(^(-?\d+)_c(\d+)(?:s\d+)?[_.].*)");
  std::smatch m;
  if (!std::regex_match(filename, m, pattern)) return std::nullopt;
  try {
    return ParsedName{std::stoi(m[1].str()), std::stoi(m[2].str())};
  } catch (const std::out_of_range&) {
    return std::nullopt;
  }
}

DatasetIndex ingest_market_layout(const std::string& root_path, const IngestOptions& options) {
  const fs::path root(root_path);
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root not found: " + root_path);
  const std::string signature = listing_signature(root);
  if (!options.cache_path.empty() && fs::exists(options.cache_path)) {
    try {
      std::ifstream is(options.cache_path);
      auto j = nlohmann::json::parse(is);
      if (j.at("signature").get<std::string>() == signature) return DatasetIndex::from_json(j.at("index"));
    } catch (const std::exception&) {
      // unreadable cache: rebuild below
    }
  }

  DatasetIndex idx;
  idx.root = fs::absolute(root).lexically_normal().string();
  auto read_split = [&](const char* sub, std::vector<ImageRecord>& out) {
    for (const auto& f : list_images(root / sub)) {
      auto parsed = parse_market_filename(f.filename().string());
      if (!parsed) {
        if (options.warnings) options.warnings->push_back("skipping unparseable file name: " + f.string());
        continue;
      }
      out.push_back({fs::absolute(f).lexically_normal().string(), parsed->pid, parsed->camid, parsed->pid == -1});
    }
    if (out.empty()) throw std::runtime_error(std::string("dataset split '") + sub + "' is empty under " + root_path);
  };
  read_split(kTrainDir, idx.train);
  read_split(kQueryDir, idx.query);
  read_split(kGalleryDir, idx.gallery);

  if (!options.cache_path.empty()) {
    const fs::path cache(options.cache_path);
    if (cache.has_parent_path()) fs::create_directories(cache.parent_path());
    std::ofstream os(cache);
    os << nlohmann::json{{"signature", signature}, {"index", idx.to_json()}}.dump();
  }
  return idx;
}

// ---------------------------------------------------------------------------
// Synthetic toy set

void ToySpec::validate() const {
  if (num_identities < 2) throw std::invalid_argument("toy: need at least 2 identities");
  if (images_per_identity < queries_per_identity + 2)
    throw std::invalid_argument("toy: images_per_identity must leave gallery images after queries");
  if (height < 32 || width < 16) throw std::invalid_argument("toy: image too small");
  if (num_cameras < 2) throw std::invalid_argument("toy: need at least 2 cameras");
  if (queries_per_identity < 1 || queries_per_identity > num_cameras)
    throw std::invalid_argument("toy: queries_per_identity must be in [1, num_cameras]");
  if (!(train_fraction > 0 && train_fraction < 1)) throw std::invalid_argument("toy: train_fraction must be in (0,1)");
}

nlohmann::json ToySpec::to_json() const {
  return {{"num_identities", num_identities},
          {"images_per_identity", images_per_identity},
          {"height", height},
          {"width", width},
          {"seed", seed},
          {"num_cameras", num_cameras},
          {"queries_per_identity", queries_per_identity},
          {"train_fraction", train_fraction},
          {"background_hue_jitter", background_hue_jitter},
          {"brightness_jitter", brightness_jitter},
          {"max_shift_fraction", max_shift_fraction},
          {"scale_jitter", scale_jitter},
          {"occlusion_prob", occlusion_prob},
          {"noise_sigma", noise_sigma}};
}

namespace {

// BGR palette of clothing colours.
const std::vector<cv::Scalar> kPalette = {
    {40, 40, 200},   {40, 160, 40},  {190, 70, 30},  {40, 210, 230}, {200, 200, 40}, {180, 40, 180},
    {30, 120, 240},  {140, 40, 90},  {235, 235, 235}, {30, 30, 30},  {128, 128, 128}, {40, 80, 130},
    {180, 150, 250}, {90, 30, 30},   {40, 120, 120}, {120, 120, 20},
};
const std::vector<cv::Scalar> kHair = {{20, 20, 20}, {30, 60, 110}, {60, 170, 220}, {150, 150, 150}};
const std::vector<cv::Scalar> kSkin = {{150, 180, 225}, {110, 140, 190}, {70, 95, 140}};

enum Pattern { kSolid, kStripes, kSplit, kBand, kPatternCount };

struct Identity {
  int shirt, pants, secondary, hair, skin, pattern, bag;  // bag: -1 none, else palette index
};

int attr_diff(const Identity& a, const Identity& b) {
  int d = 0;
  d += a.shirt != b.shirt;
  d += a.pants != b.pants;
  d += a.pattern != b.pattern;
  d += (a.pattern != kSolid || b.pattern != kSolid) && a.secondary != b.secondary;
  d += a.hair != b.hair;
  d += a.bag != b.bag;
  return d;
}

std::vector<Identity> make_identities(int n, std::mt19937_64& rng) {
  auto pick = [&](int k) { return static_cast<int>(rng() % static_cast<std::uint64_t>(k)); };
  const int palette = static_cast<int>(kPalette.size());
  std::vector<Identity> ids;
  int attempts = 0;
  while (static_cast<int>(ids.size()) < n) {
    Identity c{pick(palette), pick(palette), pick(palette), pick(static_cast<int>(kHair.size())),
               pick(static_cast<int>(kSkin.size())), pick(kPatternCount), pick(3) == 0 ? pick(palette) : -1};
    if (c.secondary == c.shirt) c.secondary = (c.secondary + 5) % palette;
    if (c.pants == c.shirt) c.pants = (c.pants + 3) % palette;
    bool distinct = true;
    const int needed = ++attempts > 20000 ? 1 : 3;
    for (const auto& o : ids) distinct = distinct && attr_diff(c, o) >= needed;
    if (distinct) ids.push_back(c);
  }
  return ids;
}

struct Camera {
  cv::Scalar background_hsv;  // H in [0,180)
  double gain;
  cv::Scalar cast;            // per-channel multiplier
};

std::vector<Camera> make_cameras(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Camera> cams;
  for (int c = 0; c < n; ++c) {
    const double hue = std::fmod(180.0 * c / n + 20 * u(rng), 180.0);
    cams.push_back({cv::Scalar(hue, 60 + 90 * u(rng), 90 + 120 * u(rng)), 0.8 + 0.4 * u(rng),
                    cv::Scalar(0.9 + 0.2 * u(rng), 0.9 + 0.2 * u(rng), 0.9 + 0.2 * u(rng))});
  }
  return cams;
}

cv::Mat render(const Identity& id, const Camera& cam, const ToySpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  std::normal_distribution<double> gauss(0, 1);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const int H = spec.height, W = spec.width;

  // Background: camera hue with jitter, vertical gradient and clutter.
  cv::Mat hsv(H, W, CV_8UC3);
  const double hue = std::fmod(cam.background_hsv[0] + uni(-1, 1) * spec.background_hue_jitter + 180, 180);
  for (int y = 0; y < H; ++y) {
    const double t = static_cast<double>(y) / H;
    hsv.row(y).setTo(cv::Scalar(hue, cam.background_hsv[1], std::clamp(cam.background_hsv[2] * (0.8 + 0.4 * t), 0.0, 255.0)));
  }
  cv::Mat img;
  cv::cvtColor(hsv, img, cv::COLOR_HSV2BGR);
  const int clutter = 2 + static_cast<int>(rng() % 4);
  for (int i = 0; i < clutter; ++i) {
    cv::Mat patch(1, 1, CV_8UC3, cv::Scalar(std::fmod(hue + uni(-25, 25) + 180, 180), cam.background_hsv[1] * uni(0.5, 1.2),
                                            cam.background_hsv[2] * uni(0.5, 1.1)));
    cv::cvtColor(patch, patch, cv::COLOR_HSV2BGR);
    const cv::Vec3b col = patch.at<cv::Vec3b>(0, 0);
    const int x0 = static_cast<int>(uni(0, W)), y0 = static_cast<int>(uni(0, H));
    cv::rectangle(img, cv::Rect(x0, y0, static_cast<int>(uni(0.1, 0.5) * W), static_cast<int>(uni(0.05, 0.2) * H)),
                  cv::Scalar(col[0], col[1], col[2]), cv::FILLED);
  }

  // Person in a 128x384 reference frame, then scaled and shifted.
  const double s = (1 + uni(-1, 1) * spec.scale_jitter) * W / 128.0;
  const double sy = (1 + uni(-1, 1) * spec.scale_jitter) * H / 384.0;
  const double dx = uni(-1, 1) * spec.max_shift_fraction * W, dy = uni(-1, 1) * spec.max_shift_fraction * H;
  auto P = [&](double x, double y) {
    return cv::Point(static_cast<int>(std::lround(W / 2.0 + (x - 64) * s + dx)),
                     static_cast<int>(std::lround(H / 2.0 + (y - 200) * sy + dy)));
  };
  auto R = [&](double x0, double y0, double x1, double y1, const cv::Scalar& c) {
    cv::rectangle(img, P(x0, y0), P(x1, y1), c, cv::FILLED);
  };
  const cv::Scalar shirt = kPalette[id.shirt], pants = kPalette[id.pants], second = kPalette[id.secondary];
  const double stride = uni(-6, 6), arm = uni(-4, 4);

  // legs and shoes
  R(40 - stride, 200, 62 - stride / 2, 340, pants);
  R(66 + stride / 2, 200, 88 + stride, 340, pants);
  R(36 - stride, 340, 62 - stride / 2, 354, cv::Scalar(25, 25, 25));
  R(66 + stride / 2, 340, 92 + stride, 354, cv::Scalar(25, 25, 25));
  // arms, torso and pattern
  R(22 + arm, 84, 36, 190, shirt);
  R(92, 84, 106 - arm, 190, shirt);
  R(36, 78, 92, 204, shirt);
  switch (id.pattern) {
    case kStripes:
      for (double y = 90; y < 200; y += 28) R(36, y, 92, y + 14, second);
      break;
    case kSplit:
      R(64, 78, 92, 204, second);
      break;
    case kBand:
      R(36, 120, 92, 146, second);
      break;
    default:
      break;
  }
  if (id.bag >= 0) R(88, 110, 112, 176, kPalette[id.bag]);
  // head and hair
  const cv::Point head = P(64, 50);
  const cv::Size axes(static_cast<int>(22 * s), static_cast<int>(26 * sy));
  cv::ellipse(img, head, axes, 0, 0, 360, kSkin[id.skin], cv::FILLED);
  cv::ellipse(img, head, axes, 0, 180, 360, kHair[id.hair], cv::FILLED);

  // Occluder over part of the body.
  if (u(rng) < spec.occlusion_prob) {
    const int ow = static_cast<int>(uni(0.3, 0.6) * W), oh = static_cast<int>(uni(0.1, 0.25) * H);
    const int ox = static_cast<int>(uni(0, W - ow)), oy = static_cast<int>(uni(0.25, 0.95) * H - oh);
    const double g = uni(60, 200);
    cv::rectangle(img, cv::Rect(ox, std::max(0, oy), ow, oh), cv::Scalar(g, g * uni(0.8, 1.2), g * uni(0.8, 1.2)),
                  cv::FILLED);
  }

  // Camera illumination, per-image brightness and sensor noise.
  const double gain = cam.gain * (1 + uni(-1, 1) * spec.brightness_jitter);
  cv::Mat out(H, W, CV_8UC3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const auto& p = img.at<cv::Vec3b>(y, x);
      auto& q = out.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) q[c] = cv::saturate_cast<uchar>(p[c] * gain * cam.cast[c] + gauss(rng) * spec.noise_sigma);
    }
  return out;
}

std::string toy_name(int pid, int camid, int frame) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << pid << "_c" << camid << "s1_" << std::setw(6) << std::setfill('0') << frame
     << "_00.png";
  return os.str();
}

}  // namespace

DatasetIndex generate_toy(const ToySpec& spec, const std::string& out_root) {
  spec.validate();
  const fs::path root(out_root);
  std::error_code ec;
  for (const char* sub : {kTrainDir, kQueryDir, kGalleryDir}) {
    fs::create_directories(root / sub, ec);
    if (ec) throw std::runtime_error("toy: cannot create " + (root / sub).string() + ": " + ec.message());
    for (const auto& f : list_images(root / sub)) fs::remove(f);
  }
  std::mt19937_64 rng(spec.seed);
  const auto identities = make_identities(spec.num_identities, rng);
  const auto cameras = make_cameras(spec.num_cameras, rng);
  const int num_train = std::clamp(static_cast<int>(std::lround(spec.num_identities * spec.train_fraction)), 1,
                                   spec.num_identities - 1);

  DatasetIndex idx;
  idx.root = fs::absolute(root).lexically_normal().string();
  for (int i = 0; i < spec.num_identities; ++i) {
    const int pid = i + 1;
    const bool is_train = i < num_train;
    // Cameras cycle through a shuffled order so every camera sees each identity.
    std::vector<int> cam_order(static_cast<std::size_t>(spec.num_cameras));
    for (int c = 0; c < spec.num_cameras; ++c) cam_order[c] = c;
    std::shuffle(cam_order.begin(), cam_order.end(), rng);
    std::vector<int> query_cams;
    for (int k = 0; k < spec.images_per_identity; ++k) {
      const int cam = cam_order[k % spec.num_cameras];
      const int frame = i * spec.images_per_identity + k;
      cv::Mat img = render(identities[i], cameras[cam], spec, rng);
      const char* sub = kTrainDir;
      std::vector<ImageRecord>* split = &idx.train;
      if (!is_train) {
        const bool new_cam = std::find(query_cams.begin(), query_cams.end(), cam) == query_cams.end();
        if (static_cast<int>(query_cams.size()) < spec.queries_per_identity && new_cam) {
          query_cams.push_back(cam);
          sub = kQueryDir;
          split = &idx.query;
        } else {
          sub = kGalleryDir;
          split = &idx.gallery;
        }
      }
      const fs::path file = root / sub / toy_name(pid, cam + 1, frame);
      if (!cv::imwrite(file.string(), img)) throw std::runtime_error("toy: cannot write " + file.string());
      split->push_back({fs::absolute(file).lexically_normal().string(), pid, cam + 1, false});
    }
  }
  for (auto* split : {&idx.train, &idx.query, &idx.gallery})
    std::sort(split->begin(), split->end(), [](const ImageRecord& a, const ImageRecord& b) { return a.path < b.path; });
  std::ofstream(root / "toy_spec.json") << spec.to_json().dump(2) << "\n";
  return idx;
}

}  // namespace fpb
