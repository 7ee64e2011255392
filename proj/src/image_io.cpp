#include "fpb/image_io.hpp"

#include <algorithm>
#include <filesystem>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace fpb {

Tensor load_image(const std::string& path, int height, int width) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot decode image: " + path);
  if (bgr.rows != height || bgr.cols != width) cv::resize(bgr, bgr, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  Tensor out({3, height, width});
  const std::int64_t plane = static_cast<std::int64_t>(height) * width;
  for (int y = 0; y < height; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        const real v = row[x][2 - c] / 255.0;
        out[c * plane + y * width + x] = (v - kPixelMean[c]) / kPixelStd[c];
      }
  }
  return out;
}

namespace {

cv::Mat to_bgr8(const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw std::invalid_argument("save_image: expected [3,H,W]");
  const int h = static_cast<int>(chw.dim(1)), w = static_cast<int>(chw.dim(2));
  cv::Mat bgr(h, w, CV_8UC3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const real v = (chw[c * plane + y * w + x] * kPixelStd[c] + kPixelMean[c]) * 255.0;
        row[x][2 - c] = cv::saturate_cast<uchar>(v);
      }
  }
  return bgr;
}

void write_or_throw(const std::string& path, const cv::Mat& img) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  if (!cv::imwrite(path, img)) throw std::runtime_error("cannot write image: " + path);
}

}  // namespace

void save_image(const Tensor& chw, const std::string& path) { write_or_throw(path, to_bgr8(chw)); }

void save_heatmap(const Tensor& map, const Tensor& image, int height, int width, const std::string& path) {
  if (map.rank() != 2) throw std::invalid_argument("save_heatmap: expected [H,W] map");
  const int mh = static_cast<int>(map.dim(0)), mw = static_cast<int>(map.dim(1));
  real lo = map[0], hi = map[0];
  for (real v : map.values()) lo = std::min(lo, v), hi = std::max(hi, v);
  cv::Mat gray(mh, mw, CV_8UC1);
  for (int y = 0; y < mh; ++y)
    for (int x = 0; x < mw; ++x)
      gray.at<uchar>(y, x) = cv::saturate_cast<uchar>(hi > lo ? 255.0 * (map[y * mw + x] - lo) / (hi - lo) : 0.0);
  cv::resize(gray, gray, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  cv::Mat colour;
  cv::applyColorMap(gray, colour, cv::COLORMAP_JET);
  if (!image.empty()) {
    cv::Mat base = to_bgr8(image);
    if (base.rows != height || base.cols != width) cv::resize(base, base, cv::Size(width, height));
    cv::addWeighted(base, 0.5, colour, 0.5, 0, colour);
  }
  write_or_throw(path, colour);
}

}  // namespace fpb
