#include "fpb/evaluation.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <stdexcept>

#include <cblas.h>

#include "fpb/image_io.hpp"

namespace fpb {

namespace fs = std::filesystem;

FeatureSet extract_features(FpbModel& model, const std::vector<ImageRecord>& records, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("extract_features: batch_size must be >= 1");
  const int h = model.config().backbone.input_height, w = model.config().backbone.input_width;
  const std::int64_t plane = 3LL * h * w;
  const std::int64_t dim = model.inference_dim();

  FeatureSet out;
  std::vector<real> rows;
  std::vector<Tensor> pending;
  auto flush = [&] {
    if (pending.empty()) return;
    Tensor batch({static_cast<std::int64_t>(pending.size()), 3, h, w});
    for (std::size_t i = 0; i < pending.size(); ++i)
      std::copy(pending[i].data(), pending[i].data() + plane, batch.data() + i * plane);
    const Tensor f = model.inference_features(batch);
    rows.insert(rows.end(), f.data(), f.data() + f.numel());
    pending.clear();
  };
  for (const auto& r : records) {
    Tensor img;
    try {
      img = load_image(r.path, h, w);
    } catch (const std::exception& e) {
      out.failures.push_back(r.path + ": " + e.what());
      continue;
    }
    pending.push_back(std::move(img));
    out.paths.push_back(r.path);
    out.pids.push_back(r.pid);
    out.camids.push_back(r.camid);
    if (static_cast<int>(pending.size()) == batch_size) flush();
  }
  flush();
  out.features = Tensor({static_cast<std::int64_t>(out.paths.size()), dim}, std::move(rows));
  return out;
}

Tensor distance_matrix(const Tensor& q, const Tensor& g) {
  if (q.rank() != 2 || g.rank() != 2 || q.dim(1) != g.dim(1))
    throw std::invalid_argument("distance_matrix: expected [m,D] and [n,D] with equal D");
  const auto m = q.dim(0), n = g.dim(0), d = q.dim(1);
  Tensor out({m, n});
  if (m == 0 || n == 0) return out;
  // |q|^2 + |g|^2 - 2 q.g
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m), static_cast<int>(n), static_cast<int>(d),
              -2.0, q.data(), static_cast<int>(d), g.data(), static_cast<int>(d), 0.0, out.data(), static_cast<int>(n));
  std::vector<real> qn(static_cast<std::size_t>(m)), gn(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < m; ++i) qn[i] = cblas_ddot(static_cast<int>(d), q.data() + i * d, 1, q.data() + i * d, 1);
  for (std::int64_t j = 0; j < n; ++j) gn[j] = cblas_ddot(static_cast<int>(d), g.data() + j * d, 1, g.data() + j * d, 1);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[i * n + j] = std::max<real>(0, out[i * n + j] + qn[i] + gn[j]);
  return out;
}

RetrievalResult evaluate(const Tensor& dist, const std::vector<int>& q_pids, const std::vector<int>& q_camids,
                         const std::vector<int>& g_pids, const std::vector<int>& g_camids, int max_rank) {
  if (dist.rank() != 2) throw std::invalid_argument("evaluate: distance matrix must be [q,g]");
  const auto nq = dist.dim(0), ng = dist.dim(1);
  if (static_cast<std::int64_t>(q_pids.size()) != nq || static_cast<std::int64_t>(q_camids.size()) != nq ||
      static_cast<std::int64_t>(g_pids.size()) != ng || static_cast<std::int64_t>(g_camids.size()) != ng)
    throw std::invalid_argument("evaluate: label vectors do not match the distance matrix");
  if (max_rank < 1) throw std::invalid_argument("evaluate: max_rank must be >= 1");

  RetrievalResult res;
  res.cmc.assign(static_cast<std::size_t>(max_rank), 0);
  res.ranked.resize(static_cast<std::size_t>(nq));
  res.ap.assign(static_cast<std::size_t>(nq), -1);
  real ap_sum = 0;
  std::vector<std::int64_t> order(static_cast<std::size_t>(ng));
  for (std::int64_t q = 0; q < nq; ++q) {
    const real* row = dist.data() + q * ng;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) { return row[a] < row[b]; });
    auto& ranked = res.ranked[q];
    for (auto j : order) {
      const bool junk = g_pids[j] < 0;
      const bool same_view = g_pids[j] == q_pids[q] && g_camids[j] == q_camids[q];
      if (!junk && !same_view) ranked.push_back(j);
    }
    int hits = 0, first = -1;
    real ap = 0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      if (g_pids[ranked[r]] != q_pids[q]) continue;
      ++hits;
      if (first < 0) first = static_cast<int>(r);
      ap += static_cast<real>(hits) / static_cast<real>(r + 1);
    }
    if (hits == 0) continue;
    res.ap[q] = ap / hits;
    ap_sum += res.ap[q];
    for (int k = first; k < max_rank; ++k) res.cmc[k] += 1;
    ++res.evaluated_queries;
  }
  if (res.evaluated_queries == 0) throw std::invalid_argument("evaluate: no query has a valid gallery match");
  res.map = ap_sum / res.evaluated_queries;
  for (auto& c : res.cmc) c /= res.evaluated_queries;
  return res;
}

nlohmann::json retrieval_report(const RetrievalResult& r, bool per_query) {
  nlohmann::json j;
  j["mAP"] = r.map;
  j["evaluated_queries"] = r.evaluated_queries;
  j["skipped_queries"] = static_cast<int>(r.ap.size()) - r.evaluated_queries;
  nlohmann::json ranks = nlohmann::json::object();
  for (int k : {1, 5, 10})
    if (k <= static_cast<int>(r.cmc.size())) ranks["rank" + std::to_string(k)] = r.rank(k);
  j["cmc"] = ranks;
  j["cmc_curve"] = r.cmc;
  if (per_query) j["per_query_ap"] = r.ap;
  return j;
}

namespace {

Tensor channel_energy(const Tensor& map, std::int64_t n) {
  const auto c = map.dim(1), h = map.dim(2), w = map.dim(3);
  Tensor out({h, w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < h * w; ++i) {
      const real v = map[((n * c) + ch) * h * w + i];
      out[i] += v * v;
    }
  return out;
}

}  // namespace

std::vector<std::string> dump_activation_maps(FpbModel& model, const std::vector<ImageRecord>& records, int count,
                                              const std::string& out_dir) {
  const int h = model.config().backbone.input_height, w = model.config().backbone.input_width;
  std::vector<std::string> written;
  fs::create_directories(out_dir);
  NoGradGuard no_grad;
  for (int i = 0; i < count && i < static_cast<int>(records.size()); ++i) {
    const Tensor img = load_image(records[i].path, h, w);
    const auto out = model.forward(Var(img.reshaped({1, 3, h, w})), false);
    const std::string stem = (fs::path(out_dir) / fs::path(records[i].path).stem()).string();
    save_heatmap(channel_energy(out.global.maps.stage2.value(), 0), img, h, w, stem + "_stage2.png");
    written.push_back(stem + "_stage2.png");
    if (out.pyramid) {
      save_heatmap(channel_energy(out.pyramid->fused.value(), 0), img, h, w, stem + "_pyramid.png");
      written.push_back(stem + "_pyramid.png");
    }
  }
  return written;
}

}  // namespace fpb
