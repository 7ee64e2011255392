#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpb/datasets.hpp"
#include "fpb/model.hpp"

namespace fpb {

struct FeatureSet {
  Tensor features;  // [n, D], rows L2-normalised
  std::vector<std::string> paths;
  std::vector<int> pids;
  std::vector<int> camids;
  // "path: reason" for every image that could not be decoded (skipped).
  std::vector<std::string> failures;

  std::size_t size() const { return paths.size(); }
};

// Inference-mode features for a list of images, in batches.
FeatureSet extract_features(FpbModel& model, const std::vector<ImageRecord>& records, int batch_size = 32);

// Squared Euclidean distances between the rows of q [m,D] and g [n,D].
Tensor distance_matrix(const Tensor& q, const Tensor& g);

struct RetrievalResult {
  // Per query: valid gallery indices ordered by distance (ties by index).
  std::vector<std::vector<std::int64_t>> ranked;
  // Per query AP; -1 for queries without a valid positive (not averaged).
  std::vector<real> ap;
  real map = 0;
  std::vector<real> cmc;  // cmc[k-1] = CMC(k)
  int evaluated_queries = 0;

  real rank(int k) const { return cmc.at(static_cast<std::size_t>(k - 1)); }
};

// Single-query protocol: gallery entries sharing pid and camid with the query
// are dropped, junk (pid < 0) entries are always dropped, and queries without
// a remaining positive are skipped. Throws when no query can be evaluated.
RetrievalResult evaluate(const Tensor& dist, const std::vector<int>& q_pids, const std::vector<int>& q_camids,
                         const std::vector<int>& g_pids, const std::vector<int>& g_camids, int max_rank = 50);

// mAP, CMC at 1/5/10 (and the full curve); per-query AP when requested.
nlohmann::json retrieval_report(const RetrievalResult& r, bool per_query = false);

// Writes channel-energy heat maps of the attended stage-2 map and, with the
// pyramid branch, of the fused pyramid map for the first `count` images.
// Returns the written file paths.
std::vector<std::string> dump_activation_maps(FpbModel& model, const std::vector<ImageRecord>& records, int count,
                                              const std::string& out_dir);

}  // namespace fpb
