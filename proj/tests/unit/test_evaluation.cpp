#include <filesystem>
#include <fstream>
#include <random>

#include "check.hpp"
#include "fixtures.hpp"
#include "fpb/evaluation.hpp"
#include "oracles.hpp"

using namespace fpb;
namespace fs = std::filesystem;

namespace {

struct Instance {
  Tensor dist;
  std::vector<int> qp, qc, gp, gc;
};

Instance random_instance(std::mt19937_64& rng, int nq, int ng, int ids, int cams, bool ties) {
  Instance in;
  std::uniform_int_distribution<int> id(0, ids - 1), cam(1, cams), junk(0, 9);
  for (int i = 0; i < nq; ++i) in.qp.push_back(id(rng)), in.qc.push_back(cam(rng));
  for (int j = 0; j < ng; ++j) in.gp.push_back(junk(rng) == 0 ? -1 : id(rng)), in.gc.push_back(cam(rng));
  in.dist = Tensor::uniform({nq, ng}, rng, 0, 1);
  if (ties)
    for (auto& v : in.dist.storage()) v = std::floor(v * 4) / 4;
  return in;
}

std::vector<std::vector<real>> rows(const Tensor& t) { return oracle::to_mat(t, t.dim(0), t.dim(1)); }

}  // namespace

TEST_CASE("Evaluate.HandCases") {
  // Only valid positive ranks first.
  auto r = evaluate(Tensor({1, 3}, {0.1, 0.5, 0.9}), {1}, {1}, {1, 2, 3}, {2, 2, 2}, 3);
  CHECK_EQ(r.map, 1.0);
  CHECK_EQ(r.rank(1), 1.0);

  // [neg, pos, pos]
  r = evaluate(Tensor({1, 3}, {0.1, 0.2, 0.3}), {1}, {1}, {2, 1, 1}, {2, 2, 3}, 3);
  CHECK_NEAR(r.map, (1.0 / 2 + 2.0 / 3) / 2, 1e-12);
  CHECK_EQ(r.rank(1), 0.0);
  CHECK_EQ(r.rank(2), 1.0);
  CHECK(r.ranked[0] == std::vector<std::int64_t>{0, 1, 2});

  // Same-camera positive and junk are dropped from the ranking.
  r = evaluate(Tensor({1, 4}, {0.0, 0.1, 0.2, 0.3}), {1}, {1}, {1, -1, 2, 1}, {1, 2, 2, 2}, 4);
  CHECK(r.ranked[0] == std::vector<std::int64_t>{2, 3});
  CHECK_NEAR(r.map, 0.5, 1e-12);
}

TEST_CASE("Evaluate.SkipsQueriesWithoutPositivesAndRejectsAllInvalid") {
  auto r = evaluate(Tensor({2, 2}, {0.1, 0.2, 0.3, 0.4}), {1, 5}, {1, 1}, {1, 2}, {2, 2}, 2);
  CHECK_EQ(r.evaluated_queries, 1);
  CHECK_EQ(r.ap[1], -1);
  CHECK_EQ(r.map, 1.0);
  CHECK_THROWS_AS(evaluate(Tensor({1, 2}), {1}, {1}, {1, 2}, {1, 1}, 2), std::invalid_argument);
  CHECK_THROWS_AS(evaluate(Tensor({1, 2}), {1}, {1}, {1}, {1}, 2), std::invalid_argument);
}

TEST_CASE("Evaluate.MatchesDefinitionOracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 60; ++trial) {
    std::uniform_int_distribution<int> nq(1, 20), ng(1, 100);
    auto in = random_instance(rng, nq(rng), ng(rng), 6, 3, trial % 2 == 1);
    const auto ref = oracle::retrieval(rows(in.dist), in.qp, in.qc, in.gp, in.gc, 10);
    if (ref.valid_queries == 0) {
      CHECK_THROWS_AS(evaluate(in.dist, in.qp, in.qc, in.gp, in.gc, 10), std::invalid_argument);
      continue;
    }
    const auto r = evaluate(in.dist, in.qp, in.qc, in.gp, in.gc, 10);
    CHECK_EQ(r.evaluated_queries, ref.valid_queries);
    CHECK_NEAR(r.map, ref.map, 1e-9);
    for (int k = 0; k < 10; ++k) CHECK_NEAR(r.cmc[k], ref.cmc[k], 1e-9);
    for (std::size_t k = 1; k < r.cmc.size(); ++k) CHECK_GE(r.cmc[k], r.cmc[k - 1]);
    for (real ap : r.ap) CHECK_LE(ap, 1.0);
  }
}

TEST_CASE("Evaluate.RankInvariantUnderMonotoneMaps") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    auto in = random_instance(rng, 12, 60, 5, 3, false);
    const auto base = evaluate(in.dist, in.qp, in.qc, in.gp, in.gc, 20);
    Tensor warped = in.dist;
    for (auto& v : warped.storage()) v = std::exp(3 * v) + v * v * v;
    const auto r = evaluate(warped, in.qp, in.qc, in.gp, in.gc, 20);
    CHECK_EQ(r.map, base.map);
    CHECK(r.cmc == base.cmc);
  }
}

TEST_CASE("Evaluate.DuplicatingAPositiveNeverLowersCmc") {
  std::mt19937_64 rng(23);
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    auto in = random_instance(rng, 1, 30, 4, 3, trial % 2 == 1);
    std::vector<int> positives;
    for (int j = 0; j < 30; ++j)
      if (in.gp[j] == in.qp[0] && in.gc[j] != in.qc[0]) positives.push_back(j);
    if (positives.empty()) continue;
    const auto base = evaluate(in.dist, in.qp, in.qc, in.gp, in.gc, 31);
    std::uniform_int_distribution<std::size_t> pick(0, positives.size() - 1);
    const int j = positives[pick(rng)];
    Tensor d({1, 31});
    for (int k = 0; k < 30; ++k) d[k] = in.dist[k];
    d[30] = in.dist[j];
    auto gp = in.gp, gc = in.gc;
    gp.push_back(in.gp[j]);
    gc.push_back(in.gc[j]);
    const auto r = evaluate(d, in.qp, in.qc, gp, gc, 31);
    for (int k = 0; k < 31; ++k) CHECK_GE(r.cmc[k], base.cmc[k]);
    ++checked;
  }
  CHECK_GT(checked, 20);
}

TEST_CASE("Evaluate.RandomRankingNearAnalyticExpectation") {
  // One positive among n valid entries: E[AP] = H_n / n.
  std::mt19937_64 rng(24);
  const int nq = 400, ng = 10;
  Tensor dist = Tensor::uniform({nq, ng}, rng, 0, 1);
  std::vector<int> qp(nq), qc(nq, 1), gp(ng), gc(ng, 2);
  for (int q = 0; q < nq; ++q) qp[q] = q % ng;
  for (int j = 0; j < ng; ++j) gp[j] = j;
  real harmonic = 0;
  for (int k = 1; k <= ng; ++k) harmonic += 1.0 / k;
  const auto r = evaluate(dist, qp, qc, gp, gc, ng);
  CHECK_NEAR(r.map, harmonic / ng, 0.1);
  CHECK_NEAR(r.rank(1), 1.0 / ng, 0.1);
}

TEST_CASE("Distance.CasesAndLoopOracle") {
  Tensor a({2, 3}, {1, 0, 0, 0, 1, 0});
  Tensor d = distance_matrix(a, a);
  CHECK_NEAR(d[0], 0, 1e-15);
  CHECK_NEAR(d[1], 2, 1e-15);
  CHECK_NEAR(d[3], 0, 1e-15);

  std::mt19937_64 rng(25);
  Tensor q = Tensor::randn({7, 11}, rng), g = Tensor::randn({13, 11}, rng);
  l2_normalize_rows(q);
  l2_normalize_rows(g);
  const Tensor dm = distance_matrix(q, g);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 13; ++j) {
      real s = 0;
      for (int k = 0; k < 11; ++k) s += (q[i * 11 + k] - g[j * 11 + k]) * (q[i * 11 + k] - g[j * 11 + k]);
      CHECK_NEAR(dm[i * 13 + j], s, 1e-12);
    }
  CHECK_THROWS_AS(distance_matrix(q, Tensor({2, 10})), std::invalid_argument);
}

TEST_CASE("Extract.FeaturesAreNormalisedDeterministicAndSkipBadFiles") {
  const auto root = fixture::temp_dir("extract");
  const auto idx = generate_toy(fixture::tiny_toy_spec(4, 6), root);
  FpbModel model(fixture::tiny_model(2));
  auto records = std::vector<ImageRecord>(idx.query.begin(), idx.query.end());
  records.push_back(records.front());
  std::ofstream(root + "/broken.png") << "not an image";
  records.push_back({root + "/broken.png", 9, 1, false});

  const auto fs1 = extract_features(model, records, 3);
  CHECK_EQ(fs1.failures.size(), 1u);
  REQUIRE_EQ(fs1.size(), records.size() - 1);
  const auto d = model.inference_dim();
  CHECK_EQ(d, 32 * 4 + 2 * 16);  // f_b width plus two parts
  CHECK_EQ(fs1.features.dim(1), d);
  for (std::size_t i = 0; i < fs1.size(); ++i) {
    real n = 0;
    for (std::int64_t k = 0; k < d; ++k) n += fs1.features[i * d + k] * fs1.features[i * d + k];
    CHECK_NEAR(n, 1.0, 1e-12);
  }
  const auto last = fs1.size() - 1;
  for (std::int64_t k = 0; k < d; ++k) CHECK_EQ(fs1.features[last * d + k], fs1.features[k]);

  const auto fs2 = extract_features(model, records, 5);
  CHECK_LE(max_abs_diff(fs1.features, fs2.features), 1e-12);
}

TEST_CASE("Report.FieldsAndActivationDump") {
  auto r = evaluate(Tensor({1, 3}, {0.1, 0.2, 0.3}), {1}, {1}, {2, 1, 1}, {2, 2, 3}, 3);
  const auto j = retrieval_report(r, true);
  CHECK(j.contains("mAP"));
  CHECK(j.at("cmc").contains("rank1"));
  CHECK_FALSE(j.at("cmc").contains("rank5"));
  CHECK_EQ(j.at("per_query_ap").size(), 1u);

  const auto root = fixture::temp_dir("activation");
  const auto idx = generate_toy(fixture::tiny_toy_spec(4, 6), root + "/data");
  FpbModel model(fixture::tiny_model(2));
  const auto files = dump_activation_maps(model, idx.query, 2, root + "/maps");
  CHECK_EQ(files.size(), 4u);
  for (const auto& f : files) CHECK(fs::exists(f));
}
