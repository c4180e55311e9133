#include <gtest/gtest.h>

#include <map>
#include <set>

#include "tripletkit/datagen.hpp"
#include "tripletkit/sampling.hpp"

namespace tripletkit {
namespace {

// Identity i gets counts[i] items, 1-D feature = 10 * i + j.
LabeledDataset make_dataset(const std::vector<std::size_t>& counts) {
  std::vector<double> f;
  std::vector<int> pids, cams;
  std::vector<std::int64_t> ids;
  for (std::size_t i = 0; i < counts.size(); ++i)
    for (std::size_t j = 0; j < counts[i]; ++j) {
      f.push_back(10.0 * i + j);
      pids.push_back(static_cast<int>(i));
      cams.push_back(static_cast<int>(j % 2));
      ids.push_back(static_cast<std::int64_t>(ids.size()));
    }
  return {Matrix(f.size(), 1, f), pids, cams, ids};
}

void expect_pk_invariants(const LabeledDataset& ds, const PKBatch& b, std::size_t P, std::size_t K) {
  ASSERT_EQ(b.rows.size(), P * K);
  std::set<int> seen;
  for (std::size_t blk = 0; blk < P; ++blk) {
    const int pid = ds.pid(b.rows[blk * K]);
    EXPECT_TRUE(seen.insert(pid).second);
    EXPECT_EQ(pid, b.block_pids[blk]);
    for (std::size_t j = 0; j < K; ++j) EXPECT_EQ(ds.pid(b.rows[blk * K + j]), pid);
  }
  EXPECT_NO_THROW(b.labels(ds).validate_pk());
}

TEST(LabeledDataset, RejectsDuplicateItemIds) {
  EXPECT_THROW(LabeledDataset(Matrix(2, 1), {0, 1}, {0, 0}, {3, 3}), DataError);
  EXPECT_THROW(LabeledDataset(Matrix(2, 1), {0}, {0, 0}, {3, 4}), DimensionError);
}

TEST(PkBatch, EnoughItemsNeverReplicates) {
  const auto ds = make_dataset(std::vector<std::size_t>(10, 4));
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto b = sample_pk_batch(ds, 4, 4, rng);
    expect_pk_invariants(ds, b, 4, 4);
    EXPECT_EQ(std::set<std::size_t>(b.rows.begin(), b.rows.end()).size(), 16u);
  }
}

TEST(PkBatch, SmallIdentityUsesEveryItemThenReplicates) {
  auto counts = std::vector<std::size_t>(3, 6);
  counts.push_back(2);  // identity 3 has two items
  const auto ds = make_dataset(counts);
  Rng rng(2);
  int seen_small = 0;
  for (int i = 0; i < 200; ++i) {
    const auto b = sample_pk_batch(ds, 4, 4, rng);
    expect_pk_invariants(ds, b, 4, 4);
    for (std::size_t blk = 0; blk < 4; ++blk) {
      if (b.block_pids[blk] != 3) continue;
      ++seen_small;
      std::set<std::size_t> distinct(b.rows.begin() + blk * 4, b.rows.begin() + blk * 4 + 4);
      EXPECT_EQ(distinct.size(), 2u);
    }
  }
  EXPECT_GT(seen_small, 0);
}

TEST(PkBatch, ErrorsAndSingletonExclusion) {
  const auto ds = make_dataset({4, 4, 1});
  Rng rng(3);
  EXPECT_THROW(sample_pk_batch(ds, 3, 2, rng), SamplingError);  // identity 2 is not eligible
  EXPECT_THROW(sample_pk_batch(ds, 1, 2, rng), ConfigError);
  EXPECT_THROW(sample_pk_batch(ds, 2, 1, rng), ConfigError);
  for (int i = 0; i < 50; ++i) {
    const auto b = sample_pk_batch(ds, 2, 2, rng);
    for (auto r : b.rows) EXPECT_NE(ds.pid(r), 2);
  }
}

TEST(PkBatch, DeterministicGivenSeed) {
  const auto ds = make_dataset(std::vector<std::size_t>(10, 5));
  Rng a(9), b(9);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_pk_batch(ds, 3, 4, a).rows, sample_pk_batch(ds, 3, 4, b).rows);
}

TEST(PkBatch, IdentitySelectionIsUniform) {
  // 10 identities, P = 3: every identity is drawn with probability 0.3.
  const auto ds = make_dataset(std::vector<std::size_t>(10, 4));
  Rng rng(4);
  const int draws = 10000;
  std::map<int, int> counts;
  for (int i = 0; i < draws; ++i)
    for (int pid : sample_pk_batch(ds, 3, 2, rng).block_pids) ++counts[pid];
  const double p = 0.3, mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
  for (const auto& [pid, c] : counts) EXPECT_NEAR(c, mean, 3 * sigma) << pid;
}

TEST(RandomTriplets, SatisfyLabelConstraint) {
  const auto ds = make_dataset({2, 2});
  Rng rng(5);
  for (const auto& t : sample_random_triplets(ds, 200, rng)) EXPECT_TRUE(is_valid_triplet(ds, t));
}

TEST(RandomTriplets, CountAndSingletonAnchors) {
  const auto ds = make_dataset({5, 1, 3, 4});
  Rng rng(6);
  const auto ts = sample_random_triplets(ds, 42, rng);
  EXPECT_EQ(ts.size(), 42u);
  EXPECT_EQ(flatten(ts).size(), 126u);
  for (const auto& t : ts) {
    EXPECT_TRUE(is_valid_triplet(ds, t));
    EXPECT_NE(ds.pid(t.anchor), 1);
  }
  EXPECT_THROW(sample_random_triplets(make_dataset({4}), 3, rng), SamplingError);
  EXPECT_THROW(sample_random_triplets(make_dataset({1, 1}), 3, rng), SamplingError);
}

TEST(RandomTriplets, PositiveIsUniformAmongOthers) {
  const auto ds = make_dataset({4, 4});
  Rng rng(7);
  std::map<std::pair<std::size_t, std::size_t>, int> hits;
  const auto ts = sample_random_triplets(ds, 40000, rng);
  for (const auto& t : ts) ++hits[{t.anchor, t.positive}];
  // 8 anchors x 3 positives, each ~1/24 of the draws.
  EXPECT_EQ(hits.size(), 24u);
  for (const auto& [k, c] : hits) EXPECT_NEAR(c, 40000.0 / 24, 3 * std::sqrt(40000.0 / 24));
}

// 1-D identity "network" so embedding equals the raw feature.
MlpParams identity_model(std::size_t dim) {
  MlpParams p;
  p.layers.push_back({Matrix::identity(dim), std::vector<double>(dim, 0.0)});
  return p;
}

TEST(OfflineHardMining, SeparatedModelStillReturnsB) {
  const auto ds = make_dataset(std::vector<std::size_t>(4, 3));
  Rng rng(8);
  MlpParams p = identity_model(1);
  p.layers[0].weight(0, 0) = 100.0;  // identities 1000 apart, items <= 200 apart
  const auto ts = mine_hard_offline_scored(p, ds, 1.0, 10, MarginMode::hard(0.2), rng);
  ASSERT_EQ(ts.size(), 10u);
  for (const auto& s : ts) {
    EXPECT_EQ(s.term, 0.0);
    EXPECT_TRUE(is_valid_triplet(ds, s.triplet));
  }
}

TEST(OfflineHardMining, FullFractionMatchesExhaustiveRanking) {
  GenSpec g;
  g.num_identities = 5;
  g.items_per_identity = 4;
  g.feature_dim = 3;
  g.seed = 3;
  const auto ds = generate(g);
  ASSERT_EQ(ds.size(), 20u);
  const auto model = init_params({3, 5, 2}, 4);
  Rng rng(9);
  const auto mined = mine_hard_offline_scored(model, ds, 1.0, 25, MarginMode::hard(0.5), rng);

  // Exhaustive ranking straight from the triplet definition.
  const Matrix e = mlp_forward(model, ds.features());
  std::vector<std::tuple<double, std::size_t, std::size_t, std::size_t>> all;
  for (std::size_t a = 0; a < 20; ++a)
    for (std::size_t p = 0; p < 20; ++p)
      for (std::size_t n = 0; n < 20; ++n) {
        if (p == a || ds.pid(p) != ds.pid(a) || ds.pid(n) == ds.pid(a)) continue;
        double dap = 0, dan = 0;
        for (std::size_t c = 0; c < 2; ++c) {
          dap += (e(a, c) - e(p, c)) * (e(a, c) - e(p, c));
          dan += (e(a, c) - e(n, c)) * (e(a, c) - e(n, c));
        }
        const double t = std::max(0.0, 0.5 + std::sqrt(dap) - std::sqrt(dan));
        all.emplace_back(-t, a, p, n);
      }
  std::sort(all.begin(), all.end());
  ASSERT_EQ(mined.size(), 25u);
  for (std::size_t i = 0; i < 25; ++i) {
    EXPECT_EQ(mined[i].triplet.anchor, std::get<1>(all[i]));
    EXPECT_EQ(mined[i].triplet.positive, std::get<2>(all[i]));
    EXPECT_EQ(mined[i].triplet.negative, std::get<3>(all[i]));
    EXPECT_NEAR(mined[i].term, -std::get<0>(all[i]), 1e-12);
  }
}

TEST(OfflineHardMining, PlantedImpostorRanksFirst) {
  // Identities at 0, 100, 200, 300; one item of identity 2 sits on top of
  // identity 0.
  std::vector<double> f{0, 1, 2, 100, 101, 102, 0.5, 201, 202, 300, 301, 302};
  std::vector<int> pids{0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3};
  std::vector<int> cams(12, 0);
  std::vector<std::int64_t> ids(12);
  std::iota(ids.begin(), ids.end(), 0);
  const LabeledDataset ds(Matrix(12, 1, f), pids, cams, ids);
  Rng rng(10);
  const auto top = mine_hard_offline(identity_model(1), ds, 1.0, 1, MarginMode::hard(0.2), rng);
  ASSERT_EQ(top.size(), 1u);
  const bool involves_impostor = top[0].anchor == 6 || top[0].positive == 6 || top[0].negative == 6;
  EXPECT_TRUE(involves_impostor);
  EXPECT_EQ(ds.pid(top[0].anchor), 2);
}

TEST(OfflineHardMining, DegenerateSubsetErrors) {
  const auto ds = make_dataset({6});
  Rng rng(11);
  EXPECT_THROW(mine_hard_offline(identity_model(1), ds, 1.0, 3, MarginMode::hard(0.2), rng), SamplingError);
  EXPECT_THROW(mine_hard_offline(identity_model(1), ds, 0.0, 3, MarginMode::hard(0.2), rng), ConfigError);
}

TEST(IdentitySplit, DisjointAndComplete) {
  const auto ds = make_dataset(std::vector<std::size_t>(10, 3));
  Rng rng(12);
  const auto [a, b] = split_by_identity(ds, 0.3, rng);
  EXPECT_EQ(a.size() + b.size(), ds.size());
  EXPECT_EQ(b.num_identities(), 3u);
  for (int pid : b.identities()) EXPECT_EQ(a.rows_by_pid().count(pid), 0u);
}

}  // namespace
}  // namespace tripletkit
