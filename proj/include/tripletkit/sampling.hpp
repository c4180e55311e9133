#pragma once

// PK batch construction, uniform triplet sampling and offline hard mining.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <tuple>
#include <vector>

#include "tripletkit/dataset.hpp"
#include "tripletkit/losses.hpp"
#include "tripletkit/numcore.hpp"

namespace tripletkit {

using Rng = std::mt19937_64;

namespace detail {

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// First k entries of a uniformly random permutation of v.
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> v, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) std::swap(v[i], v[i + uniform_index(rng, v.size() - i)]);
  v.resize(k);
  return v;
}

}  // namespace detail

// P identity blocks of K dataset rows each, block-contiguous.
struct PKBatch {
  std::vector<std::size_t> rows;
  std::vector<int> block_pids;
  std::size_t p = 0;
  std::size_t k = 0;

  std::size_t size() const { return rows.size(); }

  BatchLabels labels(const LabeledDataset& ds) const {
    BatchLabels l;
    l.ids.reserve(rows.size());
    for (auto r : rows) l.ids.push_back(ds.pid(r));
    return l;
  }
};

// Identities with at least two items, the only ones usable as PK blocks.
inline std::vector<int> pk_eligible_identities(const LabeledDataset& ds) {
  std::vector<int> out;
  for (const auto& [pid, rows] : ds.rows_by_pid())
    if (rows.size() >= 2) out.push_back(pid);
  return out;
}

// Identities are drawn uniformly without replacement. Within an identity,
// items are drawn without replacement; identities with fewer than K items
// contribute every item once and fill the block by uniform resampling.
inline PKBatch sample_pk_batch(const LabeledDataset& ds, std::size_t P, std::size_t K, Rng& rng) {
  if (P < 2 || K < 2) throw ConfigError("PK sampling needs P >= 2 and K >= 2");
  const auto eligible = pk_eligible_identities(ds);
  if (eligible.size() < P)
    throw SamplingError("dataset has " + std::to_string(eligible.size()) +
                        " identities with >= 2 items, need P = " + std::to_string(P));
  PKBatch b;
  b.p = P;
  b.k = K;
  b.block_pids = detail::sample_without_replacement(eligible, P, rng);
  b.rows.reserve(P * K);
  for (int pid : b.block_pids) {
    const auto& items = ds.rows_of(pid);
    if (items.size() >= K) {
      auto pick = detail::sample_without_replacement(items, K, rng);
      b.rows.insert(b.rows.end(), pick.begin(), pick.end());
    } else {
      auto all = detail::sample_without_replacement(items, items.size(), rng);
      b.rows.insert(b.rows.end(), all.begin(), all.end());
      for (std::size_t extra = items.size(); extra < K; ++extra)
        b.rows.push_back(items[detail::uniform_index(rng, items.size())]);
    }
  }
  return b;
}

struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

using TripletSet = std::vector<Triplet>;

// Dataset rows in (a, p, n) order, ready for classic_triplet_loss.
inline std::vector<std::size_t> flatten(const TripletSet& ts) {
  std::vector<std::size_t> rows;
  rows.reserve(3 * ts.size());
  for (const auto& t : ts) {
    rows.push_back(t.anchor);
    rows.push_back(t.positive);
    rows.push_back(t.negative);
  }
  return rows;
}

inline bool is_valid_triplet(const LabeledDataset& ds, const Triplet& t) {
  return t.anchor != t.positive && ds.pid(t.anchor) == ds.pid(t.positive) &&
         ds.pid(t.anchor) != ds.pid(t.negative);
}

// Anchors are drawn uniformly and redrawn while they have no positive.
inline TripletSet sample_random_triplets(const LabeledDataset& ds, std::size_t B, Rng& rng) {
  if (ds.num_identities() < 2) throw SamplingError("random triplets need at least two identities");
  if (pk_eligible_identities(ds).empty())
    throw SamplingError("random triplets need an identity with at least two items");
  TripletSet out;
  out.reserve(B);
  const std::size_t n = ds.size();
  while (out.size() < B) {
    const std::size_t a = detail::uniform_index(rng, n);
    const auto& same = ds.rows_of(ds.pid(a));
    if (same.size() < 2) continue;
    // Uniform over the other same.size() - 1 items of the identity.
    const auto a_pos = static_cast<std::size_t>(std::lower_bound(same.begin(), same.end(), a) - same.begin());
    const std::size_t k = detail::uniform_index(rng, same.size() - 1);
    const std::size_t p = same[k >= a_pos ? k + 1 : k];
    const std::size_t num_neg = n - same.size();
    std::size_t q = detail::uniform_index(rng, num_neg);
    // q-th row (in row order) whose identity differs from the anchor's.
    std::size_t seen = 0;
    std::size_t neg = 0;
    for (std::size_t r = 0; r < n; ++r) {
      if (ds.pid(r) == ds.pid(a)) continue;
      if (seen++ == q) {
        neg = r;
        break;
      }
    }
    out.push_back({a, p, neg});
  }
  return out;
}

struct ScoredTriplet {
  Triplet triplet;
  double term = 0.0;
};

namespace detail {

inline bool subset_minable(const LabeledDataset& ds, std::span<const std::size_t> rows) {
  std::map<int, std::size_t> counts;
  for (auto r : rows) ++counts[ds.pid(r)];
  if (counts.size() < 2) return false;
  for (const auto& [pid, c] : counts)
    if (c >= 2) return true;
  return false;
}

}  // namespace detail

// Embeds a uniformly drawn fraction of the dataset and returns the B valid
// triplets with the largest loss terms, descending, ties by (a, p, n) index.
// Returns fewer than B only if the subset has fewer valid triplets.
inline std::vector<ScoredTriplet> mine_hard_offline_scored(const MlpParams& model, const LabeledDataset& ds,
                                                           double sample_fraction, std::size_t B,
                                                           const MarginMode& mode, Rng& rng,
                                                           Metric metric = Metric::euclidean) {
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0))
    throw ConfigError("OHM sample fraction must lie in (0, 1]");
  const std::size_t n = ds.size();
  const auto m = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(sample_fraction * static_cast<double>(n))), std::min<std::size_t>(n, 3), n);

  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  std::vector<std::size_t> rows;
  for (int attempt = 0;; ++attempt) {
    rows = detail::sample_without_replacement(all, m, rng);
    std::sort(rows.begin(), rows.end());
    if (detail::subset_minable(ds, rows)) break;
    if (attempt >= 1) throw SamplingError("OHM subset has no valid triplet after resampling");
  }

  const Matrix emb = mlp_forward(model, gather_rows(ds.features(), rows));
  const DistanceMatrix d = pairwise_distances(emb, metric);
  std::vector<ScoredTriplet> cand;
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t p = 0; p < m; ++p) {
      if (p == a || ds.pid(rows[a]) != ds.pid(rows[p])) continue;
      for (std::size_t q = 0; q < m; ++q) {
        if (ds.pid(rows[a]) == ds.pid(rows[q])) continue;
        cand.push_back({{rows[a], rows[p], rows[q]}, margin_apply(d(a, p) - d(a, q), mode)});
      }
    }
  auto better = [](const ScoredTriplet& x, const ScoredTriplet& y) {
    if (x.term != y.term) return x.term > y.term;
    return std::tie(x.triplet.anchor, x.triplet.positive, x.triplet.negative) <
           std::tie(y.triplet.anchor, y.triplet.positive, y.triplet.negative);
  };
  const std::size_t keep = std::min(B, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), better);
  cand.resize(keep);
  return cand;
}

inline TripletSet mine_hard_offline(const MlpParams& model, const LabeledDataset& ds, double sample_fraction,
                                    std::size_t B, const MarginMode& mode, Rng& rng,
                                    Metric metric = Metric::euclidean) {
  TripletSet out;
  for (const auto& s : mine_hard_offline_scored(model, ds, sample_fraction, B, mode, rng, metric))
    out.push_back(s.triplet);
  return out;
}

// Splits identities into two disjoint groups; the second gets
// round(holdout_fraction * identities) identities, at least one.
inline std::pair<LabeledDataset, LabeledDataset> split_by_identity(const LabeledDataset& ds, double holdout_fraction,
                                                                   Rng& rng) {
  auto ids = ds.identities();
  if (ids.size() < 2) throw SamplingError("identity split needs at least two identities");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw ConfigError("holdout fraction must lie in (0, 1)");
  auto held = static_cast<std::size_t>(std::lround(holdout_fraction * static_cast<double>(ids.size())));
  held = std::clamp<std::size_t>(held, 1, ids.size() - 1);
  const auto pick = detail::sample_without_replacement(ids, held, rng);
  std::set<int> held_set(pick.begin(), pick.end());
  std::vector<std::size_t> a, b;
  for (std::size_t i = 0; i < ds.size(); ++i) (held_set.count(ds.pid(i)) ? b : a).push_back(i);
  return {ds.subset(a), ds.subset(b)};
}

}  // namespace tripletkit
