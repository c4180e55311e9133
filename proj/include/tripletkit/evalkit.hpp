#pragma once

// Retrieval evaluation: gallery ranking, average precision, CMC, multi-query
// pooling and distractor injection.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tripletkit/dataset.hpp"
#include "tripletkit/losses.hpp"

namespace tripletkit {

enum class QueryMode { single_query, multi_query };

struct EvalProtocol {
  QueryMode mode = QueryMode::single_query;
  // Drop gallery items sharing both identity and camera with the query.
  bool exclude_same_camera_same_id = true;
  std::vector<std::size_t> cmc_ranks{1, 5, 10};
  Metric metric = Metric::euclidean;

  void validate() const {
    if (cmc_ranks.empty()) throw ConfigError("protocol needs at least one CMC rank");
    for (std::size_t i = 0; i < cmc_ranks.size(); ++i) {
      if (cmc_ranks[i] < 1) throw ConfigError("CMC ranks must be >= 1");
      if (i > 0 && cmc_ranks[i] <= cmc_ranks[i - 1]) throw ConfigError("CMC ranks must be strictly ascending");
    }
  }
};

struct EvalResult {
  double map = 0.0;
  std::vector<std::pair<std::size_t, double>> cmc;  // (rank, fraction of queries)
  std::vector<double> per_query_ap;
  std::vector<std::size_t> first_match_rank;  // 1-based, per evaluated query
  std::size_t num_queries = 0;                // evaluated queries
  std::size_t num_skipped = 0;                // queries without any relevant item

  double cmc_at(std::size_t rank) const {
    for (const auto& [r, v] : cmc)
      if (r == rank) return v;
    throw ContractError("rank " + std::to_string(rank) + " was not requested");
  }
};

// Gallery indices by ascending distance; ties keep ascending index order.
inline std::vector<std::size_t> rank_gallery(std::span<const double> query, const Matrix& gallery,
                                             Metric metric = Metric::euclidean) {
  if (gallery.rows() == 0) throw ContractError("cannot rank an empty gallery");
  if (gallery.cols() != query.size()) throw DimensionError("query and gallery widths differ");
  std::vector<double> dist(gallery.rows());
  for (std::size_t i = 0; i < gallery.rows(); ++i) dist[i] = distance(query, gallery.row(i), metric);
  std::vector<std::size_t> order(gallery.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  return order;
}

// Mean of precision@k over the relevant positions k, divided by the total
// number of relevant items.
inline double average_precision(std::span<const std::uint8_t> relevance, std::size_t num_relevant_total) {
  if (num_relevant_total == 0) throw ContractError("average precision needs at least one relevant item");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < relevance.size(); ++i) {
    if (!relevance[i]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  if (hits > num_relevant_total) throw ContractError("more relevant hits than relevant items");
  return sum / static_cast<double>(num_relevant_total);
}

inline double average_precision(std::initializer_list<int> relevance, std::size_t num_relevant_total) {
  std::vector<std::uint8_t> v;
  for (int x : relevance) v.push_back(x != 0);
  return average_precision(std::span<const std::uint8_t>(v), num_relevant_total);
}

inline std::vector<double> combine_embeddings_mean(const Matrix& embeddings) {
  if (embeddings.rows() == 0) throw ContractError("cannot combine an empty set of embeddings");
  std::vector<double> out(embeddings.cols(), 0.0);
  for (std::size_t r = 0; r < embeddings.rows(); ++r)
    for (std::size_t c = 0; c < embeddings.cols(); ++c) out[c] += embeddings(r, c);
  for (double& v : out) v /= static_cast<double>(embeddings.rows());
  return out;
}

inline std::vector<double> combine_embeddings_max(const Matrix& embeddings) {
  if (embeddings.rows() == 0) throw ContractError("cannot combine an empty set of embeddings");
  auto first = embeddings.row(0);
  std::vector<double> out(first.begin(), first.end());
  for (std::size_t r = 1; r < embeddings.rows(); ++r)
    for (std::size_t c = 0; c < embeddings.cols(); ++c) out[c] = std::max(out[c], embeddings(r, c));
  return out;
}

enum class Pooling { mean, max };

// One pooled row per (identity, camera) group, in order of first appearance.
// The pooled item takes the id of the group's first item.
inline LabeledDataset pool_groups(const LabeledDataset& ds, Pooling pooling) {
  std::vector<std::pair<int, int>> order;
  std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto key = std::make_pair(ds.pid(i), ds.cam(i));
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(i);
  }
  Matrix pooled(order.size(), ds.dim());
  std::vector<int> pids, cams;
  std::vector<std::int64_t> ids;
  for (std::size_t g = 0; g < order.size(); ++g) {
    const auto& rows = groups[order[g]];
    const Matrix members = gather_rows(ds.features(), rows);
    const auto v = pooling == Pooling::mean ? combine_embeddings_mean(members) : combine_embeddings_max(members);
    std::copy(v.begin(), v.end(), pooled.row(g).begin());
    pids.push_back(order[g].first);
    cams.push_back(order[g].second);
    ids.push_back(ds.item_id(rows.front()));
  }
  return {std::move(pooled), std::move(pids), std::move(cams), std::move(ids)};
}

namespace detail {

struct QueryOutcome {
  bool skipped = true;
  double ap = 0.0;
  std::size_t first_rank = 0;
};

inline QueryOutcome evaluate_query(std::span<const double> q, int qpid, int qcam, const LabeledDataset& gallery,
                                   const EvalProtocol& protocol) {
  const auto order = rank_gallery(q, gallery.features(), protocol.metric);
  std::vector<std::uint8_t> rel;
  rel.reserve(order.size());
  std::size_t total = 0;
  for (auto g : order) {
    const bool same_id = gallery.pid(g) == qpid;
    if (protocol.exclude_same_camera_same_id && same_id && gallery.cam(g) == qcam) continue;
    rel.push_back(same_id ? 1 : 0);
    total += same_id ? 1 : 0;
  }
  QueryOutcome out;
  if (total == 0) return out;
  out.skipped = false;
  out.ap = average_precision(std::span<const std::uint8_t>(rel), total);
  out.first_rank = static_cast<std::size_t>(std::find(rel.begin(), rel.end(), 1) - rel.begin()) + 1;
  return out;
}

}  // namespace detail

// Queries are evaluated in index order; those with no relevant gallery item
// after filtering are counted in num_skipped and left out of mAP and CMC.
inline EvalResult evaluate(const LabeledDataset& queries, const LabeledDataset& gallery,
                           const EvalProtocol& protocol = {}) {
  protocol.validate();
  if (gallery.empty()) throw ContractError("empty gallery");
  if (!queries.empty() && queries.dim() != gallery.dim())
    throw DimensionError("query width " + std::to_string(queries.dim()) + " != gallery width " +
                         std::to_string(gallery.dim()));
  const LabeledDataset q =
      protocol.mode == QueryMode::multi_query ? pool_groups(queries, Pooling::mean) : queries;

  EvalResult r;
  std::vector<std::size_t> hits(protocol.cmc_ranks.size(), 0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto o = detail::evaluate_query(q.feature(i), q.pid(i), q.cam(i), gallery, protocol);
    if (o.skipped) {
      ++r.num_skipped;
      continue;
    }
    r.per_query_ap.push_back(o.ap);
    r.first_match_rank.push_back(o.first_rank);
    for (std::size_t k = 0; k < protocol.cmc_ranks.size(); ++k)
      if (o.first_rank <= protocol.cmc_ranks[k]) ++hits[k];
  }
  r.num_queries = r.per_query_ap.size();
  if (r.num_queries > 0) {
    double s = 0.0;
    for (double ap : r.per_query_ap) s += ap;
    r.map = s / static_cast<double>(r.num_queries);
  }
  for (std::size_t k = 0; k < protocol.cmc_ranks.size(); ++k)
    r.cmc.emplace_back(protocol.cmc_ranks[k],
                       r.num_queries ? static_cast<double>(hits[k]) / static_cast<double>(r.num_queries) : 0.0);
  return r;
}

enum class Placement { append, prepend };

// Gallery plus distractor rows. Distractor identities must not occur among
// the query identities.
inline LabeledDataset inject_distractors(const LabeledDataset& gallery, const LabeledDataset& distractors,
                                         const LabeledDataset& queries, Placement where = Placement::append) {
  if (distractors.empty()) return gallery;
  if (distractors.dim() != gallery.dim()) throw DimensionError("distractor width differs from gallery width");
  std::set<int> qids(queries.pids().begin(), queries.pids().end());
  for (int pid : distractors.pids())
    if (qids.count(pid)) throw ContractError("distractor identity " + std::to_string(pid) + " occurs among queries");

  const LabeledDataset& first = where == Placement::append ? gallery : distractors;
  const LabeledDataset& second = where == Placement::append ? distractors : gallery;
  std::vector<double> data(first.features().data());
  data.insert(data.end(), second.features().data().begin(), second.features().data().end());
  auto cat = [](const auto& x, const auto& y) {
    auto v = x;
    v.insert(v.end(), y.begin(), y.end());
    return v;
  };
  return {Matrix(first.size() + second.size(), gallery.dim(), std::move(data)), cat(first.pids(), second.pids()),
          cat(first.cams(), second.cams()), cat(first.item_ids(), second.item_ids())};
}

struct DistractorPoint {
  std::size_t num_distractors = 0;
  double map = 0.0;
  double rank1 = 0.0;
};

// mAP as distractors are added. Each count uses a prefix of one shuffled
// distractor order, so larger counts are supersets of smaller ones.
template <typename Rng>
std::vector<DistractorPoint> distractor_curve(const LabeledDataset& queries, const LabeledDataset& gallery,
                                              const LabeledDataset& pool, std::span<const std::size_t> counts,
                                              const EvalProtocol& protocol, Rng& rng) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<DistractorPoint> curve;
  EvalProtocol p = protocol;
  if (std::find(p.cmc_ranks.begin(), p.cmc_ranks.end(), 1) == p.cmc_ranks.end())
    p.cmc_ranks.insert(p.cmc_ranks.begin(), 1);
  for (std::size_t c : counts) {
    if (c > pool.size()) throw ContractError("not enough distractors for count " + std::to_string(c));
    const std::span<const std::size_t> pick(order.data(), c);
    const auto g = inject_distractors(gallery, pool.subset(pick), queries);
    const auto res = evaluate(queries, g, p);
    curve.push_back({c, res.map, res.cmc_at(1)});
  }
  return curve;
}

}  // namespace tripletkit
