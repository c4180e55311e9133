#pragma once

// Training loop, embedding/evaluation helpers and the loss x margin
// benchmark grid.

#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tripletkit/checkpoint.hpp"
#include "tripletkit/datagen.hpp"
#include "tripletkit/diagnostics.hpp"
#include "tripletkit/evalkit.hpp"
#include "tripletkit/losses.hpp"
#include "tripletkit/optim.hpp"
#include "tripletkit/sampling.hpp"

namespace tripletkit {

struct OhmOptions {
  double sample_fraction = 0.25;
  std::int64_t refresh_every = 500;
  // Triplets mined per refresh; each iteration draws B of them.
  std::size_t pool_size = 0;  // 0 means 10 * B
};

struct RunConfig {
  LossKind loss = LossKind::batch_hard;
  MarginMode margin = MarginMode::soft();
  Metric metric = Metric::euclidean;
  std::size_t P = 8;
  std::size_t K = 4;
  std::size_t B = 11;
  std::vector<std::size_t> hidden_widths{64};
  std::size_t embedding_dim = 128;
  double slope = 0.3;
  // Multiplies every initial weight.
  double init_scale = 1.0;
  Schedule schedule{1e-3, 15000, 25000};
  std::uint64_t seed = 0;
  OhmOptions ohm;
  double lmnn_mu = 0.5;
  CollapseCriteria collapse{};
  bool abort_on_collapse = true;

  void validate() const {
    schedule.validate();
    if (uses_pk_batches(loss) && (P < 2 || K < 2)) throw ConfigError("PK losses need P >= 2 and K >= 2");
    if (!uses_pk_batches(loss) && B == 0) throw ConfigError("triplet losses need B >= 1");
    if (embedding_dim == 0) throw ConfigError("embedding dimension must be positive");
    for (auto w : hidden_widths)
      if (w == 0) throw ConfigError("hidden widths must be positive");
    if (!(slope >= 0.0 && slope < 1.0)) throw ConfigError("slope must lie in [0, 1)");
    if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
    if (!(lmnn_mu >= 0.0 && lmnn_mu <= 1.0)) throw ConfigError("lmnn mu must lie in [0, 1]");
    if (loss == LossKind::triplet_ohm) {
      if (!(ohm.sample_fraction > 0.0 && ohm.sample_fraction <= 1.0))
        throw ConfigError("OHM sample fraction must lie in (0, 1]");
      if (ohm.refresh_every < 1) throw ConfigError("OHM refresh interval must be >= 1");
    }
  }

  std::vector<std::size_t> layer_widths(std::size_t input_dim) const {
    std::vector<std::size_t> w{input_dim};
    w.insert(w.end(), hidden_widths.begin(), hidden_widths.end());
    w.push_back(embedding_dim);
    return w;
  }
};

// Incremental form of collapse_alarm for use inside the training loop.
class CollapseMonitor {
 public:
  explicit CollapseMonitor(CollapseCriteria c) : c_(c) {}

  bool update(const TrainLogRecord& rec) {
    if (!initial_) initial_ = rec.pair_dist_percentiles[2];
    if (rec.pair_dist_percentiles[2] < c_.relative_distance * *initial_ &&
        rec.active_fraction > c_.min_active_fraction)
      ++run_;
    else
      run_ = 0;
    return run_ >= c_.window;
  }

 private:
  CollapseCriteria c_;
  std::optional<double> initial_;
  std::size_t run_ = 0;
};

inline MlpParams init_model(const RunConfig& cfg, std::size_t input_dim) {
  const auto widths = cfg.layer_widths(input_dim);
  MlpParams p = init_params(std::span<const std::size_t>(widths), cfg.seed, cfg.slope);
  if (cfg.init_scale != 1.0)
    for (auto& l : p.layers)
      for (double& w : l.weight.data()) w *= cfg.init_scale;
  return p;
}

// For each batch row, the nearest other row of the same identity in raw
// feature space (ties to the lower index). Fixed with respect to the model.
inline std::vector<std::size_t> feature_target_neighbors(const Matrix& features, const BatchLabels& labels) {
  const std::size_t n = features.rows();
  std::vector<std::size_t> t(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::optional<std::size_t> best;
    double bd = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !labels.same(i, j)) continue;
      const double d = squared_distance(features.row(i), features.row(j));
      if (!best || d < bd) {
        best = j;
        bd = d;
      }
    }
    if (!best) throw ContractError("row without a same-identity partner");
    t[i] = *best;
  }
  return t;
}

struct Batch {
  std::vector<std::size_t> rows;
  BatchLabels labels;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // lifted only
};

inline LossReport compute_loss(const RunConfig& cfg, const Matrix& emb, const Matrix& features, const Batch& b) {
  switch (cfg.loss) {
    case LossKind::triplet:
    case LossKind::triplet_ohm:
      return classic_triplet_loss(emb, cfg.metric, cfg.margin);
    case LossKind::batch_hard:
      return batch_hard_loss(emb, b.labels, cfg.metric, cfg.margin, Averaging::all);
    case LossKind::batch_hard_nnz:
      return batch_hard_loss(emb, b.labels, cfg.metric, cfg.margin, Averaging::nonzero);
    case LossKind::batch_all:
      return batch_all_loss(emb, b.labels, cfg.metric, cfg.margin, Averaging::all);
    case LossKind::batch_all_nnz:
      return batch_all_loss(emb, b.labels, cfg.metric, cfg.margin, Averaging::nonzero);
    case LossKind::lifted:
      return lifted_loss(emb, b.pairs, cfg.metric, cfg.margin.margin, cfg.margin);
    case LossKind::lifted_gen:
      return lifted_generalized_loss(emb, b.labels, cfg.metric, cfg.margin.margin, cfg.margin);
    case LossKind::lmnn: {
      const auto targets = feature_target_neighbors(features, b.labels);
      return lmnn_loss(emb, b.labels, targets, cfg.lmnn_mu, cfg.margin, cfg.metric);
    }
  }
  throw ConfigError("unhandled loss kind");
}

struct TrainResult {
  MlpParams params;
  AdamState optim;
  TrainLog log;
  bool collapsed = false;
  std::int64_t iterations = 0;
};

// Produces the rows of each training batch according to the loss kind.
class BatchSource {
 public:
  BatchSource(const RunConfig& cfg, const LabeledDataset& ds) : cfg_(cfg), ds_(ds), rng_(cfg.seed ^ 0x9e3779b97f4a7c15ULL) {
    if (cfg_.loss == LossKind::lifted) {
      // Song-style batches: pairs of one identity, everything else negative.
      const auto eligible = pk_eligible_identities(ds_).size();
      lifted_p_ = std::min<std::size_t>(std::max<std::size_t>(cfg_.P * cfg_.K / 2, 2), eligible);
    }
  }

  Batch next(const MlpParams& params, std::int64_t t) {
    Batch b;
    switch (cfg_.loss) {
      case LossKind::triplet:
        b.rows = flatten(sample_random_triplets(ds_, cfg_.B, rng_));
        break;
      case LossKind::triplet_ohm: {
        if (pool_.empty() || t - mined_at_ >= cfg_.ohm.refresh_every) {
          const std::size_t pool = cfg_.ohm.pool_size ? cfg_.ohm.pool_size : 10 * cfg_.B;
          pool_ = mine_hard_offline(params, ds_, cfg_.ohm.sample_fraction, pool, cfg_.margin, rng_, cfg_.metric);
          mined_at_ = t;
        }
        TripletSet pick;
        const std::size_t take = std::min(cfg_.B, pool_.size());
        std::vector<std::size_t> idx(pool_.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (auto i : detail::sample_without_replacement(idx, take, rng_)) pick.push_back(pool_[i]);
        b.rows = flatten(pick);
        break;
      }
      case LossKind::lifted: {
        const auto pk = sample_pk_batch(ds_, lifted_p_, 2, rng_);
        b.rows = pk.rows;
        b.labels = pk.labels(ds_);
        for (std::size_t i = 0; i < lifted_p_; ++i) b.pairs.emplace_back(2 * i, 2 * i + 1);
        break;
      }
      default: {
        const auto pk = sample_pk_batch(ds_, cfg_.P, cfg_.K, rng_);
        b.rows = pk.rows;
        b.labels = pk.labels(ds_);
      }
    }
    if (b.labels.ids.empty())
      for (auto r : b.rows) b.labels.ids.push_back(ds_.pid(r));
    return b;
  }

 private:
  const RunConfig& cfg_;
  const LabeledDataset& ds_;
  Rng rng_;
  std::size_t lifted_p_ = 0;
  TripletSet pool_;
  std::int64_t mined_at_ = 0;
};

// Runs iterations 0 .. t1-1: sample, forward, loss, backward, Adam step with
// the scheduled learning rate (beta1 drops at t0), then a log record.
// Stops early when the collapse monitor fires and abort_on_collapse is set.
// on_report sees every iteration's full loss report (per-term values).
inline TrainResult train(const RunConfig& cfg, const LabeledDataset& ds,
                         const std::function<void(const TrainLogRecord&)>& on_record = {},
                         const std::function<void(std::int64_t, const LossReport&)>& on_report = {}) {
  cfg.validate();
  TrainResult res;
  res.params = init_model(cfg, ds.dim());
  res.optim = AdamState::for_params(res.params);
  BatchSource source(cfg, ds);
  CollapseMonitor monitor(cfg.collapse);
  ForwardCache cache;
  for (std::int64_t t = 0; t < cfg.schedule.t1; ++t) {
    res.optim = beta1_drop(std::move(res.optim), t, cfg.schedule);
    const double lr = lr_at(cfg.schedule, t);
    const Batch b = source.next(res.params, t);
    const Matrix x = gather_rows(ds.features(), b.rows);
    const Matrix emb = mlp_forward(res.params, x, cache);
    const LossReport rep = compute_loss(cfg, emb, x, b);
    if (on_report) on_report(t, rep);
    const GradBundle grads = mlp_backward(res.params, cache, rep.grad_embeddings);
    adam_step(res.params, grads, res.optim, lr);
    res.iterations = t + 1;

    auto rec = batch_stats(emb, rep, t, lr);
    if (on_record) on_record(rec);
    const bool alarm = monitor.update(rec);
    res.log.append(std::move(rec));
    if (alarm) {
      res.collapsed = true;
      if (cfg.abort_on_collapse) break;
    }
  }
  return res;
}

inline LabeledDataset embed(const MlpParams& params, const LabeledDataset& ds) {
  return ds.with_features(mlp_forward(params, ds.features()));
}

struct QueryGallery {
  LabeledDataset queries;
  LabeledDataset gallery;
};

// Queries are the first item of every (identity, camera) pair; the gallery
// is the whole set. Same-camera matches are filtered by the protocol.
inline QueryGallery make_query_gallery(const LabeledDataset& ds) {
  std::set<std::pair<int, int>> seen;
  std::vector<std::size_t> q;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (seen.insert({ds.pid(i), ds.cam(i)}).second) q.push_back(i);
  return {ds.subset(q), ds};
}

inline EvalResult evaluate_model(const MlpParams& params, const LabeledDataset& val,
                                 const EvalProtocol& protocol = {}) {
  const auto qg = make_query_gallery(val);
  return evaluate(embed(params, qg.queries), embed(params, qg.gallery), protocol);
}

// Desk-scale defaults for the loss comparison grid.
struct BenchConfig {
  std::vector<LossKind> losses{LossKind::triplet, LossKind::batch_hard};
  std::vector<MarginMode> margins{MarginMode::hard(0.2), MarginMode::soft()};
  RunConfig base = [] {
    RunConfig c;
    c.schedule = {3e-4, 1500, 2500};
    return c;
  }();
  GenSpec data = [] {
    GenSpec g;
    g.num_identities = 32;
    g.items_per_identity = 8;
    g.feature_dim = 16;
    g.outlier_rate = 0.05;
    g.identity_spread = 0.5;
    g.intra_spread = 0.25;
    g.nuisance_dims = 8;
    g.nuisance_spread = 1.0;
    g.num_families = 8;
    g.family_spread = 5.0;
    return g;
  }();
  double val_fraction = 0.3;
  std::uint64_t split_seed = 1;
};

struct BenchCell {
  LossKind loss = LossKind::batch_hard;
  MarginMode margin;
  double map = 0.0;
  double rank1 = 0.0;
  bool collapsed = false;
  bool failed = false;
  std::string error;
  std::int64_t iterations = 0;
};

struct BenchSplit {
  LabeledDataset train;
  LabeledDataset val;
};

inline BenchSplit bench_split(const BenchConfig& bc) {
  Rng rng(bc.split_seed);
  auto [train, val] = split_by_identity(generate(bc.data), bc.val_fraction, rng);
  return {std::move(train), std::move(val)};
}

inline BenchCell run_bench_cell(const BenchConfig& bc, const BenchSplit& split, LossKind loss,
                                const MarginMode& margin) {
  BenchCell cell;
  cell.loss = loss;
  cell.margin = margin;
  try {
    RunConfig cfg = bc.base;
    cfg.loss = loss;
    cfg.margin = margin;
    cfg.abort_on_collapse = true;
    const auto res = train(cfg, split.train);
    const auto ev = evaluate_model(res.params, split.val);
    cell.map = ev.map;
    cell.rank1 = ev.cmc_at(1);
    cell.collapsed = res.collapsed;
    cell.iterations = res.iterations;
  } catch (const std::exception& e) {
    cell.failed = true;
    cell.error = e.what();
  }
  return cell;
}

// Every loss x margin cell on one shared identity-disjoint split.
inline std::vector<BenchCell> run_bench(const BenchConfig& bc,
                                        const std::function<void(const BenchCell&)>& on_cell = {}) {
  const auto split = bench_split(bc);
  std::vector<BenchCell> cells;
  for (auto loss : bc.losses)
    for (const auto& margin : bc.margins) {
      cells.push_back(run_bench_cell(bc, split, loss, margin));
      if (on_cell) on_cell(cells.back());
    }
  return cells;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchCell>& cells) {
  os << "loss,margin,map,rank1,collapsed,failed,iterations\n";
  for (const auto& c : cells)
    os << to_string(c.loss) << ',' << to_string(c.margin) << ',' << format_double(c.map) << ','
       << format_double(c.rank1) << ',' << (c.collapsed ? 1 : 0) << ',' << (c.failed ? 1 : 0) << ','
       << c.iterations << '\n';
}

// Rows per loss, columns per margin: "mAP / rank-1", '*' marks a collapsed run.
inline std::string render_bench_table(const std::vector<BenchCell>& cells, const std::vector<LossKind>& losses,
                                      const std::vector<MarginMode>& margins) {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-16s", "loss");
  os << buf;
  for (const auto& m : margins) {
    std::snprintf(buf, sizeof(buf), " | %-16s", ("margin " + to_string(m)).c_str());
    os << buf;
  }
  os << '\n';
  for (auto l : losses) {
    std::snprintf(buf, sizeof(buf), "%-16s", std::string(to_string(l)).c_str());
    os << buf;
    for (const auto& m : margins) {
      std::string txt = "-";
      for (const auto& c : cells)
        if (c.loss == l && to_string(c.margin) == to_string(m)) {
          if (c.failed) {
            txt = "failed";
          } else {
            std::snprintf(buf, sizeof(buf), "%5.2f / %5.2f%s", 100.0 * c.map, 100.0 * c.rank1, c.collapsed ? "*" : "");
            txt = buf;
          }
        }
      std::snprintf(buf, sizeof(buf), " | %-16s", txt.c_str());
      os << buf;
    }
    os << '\n';
  }
  os << "(mAP / rank-1 in %, * = collapsed run)\n";
  os << "note: the embedding MLP has no batch normalization; rankings may differ from networks that use it\n";
  return os.str();
}

}  // namespace tripletkit
