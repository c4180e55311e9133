#pragma once

// Pairwise distances, margin functions, and the triplet-family losses with
// analytic gradients with respect to the embedding batch.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tripletkit/numcore.hpp"

namespace tripletkit {

// Terms at or below this value count as inactive.
inline constexpr double kActiveThreshold = 1e-5;

enum class Metric { euclidean, squared_euclidean };

inline std::string_view to_string(Metric m) {
  return m == Metric::euclidean ? "euclidean" : "squared_euclidean";
}

inline Metric parse_metric(std::string_view s) {
  if (s == "euclidean") return Metric::euclidean;
  if (s == "squared" || s == "squared_euclidean" || s == "sqeuclidean") return Metric::squared_euclidean;
  throw ConfigError("unknown metric '" + std::string(s) + "'");
}

struct DistanceMatrix {
  Matrix values;
  Metric metric = Metric::euclidean;

  std::size_t size() const { return values.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return values(i, j); }
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

inline double distance(std::span<const double> a, std::span<const double> b, Metric metric) {
  const double sq = squared_distance(a, b);
  if (metric == Metric::squared_euclidean) return sq;
  // Clamped so coincident points keep a finite gradient.
  return std::sqrt(std::max(sq, 1e-24));
}

inline DistanceMatrix pairwise_distances(const Matrix& embeddings, Metric metric) {
  const std::size_t n = embeddings.rows();
  if (n == 0) throw ContractError("pairwise_distances needs at least one row");
  DistanceMatrix d{Matrix(n, n), metric};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = distance(embeddings.row(i), embeddings.row(j), metric);
      d.values(i, j) = v;
      d.values(j, i) = v;
    }
  return d;
}

// grad += coeff * dD(i,j)/d(embeddings), where dist is D(i,j).
inline void accumulate_distance_grad(const Matrix& emb, std::size_t i, std::size_t j, double dist,
                                     Metric metric, double coeff, Matrix& grad) {
  if (coeff == 0.0 || i == j) return;
  const double scale = metric == Metric::squared_euclidean ? 2.0 * coeff : coeff / std::max(dist, 1e-12);
  auto xi = emb.row(i);
  auto xj = emb.row(j);
  auto gi = grad.row(i);
  auto gj = grad.row(j);
  for (std::size_t k = 0; k < xi.size(); ++k) {
    const double v = scale * (xi[k] - xj[k]);
    gi[k] += v;
    gj[k] -= v;
  }
}

// Backpropagates dL/dD (an N x N coefficient matrix, not necessarily
// symmetric) onto the embeddings.
inline Matrix backprop_distances(const Matrix& emb, const DistanceMatrix& dist, const Matrix& coeff) {
  const std::size_t n = emb.rows();
  Matrix grad(n, emb.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double c = coeff(i, j) + coeff(j, i);
      accumulate_distance_grad(emb, i, j, dist(i, j), dist.metric, c, grad);
    }
  return grad;
}

struct MarginMode {
  enum class Kind { hard, soft };
  Kind kind = Kind::hard;
  double margin = 0.0;

  static MarginMode hard(double m) {
    if (!(m >= 0.0)) throw ConfigError("hard margin must be nonnegative");
    return {Kind::hard, m};
  }
  static MarginMode soft() { return {Kind::soft, 0.0}; }

  bool is_soft() const { return kind == Kind::soft; }
};

inline std::string to_string(const MarginMode& m) {
  if (m.is_soft()) return "soft";
  std::string s = std::to_string(m.margin);
  s.erase(s.find_last_not_of('0') + 1);
  if (!s.empty() && s.back() == '.') s.push_back('0');
  return s;
}

inline MarginMode parse_margin(std::string_view s) {
  if (s == "soft") return MarginMode::soft();
  try {
    std::size_t pos = 0;
    const double m = std::stod(std::string(s), &pos);
    if (pos != s.size()) throw ConfigError("");
    return MarginMode::hard(m);
  } catch (const std::exception&) {
    throw ConfigError("margin must be 'soft' or a nonnegative number, got '" + std::string(s) + "'");
  }
}

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// hard(m): [m + x]_+ ; soft: ln(1 + e^x).
inline double margin_apply(double x, const MarginMode& mode) {
  return mode.is_soft() ? softplus(x + mode.margin) : std::max(0.0, mode.margin + x);
}

// Derivative of margin_apply with respect to x; 0 on the hinge's flat side
// including the kink.
inline double margin_slope(double x, const MarginMode& mode) {
  return mode.is_soft() ? sigmoid(x + mode.margin) : (mode.margin + x > 0.0 ? 1.0 : 0.0);
}

struct PkShape {
  std::size_t p = 0;
  std::size_t k = 0;
};

struct BatchLabels {
  std::vector<int> ids;

  std::size_t size() const { return ids.size(); }
  bool same(std::size_t i, std::size_t j) const { return ids[i] == ids[j]; }

  // Throws unless the labels form P identities of exactly K rows each, P, K >= 2.
  PkShape validate_pk() const {
    std::map<int, std::size_t> counts;
    for (int id : ids) ++counts[id];
    if (counts.empty()) throw ContractError("empty batch");
    const std::size_t k = counts.begin()->second;
    for (const auto& [id, c] : counts)
      if (c != k) throw ContractError("labels are not a PK batch: identity " + std::to_string(id) +
                                      " has " + std::to_string(c) + " rows, expected " + std::to_string(k));
    if (k < 2) throw ContractError("PK batch needs K >= 2 so every anchor has a positive");
    if (counts.size() < 2) throw ContractError("PK batch needs P >= 2 so every anchor has a negative");
    return {counts.size(), k};
  }
};

struct LossReport {
  double loss = 0.0;
  Matrix grad_embeddings;
  std::size_t num_terms = 0;
  std::size_t num_active = 0;
  std::vector<double> per_term;

  double active_fraction() const {
    return num_terms == 0 ? 0.0 : static_cast<double>(num_active) / static_cast<double>(num_terms);
  }
};

enum class Averaging { all, nonzero };

namespace detail {

inline std::size_t count_active(std::span<const double> terms) {
  return static_cast<std::size_t>(
      std::count_if(terms.begin(), terms.end(), [](double t) { return t > kActiveThreshold; }));
}

inline double divisor_for(Averaging avg, std::size_t num_terms, std::size_t num_active) {
  const std::size_t d = avg == Averaging::all ? num_terms : num_active;
  return static_cast<double>(d);
}

inline void check_rows(const Matrix& emb, const BatchLabels& labels) {
  if (emb.rows() != labels.size())
    throw DimensionError("embedding rows (" + std::to_string(emb.rows()) + ") != labels (" +
                         std::to_string(labels.size()) + ")");
}

// Numerically stable log(sum(exp(v))) and its softmax weights.
inline double log_sum_exp(std::span<const double> v, std::vector<double>* weights = nullptr) {
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  if (weights) {
    weights->resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) (*weights)[i] = std::exp(v[i] - mx) / s;
  }
  return mx + std::log(s);
}

}  // namespace detail

// Per anchor: hardest positive minus hardest negative through the margin.
// Ties resolve to the lowest row index.
inline LossReport batch_hard_loss(const Matrix& emb, const BatchLabels& labels, Metric metric,
                                  const MarginMode& mode, Averaging avg = Averaging::all) {
  detail::check_rows(emb, labels);
  labels.validate_pk();
  const std::size_t n = emb.rows();
  const DistanceMatrix d = pairwise_distances(emb, metric);

  LossReport r;
  r.num_terms = n;
  r.per_term.resize(n);
  std::vector<std::size_t> hp(n), hn(n);
  std::vector<double> x(n);
  for (std::size_t a = 0; a < n; ++a) {
    std::optional<std::size_t> pos, neg;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels.same(a, j)) {
        if (!pos || d(a, j) > d(a, *pos)) pos = j;
      } else {
        if (!neg || d(a, j) < d(a, *neg)) neg = j;
      }
    }
    hp[a] = *pos;
    hn[a] = *neg;
    x[a] = d(a, *pos) - d(a, *neg);
    r.per_term[a] = margin_apply(x[a], mode);
  }
  r.num_active = detail::count_active(r.per_term);
  const double div = detail::divisor_for(avg, r.num_terms, r.num_active);
  Matrix coeff(n, n);
  if (div > 0.0) {
    double sum = 0.0;
    for (double t : r.per_term) sum += t;
    r.loss = sum / div;
    for (std::size_t a = 0; a < n; ++a) {
      const double s = margin_slope(x[a], mode) / div;
      coeff(a, hp[a]) += s;
      coeff(a, hn[a]) -= s;
    }
  }
  r.grad_embeddings = backprop_distances(emb, d, coeff);
  return r;
}

// Every valid (anchor, positive, negative) triplet of the PK batch.
inline LossReport batch_all_loss(const Matrix& emb, const BatchLabels& labels, Metric metric,
                                 const MarginMode& mode, Averaging avg = Averaging::all) {
  detail::check_rows(emb, labels);
  labels.validate_pk();
  const std::size_t n = emb.rows();
  const DistanceMatrix d = pairwise_distances(emb, metric);

  LossReport r;
  struct Trip {
    std::size_t a, p, n;
    double x;
  };
  std::vector<Trip> trips;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || !labels.same(a, p)) continue;
      for (std::size_t q = 0; q < n; ++q) {
        if (labels.same(a, q)) continue;
        const double xv = d(a, p) - d(a, q);
        trips.push_back({a, p, q, xv});
        r.per_term.push_back(margin_apply(xv, mode));
      }
    }
  r.num_terms = trips.size();
  r.num_active = detail::count_active(r.per_term);
  const double div = detail::divisor_for(avg, r.num_terms, r.num_active);
  Matrix coeff(n, n);
  if (div > 0.0) {
    double sum = 0.0;
    for (double t : r.per_term) sum += t;
    r.loss = sum / div;
    for (const auto& t : trips) {
      const double s = margin_slope(t.x, mode) / div;
      coeff(t.a, t.p) += s;
      coeff(t.a, t.n) -= s;
    }
  }
  r.grad_embeddings = backprop_distances(emb, d, coeff);
  return r;
}

// Rows are consecutive (anchor, positive, negative) triples.
inline LossReport classic_triplet_loss(const Matrix& emb, Metric metric, const MarginMode& mode) {
  if (emb.rows() == 0 || emb.rows() % 3 != 0)
    throw ContractError("classic triplet batch needs a positive multiple of 3 rows, got " +
                        std::to_string(emb.rows()));
  const std::size_t b = emb.rows() / 3;
  LossReport r;
  r.num_terms = b;
  r.per_term.resize(b);
  r.grad_embeddings = Matrix(emb.rows(), emb.cols());
  for (std::size_t t = 0; t < b; ++t) {
    const std::size_t a = 3 * t, p = a + 1, q = a + 2;
    const double dap = distance(emb.row(a), emb.row(p), metric);
    const double dan = distance(emb.row(a), emb.row(q), metric);
    const double x = dap - dan;
    r.per_term[t] = margin_apply(x, mode);
    r.loss += r.per_term[t];
    const double s = margin_slope(x, mode) / static_cast<double>(b);
    accumulate_distance_grad(emb, a, p, dap, metric, s, r.grad_embeddings);
    accumulate_distance_grad(emb, a, q, dan, metric, -s, r.grad_embeddings);
  }
  r.loss /= static_cast<double>(b);
  r.num_active = detail::count_active(r.per_term);
  return r;
}

// (1 - mu) * mean pull distance to target neighbours + mu * mean push term
// over all differently labelled (anchor, negative) pairs.
inline LossReport lmnn_loss(const Matrix& emb, const BatchLabels& labels,
                            std::span<const std::size_t> target_neighbors, double mu,
                            const MarginMode& mode, Metric metric = Metric::euclidean) {
  detail::check_rows(emb, labels);
  const std::size_t n = emb.rows();
  if (target_neighbors.size() != n) throw ContractError("lmnn needs one target neighbour per row");
  if (!(mu >= 0.0 && mu <= 1.0)) throw ContractError("lmnn mu must lie in [0, 1]");
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t t = target_neighbors[i];
    if (t >= n || t == i || !labels.same(i, t))
      throw ContractError("target neighbour of row " + std::to_string(i) + " is not a same-class row");
  }
  const DistanceMatrix d = pairwise_distances(emb, metric);

  LossReport r;
  Matrix coeff(n, n);
  double pull = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = d(i, target_neighbors[i]);
    r.per_term.push_back(v);
    pull += v;
  }
  const double pull_div = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) coeff(i, target_neighbors[i]) += (1.0 - mu) / pull_div;

  struct Pair {
    std::size_t a, q;
    double x;
  };
  std::vector<Pair> pairs;
  double push = 0.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t q = 0; q < n; ++q) {
      if (labels.same(a, q)) continue;
      const double x = d(a, target_neighbors[a]) - d(a, q);
      const double term = margin_apply(x, mode);
      pairs.push_back({a, q, x});
      r.per_term.push_back(term);
      push += term;
    }
  if (!pairs.empty()) {
    const double push_div = static_cast<double>(pairs.size());
    for (const auto& pr : pairs) {
      const double s = mu * margin_slope(pr.x, mode) / push_div;
      coeff(pr.a, target_neighbors[pr.a]) += s;
      coeff(pr.a, pr.q) -= s;
    }
    push /= push_div;
  }
  r.loss = (1.0 - mu) * pull / pull_div + mu * push;
  r.num_terms = r.per_term.size();
  r.num_active = detail::count_active(r.per_term);
  r.grad_embeddings = backprop_distances(emb, d, coeff);
  return r;
}

// Outer function of the lifted losses: a plain hinge in hard mode, softplus
// in soft mode. The margin lives inside the exponentials.
inline MarginMode lifted_outer(const MarginMode& mode) {
  return mode.is_soft() ? MarginMode::soft() : MarginMode::hard(0.0);
}

// One positive pair per term; every other row of the batch is a negative for
// both members of the pair.
inline LossReport lifted_loss(const Matrix& emb, std::span<const std::pair<std::size_t, std::size_t>> pairs,
                              Metric metric, double m, const MarginMode& mode) {
  const std::size_t n = emb.rows();
  if (pairs.empty()) throw ContractError("lifted loss needs at least one positive pair");
  if (n < 3) throw ContractError("lifted loss needs at least one negative in the batch");
  for (const auto& [a, p] : pairs)
    if (a >= n || p >= n || a == p) throw ContractError("invalid lifted pair");
  const DistanceMatrix d = pairwise_distances(emb, metric);
  const MarginMode outer = lifted_outer(mode);

  LossReport r;
  r.num_terms = pairs.size();
  Matrix coeff(n, n);
  const double inv_b = 1.0 / static_cast<double>(pairs.size());
  std::vector<double> expo, w;
  std::vector<std::pair<std::size_t, std::size_t>> who;
  for (const auto& [a, p] : pairs) {
    expo.clear();
    who.clear();
    for (std::size_t q = 0; q < n; ++q) {
      if (q == a || q == p) continue;
      expo.push_back(m - d(a, q));
      who.emplace_back(a, q);
      expo.push_back(m - d(p, q));
      who.emplace_back(p, q);
    }
    const double x = d(a, p) + detail::log_sum_exp(expo, &w);
    const double term = margin_apply(x, outer);
    r.per_term.push_back(term);
    r.loss += term * inv_b;
    const double s = margin_slope(x, outer) * inv_b;
    if (s == 0.0) continue;
    coeff(a, p) += s;
    for (std::size_t k = 0; k < who.size(); ++k) coeff(who[k].first, who[k].second) -= s * w[k];
  }
  r.num_active = detail::count_active(r.per_term);
  r.grad_embeddings = backprop_distances(emb, d, coeff);
  return r;
}

// PK generalisation: per anchor, log-sum-exp over all positives plus
// log-sum-exp of (m - D) over all negatives.
inline LossReport lifted_generalized_loss(const Matrix& emb, const BatchLabels& labels, Metric metric,
                                          double m, const MarginMode& mode) {
  detail::check_rows(emb, labels);
  labels.validate_pk();
  const std::size_t n = emb.rows();
  const DistanceMatrix d = pairwise_distances(emb, metric);
  const MarginMode outer = lifted_outer(mode);

  LossReport r;
  r.num_terms = n;
  Matrix coeff(n, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> pos, neg, wp, wn;
  std::vector<std::size_t> pos_idx, neg_idx;
  for (std::size_t a = 0; a < n; ++a) {
    pos.clear();
    neg.clear();
    pos_idx.clear();
    neg_idx.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels.same(a, j)) {
        pos.push_back(d(a, j));
        pos_idx.push_back(j);
      } else {
        neg.push_back(m - d(a, j));
        neg_idx.push_back(j);
      }
    }
    const double x = detail::log_sum_exp(pos, &wp) + detail::log_sum_exp(neg, &wn);
    const double term = margin_apply(x, outer);
    r.per_term.push_back(term);
    r.loss += term * inv_n;
    const double s = margin_slope(x, outer) * inv_n;
    if (s == 0.0) continue;
    for (std::size_t k = 0; k < pos_idx.size(); ++k) coeff(a, pos_idx[k]) += s * wp[k];
    for (std::size_t k = 0; k < neg_idx.size(); ++k) coeff(a, neg_idx[k]) -= s * wn[k];
  }
  r.num_active = detail::count_active(r.per_term);
  r.grad_embeddings = backprop_distances(emb, d, coeff);
  return r;
}

// Loss selection exposed on the command line.
enum class LossKind {
  triplet,
  triplet_ohm,
  batch_hard,
  batch_hard_nnz,
  batch_all,
  batch_all_nnz,
  lifted,
  lifted_gen,
  lmnn,
};

inline constexpr std::pair<LossKind, std::string_view> kLossNames[] = {
    {LossKind::triplet, "triplet"},       {LossKind::triplet_ohm, "triplet_ohm"},
    {LossKind::batch_hard, "batch_hard"}, {LossKind::batch_hard_nnz, "batch_hard_nnz"},
    {LossKind::batch_all, "batch_all"},   {LossKind::batch_all_nnz, "batch_all_nnz"},
    {LossKind::lifted, "lifted"},         {LossKind::lifted_gen, "lifted_gen"},
    {LossKind::lmnn, "lmnn"},
};

inline std::string_view to_string(LossKind k) {
  for (const auto& [kind, name] : kLossNames)
    if (kind == k) return name;
  return "?";
}

inline LossKind parse_loss(std::string_view s) {
  for (const auto& [kind, name] : kLossNames)
    if (name == s) return kind;
  throw ConfigError("unknown loss '" + std::string(s) + "'");
}

// Losses that consume PK batches rather than (a, p, n) triples.
inline bool uses_pk_batches(LossKind k) {
  return k != LossKind::triplet && k != LossKind::triplet_ohm;
}

}  // namespace tripletkit
