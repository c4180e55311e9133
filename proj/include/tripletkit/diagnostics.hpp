#pragma once

// Per-iteration training statistics and a collapse detector.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <span>
#include <vector>

#include "tripletkit/csv_io.hpp"
#include "tripletkit/losses.hpp"

namespace tripletkit {

inline constexpr std::array<double, 5> kLogPercentiles{0.0, 5.0, 50.0, 95.0, 100.0};

// Linear interpolation between closest ranks (position q/100 * (n - 1)).
inline double percentile(std::span<const double> sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline std::array<double, 5> log_percentiles(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  std::array<double, 5> out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = percentile(values, kLogPercentiles[i]);
  return out;
}

struct TrainLogRecord {
  std::int64_t iteration = 0;
  double loss_mean = 0.0;
  double loss_p5 = 0.0;
  double active_fraction = 0.0;
  std::array<double, 5> emb_norm_percentiles{};
  std::array<double, 5> pair_dist_percentiles{};
  double lr = 0.0;
};

// loss_mean / loss_p5 summarize the report's per-term values.
inline TrainLogRecord batch_stats(const Matrix& embeddings, const LossReport& report, std::int64_t iteration,
                                  double lr) {
  TrainLogRecord rec;
  rec.iteration = iteration;
  rec.lr = lr;
  rec.active_fraction = report.active_fraction();
  if (!report.per_term.empty()) {
    double s = 0.0;
    for (double t : report.per_term) s += t;
    rec.loss_mean = s / static_cast<double>(report.per_term.size());
    std::vector<double> terms = report.per_term;
    std::sort(terms.begin(), terms.end());
    rec.loss_p5 = percentile(terms, 5.0);
  }
  std::vector<double> norms;
  norms.reserve(embeddings.rows());
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    double s = 0.0;
    for (double v : embeddings.row(i)) s += v * v;
    norms.push_back(std::sqrt(s));
  }
  rec.emb_norm_percentiles = log_percentiles(std::move(norms));
  std::vector<double> dists;
  const std::size_t n = embeddings.rows();
  dists.reserve(n * (n - (n > 0 ? 1 : 0)) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      dists.push_back(std::sqrt(squared_distance(embeddings.row(i), embeddings.row(j))));
  rec.pair_dist_percentiles = log_percentiles(std::move(dists));
  return rec;
}

struct CollapseCriteria {
  double relative_distance = 1e-3;
  double min_active_fraction = 0.99;
  std::size_t window = 200;
};

// True once the median pairwise distance has stayed below
// relative_distance x its first recorded value, with active fraction above
// min_active_fraction, for `window` consecutive records.
inline bool collapse_alarm(std::span<const TrainLogRecord> history, const CollapseCriteria& c = {}) {
  if (c.window < 2) throw ConfigError("collapse window must be >= 2");
  if (history.empty()) return false;
  const double threshold = c.relative_distance * history.front().pair_dist_percentiles[2];
  std::size_t run = 0;
  for (const auto& rec : history) {
    if (rec.pair_dist_percentiles[2] < threshold && rec.active_fraction > c.min_active_fraction) {
      if (++run >= c.window) return true;
    } else {
      run = 0;
    }
  }
  return false;
}

inline bool collapse_alarm(std::span<const TrainLogRecord> history, std::size_t window) {
  CollapseCriteria c;
  c.window = window;
  return collapse_alarm(history, c);
}

inline constexpr const char* kTrainLogHeader =
    "iter,loss_mean,loss_p5,active_frac,norm_p0,norm_p5,norm_p50,norm_p95,norm_p100,"
    "dist_p0,dist_p5,dist_p50,dist_p95,dist_p100,lr";

inline void write_log_row(std::ostream& os, const TrainLogRecord& r) {
  os << r.iteration << ',' << format_double(r.loss_mean) << ',' << format_double(r.loss_p5) << ','
     << format_double(r.active_fraction);
  for (double v : r.emb_norm_percentiles) os << ',' << format_double(v);
  for (double v : r.pair_dist_percentiles) os << ',' << format_double(v);
  os << ',' << format_double(r.lr) << '\n';
}

// Append-only record list with strictly increasing iterations.
class TrainLog {
 public:
  void append(TrainLogRecord rec) {
    if (!records_.empty() && rec.iteration <= records_.back().iteration)
      throw ContractError("log records must have strictly increasing iterations");
    records_.push_back(std::move(rec));
  }

  const std::vector<TrainLogRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  void write_csv(std::ostream& os) const {
    os << kTrainLogHeader << '\n';
    for (const auto& r : records_) write_log_row(os, r);
  }

  void write_csv(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    write_csv(os);
  }

 private:
  std::vector<TrainLogRecord> records_;
};

}  // namespace tripletkit
