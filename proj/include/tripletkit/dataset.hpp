#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tripletkit/numcore.hpp"

namespace tripletkit {

// Feature (or embedding) rows with identity and camera labels.
class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(Matrix features, std::vector<int> pids, std::vector<int> cams,
                 std::vector<std::int64_t> item_ids)
      : features_(std::move(features)), pids_(std::move(pids)), cams_(std::move(cams)),
        item_ids_(std::move(item_ids)) {
    const std::size_t n = features_.rows();
    if (pids_.size() != n || cams_.size() != n || item_ids_.size() != n)
      throw DimensionError("dataset columns have inconsistent lengths");
    std::set<std::int64_t> seen;
    for (auto id : item_ids_)
      if (!seen.insert(id).second) throw DataError("duplicate item_id " + std::to_string(id));
    for (std::size_t i = 0; i < n; ++i) by_pid_[pids_[i]].push_back(i);
  }

  std::size_t size() const { return features_.rows(); }
  std::size_t dim() const { return features_.cols(); }
  bool empty() const { return size() == 0; }

  const Matrix& features() const { return features_; }
  std::span<const double> feature(std::size_t i) const { return features_.row(i); }
  int pid(std::size_t i) const { return pids_[i]; }
  int cam(std::size_t i) const { return cams_[i]; }
  std::int64_t item_id(std::size_t i) const { return item_ids_[i]; }
  const std::vector<int>& pids() const { return pids_; }
  const std::vector<int>& cams() const { return cams_; }
  const std::vector<std::int64_t>& item_ids() const { return item_ids_; }

  // Row indices per identity, ascending.
  const std::map<int, std::vector<std::size_t>>& rows_by_pid() const { return by_pid_; }
  const std::vector<std::size_t>& rows_of(int pid) const { return by_pid_.at(pid); }
  std::size_t num_identities() const { return by_pid_.size(); }

  std::vector<int> identities() const {
    std::vector<int> ids;
    for (const auto& [pid, rows] : by_pid_) ids.push_back(pid);
    return ids;
  }

  LabeledDataset subset(std::span<const std::size_t> rows) const {
    std::vector<int> p, c;
    std::vector<std::int64_t> ids;
    for (auto r : rows) {
      p.push_back(pids_[r]);
      c.push_back(cams_[r]);
      ids.push_back(item_ids_[r]);
    }
    return {gather_rows(features_, rows), std::move(p), std::move(c), std::move(ids)};
  }

  // Same labels, new feature matrix (e.g. embeddings of these rows).
  LabeledDataset with_features(Matrix f) const {
    if (f.rows() != size()) throw DimensionError("replacement features have the wrong row count");
    return {std::move(f), pids_, cams_, item_ids_};
  }

 private:
  Matrix features_;
  std::vector<int> pids_;
  std::vector<int> cams_;
  std::vector<std::int64_t> item_ids_;
  std::map<int, std::vector<std::size_t>> by_pid_;
};

}  // namespace tripletkit
