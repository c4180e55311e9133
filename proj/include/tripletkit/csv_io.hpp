#pragma once

// Dataset and embedding CSV files:
//   item_id,pid,cam,<p>0,...,<p>{F-1}
// where <p> is "f" for features and "e" for embeddings. Floats use the
// shortest representation that round-trips.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tripletkit/dataset.hpp"

namespace tripletkit {

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view s, std::size_t line_no) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw DataError("line " + std::to_string(line_no) + ": cannot parse '" + std::string(s) + "'");
  return v;
}

}  // namespace detail

inline void write_dataset_csv(std::ostream& os, const LabeledDataset& ds, char prefix = 'f') {
  os << "item_id,pid,cam";
  for (std::size_t j = 0; j < ds.dim(); ++j) os << ',' << prefix << j;
  os << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << ds.item_id(i) << ',' << ds.pid(i) << ',' << ds.cam(i);
    for (double v : ds.feature(i)) os << ',' << format_double(v);
    os << '\n';
  }
}

inline void write_dataset_csv(const std::filesystem::path& path, const LabeledDataset& ds, char prefix = 'f') {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_dataset_csv(os, ds, prefix);
}

// Accepts either column prefix unless one is required.
inline LabeledDataset read_dataset_csv(std::istream& is, char required_prefix = 0) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_commas(line);
  if (header.size() < 4 || header[0] != "item_id" || header[1] != "pid" || header[2] != "cam")
    throw DataError("CSV header must start with item_id,pid,cam and have at least one value column");
  const char prefix = header[3].empty() ? 0 : header[3][0];
  if (prefix != 'f' && prefix != 'e') throw DataError("value columns must be named f<i> or e<i>");
  if (required_prefix && prefix != required_prefix)
    throw DataError(std::string("expected ") + required_prefix + "-prefixed value columns");
  const std::size_t width = header.size() - 3;
  for (std::size_t j = 0; j < width; ++j)
    if (header[3 + j] != std::string(1, prefix) + std::to_string(j))
      throw DataError("unexpected column name '" + std::string(header[3 + j]) + "'");

  std::vector<double> values;
  std::vector<int> pids, cams;
  std::vector<std::int64_t> ids;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size())
      throw DimensionError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                           " columns, got " + std::to_string(cells.size()));
    ids.push_back(detail::parse_number<std::int64_t>(cells[0], line_no));
    pids.push_back(detail::parse_number<int>(cells[1], line_no));
    cams.push_back(detail::parse_number<int>(cells[2], line_no));
    for (std::size_t j = 0; j < width; ++j) values.push_back(detail::parse_number<double>(cells[3 + j], line_no));
  }
  const std::size_t rows = ids.size();
  return {Matrix(rows, width, std::move(values)), std::move(pids), std::move(cams), std::move(ids)};
}

inline LabeledDataset read_dataset_csv(const std::filesystem::path& path, char required_prefix = 0) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return read_dataset_csv(is, required_prefix);
}

}  // namespace tripletkit
