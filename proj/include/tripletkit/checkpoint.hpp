#pragma once

// JSON checkpoints:
//   {layer_widths, slope, seed, layers:[{weight, bias}], optim?:{...}}
// Doubles are written in shortest round-trip form, so write -> read -> write
// reproduces the same bytes.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tripletkit/optim.hpp"

namespace tripletkit {

using json = nlohmann::json;

namespace detail {

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j, std::size_t rows, std::size_t cols) {
  if (!j.is_array() || j.size() != rows) throw DataError("weight matrix has the wrong number of rows");
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& row = j[r];
    if (!row.is_array() || row.size() != cols) throw DataError("weight matrix has the wrong number of columns");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = row[c].get<double>();
  }
  return m;
}

inline json layers_to_json(const std::vector<Layer>& layers) {
  json arr = json::array();
  for (const auto& l : layers) arr.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", l.bias}});
  return arr;
}

inline std::vector<Layer> layers_from_json(const json& arr, const std::vector<std::size_t>& widths) {
  if (!arr.is_array() || arr.size() + 1 != widths.size())
    throw DataError("layer list does not match layer_widths");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    Layer l;
    l.weight = matrix_from_json(arr[i].at("weight"), widths[i], widths[i + 1]);
    l.bias = arr[i].at("bias").get<std::vector<double>>();
    if (l.bias.size() != widths[i + 1]) throw DataError("bias length does not match layer width");
    layers.push_back(std::move(l));
  }
  return layers;
}

}  // namespace detail

struct Checkpoint {
  MlpParams params;
  std::optional<AdamState> optim;
};

inline json to_json(const Checkpoint& ck) {
  json j;
  j["layer_widths"] = ck.params.layer_widths();
  j["slope"] = ck.params.nonlinearity_slope;
  j["seed"] = ck.params.seed;
  j["layers"] = detail::layers_to_json(ck.params.layers);
  if (ck.optim) {
    const auto& s = *ck.optim;
    j["optim"] = {{"first_moment", detail::layers_to_json(s.first_moment)},
                  {"second_moment", detail::layers_to_json(s.second_moment)},
                  {"step_count", s.step_count},
                  {"beta1", s.beta1},
                  {"beta2", s.beta2},
                  {"eps_hat", s.eps_hat}};
  }
  return j;
}

inline Checkpoint checkpoint_from_json(const json& j) {
  try {
    Checkpoint ck;
    const auto widths = j.at("layer_widths").get<std::vector<std::size_t>>();
    if (widths.size() < 2) throw DataError("layer_widths needs at least two entries");
    ck.params.nonlinearity_slope = j.at("slope").get<double>();
    ck.params.seed = j.at("seed").get<std::uint64_t>();
    ck.params.layers = detail::layers_from_json(j.at("layers"), widths);
    ck.params.validate();
    if (j.contains("optim")) {
      const auto& o = j.at("optim");
      AdamState s;
      s.first_moment = detail::layers_from_json(o.at("first_moment"), widths);
      s.second_moment = detail::layers_from_json(o.at("second_moment"), widths);
      s.step_count = o.at("step_count").get<std::int64_t>();
      s.beta1 = o.at("beta1").get<double>();
      s.beta2 = o.at("beta2").get<double>();
      s.eps_hat = o.at("eps_hat").get<double>();
      ck.optim = std::move(s);
    }
    return ck;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline std::string dump_checkpoint(const Checkpoint& ck) { return to_json(ck).dump(1) + "\n"; }

inline Checkpoint parse_checkpoint(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  return checkpoint_from_json(j);
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << dump_checkpoint(ck);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace tripletkit
