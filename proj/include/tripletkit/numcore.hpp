#pragma once

// Dense row-major matrices and a small fully connected embedding network
// with hand-written forward and backward passes.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tripletkit/errors.hpp"

namespace tripletkit {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Rows selected by index, in the given order.
inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = m.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

// a (n x k) * b (k x m)
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()));
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

// a^T (k x n)^T * b (k x m) -> n x m
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn: " + std::to_string(a.rows()) + " vs " + std::to_string(b.rows()));
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

// a (n x m) * b^T (k x m)^T -> n x k
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
      out(i, j) = s;
    }
  }
  return out;
}

inline std::vector<double> leaky_relu(std::span<const double> x, double slope) {
  std::vector<double> y(x.begin(), x.end());
  for (double& v : y)
    if (v < 0.0) v *= slope;
  return y;
}

// Derivative of leaky_relu. At exactly zero the slope branch is taken.
inline double leaky_relu_grad(double x, double slope) { return x > 0.0 ? 1.0 : slope; }

struct Layer {
  Matrix weight;  // fan_in x fan_out
  std::vector<double> bias;

  friend bool operator==(const Layer&, const Layer&) = default;
};

struct MlpParams {
  std::vector<Layer> layers;
  double nonlinearity_slope = 0.3;
  std::uint64_t seed = 0;

  std::size_t input_width() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
  std::size_t output_width() const { return layers.empty() ? 0 : layers.back().weight.cols(); }

  std::vector<std::size_t> layer_widths() const {
    std::vector<std::size_t> w;
    if (layers.empty()) return w;
    w.push_back(input_width());
    for (const auto& l : layers) w.push_back(l.weight.cols());
    return w;
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  // Throws unless adjacent layers chain and biases match their weights.
  void validate() const {
    if (layers.empty()) throw ConfigError("network has no layers");
    if (!(nonlinearity_slope >= 0.0 && nonlinearity_slope < 1.0))
      throw ConfigError("nonlinearity slope must lie in [0, 1)");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.bias.size() != l.weight.cols())
        throw DimensionError("layer " + std::to_string(i) + ": bias length does not match weight columns");
      if (i + 1 < layers.size() && l.weight.cols() != layers[i + 1].weight.rows())
        throw DimensionError("layer " + std::to_string(i) + " output does not chain into layer " +
                             std::to_string(i + 1));
    }
  }

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

// Gradients have the same layout as the parameters.
using GradBundle = std::vector<Layer>;

inline GradBundle zeros_like(const MlpParams& params) {
  GradBundle g;
  g.reserve(params.layers.size());
  for (const auto& l : params.layers)
    g.push_back({Matrix(l.weight.rows(), l.weight.cols()), std::vector<double>(l.bias.size(), 0.0)});
  return g;
}

inline bool congruent(const MlpParams& params, const GradBundle& g) {
  if (params.layers.size() != g.size()) return false;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& l = params.layers[i];
    if (l.weight.rows() != g[i].weight.rows() || l.weight.cols() != g[i].weight.cols() ||
        l.bias.size() != g[i].bias.size())
      return false;
  }
  return true;
}

enum class InitScheme { he, glorot };

// Hidden layers use He normal init, the final projection Glorot uniform.
// Biases start at zero.
inline MlpParams init_params(std::span<const std::size_t> layer_widths, std::uint64_t seed,
                             double slope = 0.3, InitScheme hidden = InitScheme::he,
                             InitScheme final_layer = InitScheme::glorot) {
  if (layer_widths.size() < 2) throw ConfigError("need at least an input and an output width");
  for (auto w : layer_widths)
    if (w == 0) throw ConfigError("layer widths must be positive");

  MlpParams p;
  p.nonlinearity_slope = slope;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  const std::size_t n_layers = layer_widths.size() - 1;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const std::size_t fan_in = layer_widths[i];
    const std::size_t fan_out = layer_widths[i + 1];
    Layer l{Matrix(fan_in, fan_out), std::vector<double>(fan_out, 0.0)};
    const InitScheme scheme = (i + 1 == n_layers) ? final_layer : hidden;
    if (scheme == InitScheme::he) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (double& w : l.weight.data()) w = dist(rng);
    } else {
      const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-a, a);
      for (double& w : l.weight.data()) w = dist(rng);
    }
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

inline MlpParams init_params(std::initializer_list<std::size_t> widths, std::uint64_t seed,
                             double slope = 0.3) {
  std::vector<std::size_t> w(widths);
  return init_params(std::span<const std::size_t>(w), seed, slope);
}

struct ForwardCache {
  std::vector<Matrix> inputs;          // input of each layer
  std::vector<Matrix> preactivations;  // x*W + b of each layer
  std::size_t batch = 0;
};

// Linear -> leaky_relu for hidden layers; the final layer stays linear.
inline Matrix mlp_forward(const MlpParams& params, const Matrix& inputs, ForwardCache* cache = nullptr) {
  if (params.layers.empty()) throw ConfigError("network has no layers");
  if (inputs.cols() != params.input_width())
    throw DimensionError("input width " + std::to_string(inputs.cols()) + " != network input width " +
                         std::to_string(params.input_width()));
  if (cache) {
    cache->inputs.clear();
    cache->preactivations.clear();
    cache->batch = inputs.rows();
  }
  Matrix x = inputs;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const auto& l = params.layers[li];
    Matrix z = matmul(x, l.weight);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto zr = z.row(r);
      for (std::size_t c = 0; c < zr.size(); ++c) zr[c] += l.bias[c];
    }
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->preactivations.push_back(z);
    }
    if (li + 1 < params.layers.size()) {
      for (double& v : z.data())
        if (v < 0.0) v *= params.nonlinearity_slope;
    }
    x = std::move(z);
  }
  return x;
}

inline Matrix mlp_forward(const MlpParams& params, const Matrix& inputs, ForwardCache& cache) {
  return mlp_forward(params, inputs, &cache);
}

// Gradient of sum(embeddings .* upstream) with respect to every parameter.
inline GradBundle mlp_backward(const MlpParams& params, const ForwardCache& cache, const Matrix& upstream) {
  if (cache.inputs.size() != params.layers.size() || cache.preactivations.size() != params.layers.size())
    throw ContractError("forward cache does not belong to this network");
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const auto& z = cache.preactivations[li];
    const auto& x = cache.inputs[li];
    if (z.rows() != cache.batch || z.cols() != params.layers[li].weight.cols() ||
        x.cols() != params.layers[li].weight.rows())
      throw ContractError("forward cache is stale for layer " + std::to_string(li));
  }
  if (upstream.rows() != cache.batch || upstream.cols() != params.output_width())
    throw DimensionError("upstream gradient shape does not match embeddings");

  GradBundle grads(params.layers.size());
  Matrix delta = upstream;  // d/dz of the current layer
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& l = params.layers[li];
    if (li + 1 < params.layers.size()) {
      const auto& z = cache.preactivations[li];
      for (std::size_t k = 0; k < delta.size(); ++k)
        delta.data()[k] *= leaky_relu_grad(z.data()[k], params.nonlinearity_slope);
    }
    grads[li].weight = matmul_tn(cache.inputs[li], delta);
    grads[li].bias.assign(l.bias.size(), 0.0);
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      auto dr = delta.row(r);
      for (std::size_t c = 0; c < dr.size(); ++c) grads[li].bias[c] += dr[c];
    }
    if (li > 0) delta = matmul_nt(delta, l.weight);
  }
  return grads;
}

}  // namespace tripletkit
