#pragma once

// Synthetic identity clusters standing in for a person re-identification
// dataset.

#include <cstdint>
#include <random>
#include <string>

#include "tripletkit/dataset.hpp"

namespace tripletkit {

struct GenSpec {
  std::size_t num_identities = 32;
  std::size_t items_per_identity = 8;
  std::size_t feature_dim = 16;
  double identity_spread = 1.0;
  double intra_spread = 0.5;
  std::size_t num_cameras = 2;
  double outlier_rate = 0.0;
  std::uint64_t seed = 0;
  // Trailing feature dimensions that carry no identity signal, only noise
  // of scale nuisance_spread. 0 keeps every dimension informative.
  std::size_t nuisance_dims = 0;
  double nuisance_spread = 0.0;
  // When nonzero, identities are grouped into this many families whose
  // centres (scale family_spread) are added to every member's centre.
  std::size_t num_families = 0;
  double family_spread = 0.0;

  void validate() const {
    if (num_identities == 0) throw ConfigError("need at least one identity");
    if (items_per_identity == 0) throw ConfigError("need at least one item per identity");
    if (feature_dim == 0) throw ConfigError("feature dimension must be positive");
    if (num_cameras == 0) throw ConfigError("need at least one camera");
    if (!(identity_spread > 0.0)) throw ConfigError("identity_spread must be positive");
    if (!(intra_spread >= 0.0)) throw ConfigError("intra_spread must be nonnegative");
    if (!(outlier_rate >= 0.0 && outlier_rate < 1.0)) throw ConfigError("outlier_rate must lie in [0, 1)");
    if (nuisance_dims >= feature_dim) throw ConfigError("nuisance_dims must leave at least one informative dimension");
    if (!(nuisance_spread >= 0.0)) throw ConfigError("nuisance_spread must be nonnegative");
    if (!(family_spread >= 0.0)) throw ConfigError("family_spread must be nonnegative");
  }
};

struct GeneratedData {
  LabeledDataset dataset;
  std::vector<int> true_pids;  // label before any outlier swap
  std::size_t num_mislabeled = 0;
};

// Identity centres ~ N(0, identity_spread^2 I); items are centre plus
// N(0, intra_spread^2 I) noise. Cameras are assigned round-robin within an
// identity. With probability outlier_rate an item's label is swapped to a
// different random identity.
inline GeneratedData generate_with_truth(const GenSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const std::size_t n = spec.num_identities * spec.items_per_identity;
  const std::size_t signal = spec.feature_dim - spec.nuisance_dims;

  Matrix families(std::max<std::size_t>(spec.num_families, 1), spec.feature_dim);
  if (spec.num_families > 0)
    for (std::size_t f = 0; f < spec.num_families; ++f)
      for (std::size_t c = 0; c < signal; ++c) families(f, c) = spec.family_spread * unit(rng);
  Matrix centres(spec.num_identities, spec.feature_dim);
  for (std::size_t i = 0; i < spec.num_identities; ++i) {
    const std::size_t f = spec.num_families > 0 ? i % spec.num_families : 0;
    for (std::size_t c = 0; c < signal; ++c) centres(i, c) = families(f, c) + spec.identity_spread * unit(rng);
  }

  GeneratedData out;
  Matrix features(n, spec.feature_dim);
  std::vector<int> pids(n), cams(n);
  std::vector<std::int64_t> ids(n);
  out.true_pids.resize(n);
  for (std::size_t i = 0; i < spec.num_identities; ++i)
    for (std::size_t j = 0; j < spec.items_per_identity; ++j) {
      const std::size_t r = i * spec.items_per_identity + j;
      for (std::size_t c = 0; c < spec.feature_dim; ++c) {
        const double scale = c < signal ? spec.intra_spread : spec.nuisance_spread;
        features(r, c) = centres(i, c) + scale * unit(rng);
      }
      ids[r] = static_cast<std::int64_t>(r);
      cams[r] = static_cast<int>(j % spec.num_cameras);
      out.true_pids[r] = static_cast<int>(i);
      pids[r] = static_cast<int>(i);
      if (spec.num_identities > 1 && coin(rng) < spec.outlier_rate) {
        auto other = std::uniform_int_distribution<std::size_t>(0, spec.num_identities - 2)(rng);
        if (other >= i) ++other;
        pids[r] = static_cast<int>(other);
        ++out.num_mislabeled;
      }
    }
  out.dataset = LabeledDataset(std::move(features), std::move(pids), std::move(cams), std::move(ids));
  return out;
}

inline LabeledDataset generate(const GenSpec& spec) { return generate_with_truth(spec).dataset; }

}  // namespace tripletkit
