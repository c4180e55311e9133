#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "tripletkit/numcore.hpp"

namespace tripletkit {

// Constant learning rate up to t0, then exponential decay to 0.001 * eps0 at t1.
struct Schedule {
  double eps0 = 1e-3;
  std::int64_t t0 = 15000;
  std::int64_t t1 = 25000;

  void validate() const {
    if (!(eps0 > 0.0)) throw ConfigError("schedule base learning rate must be positive");
    if (!(0 < t0 && t0 < t1)) throw ConfigError("schedule requires 0 < t0 < t1");
  }
};

inline double lr_at(const Schedule& s, std::int64_t t) {
  if (t < 0 || t > s.t1)
    throw ScheduleError("iteration " + std::to_string(t) + " outside schedule [0, " + std::to_string(s.t1) + "]");
  if (t <= s.t0) return s.eps0;
  const double frac = static_cast<double>(t - s.t0) / static_cast<double>(s.t1 - s.t0);
  return s.eps0 * std::pow(0.001, frac);
}

struct AdamState {
  GradBundle first_moment;
  GradBundle second_moment;
  std::int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;

  static AdamState for_params(const MlpParams& params) {
    AdamState s;
    s.first_moment = zeros_like(params);
    s.second_moment = zeros_like(params);
    return s;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Drops beta1 to 0.5 once the decay phase starts. Moments are kept.
inline AdamState beta1_drop(AdamState state, std::int64_t t, const Schedule& schedule) {
  if (t >= schedule.t0) state.beta1 = 0.5;
  return state;
}

// One bias-corrected Adam update in place. Bias correction uses the
// current beta1 even after a drop.
inline void adam_step(MlpParams& params, const GradBundle& grads, AdamState& state, double lr) {
  if (!congruent(params, grads)) throw ContractError("gradient shape does not match parameters");
  if (state.first_moment.empty() && state.second_moment.empty() && state.step_count == 0) {
    state.first_moment = zeros_like(params);
    state.second_moment = zeros_like(params);
  }
  if (!congruent(params, state.first_moment) || !congruent(params, state.second_moment))
    throw ContractError("optimizer moments do not match parameters");
  if (!(lr > 0.0)) throw ContractError("learning rate must be positive");
  if (!(state.beta1 > 0.0 && state.beta1 < 1.0 && state.beta2 > 0.0 && state.beta2 < 1.0))
    throw ContractError("adam betas must lie in (0, 1)");

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1;
  const double b2 = state.beta2;

  auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                    std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps_hat);
    }
  };
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    auto& l = params.layers[li];
    update(l.weight.data(), grads[li].weight.data(), state.first_moment[li].weight.data(),
           state.second_moment[li].weight.data());
    update(l.bias, grads[li].bias, state.first_moment[li].bias, state.second_moment[li].bias);
  }
}

}  // namespace tripletkit
