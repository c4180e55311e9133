#include <gtest/gtest.h>

#include <cmath>

#include "tripletkit/optim.hpp"

namespace tripletkit {
namespace {

const Schedule kPaperSchedule{1e-3, 15000, 25000};

TEST(Schedule, PaperConstants) {
  EXPECT_DOUBLE_EQ(lr_at(kPaperSchedule, 0), 1e-3);
  EXPECT_NEAR(lr_at(kPaperSchedule, 25000), 1e-6, 1e-18);
  // 1e-3 * 0.001^0.5
  EXPECT_NEAR(lr_at(kPaperSchedule, 20000), 3.16228e-5, 1e-10);
}

TEST(Schedule, ContinuousAtOnsetAndNonIncreasing) {
  EXPECT_DOUBLE_EQ(lr_at(kPaperSchedule, 15000), 1e-3);
  double prev = lr_at(kPaperSchedule, 0);
  for (std::int64_t t = 1; t <= 25000; ++t) {
    const double lr = lr_at(kPaperSchedule, t);
    ASSERT_LE(lr, prev) << t;
    prev = lr;
  }
}

TEST(Schedule, RejectsIterationsOutsideRange) {
  EXPECT_THROW(lr_at(kPaperSchedule, 25001), ScheduleError);
  EXPECT_THROW(lr_at(kPaperSchedule, -1), ScheduleError);
  EXPECT_THROW((Schedule{1e-3, 1, 1}.validate()), ConfigError);
  EXPECT_THROW((Schedule{0.0, 1, 2}.validate()), ConfigError);
}

TEST(Beta1Drop, SwitchesAtOnsetAndIsIdempotent) {
  AdamState s;
  EXPECT_DOUBLE_EQ(beta1_drop(s, 14999, kPaperSchedule).beta1, 0.9);
  const auto once = beta1_drop(s, 15000, kPaperSchedule);
  EXPECT_DOUBLE_EQ(once.beta1, 0.5);
  EXPECT_EQ(beta1_drop(once, 15000, kPaperSchedule), once);
  EXPECT_EQ(beta1_drop(once, 20000, kPaperSchedule), once);
}

MlpParams small_params() { return init_params({3, 2}, 4); }

TEST(AdamStep, ZeroGradientLeavesParametersUnchanged) {
  auto p = small_params();
  const auto before = p;
  auto s = AdamState::for_params(p);
  adam_step(p, zeros_like(p), s, 1e-3);
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.step_count, 1);
}

// Direct transcription of the bias-corrected update for a single scalar.
double reference_adam(double p, const std::vector<double>& grads, double lr, double b1, double b2, double eps) {
  double m = 0, v = 0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, double(t)));
    const double vh = v / (1 - std::pow(b2, double(t)));
    p = p - lr * mh / (std::sqrt(vh) + eps);
  }
  return p;
}

TEST(AdamStep, MatchesReferenceTranscription) {
  auto p = small_params();
  const auto start = p;
  auto s = AdamState::for_params(p);
  std::vector<std::vector<double>> history(p.layers[0].weight.size());
  for (int step = 0; step < 5; ++step) {
    auto g = zeros_like(p);
    for (std::size_t k = 0; k < g[0].weight.size(); ++k) {
      g[0].weight.data()[k] = std::sin(double(k + 1) * (step + 1));
      history[k].push_back(g[0].weight.data()[k]);
    }
    adam_step(p, g, s, 1e-2);
  }
  for (std::size_t k = 0; k < history.size(); ++k)
    EXPECT_NEAR(p.layers[0].weight.data()[k],
                reference_adam(start.layers[0].weight.data()[k], history[k], 1e-2, 0.9, 0.999, 1e-8), 1e-15);
}

TEST(AdamStep, FirstStepMovesByLearningRate) {
  auto p = small_params();
  const auto start = p;
  auto s = AdamState::for_params(p);
  auto g = zeros_like(p);
  g[0].bias[0] = 0.37;
  adam_step(p, g, s, 1e-3);
  // |m_hat| / sqrt(v_hat) = 1 on the first step.
  EXPECT_NEAR(start.layers[0].bias[0] - p.layers[0].bias[0], 1e-3 * 0.37 / (0.37 + 1e-8), 1e-15);
}

TEST(AdamStep, ConstantGradientMovesMonotonically) {
  auto p = small_params();
  auto s = AdamState::for_params(p);
  auto g = zeros_like(p);
  g[0].weight(0, 0) = 2.5;
  g[0].weight(1, 1) = -0.1;
  double prev_a = p.layers[0].weight(0, 0), prev_b = p.layers[0].weight(1, 1);
  for (int i = 0; i < 1000; ++i) {
    adam_step(p, g, s, 1e-3);
    ASSERT_LT(p.layers[0].weight(0, 0), prev_a);
    ASSERT_GT(p.layers[0].weight(1, 1), prev_b);
    prev_a = p.layers[0].weight(0, 0);
    prev_b = p.layers[0].weight(1, 1);
  }
}

TEST(AdamStep, NoNaNOnLargeGradientsAndRejectsShapeMismatch) {
  auto p = small_params();
  auto s = AdamState::for_params(p);
  auto g = zeros_like(p);
  for (double& v : g[0].weight.data()) v = 1e150;
  adam_step(p, g, s, 1.0);
  for (double v : p.layers[0].weight.data()) EXPECT_TRUE(std::isfinite(v));
  auto wrong = zeros_like(init_params({3, 3}, 1));
  EXPECT_THROW(adam_step(p, wrong, s, 1e-3), ContractError);
}

}  // namespace
}  // namespace tripletkit
