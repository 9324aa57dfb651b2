#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "flipscan/oracles.hpp"

using namespace flipscan;

namespace {

EvalSet labels_eval(std::vector<int> labels, std::size_t classes) {
  EvalSet e;
  e.labels = std::move(labels);
  e.class_count = classes;
  e.sample_size = 1;
  e.inputs.assign(e.labels.size(), 0.f);
  return e;
}

// `correct` of `n` predictions right, the rest shifted by one class.
std::vector<int> preds_with_accuracy(const EvalSet& e, std::size_t correct) {
  std::vector<int> p(e.labels);
  for (std::size_t i = correct; i < p.size(); ++i) p[i] = (p[i] + 1) % static_cast<int>(e.class_count);
  return p;
}

}  // namespace

TEST(ClassifierVerdict, ElevenPercentOfTenClassesIsRandomGuess) {
  std::vector<int> labels(1000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
  const auto e = labels_eval(labels, 10);
  const OracleConfig cfg;
  auto v = classifier_verdict(preds_with_accuracy(e, 110), e, cfg);
  EXPECT_EQ(v.kind, VerdictKind::Vulnerable);
  EXPECT_DOUBLE_EQ(*v.metrics.accuracy, 0.110);
  v = classifier_verdict(preds_with_accuracy(e, 872), e, cfg);
  EXPECT_EQ(v.kind, VerdictKind::NoEffect);
  // The bound itself, 11.5%, is still a random guess.
  EXPECT_EQ(classifier_verdict(preds_with_accuracy(e, 115), e, cfg).kind, VerdictKind::Vulnerable);
  EXPECT_EQ(classifier_verdict(preds_with_accuracy(e, 116), e, cfg).kind, VerdictKind::NoEffect);
}

TEST(ClassifierVerdict, AllCorrectBinary) {
  const auto e = labels_eval({0, 1, 1, 0}, 2);
  const auto v = classifier_verdict(e.labels, e, OracleConfig{});
  EXPECT_EQ(v.kind, VerdictKind::NoEffect);
  EXPECT_DOUBLE_EQ(*v.metrics.accuracy, 1.0);
}

TEST(ClassifierVerdict, LengthMismatch) {
  const auto e = labels_eval({0, 1, 1}, 2);
  const std::vector<int> preds{0, 1};
  EXPECT_THROW(classifier_verdict(preds, e, OracleConfig{}), Error);
}

TEST(ClassifierVerdict, MonotoneInAccuracyAndSlack) {
  std::vector<int> labels(200);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
  const auto e = labels_eval(labels, 10);
  for (double slack : {0.05, 0.1, 0.15, 0.3, 0.9}) {
    OracleConfig loose;
    loose.random_guess_slack = slack;
    OracleConfig tight = loose;
    tight.random_guess_slack = slack / 2;
    bool seen_vulnerable = false;
    for (std::size_t correct = 200; correct-- > 0;) {
      const auto p = preds_with_accuracy(e, correct);
      const auto v = classifier_verdict(p, e, loose);
      // Lowering accuracy never goes back from Vulnerable to NoEffect.
      if (v.kind == VerdictKind::Vulnerable) seen_vulnerable = true;
      if (seen_vulnerable) EXPECT_EQ(v.kind, VerdictKind::Vulnerable) << correct;
      // Smaller slack: vulnerable set can only shrink.
      if (classifier_verdict(p, e, tight).kind == VerdictKind::Vulnerable) EXPECT_EQ(v.kind, VerdictKind::Vulnerable);
    }
  }
}

TEST(PinnedVerdict, ModalClassAboveThreshold) {
  std::vector<int> preds(1000, 2);
  for (int i = 0; i < 50; ++i) preds[static_cast<std::size_t>(i)] = i % 10 == 2 ? 3 : i % 10;
  const auto v = pinned_class_verdict(preds, OracleConfig{});
  EXPECT_EQ(v.kind, VerdictKind::VulnerablePinned);
  EXPECT_EQ(v.pinned_class, 2);
  EXPECT_DOUBLE_EQ(*v.metrics.pin_fraction, 0.95);
}

TEST(PinnedVerdict, UniformIsNoEffect) {
  std::vector<int> preds(1000);
  for (std::size_t i = 0; i < preds.size(); ++i) preds[i] = static_cast<int>(i % 10);
  const auto v = pinned_class_verdict(preds, OracleConfig{});
  EXPECT_EQ(v.kind, VerdictKind::NoEffect);
  EXPECT_EQ(v.pinned_class, -1);
  EXPECT_DOUBLE_EQ(*v.metrics.pin_fraction, 0.1);
}

TEST(PinnedVerdict, ExactlyAtThresholdPins) {
  std::vector<int> preds(10, 4);
  preds[0] = 1;
  EXPECT_EQ(pinned_class_verdict(preds, OracleConfig{}).kind, VerdictKind::VulnerablePinned);
}

namespace {

EvalSet generative_reference(std::size_t n, std::size_t width) {
  EvalSet e;
  e.sample_size = 1;
  e.inputs.assign(n, 0.f);
  e.labels.assign(n, 0);
  e.class_count = width;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> row(width, 0.f);
    row[i % width] = 1.f;
    e.reference_outputs.push_back(row);
  }
  return e;
}

DistortionHistory ramp_history(std::size_t n) {
  DistortionHistory h;
  for (std::size_t i = 0; i < n; ++i) h.add(static_cast<double>(i));
  return h;
}

}  // namespace

TEST(GenerativeVerdict, IdenticalOutputsNoEffect) {
  const auto ref = generative_reference(20, 4);
  const auto v = generative_verdict(ref.reference_outputs, ref, ramp_history(100), OracleConfig{});
  EXPECT_EQ(v.kind, VerdictKind::NoEffect);
  EXPECT_DOUBLE_EQ(*v.metrics.distortion, 0.0);
  EXPECT_DOUBLE_EQ(*v.metrics.label_change_fraction, 0.0);
}

TEST(GenerativeVerdict, LabelChangeThreshold) {
  const auto ref = generative_reference(100, 4);
  DistortionHistory h;
  for (int i = 0; i < 100; ++i) h.add(10.0);  // distortion rule cannot fire
  auto shifted = [&](std::size_t changed) {
    auto out = ref.reference_outputs;
    for (std::size_t i = 0; i < changed; ++i) std::rotate(out[i].begin(), out[i].begin() + 1, out[i].end());
    return out;
  };
  EXPECT_EQ(generative_verdict(shifted(90), ref, h, OracleConfig{}).kind, VerdictKind::Vulnerable);
  EXPECT_EQ(generative_verdict(shifted(85), ref, h, OracleConfig{}).kind, VerdictKind::Vulnerable);
  EXPECT_EQ(generative_verdict(shifted(84), ref, h, OracleConfig{}).kind, VerdictKind::NoEffect);
}

TEST(GenerativeVerdict, DistortionPercentileIsStrict) {
  const auto h = ramp_history(101);  // 0..100: 85th percentile is exactly 85
  EXPECT_DOUBLE_EQ(h.percentile(0.85), 85.0);
  OracleConfig cfg;
  EXPECT_EQ(generative_verdict_from_score({0.0, 85.0}, h, cfg).kind, VerdictKind::NoEffect);
  EXPECT_EQ(generative_verdict_from_score({0.0, 85.000001}, h, cfg).kind, VerdictKind::Vulnerable);
}

TEST(GenerativeVerdict, RequiresWarmHistory) {
  const auto ref = generative_reference(4, 4);
  EXPECT_THROW(generative_verdict(ref.reference_outputs, ref, ramp_history(99), OracleConfig{}), Error);
  EXPECT_THROW(DistortionHistory{}.percentile(0.5), Error);
}

TEST(GenerativeVerdict, MeanAbsoluteDistortion) {
  const std::vector<std::vector<float>> a{{1, 2}, {3, 4}};
  const std::vector<std::vector<float>> b{{1, 3}, {1, 4}};
  EXPECT_DOUBLE_EQ(mean_abs_distortion(a, b), 0.75);
}

TEST(Oracles, PureFunctionOfInputs) {
  std::mt19937 rng(3);
  std::vector<int> labels(300), preds(300);
  for (auto& l : labels) l = static_cast<int>(rng() % 10);
  for (auto& p : preds) p = static_cast<int>(rng() % 10);
  const auto e = labels_eval(labels, 10);
  EXPECT_EQ(classifier_verdict(preds, e, {}), classifier_verdict(preds, e, {}));
  EXPECT_EQ(pinned_class_verdict(preds, {}), pinned_class_verdict(preds, {}));
}

TEST(Oracles, ConfigValidation) {
  OracleConfig c;
  EXPECT_NO_THROW(c.validate());
  c.pin_threshold = 1.0;
  EXPECT_THROW(c.validate(), Error);
}
