#pragma once

// Vulnerability verdicts for a completed run: accuracy collapse to random
// guessing, output pinned to one class, or drastic generative distortion.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flipscan/error.hpp"

namespace flipscan {

enum class OracleKind : std::uint8_t { Classifier, PinnedClass, Generative };

inline const char* to_string(OracleKind k) {
  switch (k) {
    case OracleKind::Classifier: return "classifier";
    case OracleKind::PinnedClass: return "pinned";
    case OracleKind::Generative: return "generative";
  }
  return "classifier";
}

inline std::optional<OracleKind> parse_oracle_kind(std::string_view s) {
  if (s == "classifier") return OracleKind::Classifier;
  if (s == "pinned") return OracleKind::PinnedClass;
  if (s == "generative") return OracleKind::Generative;
  return std::nullopt;
}

struct OracleConfig {
  OracleKind kind = OracleKind::Classifier;
  double random_guess_slack = 0.15;
  double pin_threshold = 0.90;
  double label_change_threshold = 0.85;
  double distortion_percentile = 0.85;
  std::size_t warmup = 100;  // scored flips before the distortion percentile is trusted

  void validate() const {
    for (double f : {random_guess_slack, pin_threshold, label_change_threshold, distortion_percentile})
      if (!(f > 0.0 && f < 1.0)) throw Error(Errc::BadShape, "oracle fractions must lie in (0,1)");
    if (warmup == 0) throw Error(Errc::BadShape, "warm-up must be positive");
  }
};

/// Inputs, ground-truth labels and (for generative models) the unmutated
/// model's outputs on the same inputs.
struct EvalSet {
  std::vector<std::size_t> input_shape;  // per-sample shape; empty means {sample_size}
  std::size_t sample_size = 0;
  std::vector<float> inputs;  // samples() * sample_size, row-major
  std::vector<int> labels;
  std::size_t class_count = 0;
  std::vector<std::vector<float>> reference_outputs;

  std::size_t samples() const { return labels.size(); }

  std::span<const float> input(std::size_t i) const {
    return std::span<const float>(inputs).subspan(i * sample_size, sample_size);
  }

  /// First `n` samples (all when n >= samples()).
  EvalSet prefix(std::size_t n) const {
    if (n >= samples()) return *this;
    EvalSet e;
    e.input_shape = input_shape;
    e.sample_size = sample_size;
    e.class_count = class_count;
    e.inputs.assign(inputs.begin(), inputs.begin() + static_cast<std::ptrdiff_t>(n * sample_size));
    e.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
    if (!reference_outputs.empty())
      e.reference_outputs.assign(reference_outputs.begin(), reference_outputs.begin() + static_cast<std::ptrdiff_t>(n));
    return e;
  }
};

enum class VerdictKind : std::uint8_t { Vulnerable, VulnerablePinned, NoEffect, Crash };

inline const char* to_string(VerdictKind k) {
  switch (k) {
    case VerdictKind::Vulnerable: return "vulnerable";
    case VerdictKind::VulnerablePinned: return "pinned";
    case VerdictKind::NoEffect: return "noeffect";
    case VerdictKind::Crash: return "crash";
  }
  return "noeffect";
}

inline std::optional<VerdictKind> parse_verdict_kind(std::string_view s) {
  if (s == "vulnerable") return VerdictKind::Vulnerable;
  if (s == "pinned") return VerdictKind::VulnerablePinned;
  if (s == "noeffect") return VerdictKind::NoEffect;
  if (s == "crash") return VerdictKind::Crash;
  return std::nullopt;
}

struct VerdictMetrics {
  std::optional<double> accuracy;
  std::optional<double> pin_fraction;
  std::optional<double> distortion;
  std::optional<double> label_change_fraction;

  friend bool operator==(const VerdictMetrics&, const VerdictMetrics&) = default;
};

struct Verdict {
  VerdictKind kind = VerdictKind::NoEffect;
  int pinned_class = -1;
  VerdictMetrics metrics;

  bool vulnerable() const { return kind == VerdictKind::Vulnerable || kind == VerdictKind::VulnerablePinned; }

  static Verdict crash() { return {VerdictKind::Crash, -1, {}}; }

  friend bool operator==(const Verdict&, const Verdict&) = default;
};

/// Highest accuracy still treated as a random guess: (1/C)(1+slack).
inline double random_guess_bound(std::size_t class_count, double slack) {
  return (1.0 / static_cast<double>(class_count)) * (1.0 + slack);
}

inline double accuracy_of(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size())
    throw Error(Errc::LengthMismatch, std::to_string(preds.size()) + " predictions for " +
                                          std::to_string(labels.size()) + " labels");
  if (preds.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

/// Vulnerable iff accuracy has fallen to at most the random-guess bound.
inline Verdict classifier_verdict(std::span<const int> preds, const EvalSet& eval, const OracleConfig& cfg) {
  const double acc = accuracy_of(preds, eval.labels);
  Verdict v;
  v.metrics.accuracy = acc;
  constexpr double kEps = 1e-12;
  v.kind = acc <= random_guess_bound(eval.class_count, cfg.random_guess_slack) + kEps ? VerdictKind::Vulnerable
                                                                                     : VerdictKind::NoEffect;
  return v;
}

/// Modal class and its share of predictions; ties go to the lowest class index.
inline std::pair<int, double> modal_class(std::span<const int> preds) {
  if (preds.empty()) throw Error(Errc::LengthMismatch, "no predictions");
  const int top = *std::max_element(preds.begin(), preds.end());
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(top, 0)) + 1, 0);
  for (int p : preds)
    if (p >= 0) ++counts[static_cast<std::size_t>(p)];
  const auto it = std::max_element(counts.begin(), counts.end());
  return {static_cast<int>(it - counts.begin()), static_cast<double>(*it) / static_cast<double>(preds.size())};
}

inline Verdict pinned_class_verdict(std::span<const int> preds, const OracleConfig& cfg) {
  const auto [cls, frac] = modal_class(preds);
  Verdict v;
  v.metrics.pin_fraction = frac;
  if (frac >= cfg.pin_threshold) {
    v.kind = VerdictKind::VulnerablePinned;
    v.pinned_class = cls;
  }
  return v;
}

/// Scores of previously swept flips, kept sorted; the generative percentile rule reads it.
class DistortionHistory {
 public:
  void add(double score) { sorted_.insert(std::upper_bound(sorted_.begin(), sorted_.end(), score), score); }
  std::size_t size() const { return sorted_.size(); }
  const std::vector<double>& sorted_scores() const { return sorted_; }

  /// Linear interpolation between closest ranks (q in [0,1]).
  double percentile(double q) const {
    if (sorted_.empty()) throw Error(Errc::EmptyHistory, "percentile of an empty history");
    const double pos = q * static_cast<double>(sorted_.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted_.size() - 1);
    return sorted_[lo] + (pos - static_cast<double>(lo)) * (sorted_[hi] - sorted_[lo]);
  }

 private:
  std::vector<double> sorted_;
};

using DistortionMetric = std::function<double(std::span<const std::vector<float>>, std::span<const std::vector<float>>)>;
using LabelFn = std::function<int(std::span<const float>)>;

/// Default distortion: mean absolute elementwise difference.
inline double mean_abs_distortion(std::span<const std::vector<float>> outputs,
                                  std::span<const std::vector<float>> reference) {
  if (outputs.size() != reference.size()) throw Error(Errc::LengthMismatch, "output/reference count differ");
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i].size() != reference[i].size()) throw Error(Errc::LengthMismatch, "output width differs");
    for (std::size_t j = 0; j < outputs[i].size(); ++j) {
      sum += std::fabs(static_cast<double>(outputs[i][j]) - static_cast<double>(reference[i][j]));
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

/// Default attacker-side labeller for generative outputs: index of the largest element.
inline int argmax_label(std::span<const float> v) {
  return v.empty() ? -1 : static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct GenerativeScore {
  double label_change_fraction = 0;
  double distortion = 0;
};

inline GenerativeScore score_generative(std::span<const std::vector<float>> outputs, const EvalSet& reference,
                                        const LabelFn& labeller = argmax_label,
                                        const DistortionMetric& metric = mean_abs_distortion) {
  const auto& ref = reference.reference_outputs;
  if (outputs.size() != ref.size()) throw Error(Errc::LengthMismatch, "output/reference count differ");
  std::size_t changed = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) changed += labeller(outputs[i]) != labeller(ref[i]);
  GenerativeScore s;
  s.label_change_fraction = outputs.empty() ? 0.0 : static_cast<double>(changed) / static_cast<double>(outputs.size());
  s.distortion = metric(outputs, ref);
  return s;
}

/// Label-change threshold or a distortion strictly above the history percentile.
inline Verdict generative_verdict_from_score(const GenerativeScore& s, const DistortionHistory& history,
                                             const OracleConfig& cfg) {
  if (history.size() < cfg.warmup)
    throw Error(Errc::EmptyHistory, "distortion history below warm-up (" + std::to_string(history.size()) + " < " +
                                        std::to_string(cfg.warmup) + ")");
  Verdict v;
  v.metrics.label_change_fraction = s.label_change_fraction;
  v.metrics.distortion = s.distortion;
  const bool labels = s.label_change_fraction >= cfg.label_change_threshold;
  const bool distorted = s.distortion > history.percentile(cfg.distortion_percentile);
  v.kind = labels || distorted ? VerdictKind::Vulnerable : VerdictKind::NoEffect;
  return v;
}

inline Verdict generative_verdict(std::span<const std::vector<float>> outputs, const EvalSet& reference,
                                  const DistortionHistory& history, const OracleConfig& cfg,
                                  const LabelFn& labeller = argmax_label,
                                  const DistortionMetric& metric = mean_abs_distortion) {
  return generative_verdict_from_score(score_generative(outputs, reference, labeller, metric), history, cfg);
}

}  // namespace flipscan
