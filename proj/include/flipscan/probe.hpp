#pragma once

// FlipProbe over a real victim executable: write the mutated copy, run it on
// the evaluation tensor file, parse its predictions and apply the oracle.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <memory>
#include <span>
#include <string>

#include "flipscan/campaign.hpp"
#include "flipscan/elf_image.hpp"
#include "flipscan/harness.hpp"
#include "flipscan/oracles.hpp"
#include "flipscan/tensor_io.hpp"

namespace flipscan {

inline constexpr std::uint32_t kTimeoutMultiplier = 20;
inline constexpr std::uint32_t kMinTimeoutMs = 250;
inline constexpr std::size_t kDefaultFastSamples = 32;
inline constexpr std::size_t kDefaultOnlineSamples = 64;

struct ProbeOptions {
  std::uint32_t timeout_ms = 0;  // 0: kTimeoutMultiplier x baseline runtime, at least kMinTimeoutMs
  std::uint64_t memory_cap = 256ULL << 20;
  std::size_t fast_samples = kDefaultFastSamples;  // 0 disables the fast pre-pass
  bool keep_artifacts = false;
  bool isolate_network = false;
  std::filesystem::path scratch;  // empty: private temporary directory
};

inline TensorFile eval_tensor(const EvalSet& e) {
  TensorFile t;
  t.dims.push_back(e.samples());
  if (e.input_shape.empty()) t.dims.push_back(e.sample_size);
  else t.dims.insert(t.dims.end(), e.input_shape.begin(), e.input_shape.end());
  t.class_count = e.class_count;
  t.data = e.inputs;
  return t;
}

class ExecutableProbe {
 public:
  ExecutableProbe(ElfImage image, EvalSet eval, OracleConfig cfg, ProbeOptions opt = {})
      : image_(std::move(image)), full_(std::move(eval)), cfg_(cfg), opt_(std::move(opt)) {
    cfg_.validate();
    if (full_.samples() == 0) throw Error(Errc::BadShape, "empty evaluation set");
    owns_scratch_ = opt_.scratch.empty();
    scratch_ = owns_scratch_ ? detail::make_temp_dir("flipscan-probe-") : opt_.scratch;
    std::filesystem::create_directories(scratch_);
    fast_ = full_.prefix(opt_.fast_samples);
    write_text_file(scratch_ / "full.fscn", format_tensor_file(eval_tensor(full_)));
    write_text_file(scratch_ / "fast.fscn", format_tensor_file(eval_tensor(fast_)));
    original_ = scratch_ / "original.bin";
    write_binary(original_, image_.raw_bytes());
    timeout_ms_ = 10000;  // generous while measuring the baseline
    run_baseline();
  }

  ExecutableProbe(const ExecutableProbe&) = delete;
  ExecutableProbe& operator=(const ExecutableProbe&) = delete;

  ~ExecutableProbe() {
    if (owns_scratch_ && !opt_.keep_artifacts) {
      std::error_code ec;
      std::filesystem::remove_all(scratch_, ec);
    }
  }

  const ElfImage& image() const { return image_; }
  const OracleConfig& oracle() const { return cfg_; }
  std::size_t class_count() const { return full_.class_count; }
  bool has_fast_scope() const { return opt_.fast_samples > 0 && fast_.samples() < full_.samples(); }
  const ProbeResult& baseline() const { return baseline_; }
  const EvalSet& eval(EvalScope s) const { return s == EvalScope::Fast ? fast_ : full_; }
  std::uint32_t timeout_ms() const { return timeout_ms_; }
  double baseline_wall_ms() const { return baseline_.wall_ms; }

  ProbeResult evaluate(const BitLocation& loc, EvalScope scope) const {
    return run_bytes(apply_flip(image_, loc), scope);
  }

  /// Runs an arbitrary same-length variant of the image (e.g. several flips).
  ProbeResult run_bytes(std::span<const std::uint8_t> bytes, EvalScope scope) const {
    const auto id = counter_.fetch_add(1);
    const auto bin = scratch_ / ("m" + std::to_string(id) + ".bin");
    write_binary(bin, bytes);
    auto res = execute(bin, scope);
    if (!opt_.keep_artifacts) std::filesystem::remove(bin);
    return res;
  }

 private:
  ProbeResult execute(const std::filesystem::path& bin, EvalScope scope) const {
    const auto& eval = this->eval(scope);
    ExecSpec spec;
    spec.binary_path = bin;
    spec.argv = {(scratch_ / (scope == EvalScope::Fast ? "fast.fscn" : "full.fscn")).string()};
    spec.timeout_ms = timeout_ms_;
    spec.memory_cap = opt_.memory_cap;
    spec.workdir = scratch_ / ("w" + std::to_string(counter_.fetch_add(1)));
    spec.keep_artifacts = opt_.keep_artifacts;
    spec.isolate_network = opt_.isolate_network;
    const auto raw = run_once(spec);
    return judge(raw, eval);
  }

  ProbeResult judge(const RawOutcome& raw, const EvalSet& eval) const {
    ProbeResult r;
    r.status = status_token(raw);
    r.wall_ms = raw.wall_ms;
    if (cfg_.kind == OracleKind::Generative) {
      const auto outs = parse_vector_predictions(raw.stdout_data, eval.samples(), output_width_);
      const bool finite = outs && std::all_of(outs->begin(), outs->end(), [](const auto& row) {
                            return std::all_of(row.begin(), row.end(), [](float v) { return std::isfinite(v); });
                          });
      r.completed = classify_raw(raw, finite) == RunClass::Completed;
      if (!r.completed) return r;
      r.verdict = Verdict{};
      r.score = score_generative(*outs, eval);
      r.verdict.metrics.distortion = r.score->distortion;
      r.verdict.metrics.label_change_fraction = r.score->label_change_fraction;
      return r;
    }
    const auto preds = parse_class_predictions(raw.stdout_data, eval.samples(), eval.class_count);
    r.completed = classify_raw(raw, preds.has_value()) == RunClass::Completed;
    if (!r.completed) return r;
    if (cfg_.kind == OracleKind::Classifier) {
      r.verdict = classifier_verdict(*preds, eval, cfg_);
    } else {
      r.verdict = pinned_class_verdict(*preds, cfg_);
      if (!eval.labels.empty()) r.verdict.metrics.accuracy = accuracy_of(*preds, eval.labels);
    }
    return r;
  }

  void run_baseline() {
    if (cfg_.kind == OracleKind::Generative) {
      // Reference outputs are the unmutated model's own outputs.
      ExecSpec spec;
      spec.binary_path = original_;
      spec.argv = {(scratch_ / "full.fscn").string()};
      spec.timeout_ms = timeout_ms_;
      spec.memory_cap = opt_.memory_cap;
      const auto raw = run_once(spec);
      const auto first = detect_width(raw.stdout_data);
      output_width_ = first;
      auto outs = parse_vector_predictions(raw.stdout_data, full_.samples(), output_width_);
      if (classify_raw(raw, outs.has_value() && first > 0) != RunClass::Completed)
        throw Error(Errc::BaselineFailed, "unmutated binary did not produce generative outputs (" +
                                              status_token(raw) + ")");
      full_.reference_outputs = *outs;
      fast_ = full_.prefix(opt_.fast_samples);
    }
    baseline_ = execute(original_, EvalScope::Full);
    if (!baseline_.completed) throw Error(Errc::BaselineFailed, "unmutated binary crashed (" + baseline_.status + ")");
    if (opt_.timeout_ms != 0) timeout_ms_ = opt_.timeout_ms;
    else
      timeout_ms_ = std::max<std::uint32_t>(kMinTimeoutMs,
                                            static_cast<std::uint32_t>(std::ceil(baseline_.wall_ms * kTimeoutMultiplier)));
  }

  static std::size_t detect_width(const std::string& out) {
    const auto nl = out.find('\n');
    const std::string first = out.substr(0, nl);
    std::size_t n = 0;
    bool in_tok = false;
    for (char c : first) {
      if (c == ' ') in_tok = false;
      else if (!in_tok) {
        in_tok = true;
        ++n;
      }
    }
    return n;
  }

  ElfImage image_;
  EvalSet full_;
  EvalSet fast_;
  OracleConfig cfg_;
  ProbeOptions opt_;
  bool owns_scratch_ = true;
  std::filesystem::path scratch_;
  std::filesystem::path original_;
  std::uint32_t timeout_ms_ = 0;
  std::size_t output_width_ = 0;
  ProbeResult baseline_;
  mutable std::atomic<std::uint64_t> counter_{0};
};

static_assert(FlipProbe<ExecutableProbe>);

}  // namespace flipscan
