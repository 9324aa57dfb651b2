#pragma once

// Local executable family: fake datasets, trained weights, native builds.
//
// Corpus directory layout:
//   corpus.json               manifest plus per-entry hashes
//   <entry-id>/kernel.c       generated code
//   <entry-id>/weights.c      generated constant data
//   <entry-id>/model          built executable
//   <entry-id>/eval.fscn      evaluation inputs (the entry's fake dataset)
//   <entry-id>/eval.labels    one label per line

#include <unistd.h>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flipscan/codegen.hpp"
#include "flipscan/digest.hpp"
#include "flipscan/elf_image.hpp"
#include "flipscan/harness.hpp"
#include "flipscan/model.hpp"
#include "flipscan/oracles.hpp"
#include "flipscan/probe.hpp"
#include "flipscan/tensor_io.hpp"

namespace flipscan {

enum class OptLevel : std::uint8_t { O0, O3 };

struct CompilerConfig {
  OptLevel opt_level = OptLevel::O3;
  bool vectorize = true;  // AVX2 on, or the SSE2 baseline
  std::string cc = "cc";

  friend bool operator==(const CompilerConfig&, const CompilerConfig&) = default;
};

inline std::vector<std::string> compiler_flags(const CompilerConfig& c) {
  std::vector<std::string> f{c.opt_level == OptLevel::O3 ? "-O3" : "-O0", "-std=c11", "-ffp-contract=off",
                             "-fno-fast-math"};
  if (c.vectorize) f.push_back("-mavx2");
  else {
    f.push_back("-mno-avx");
    f.push_back("-mno-avx2");
  }
  return f;
}

inline std::optional<OptLevel> parse_opt_level(std::string_view s) {
  if (s == "O0" || s == "0") return OptLevel::O0;
  if (s == "O3" || s == "3") return OptLevel::O3;
  return std::nullopt;
}

/// Resolves a command through PATH (or returns it when it contains a slash).
inline std::optional<std::filesystem::path> find_program(const std::string& name) {
  if (name.find('/') != std::string::npos)
    return access(name.c_str(), X_OK) == 0 ? std::optional<std::filesystem::path>(name) : std::nullopt;
  const char* path = std::getenv("PATH");
  std::string_view rest = path ? path : "/usr/bin:/bin";
  while (!rest.empty()) {
    const auto colon = rest.find(':');
    const auto dir = rest.substr(0, colon);
    std::filesystem::path p = std::filesystem::path(dir.empty() ? "." : std::string(dir)) / name;
    if (access(p.c_str(), X_OK) == 0) return p;
    if (colon == std::string_view::npos) break;
    rest.remove_prefix(colon + 1);
  }
  return std::nullopt;
}

inline std::filesystem::path require_toolchain(const std::string& cc) {
  const auto p = find_program(cc);
  if (!p) throw Error(Errc::ToolchainMissing, "C compiler '" + cc + "' not found on PATH");
  ExecSpec spec;
  spec.binary_path = *p;
  spec.argv = {"--version"};
  spec.timeout_ms = 10000;
  const auto out = run_once(spec);
  if (out.status != RunStatus::Exited || out.code != 0)
    throw Error(Errc::ToolchainMissing, "C compiler '" + cc + "' does not run (" + status_token(out) + ")");
  return *p;
}

// ---------------------------------------------------------------------------
// Evaluation data derived from a fake dataset

inline EvalSet eval_set_of(const ModelSpec& m, const FakeDataset& ds) {
  EvalSet e;
  e.input_shape = m.input_shape;
  e.sample_size = ds.d;
  e.inputs = ds.inputs;
  e.labels = ds.labels;
  e.class_count = ds.class_count;
  return e;
}

inline std::string format_labels(const std::vector<int>& labels) {
  std::string out;
  for (int l : labels) out += std::to_string(l) + '\n';
  return out;
}

inline std::vector<int> parse_labels(std::string_view text) {
  std::vector<int> out;
  for (auto line : detail::split_lines(text)) {
    if (line.empty()) continue;
    int v = 0;
    auto res = std::from_chars(line.data(), line.data() + line.size(), v);
    if (res.ec != std::errc() || res.ptr != line.data() + line.size() || v < 0)
      throw Error(Errc::BadFormat, "bad label line '" + std::string(line) + "'");
    out.push_back(v);
  }
  return out;
}

/// Loads an evaluation set from a tensor file and an optional label file.
inline EvalSet load_eval_set(const std::filesystem::path& tensor, const std::optional<std::filesystem::path>& labels) {
  const auto t = parse_tensor_file(read_text_file(tensor));
  EvalSet e;
  e.input_shape.assign(t.dims.begin() + 1, t.dims.end());
  e.sample_size = t.sample_size();
  e.inputs = t.data;
  e.class_count = t.class_count;
  if (labels) {
    e.labels = parse_labels(read_text_file(*labels));
    if (e.labels.size() != t.samples()) throw Error(Errc::BadFormat, "label count does not match tensor samples");
  }
  return e;
}

// ---------------------------------------------------------------------------
// Building one entry

struct CorpusEntry {
  std::string id;
  std::string role = "family";  // family | victim
  ModelSpec model;
  CompilerConfig config;
  TrainingMeta training;
  std::filesystem::path dir;
  std::filesystem::path binary_path;
  std::string binary_sha256;
  std::string text_sha256;
  std::uint64_t text_size = 0;
  double baseline_accuracy = 0;
};

/// Writes the sources, compiles them and checks the binary against the
/// in-process reference on every evaluation input.
inline CorpusEntry build_entry(const std::string& id, const ModelSpec& m, const WeightSet& ws, const CompilerConfig& cfg,
                               const FakeDataset& eval_data, const std::filesystem::path& dir) {
  const auto cc = require_toolchain(cfg.cc);
  std::filesystem::create_directories(dir);
  const auto src = emit_kernel_source(m, ws);
  write_text_file(dir / "kernel.c", src.kernel_c);
  write_text_file(dir / "weights.c", src.weights_c);
  const auto eval = eval_set_of(m, eval_data);
  write_text_file(dir / "eval.fscn", format_tensor_file(eval_tensor(eval)));
  write_text_file(dir / "eval.labels", format_labels(eval.labels));

  ExecSpec build;
  build.binary_path = cc;
  build.argv = compiler_flags(cfg);
  for (const char* a : {"kernel.c", "weights.c", "-o", "model", "-lm"}) build.argv.push_back(a);
  build.timeout_ms = 120000;
  build.memory_cap = 2ULL << 30;
  // The compiler runs in the entry directory so relative names stay fixed.
  ExecSpec in_dir = build;
  in_dir.workdir = dir;
  in_dir.keep_artifacts = true;
  const auto res = run_once(in_dir);
  if (res.status != RunStatus::Exited || res.code != 0)
    throw Error(Errc::BuildFailed, "compiling " + id + " failed: " + res.stderr_data);

  CorpusEntry e;
  e.id = id;
  e.model = m;
  e.config = cfg;
  e.training = ws.meta;
  e.dir = dir;
  e.binary_path = dir / "model";
  const auto img = load_elf(e.binary_path);
  e.binary_sha256 = sha256_hex(img.raw_bytes());
  e.text_sha256 = sha256_hex(img.text_bytes());
  e.text_size = img.text().size;

  ExecSpec run;
  run.binary_path = e.binary_path;
  run.argv = {(dir / "eval.fscn").string()};
  run.timeout_ms = 60000;
  const auto out = run_once(run);
  if (out.status != RunStatus::Exited || out.code != 0)
    throw Error(Errc::BaselineMismatch, id + " baseline run failed (" + status_token(out) + ")");
  const std::size_t n = eval_data.n;
  std::size_t correct = 0;
  if (m.head == Head::Argmax) {
    const auto preds = parse_class_predictions(out.stdout_data, n, m.class_count);
    if (!preds) throw Error(Errc::BaselineMismatch, id + " printed malformed predictions");
    for (std::size_t i = 0; i < n; ++i) {
      const int want = argmax(forward(m, ws, eval_data.input(i)));
      if ((*preds)[i] != want)
        throw Error(Errc::BaselineMismatch, id + " disagrees with the reference on sample " + std::to_string(i));
      correct += want == eval_data.labels[i];
    }
  } else {
    const auto outs = parse_vector_predictions(out.stdout_data, n, m.class_count);
    if (!outs) throw Error(Errc::BaselineMismatch, id + " printed malformed outputs");
    for (std::size_t i = 0; i < n; ++i) {
      const auto want = forward(m, ws, eval_data.input(i));
      if ((*outs)[i] != want)
        throw Error(Errc::BaselineMismatch, id + " disagrees with the reference on sample " + std::to_string(i));
      correct += argmax(want) == eval_data.labels[i];
    }
  }
  e.baseline_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return e;
}

// ---------------------------------------------------------------------------
// Manifest

struct CorpusManifest {
  std::string name = "corpus";
  ModelSpec model = default_mlp();
  std::size_t samples = 256;
  TrainOptions trainer;
  CompilerConfig compiler;
  std::uint64_t seed = 1;
  std::size_t family_size = 10;
  bool victim = true;
};

using CorpusJson = nlohmann::ordered_json;

inline CorpusJson manifest_to_json(const CorpusManifest& m) {
  return CorpusJson{{"name", m.name},
                    {"model", model_to_json(m.model)},
                    {"samples", m.samples},
                    {"trainer", {{"epochs", m.trainer.epochs}, {"lr", m.trainer.lr}, {"batch", m.trainer.batch}}},
                    {"compiler",
                     {{"opt_level", m.compiler.opt_level == OptLevel::O3 ? "O3" : "O0"},
                      {"vectorize", m.compiler.vectorize},
                      {"cc", m.compiler.cc}}},
                    {"seed", m.seed},
                    {"family_size", m.family_size},
                    {"victim", m.victim}};
}

template <typename J>
CorpusManifest manifest_from_json(const J& j) {
  CorpusManifest m;
  try {
    m.name = j.value("name", m.name);
    m.model = model_from_json(j.at("model"));
    m.samples = j.value("samples", m.samples);
    if (j.contains("trainer")) {
      const auto& t = j.at("trainer");
      m.trainer.epochs = t.value("epochs", m.trainer.epochs);
      m.trainer.lr = t.value("lr", m.trainer.lr);
      m.trainer.batch = t.value("batch", m.trainer.batch);
    }
    if (j.contains("compiler")) {
      const auto& c = j.at("compiler");
      const auto lvl = parse_opt_level(c.value("opt_level", std::string("O3")));
      if (!lvl) throw Error(Errc::BadFormat, "opt_level must be O0 or O3");
      m.compiler.opt_level = *lvl;
      m.compiler.vectorize = c.value("vectorize", true);
      m.compiler.cc = c.value("cc", std::string("cc"));
    }
    m.seed = j.value("seed", m.seed);
    m.family_size = j.value("family_size", m.family_size);
    m.victim = j.value("victim", m.victim);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadFormat, std::string("manifest: ") + e.what());
  }
  if (m.family_size == 0) throw Error(Errc::BadFormat, "family_size must be positive");
  return m;
}

inline CorpusJson entry_to_json(const CorpusEntry& e) {
  return CorpusJson{{"id", e.id},
                    {"role", e.role},
                    {"binary", e.binary_path.filename().string()},
                    {"binary_sha256", e.binary_sha256},
                    {"text_sha256", e.text_sha256},
                    {"text_size", e.text_size},
                    {"dataset_seed", e.training.dataset_seed},
                    {"train_seed", e.training.train_seed},
                    {"fit_accuracy", e.training.fit_accuracy},
                    {"baseline_accuracy", e.baseline_accuracy}};
}

struct Corpus {
  CorpusManifest manifest;
  std::filesystem::path dir;
  std::vector<CorpusEntry> entries;  // creation order; the victim (if any) last

  std::vector<const CorpusEntry*> family() const {
    std::vector<const CorpusEntry*> out;
    for (const auto& e : entries)
      if (e.role == "family") out.push_back(&e);
    return out;
  }
  const CorpusEntry* find(const std::string& id) const {
    for (const auto& e : entries)
      if (e.id == id) return &e;
    return nullptr;
  }
};

inline CorpusJson corpus_to_json(const Corpus& c, const CorpusJson& config = CorpusJson::object()) {
  CorpusJson entries = CorpusJson::array();
  for (const auto& e : c.entries) entries.push_back(entry_to_json(e));
  return CorpusJson{{"type", "corpus"}, {"manifest", manifest_to_json(c.manifest)}, {"config", config}, {"entries", entries}};
}

/// Trains and builds every entry. Entry i uses dataset seed derive_seed(seed, 2i)
/// and training seed derive_seed(seed, 2i+1); the victim takes the next index.
inline Corpus build_corpus(const CorpusManifest& man, const std::filesystem::path& dir,
                           const CorpusJson& config = CorpusJson::object(),
                           const std::function<void(const CorpusEntry&)>& progress = {}) {
  require_toolchain(man.compiler.cc);
  Corpus c;
  c.manifest = man;
  c.dir = dir;
  std::filesystem::create_directories(dir);
  const std::size_t total = man.family_size + (man.victim ? 1 : 0);
  for (std::size_t i = 0; i < total; ++i) {
    const bool victim = i == man.family_size;
    const std::string id = victim ? "victim" : detail::fmt("e%02zu", i);
    const auto ds = make_fake_dataset(derive_seed(man.seed, 2 * i), man.samples, man.model.input_size(), man.model.class_count);
    TrainOptions opt = man.trainer;
    opt.seed = derive_seed(man.seed, 2 * i + 1);
    const auto ws = train(man.model, ds, opt);
    auto e = build_entry(id, man.model, ws, man.compiler, ds, dir / id);
    e.role = victim ? "victim" : "family";
    if (!c.entries.empty() && e.text_sha256 != c.entries.front().text_sha256)
      throw Error(Errc::StructureMismatch, id + " .text differs from " + c.entries.front().id);
    if (progress) progress(e);
    c.entries.push_back(std::move(e));
  }
  write_text_file(dir / "corpus.json", corpus_to_json(c, config).dump(2) + "\n");
  return c;
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
  const auto path = dir / "corpus.json";
  CorpusJson j;
  try {
    j = CorpusJson::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadFormat, "corpus.json: " + std::string(e.what()));
  }
  if (j.value("type", "") != "corpus") throw Error(Errc::BadFormat, path.string() + " is not a corpus index");
  Corpus c;
  c.dir = dir;
  c.manifest = manifest_from_json(j.at("manifest"));
  for (const auto& je : j.at("entries")) {
    CorpusEntry e;
    e.id = je.at("id").get<std::string>();
    e.role = je.value("role", "family");
    e.model = c.manifest.model;
    e.config = c.manifest.compiler;
    e.dir = dir / e.id;
    e.binary_path = e.dir / je.value("binary", "model");
    e.binary_sha256 = je.at("binary_sha256").get<std::string>();
    e.text_sha256 = je.at("text_sha256").get<std::string>();
    e.text_size = je.value("text_size", std::uint64_t{0});
    e.training.dataset_seed = je.value("dataset_seed", std::uint64_t{0});
    e.training.train_seed = je.value("train_seed", std::uint64_t{0});
    e.training.fit_accuracy = je.value("fit_accuracy", 0.0);
    e.baseline_accuracy = je.value("baseline_accuracy", 0.0);
    c.entries.push_back(std::move(e));
  }
  return c;
}

inline EvalSet entry_eval_set(const CorpusEntry& e) {
  return load_eval_set(e.dir / "eval.fscn", e.dir / "eval.labels");
}

}  // namespace flipscan
