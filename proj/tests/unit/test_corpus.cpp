#include <gtest/gtest.h>

#include "flipscan/codegen.hpp"
#include "flipscan/corpus.hpp"
#include "flipscan/probe.hpp"
#include "test_support.hpp"

using namespace flipscan;
using namespace flipscan::testing;

namespace {

WeightSet trained(const ModelSpec& m, const FakeDataset& ds, std::uint64_t seed) {
  TrainOptions opt;
  opt.seed = seed;
  return train(m, ds, opt);
}

RawOutcome run_model(const CorpusEntry& e, const std::filesystem::path& input) {
  ExecSpec s;
  s.binary_path = e.binary_path;
  s.argv = {input.string()};
  s.timeout_ms = 10000;
  return run_once(s);
}

}  // namespace

TEST(Toolchain, FlagsAndLookup) {
  EXPECT_EQ(compiler_flags({OptLevel::O3, true}),
            (std::vector<std::string>{"-O3", "-std=c11", "-ffp-contract=off", "-fno-fast-math", "-mavx2"}));
  EXPECT_EQ(compiler_flags({OptLevel::O0, false}).back(), "-mno-avx2");
  EXPECT_EQ(parse_opt_level("O0"), OptLevel::O0);
  EXPECT_FALSE(parse_opt_level("O2"));
  EXPECT_TRUE(find_program("cc"));
  try {
    require_toolchain("flipscan-no-such-cc");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ToolchainMissing);
  }
}

TEST(Codegen, WeightsLiveOutsideTheKernel) {
  const auto m = default_mlp();
  const auto ds = make_fake_dataset(1, 64, 64, 10);
  Rng rng(1);
  const auto src = emit_kernel_source(m, init_weights(m, rng));
  EXPECT_NE(src.kernel_c.find("extern const float W0[2048];"), std::string::npos);
  EXPECT_EQ(src.kernel_c.find("e-0"), std::string::npos);
  EXPECT_NE(src.weights_c.find("const float W2[320]"), std::string::npos);
}

TEST(Build, TextIsIndependentOfWeights) {
  TempDir dir;
  const auto m = default_mlp();
  const auto ds = make_fake_dataset(21, 128, 64, 10);
  const auto w1 = trained(m, ds, 1), w2 = trained(m, ds, 2);
  const CompilerConfig cfg;
  const auto a = build_entry("a", m, w1, cfg, ds, dir / "a");
  const auto a2 = build_entry("a2", m, w1, cfg, ds, dir / "a2");
  const auto b = build_entry("b", m, w2, cfg, ds, dir / "b");
  EXPECT_EQ(a.binary_sha256, a2.binary_sha256);
  EXPECT_EQ(a.text_sha256, b.text_sha256);
  EXPECT_NE(a.binary_sha256, b.binary_sha256);
  EXPECT_DOUBLE_EQ(a.baseline_accuracy, w1.meta.fit_accuracy);
  EXPECT_GE(a.baseline_accuracy, kWellTrainedAccuracy);
}

TEST(Build, UnoptimizedTextIsLarger) {
  TempDir dir;
  for (const auto& m : {default_mlp(), default_conv()}) {
    const auto ds = make_fake_dataset(22, 64, 64, 10);
    const auto ws = trained(m, ds, 1);
    const auto o3 = build_entry("o3", m, ws, {OptLevel::O3, true}, ds, dir / (m.name + "o3"));
    const auto sse = build_entry("sse", m, ws, {OptLevel::O3, false}, ds, dir / (m.name + "sse"));
    const auto o0 = build_entry("o0", m, ws, {OptLevel::O0, true}, ds, dir / (m.name + "o0"));
    EXPECT_GT(o0.text_size, o3.text_size) << m.name;
    EXPECT_NE(o3.text_sha256, sse.text_sha256) << m.name;
  }
}

TEST(Build, QuantizedAndTanhHeads) {
  TempDir dir;
  const auto ds = make_fake_dataset(23, 128, 64, 10);
  const auto mq = default_conv(true);
  const auto q = build_entry("q", mq, trained(mq, ds, 1), {}, ds, dir / "q");
  EXPECT_GE(q.baseline_accuracy, kWellTrainedAccuracy);

  // Single-weight conv: 3x3 input, 2x2 kernel, tanh over the four outputs.
  const ModelSpec t{"t", {1, 3, 3}, {conv2d(1, 2, 2)}, 4, Head::Tanh};
  WeightSet ws;
  ws.layers.resize(1);
  ws.layers[0].w = {0.0f, 0.5f, 0.0f, 0.0f};
  ws.layers[0].b = {0.0f};
  const auto tds = make_fake_dataset(24, 16, 9, 4);
  const auto e = build_entry("t", t, ws, {}, tds, dir / "t");
  const auto out = run_model(e, e.dir / "eval.fscn");
  const auto rows = parse_vector_predictions(out.stdout_data, 16, 4);
  ASSERT_TRUE(rows);
  for (std::size_t i = 0; i < 16; ++i) {
    const auto x = tds.input(i);
    EXPECT_EQ((*rows)[i][1], std::tanh(0.5f * x[2]));
  }
}

TEST(Build, RuntimeRejectsBadFiles) {
  TempDir dir;
  const ModelSpec m{"id", {4}, {dense(4)}, 4};
  WeightSet ws;
  ws.layers.resize(1);
  ws.layers[0].w.assign(16, 0.0f);
  for (int k = 0; k < 4; ++k) ws.layers[0].w[k * 4 + k] = 1.0f;
  ws.layers[0].b.assign(4, 0.0f);
  const auto ds = make_fake_dataset(25, 8, 4, 4);
  const auto e = build_entry("id", m, ws, {}, ds, dir / "id");

  write_text_file(dir / "basis.fscn", "FSCN1 2 4 4 f32 4\n1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n");
  auto out = run_model(e, dir / "basis.fscn");
  EXPECT_EQ(out.code, 0);
  EXPECT_EQ(out.stdout_data, "0\n1\n2\n3\n");

  write_text_file(dir / "trunc.fscn", "FSCN1 2 4 4 f32 4\n1 0 0 0\n0 1\n");
  out = run_model(e, dir / "trunc.fscn");
  EXPECT_EQ(out.status, RunStatus::Exited);
  EXPECT_EQ(out.code, 2);
  EXPECT_TRUE(out.stdout_data.empty());

  write_text_file(dir / "shape.fscn", "FSCN1 2 1 5 f32 4\n1 0 0 0 0\n");
  out = run_model(e, dir / "shape.fscn");
  EXPECT_EQ(out.code, 3);
  EXPECT_TRUE(out.stdout_data.empty());

  out = run_model(e, dir / "missing.fscn");
  EXPECT_EQ(out.code, 2);
}

TEST(Corpus, BuildLoadRoundTrip) {
  TempDir dir;
  CorpusManifest man;
  man.samples = 64;
  man.family_size = 2;
  man.seed = 9;
  const auto c = build_corpus(man, dir.path(), {{"seed", 9}});
  ASSERT_EQ(c.entries.size(), 3u);
  EXPECT_EQ(c.entries[0].id, "e00");
  EXPECT_EQ(c.entries[1].id, "e01");
  EXPECT_EQ(c.entries[2].id, "victim");
  EXPECT_EQ(c.family().size(), 2u);
  EXPECT_EQ(c.entries[1].training.dataset_seed, derive_seed(9, 2));
  EXPECT_EQ(c.entries[1].training.train_seed, derive_seed(9, 3));
  for (const auto& e : c.entries) {
    EXPECT_EQ(e.text_sha256, c.entries[0].text_sha256);
    EXPECT_GE(e.baseline_accuracy, kWellTrainedAccuracy);
  }
  const auto back = load_corpus(dir.path());
  ASSERT_EQ(back.entries.size(), 3u);
  EXPECT_EQ(back.manifest.model, man.model);
  EXPECT_EQ(back.entries[2].role, "victim");
  EXPECT_EQ(back.entries[1].binary_sha256, c.entries[1].binary_sha256);
  const auto eval = entry_eval_set(back.entries[0]);
  EXPECT_EQ(eval.samples(), 64u);
  EXPECT_EQ(eval.input_shape, (Shape{64}));
  EXPECT_EQ(manifest_from_json(manifest_to_json(man)).family_size, 2u);
}

TEST(Probe, ExecutableProbeOnBuiltModel) {
  TempDir dir;
  const auto m = default_mlp();
  const auto ds = make_fake_dataset(26, 128, 64, 10);
  const auto e = build_entry("p", m, trained(m, ds, 1), {}, ds, dir / "p");
  ExecutableProbe probe(load_elf(e.binary_path), entry_eval_set(e), {});
  EXPECT_TRUE(probe.baseline().completed);
  EXPECT_DOUBLE_EQ(*probe.baseline().verdict.metrics.accuracy, e.baseline_accuracy);
  EXPECT_GE(probe.timeout_ms(), kMinTimeoutMs);
  EXPECT_TRUE(probe.has_fast_scope());
  EXPECT_EQ(probe.eval(EvalScope::Fast).samples(), kDefaultFastSamples);
  const auto& img = probe.image();
  for (std::uint64_t i = 0; i < 16; ++i) {
    const auto loc = location_at(img, i * 997 % (img.text().size * 8));
    const auto r1 = probe.evaluate(loc, EvalScope::Full);
    const auto r2 = probe.evaluate(loc, EvalScope::Full);
    EXPECT_EQ(r1.completed, r2.completed);
    EXPECT_EQ(r1.verdict.kind, r2.verdict.kind);
  }
  EXPECT_EQ(probe.run_bytes(img.raw_bytes(), EvalScope::Full).verdict.kind, VerdictKind::NoEffect);
}

TEST(Probe, GenerativeBaselineUsesOwnOutputs) {
  TempDir dir;
  ModelSpec m{"g", {64}, {dense(16), relu(), dense(10)}, 10, Head::Tanh};
  const auto ds = make_fake_dataset(27, 128, 64, 10);
  const auto e = build_entry("g", m, trained(m, ds, 1), {}, ds, dir / "g");
  OracleConfig cfg;
  cfg.kind = OracleKind::Generative;
  ExecutableProbe probe(load_elf(e.binary_path), entry_eval_set(e), cfg);
  ASSERT_TRUE(probe.baseline().score);
  EXPECT_EQ(probe.baseline().score->distortion, 0.0);
  EXPECT_EQ(probe.baseline().score->label_change_fraction, 0.0);
  EXPECT_EQ(probe.eval(EvalScope::Full).reference_outputs.size(), 128u);
}
