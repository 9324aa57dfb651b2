// flipscan: bit-flip vulnerability campaigns over compiled DNN executables.
//
// Exit codes: 0 ok, 1 usage, 2 bad input, 3 runtime failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flipscan/flipscan.hpp"

namespace fs = std::filesystem;
using namespace flipscan;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitInput = 2;
constexpr int kExitRuntime = 3;

int exit_code_for(Errc c) {
  switch (c) {
    case Errc::BaselineFailed:
    case Errc::EmptyHistory:
    case Errc::UnderTrained:
    case Errc::ToolchainMissing:
    case Errc::BaselineMismatch:
    case Errc::BuildFailed: return kExitRuntime;
    default: return kExitInput;
  }
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Global {
  std::size_t workers = 1;
  std::uint64_t seed = 1;
  std::string out;
  int verbosity = 1;
  std::string oracle = "classifier";
  double delta = 0.15;
  double pin_threshold = 0.90;
  double label_change_threshold = 0.85;
  double distortion_pct = 0.85;
  std::size_t warmup = 100;
  std::uint32_t timeout_ms = 0;
  bool keep_artifacts = false;
  std::string cc = "cc";
  std::string opt_level;
  std::string vectorize;
  std::string exclude_ranges;
  bool resume = false;
};

Global g;
Json g_args = Json::object();
std::string g_command;

OracleConfig oracle_config() {
  OracleConfig c;
  const auto k = parse_oracle_kind(g.oracle);
  if (!k) throw UsageError("unknown oracle '" + g.oracle + "'");
  c.kind = *k;
  c.random_guess_slack = g.delta;
  c.pin_threshold = g.pin_threshold;
  c.label_change_threshold = g.label_change_threshold;
  c.distortion_percentile = g.distortion_pct;
  c.warmup = g.warmup;
  try {
    c.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return c;
}

/// The GlobalConfig header written into every output file.
Json global_config() {
  return Json{{"command", g_command},
              {"workers", g.workers},
              {"seed", g.seed},
              {"out", g.out},
              {"verbosity", g.verbosity},
              {"oracle", oracle_to_json(oracle_config())},
              {"timeout_ms", g.timeout_ms},
              {"keep_artifacts", g.keep_artifacts},
              {"toolchain", {{"cc", g.cc}, {"opt_level", g.opt_level}, {"vectorize", g.vectorize}}},
              {"exclude_ranges", g.exclude_ranges},
              {"resume", g.resume},
              {"args", g_args}};
}

std::optional<fs::path> out_path(const std::string& name) {
  if (g.out.empty()) return std::nullopt;
  fs::create_directories(g.out);
  return fs::path(g.out) / name;
}

void write_json(const std::string& name, Json body) {
  const auto p = out_path(name);
  if (!p) return;
  Json doc{{"config", global_config()}};
  for (auto& [k, v] : body.items()) doc[k] = v;
  write_text_file(*p, doc.dump(2) + "\n");
  if (g.verbosity > 0) std::printf("wrote %s\n", p->c_str());
}

void write_csv(const std::string& name, const std::string& csv) {
  const auto p = out_path(name);
  if (!p) return;
  write_text_file(*p, "# " + global_config().dump() + "\n" + csv);
  if (g.verbosity > 0) std::printf("wrote %s\n", p->c_str());
}

void info(const std::string& s) {
  if (g.verbosity > 0) std::printf("%s\n", s.c_str());
}

void debug(const std::string& s) {
  if (g.verbosity > 1) std::fprintf(stderr, "%s\n", s.c_str());
}

std::string pct(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * f);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

CompilerConfig apply_toolchain(CompilerConfig c) {
  if (!g.opt_level.empty()) {
    const auto lvl = parse_opt_level(g.opt_level);
    if (!lvl) throw UsageError("--opt-level must be O0 or O3");
    c.opt_level = *lvl;
  }
  if (g.vectorize == "on") c.vectorize = true;
  else if (g.vectorize == "off") c.vectorize = false;
  else if (!g.vectorize.empty()) throw UsageError("--vectorize must be on or off");
  if (g.cc != "cc" || c.cc.empty()) c.cc = g.cc;
  return c;
}

ProbeOptions probe_options(std::size_t fast_samples) {
  ProbeOptions o;
  o.timeout_ms = g.timeout_ms;
  o.fast_samples = fast_samples;
  o.keep_artifacts = g.keep_artifacts;
  return o;
}

SweepOptions sweep_options() {
  SweepOptions o;
  o.workers = g.workers;
  o.exclude = g.exclude_ranges.empty() ? std::vector<ByteRange>{} : parse_ranges(g.exclude_ranges);
  o.resume = g.resume;
  o.config = global_config();
  return o;
}

void print_summary(const CampaignSummary& s, std::uint64_t text_size) {
  std::printf("text bytes      %llu\n", static_cast<unsigned long long>(text_size));
  std::printf("bits swept      %llu\n", static_cast<unsigned long long>(s.total_bits));
  std::printf("vulnerable      %llu (%s)\n", static_cast<unsigned long long>(s.vuln_count), pct(s.vuln_pct).c_str());
  std::printf("0->1 share      %s\n", pct(s.zero_to_one_pct).c_str());
  std::printf("crashes         %llu\n", static_cast<unsigned long long>(s.crash_count));
  if (!s.per_class_pin_counts.empty()) {
    std::printf("pinned classes ");
    for (const auto& [c, n] : s.per_class_pin_counts) std::printf(" %d:%llu", c, static_cast<unsigned long long>(n));
    std::printf("\n");
  }
  std::size_t hit = 0;
  for (const auto& b : s.histogram) hit += b.vuln_count > 0;
  std::printf("buckets hit     %zu/%zu\n", hit, s.histogram.size());
}

// ---------------------------------------------------------------------------
// corpus-build

struct CorpusBuildArgs {
  std::string manifest;
  std::optional<std::size_t> family_size;
  bool seed_set = false;
};

int cmd_corpus_build(const CorpusBuildArgs& a) {
  if (g.out.empty()) throw UsageError("corpus-build needs --out DIR");
  CorpusManifest man;
  try {
    man = manifest_from_json(CorpusJson::parse(read_text_file(a.manifest)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadFormat, std::string("manifest: ") + e.what());
  }
  man.compiler = apply_toolchain(man.compiler);
  if (a.seed_set) man.seed = g.seed;
  if (a.family_size) man.family_size = *a.family_size;
  g_args = {{"manifest", a.manifest}};
  const auto canonical = manifest_to_json(man);
  std::printf("manifest %s\n", sha256_hex(canonical.dump()).c_str());
  const auto t0 = std::chrono::steady_clock::now();
  const auto c = build_corpus(man, g.out, global_config(), [](const CorpusEntry& e) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-7s fit %.3f  baseline %.3f  text %llu bytes  %s", e.id.c_str(),
                  e.training.fit_accuracy, e.baseline_accuracy, static_cast<unsigned long long>(e.text_size),
                  e.text_sha256.substr(0, 16).c_str());
    info(buf);
  });
  std::printf("%zu entries, text %s, %.1fs\n", c.entries.size(), c.entries.front().text_sha256.c_str(), seconds_since(t0));
  info("wrote " + (fs::path(g.out) / "corpus.json").string());
  return 0;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string binary;
  std::string eval;
  std::string labels;
  std::size_t fast_samples = kDefaultFastSamples;
  std::size_t buckets = kDefaultBuckets;
};

std::optional<fs::path> labels_for(const fs::path& tensor, const std::string& explicit_labels) {
  if (!explicit_labels.empty()) return fs::path(explicit_labels);
  auto sibling = tensor;
  sibling.replace_extension(".labels");
  if (fs::exists(sibling)) return sibling;
  return std::nullopt;
}

int cmd_sweep(const SweepArgs& a) {
  if (g.resume && g.out.empty()) throw UsageError("--resume needs --out DIR holding campaign.jsonl");
  g_args = {{"binary", a.binary}, {"eval", a.eval}, {"labels", a.labels}, {"fast_samples", a.fast_samples},
            {"buckets", a.buckets}};
  const auto cfg = oracle_config();
  const auto eval = load_eval_set(a.eval, labels_for(a.eval, a.labels));
  if (cfg.kind == OracleKind::Classifier && eval.labels.empty())
    throw Error(Errc::BadFormat, "the classifier oracle needs labels (--labels)");
  auto img = load_elf(a.binary);
  const auto sha = sha256_hex(img.raw_bytes());
  const auto text_size = img.text().size;
  const auto t0 = std::chrono::steady_clock::now();
  ExecutableProbe probe(std::move(img), eval, cfg, probe_options(a.fast_samples));
  char buf[256];
  std::snprintf(buf, sizeof buf, "baseline %s  %.1f ms/run  timeout %u ms", probe.baseline().status.c_str(),
                probe.baseline_wall_ms(), probe.timeout_ms());
  info(buf);
  auto so = sweep_options();
  so.log_path = out_path("campaign.jsonl");
  const auto res = sweep(probe.image(), sha, probe, so);
  const auto s = summarize(res.records, res.header.total_bits, text_size, a.buckets);
  std::printf("campaign %s\n", res.header.campaign_id.c_str());
  if (const auto& acc = res.baseline.verdict.metrics.accuracy) std::printf("baseline acc    %s\n", pct(*acc).c_str());
  print_summary(s, text_size);
  std::printf("executed        %zu bits in %.1fs\n", res.executed, seconds_since(t0));
  if (so.log_path) info("wrote " + so.log_path->string());
  write_json("summary.json", {{"type", "summary"}, {"campaign_id", res.header.campaign_id}, {"summary", summary_to_json(s)}});
  write_csv("histogram.csv", histogram_csv(s));
  return 0;
}

// ---------------------------------------------------------------------------
// superbits

struct SuperbitArgs {
  std::string corpus;
  std::string victim = "victim";
  std::optional<std::size_t> family;
  std::size_t fast_samples = kDefaultFastSamples;
  bool base_rate = false;
};

int cmd_superbits(const SuperbitArgs& a) {
  g_args = {{"corpus", a.corpus}, {"victim", a.victim}, {"fast_samples", a.fast_samples}, {"base_rate", a.base_rate}};
  if (a.family) g_args["family"] = *a.family;
  const auto cfg = oracle_config();
  const auto corpus = load_corpus(a.corpus);
  auto fam = corpus.family();
  if (a.family) {
    if (*a.family == 0 || *a.family > fam.size()) throw UsageError("--family must lie in 1.." + std::to_string(fam.size()));
    fam.resize(*a.family);
  }
  const auto* victim = corpus.find(a.victim);
  if (!victim) throw Error(Errc::BadFormat, "corpus has no entry '" + a.victim + "'");
  if (std::find(fam.begin(), fam.end(), victim) != fam.end()) throw UsageError("the victim must not be a family member");

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::unique_ptr<ExecutableProbe>> probes;
  std::vector<ProbeMember<ExecutableProbe>> members;
  members.reserve(fam.size() + 1);
  for (const auto* e : fam) {
    probes.push_back(std::make_unique<ExecutableProbe>(load_elf(e->binary_path), entry_eval_set(*e), cfg,
                                                       probe_options(a.fast_samples)));
    auto so = sweep_options();
    if (auto p = out_path("sweeps")) {
      fs::create_directories(*p);
      so.log_path = *p / (e->id + ".jsonl");
    }
    members.emplace_back(e->id, probes.back()->image(), *probes.back(), so);
    if (members.size() > 1) members.back().borrow_history(members.front());
  }
  const auto search = shrink_search(std::span<const ProbeMember<ExecutableProbe>>(members));

  probes.push_back(std::make_unique<ExecutableProbe>(load_elf(victim->binary_path), entry_eval_set(*victim), cfg,
                                                     probe_options(a.fast_samples)));
  auto vso = sweep_options();
  if (auto p = out_path("sweeps")) vso.log_path = *p / (victim->id + ".jsonl");
  ProbeMember<ExecutableProbe> vm(victim->id, probes.back()->image(), *probes.back(), vso);
  vm.borrow_history(members.front());
  const auto curve = transfer_curve(search, vm);

  std::printf("family %zu entries, %llu bits each\n", members.size(),
              static_cast<unsigned long long>(members.front().total_bits()));
  std::printf("%-4s %-8s %-10s %s\n", "n", "entry", "|S_n|", "transfer");
  std::string csv = "n,entry,superbits,transfer\n";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const auto& p = curve[i];
    const std::string tr = p.fraction ? pct(*p.fraction) : "-";
    std::printf("%-4zu %-8s %-10zu %s\n", p.family_size, members[i].id().c_str(), p.superbits, tr.c_str());
    char row[128];
    std::snprintf(row, sizeof row, "%zu,%s,%zu,%s\n", p.family_size, members[i].id().c_str(), p.superbits,
                  p.fraction ? std::to_string(*p.fraction).c_str() : "");
    csv += row;
  }
  std::printf("flips evaluated %llu (full sweeps of every entry: %llu)\n",
              static_cast<unsigned long long>(search.executions), static_cast<unsigned long long>(search.naive_executions));

  Json result{{"type", "superbits_search"},
              {"victim", victim->id},
              {"superbits", search.superbits.bits.size()},
              {"size_after", search.size_after},
              {"executions", search.executions},
              {"naive_executions", search.naive_executions}};
  if (!curve.empty() && curve.back().fraction) result["transfer"] = *curve.back().fraction;
  if (a.base_rate) {
    const auto res = sweep(probes.back()->image(), victim->binary_sha256, *probes.back(), vso);
    const auto s = summarize(res.records, res.header.total_bits, probes.back()->image().text().size);
    std::printf("victim base rate %s\n", pct(s.vuln_pct).c_str());
    result["victim_vuln_pct"] = s.vuln_pct;
  }
  std::printf("%zu superbits, %.1fs\n", search.superbits.bits.size(), seconds_since(t0));
  if (auto p = out_path("superbits.jsonl")) {
    write_text_file(*p, format_superbits(search.superbits, global_config()));
    info("wrote " + p->string());
  }
  write_csv("transfer.csv", csv);
  write_json("search.json", result);
  return 0;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string superbits;
  std::string templates = "full";
  double zero_one_ratio = 8855.0 / 17366.0;
  std::size_t max_attempts = 10;
  std::size_t runs = 5;
  std::string order = "confidence";
  std::optional<double> stub_p;
  double stub_crash = 0.0;
  std::string corpus;
  std::string victim = "victim";
  std::size_t online_samples = kDefaultOnlineSamples;
};

std::vector<BitLocation> attack_order(const SuperbitSet& s, const std::string& order, std::uint64_t seed) {
  auto bits = s.ordered();
  if (order == "confidence") return bits;
  if (order == "address") {
    std::sort(bits.begin(), bits.end(), [](const auto& x, const auto& y) { return x.ordinal() < y.ordinal(); });
    return bits;
  }
  if (order == "random") {
    Rng rng(seed);
    shuffle(bits.begin(), bits.end(), rng);
    return bits;
  }
  throw UsageError("--order must be confidence, address or random");
}

int cmd_simulate(const SimulateArgs& a) {
  g_args = {{"superbits", a.superbits}, {"templates", a.templates}, {"zero_one_ratio", a.zero_one_ratio},
            {"max_attempts", a.max_attempts}, {"runs", a.runs}, {"order", a.order},
            {"stub_p", a.stub_p ? Json(*a.stub_p) : Json(nullptr)}, {"stub_crash", a.stub_crash},
            {"corpus", a.corpus}, {"victim", a.victim}, {"online_samples", a.online_samples}};
  if (a.stub_p.has_value() == !a.corpus.empty()) throw UsageError("give exactly one of --stub-p or --corpus");
  if (a.runs == 0) throw UsageError("--runs must be positive");
  const auto set = parse_superbits(read_text_file(a.superbits));
  const auto bits = attack_order(set, a.order, derive_seed(g.seed, 1));

  TemplatePool pool;
  if (a.templates == "full") pool = full_coverage_templates();
  else {
    std::size_t n = 0;
    try {
      n = std::stoull(a.templates);
    } catch (const std::exception&) {
      throw UsageError("--templates must be a count or 'full'");
    }
    if (!(a.zero_one_ratio >= 0 && a.zero_one_ratio <= 1)) throw UsageError("--zero-one-ratio must lie in [0,1]");
    pool = generate_templates(derive_seed(g.seed, 0), n, a.zero_one_ratio);
  }
  const TemplateIndex index(pool);
  std::printf("templates %zu (%zu 0->1), superbits %zu\n", pool.templates.size(), pool.zero_to_one(), bits.size());

  std::vector<AttackRun> runs;
  std::string trace = global_config().dump() + "\n";
  std::optional<double> acc_before;
  std::vector<double> acc_after;
  std::unique_ptr<ExecutableProbe> probe;
  TextPlacement placement;
  if (!a.corpus.empty()) {
    const auto corpus = load_corpus(a.corpus);
    const auto* e = corpus.find(a.victim);
    if (!e) throw Error(Errc::BadFormat, "corpus has no entry '" + a.victim + "'");
    if (!set.provenance.empty() && set.provenance.front().text_sha256 != e->text_sha256)
      throw Error(Errc::StructureMismatch, "victim .text differs from the superbit family");
    auto eval = entry_eval_set(*e).prefix(a.online_samples);
    probe = std::make_unique<ExecutableProbe>(load_elf(e->binary_path), eval, oracle_config(), probe_options(0));
    placement = TextPlacement::of(probe->image());
    acc_before = probe->baseline().verdict.metrics.accuracy;
  }
  for (std::size_t r = 0; r < a.runs; ++r) {
    const auto seed = derive_seed(g.seed, 2 + r);
    AttackRun run;
    if (probe) {
      LiveVictim v(*probe);
      run = simulate_attack(bits, index, v, seed, a.max_attempts, placement);
      if (run.succeeded && v.last_result() && v.last_result()->verdict.metrics.accuracy)
        acc_after.push_back(*v.last_result()->verdict.metrics.accuracy);
    } else {
      StubVictim v({*a.stub_p, a.stub_crash});
      run = simulate_attack(bits, index, v, seed, a.max_attempts, placement);
    }
    for (const auto& at : run.attempts) trace += attempt_to_json(r, at).dump() + "\n";
    debug("run " + std::to_string(r) + ": " + std::to_string(run.flips_attempted) + " flips, " +
          (run.succeeded ? "success" : "failed"));
    runs.push_back(std::move(run));
  }
  const auto st = attack_stats(runs);
  std::printf("runs            %zu\n", st.runs);
  std::printf("#flips          %.2f\n", st.mean_flips);
  std::printf("#crashes        %.2f\n", st.mean_crashes);
  std::printf("success rate    %s\n", pct(st.success_rate).c_str());
  std::printf("single flip     %s of successes\n", pct(st.single_flip_fraction).c_str());
  Json summary{{"type", "attack_summary"}, {"stats", stats_to_json(st)}};
  if (acc_before) {
    std::printf("acc before      %s\n", pct(*acc_before).c_str());
    summary["accuracy_before"] = *acc_before;
  }
  if (!acc_after.empty()) {
    double m = 0;
    for (double x : acc_after) m += x;
    m /= static_cast<double>(acc_after.size());
    std::printf("acc after       %s\n", pct(m).c_str());
    summary["accuracy_after"] = m;
  }
  if (auto p = out_path("attack.jsonl")) {
    write_text_file(*p, trace);
    info("wrote " + p->string());
  }
  write_json("attack_summary.json", summary);
  return 0;
}

// ---------------------------------------------------------------------------
// classify-flips / report

CampaignLogContents read_complete_log(const std::string& path) {
  auto log = read_campaign_log(path);
  std::sort(log.records.begin(), log.records.end(),
            [](const auto& x, const auto& y) { return x.loc.ordinal() < y.loc.ordinal(); });
  return log;
}

int cmd_classify(const std::string& log_path, const std::string& binary) {
  g_args = {{"log", log_path}, {"binary", binary}};
  const auto log = read_complete_log(log_path);
  const auto img = load_elf(binary);
  if (sha256_hex(img.raw_bytes()) != log.header.binary_sha256)
    throw Error(Errc::StructureMismatch, "binary does not match the campaign log");
  const auto layout = TextLayout::of(img);
  const auto rep = flip_type_report(log.records, log.header.total_bits, layout);
  std::printf("vulnerable flips %llu\n", static_cast<unsigned long long>(rep.vulnerable));
  std::printf("%-10s %-10s %8s %8s\n", "class", "bucket", "count", "share");
  for (const auto& r : rep.ranked)
    std::printf("%-10s %-10s %8llu %7.2f%%\n", r.cls.c_str(), r.bucket.c_str(), static_cast<unsigned long long>(r.count),
                r.percentage);
  std::printf("post-decode:");
  for (const auto& [k, n] : rep.post_decode) std::printf(" %s=%llu", k.c_str(), static_cast<unsigned long long>(n));
  std::printf("\n");
  const auto mix = instruction_mix(layout);
  Json mix_j = Json::object();
  for (const auto& [c, n] : mix.bytes) mix_j[to_string(c)] = n;
  mix_j["undecoded"] = mix.undecoded_bytes;
  write_csv("flip_types.csv", flip_report_csv(rep.ranked));
  write_csv("flip_fields.csv", flip_report_csv(rep.fine, "class", "field"));
  write_csv("flip_mnemonics.csv", flip_report_csv(rep.mnemonics, "mnemonic", "field_bucket"));
  Json ranked = Json::array();
  for (const auto& r : rep.ranked) ranked.push_back({{"class", r.cls}, {"bucket", r.bucket}, {"count", r.count}, {"pct", r.percentage}});
  write_json("flip_types.json", {{"type", "flip_types"},
                                 {"campaign_id", log.header.campaign_id},
                                 {"vulnerable", rep.vulnerable},
                                 {"ranked", ranked},
                                 {"post_decode", rep.post_decode},
                                 {"text_bytes_by_class", mix_j}});
  return 0;
}

int cmd_report(const std::string& log_path, std::size_t buckets) {
  g_args = {{"log", log_path}, {"buckets", buckets}};
  const auto log = read_complete_log(log_path);
  const auto s = summarize(log.records, log.header.total_bits, log.header.text_size, buckets);
  std::printf("campaign %s\n", log.header.campaign_id.c_str());
  print_summary(s, log.header.text_size);
  write_csv("histogram.csv", histogram_csv(s));
  write_json("summary.json", {{"type", "summary"}, {"campaign_id", log.header.campaign_id}, {"summary", summary_to_json(s)}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bit-flip vulnerability campaigns over compiled DNN executables"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", "flipscan 0.1.0");

  app.add_option("--workers", g.workers, "Parallel probe workers")->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed", g.seed, "Base seed for all randomness");
  app.add_option("--out", g.out, "Output directory for machine-readable files");
  app.add_flag("-v,--verbose", [](std::int64_t n) { g.verbosity = 1 + static_cast<int>(n); }, "More output");
  app.add_flag("-q,--quiet", [](std::int64_t) { g.verbosity = 0; }, "Only the summary");
  app.add_option("--oracle", g.oracle, "classifier | pinned | generative")
      ->check(CLI::IsMember({"classifier", "pinned", "generative"}));
  app.add_option("--delta", g.delta, "Random-guess slack");
  app.add_option("--pin-threshold", g.pin_threshold, "Pinned-class fraction");
  app.add_option("--label-change-threshold", g.label_change_threshold, "Generative label-change fraction");
  app.add_option("--distortion-pct", g.distortion_pct, "Generative distortion percentile");
  app.add_option("--warmup", g.warmup, "Scored flips before the distortion percentile is used");
  app.add_option("--timeout-ms", g.timeout_ms, "Per-run timeout (0: from the baseline run)");
  app.add_flag("--keep-artifacts", g.keep_artifacts, "Keep mutated binaries and run directories");
  app.add_option("--cc", g.cc, "C compiler");
  app.add_option("--opt-level", g.opt_level, "O0 | O3")->check(CLI::IsMember({"O0", "O3", "0", "3"}));
  app.add_option("--vectorize", g.vectorize, "on | off")->check(CLI::IsMember({"on", "off"}));
  app.add_option("--exclude-ranges", g.exclude_ranges, "Text byte ranges to skip, e.g. 0x0-0x40,0x100-0x120");
  app.add_flag("--resume", g.resume, "Continue campaign logs found in --out");

  CorpusBuildArgs cb;
  auto* c_build = app.add_subcommand("corpus-build", "Train and compile a same-structure family plus a victim");
  c_build->add_option("manifest", cb.manifest, "Corpus manifest (JSON)")->required()->check(CLI::ExistingFile);
  c_build->add_option("--family-size", cb.family_size, "Override the manifest family size");

  SweepArgs sw;
  auto* c_sweep = app.add_subcommand("sweep", "Flip every .text bit of one binary and judge each run");
  c_sweep->add_option("binary", sw.binary, "Victim executable")->required()->check(CLI::ExistingFile);
  c_sweep->add_option("--eval", sw.eval, "Evaluation tensor file")->required()->check(CLI::ExistingFile);
  c_sweep->add_option("--labels", sw.labels, "Label file (default: <eval>.labels)")->check(CLI::ExistingFile);
  c_sweep->add_option("--fast-samples", sw.fast_samples, "Samples in the fast pre-pass (0 disables it)");
  c_sweep->add_option("--buckets", sw.buckets, "Histogram buckets")->check(CLI::PositiveNumber);

  SuperbitArgs sb;
  auto* c_super = app.add_subcommand("superbits", "Shrink the family's shared vulnerable set and test transfer");
  c_super->add_option("corpus", sb.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  c_super->add_option("--victim", sb.victim, "Held-out entry id");
  c_super->add_option("--family", sb.family, "Use only the first N family entries");
  c_super->add_option("--fast-samples", sb.fast_samples, "Samples in the fast pre-pass (0 disables it)");
  c_super->add_flag("--base-rate", sb.base_rate, "Also sweep the victim fully for its vulnerable fraction");

  SimulateArgs sm;
  auto* c_sim = app.add_subcommand("simulate", "Replay the online attack loop against templates");
  c_sim->add_option("superbits", sm.superbits, "Superbit file")->required()->check(CLI::ExistingFile);
  c_sim->add_option("--templates", sm.templates, "Template count, or 'full' for every (offset, bit, direction)");
  c_sim->add_option("--zero-one-ratio", sm.zero_one_ratio, "Share of 0->1 templates");
  c_sim->add_option("--max-attempts", sm.max_attempts, "Flip attempts per run")->check(CLI::PositiveNumber);
  c_sim->add_option("--runs", sm.runs, "Independent attack runs");
  c_sim->add_option("--order", sm.order, "confidence | address | random")
      ->check(CLI::IsMember({"confidence", "address", "random"}));
  c_sim->add_option("--stub-p", sm.stub_p, "Stub victim success probability")->check(CLI::Range(0.0, 1.0));
  c_sim->add_option("--stub-crash", sm.stub_crash, "Stub victim crash probability")->check(CLI::Range(0.0, 1.0));
  c_sim->add_option("--corpus", sm.corpus, "Corpus holding the live victim")->check(CLI::ExistingDirectory);
  c_sim->add_option("--victim", sm.victim, "Live victim entry id");
  c_sim->add_option("--online-samples", sm.online_samples, "Samples the attacker queries")->check(CLI::PositiveNumber);

  std::string log_path, binary;
  auto* c_cls = app.add_subcommand("classify-flips", "Instruction and field types of the vulnerable flips");
  c_cls->add_option("log", log_path, "Campaign log")->required()->check(CLI::ExistingFile);
  c_cls->add_option("binary", binary, "The swept binary")->required()->check(CLI::ExistingFile);

  std::size_t buckets = kDefaultBuckets;
  auto* c_rep = app.add_subcommand("report", "Summary and histogram of a campaign log");
  c_rep->add_option("log", log_path, "Campaign log")->required()->check(CLI::ExistingFile);
  c_rep->add_option("--buckets", buckets, "Histogram buckets")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    cb.seed_set = seed_opt->count() > 0;
    g_command = app.get_subcommands().front()->get_name();
    if (*c_build) return cmd_corpus_build(cb);
    if (*c_sweep) return cmd_sweep(sw);
    if (*c_super) return cmd_superbits(sb);
    if (*c_sim) return cmd_simulate(sm);
    if (*c_cls) return cmd_classify(log_path, binary);
    if (*c_rep) return cmd_report(log_path, buckets);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "flipscan: %s\n", e.what());
    return kExitUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "flipscan: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "flipscan: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
