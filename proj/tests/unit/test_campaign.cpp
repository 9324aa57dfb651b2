#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "flipscan/campaign.hpp"
#include "test_support.hpp"

using namespace flipscan;
using namespace flipscan::testing;

namespace {

ElfImage tiny() { return load_elf(fixture_dir() / "tiny64.so"); }
const std::string kSha = "ab12";

std::set<std::uint64_t> random_ordinals(std::uint64_t seed, std::size_t n, std::uint64_t range) {
  std::mt19937_64 rng(seed);
  std::set<std::uint64_t> s;
  while (s.size() < n) s.insert(rng() % range);
  return s;
}

}  // namespace

TEST(Sweep, CoversEveryBitOnceInOrder) {
  const auto img = tiny();
  const auto vuln = random_ordinals(1, 40, 512);
  const auto crash = std::set<std::uint64_t>{3, 300};
  const auto probe = set_probe(vuln, crash);
  const auto res = sweep(img, kSha, probe, {});
  ASSERT_EQ(res.records.size(), 512u);
  EXPECT_EQ(res.executed, 512u);
  for (std::size_t i = 0; i < res.records.size(); ++i) {
    const auto& r = res.records[i];
    EXPECT_EQ(r.loc, location_at(img, i));
    if (crash.count(i)) EXPECT_EQ(r.verdict.kind, VerdictKind::Crash);
    else EXPECT_EQ(r.verdict.vulnerable(), vuln.count(i) > 0) << i;
  }
  const auto s = summarize(res.records, 512, 64);
  EXPECT_EQ(s.vuln_count, 40u);
  EXPECT_EQ(s.crash_count, 2u);
}

TEST(Sweep, ParallelMatchesSequential) {
  const auto img = tiny();
  const auto probe = set_probe(random_ordinals(2, 100, 512), {7, 8, 9});
  TempDir dir;
  SweepOptions seq;
  seq.log_path = dir / "seq.jsonl";
  SweepOptions par = seq;
  par.log_path = dir / "par.jsonl";
  par.workers = 4;
  par.chunk_bits = 16;
  const auto a = sweep(img, kSha, probe, seq);
  const auto b = sweep(img, kSha, probe, par);
  EXPECT_EQ(a.records, b.records);
  EXPECT_EQ(read_campaign_log(*seq.log_path).records, read_campaign_log(*par.log_path).records);
  EXPECT_EQ(summarize(a.records, 512, 64), summarize(b.records, 512, 64));
}

TEST(Sweep, LogRoundTrip) {
  const auto img = tiny();
  const auto probe = set_probe({1, 2, 3}, {4});
  TempDir dir;
  SweepOptions o;
  o.log_path = dir / "c.jsonl";
  o.config = {{"seed", 7}};
  const auto res = sweep(img, kSha, probe, o);
  const auto log = read_campaign_log(*o.log_path);
  EXPECT_EQ(log.records, res.records);
  EXPECT_EQ(log.header.campaign_id, res.header.campaign_id);
  EXPECT_EQ(log.header.config["seed"], 7);
  EXPECT_EQ(log.header.total_bits, 512u);
  EXPECT_EQ(res.header.campaign_id.size(), 16u);
}

TEST(Sweep, ResumeAfterTornWrite) {
  const auto img = tiny();
  const auto vuln = random_ordinals(3, 60, 512);
  TempDir dir;
  SweepOptions o;
  o.log_path = dir / "c.jsonl";
  const auto full = sweep(img, kSha, set_probe(vuln), o);

  // Keep the header and 100 records, then half of the next line.
  std::ifstream in(*o.log_path);
  std::string text, line;
  for (int i = 0; i < 101 && std::getline(in, line); ++i) text += line + "\n";
  std::getline(in, line);
  text += line.substr(0, line.size() / 2);
  in.close();
  { std::ofstream(*o.log_path, std::ios::trunc) << text; }

  auto probe = set_probe(vuln);
  o.resume = true;
  const auto resumed = sweep(img, kSha, probe, o);
  EXPECT_EQ(resumed.executed, 412u);
  EXPECT_EQ(probe.calls(), 412u);
  EXPECT_EQ(resumed.records, full.records);
  EXPECT_EQ(read_campaign_log(*o.log_path).records, full.records);
  EXPECT_EQ(summarize(resumed.records, 512, 64), summarize(full.records, 512, 64));
}

TEST(Sweep, ResumeRejectsDifferentSettings) {
  const auto img = tiny();
  TempDir dir;
  SweepOptions o;
  o.log_path = dir / "c.jsonl";
  sweep(img, kSha, set_probe({}), o);
  o.resume = true;
  EXPECT_THROW(sweep(img, "other", set_probe({}), o), Error);
  OracleConfig cfg;
  cfg.random_guess_slack = 0.2;
  FunctionProbe p([](const BitLocation&, EvalScope) { return verdict_result(VerdictKind::NoEffect); }, cfg);
  try {
    sweep(img, kSha, p, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ResumeMismatch);
  }
}

TEST(Sweep, FastFilterOnlyConfirmsCandidates) {
  const auto img = tiny();
  const std::set<std::uint64_t> fast_hits{10, 11, 12, 200};
  const std::set<std::uint64_t> confirmed{10, 200};
  FunctionProbe p(
      [&](const BitLocation& l, EvalScope scope) {
        const auto& s = scope == EvalScope::Fast ? fast_hits : confirmed;
        return verdict_result(s.count(l.ordinal()) ? VerdictKind::Vulnerable : VerdictKind::NoEffect);
      },
      {}, 10, true);
  const auto res = sweep(img, kSha, p, {});
  EXPECT_EQ(p.full_calls(), 4u);
  EXPECT_EQ(p.calls(), 516u);
  std::set<std::uint64_t> got;
  for (const auto& r : res.records)
    if (r.verdict.vulnerable()) got.insert(r.loc.ordinal());
  EXPECT_EQ(got, confirmed);
}

TEST(Sweep, BaselineMustBeatTwiceRandom) {
  const auto img = tiny();
  auto p = set_probe({});
  p.mutable_baseline().verdict.metrics.accuracy = 0.2;  // C=10: bound is 0.2
  EXPECT_THROW(sweep(img, kSha, p, {}), Error);
  p.mutable_baseline().verdict.metrics.accuracy = 0.21;
  EXPECT_NO_THROW(sweep(img, kSha, p, {}));
  p.mutable_baseline().completed = false;
  try {
    sweep(img, kSha, p, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BaselineFailed);
  }
}

TEST(Sweep, ExcludedRangesAreSkipped) {
  const auto img = tiny();
  SweepOptions o;
  o.exclude = parse_ranges("0x30-0x40,0-2");
  const auto res = sweep(img, kSha, set_probe({}), o);
  EXPECT_EQ(res.records.size(), (64u - 16 - 2) * 8);
  for (const auto& r : res.records) EXPECT_TRUE(r.loc.byte_offset >= 2 && r.loc.byte_offset < 0x30);
  EXPECT_THROW(parse_ranges("5-3"), Error);
  EXPECT_THROW(parse_ranges("abc"), Error);
}

TEST(Sweep, GenerativeWarmupHoldsThenFlushes) {
  const auto img = tiny();
  OracleConfig cfg;
  cfg.kind = OracleKind::Generative;
  // Distortion grows with the ordinal, so late bits exceed the 85th percentile.
  FunctionProbe p(
      [](const BitLocation& l, EvalScope) {
        ProbeResult r = verdict_result(VerdictKind::NoEffect);
        r.score = GenerativeScore{0.0, static_cast<double>(l.ordinal() % 128)};
        return r;
      },
      cfg);
  const auto res = sweep(img, kSha, p, {});
  ASSERT_EQ(res.records.size(), 512u);
  EXPECT_EQ(res.history.size(), 512u);
  std::size_t vuln = 0;
  for (const auto& r : res.records) {
    ASSERT_TRUE(r.verdict.metrics.distortion.has_value());
    vuln += r.verdict.vulnerable();
  }
  EXPECT_GT(vuln, 0u);
  EXPECT_LT(vuln, 200u);
  SweepOptions par;
  par.workers = 3;
  par.chunk_bits = 32;
  EXPECT_EQ(sweep(img, kSha, p, par).records, res.records);
}

TEST(Summary, TableOneProportions) {
  // 311808 bits, 8091 vulnerable, 5172 of them 0->1.
  const std::uint64_t bits = 311808, text = bits / 8;
  std::vector<SweepRecord> recs;
  recs.reserve(bits);
  std::size_t z = 0, v = 0;
  for (std::uint64_t i = 0; i < bits; ++i) {
    SweepRecord r;
    const bool vuln = i % 38 == 0 && v < 8091;
    const bool zero_one = vuln ? z < 5172 : (i & 1);
    r.loc = {i / 8, static_cast<std::uint8_t>(i % 8), zero_one ? Direction::ZeroToOne : Direction::OneToZero};
    r.verdict.kind = vuln ? VerdictKind::Vulnerable : VerdictKind::NoEffect;
    v += vuln;
    z += vuln && zero_one;
    recs.push_back(r);
  }
  ASSERT_EQ(v, 8091u);
  const auto s = summarize(recs, bits, text);
  EXPECT_EQ(s.vuln_count, 8091u);
  EXPECT_NEAR(s.vuln_pct * 100, 2.59, 0.005);
  EXPECT_NEAR(s.zero_to_one_pct * 100, 63.92, 0.005);
  EXPECT_EQ(s.histogram.size(), 64u);
  std::uint64_t hist_bits = 0;
  for (const auto& b : s.histogram) hist_bits += b.total_bits;
  EXPECT_EQ(hist_bits, bits);
}

TEST(Summary, PinCountsAndErrors) {
  std::vector<SweepRecord> recs;
  for (std::uint64_t i = 0; i < 16; ++i) {
    SweepRecord r;
    r.loc = {i / 8, static_cast<std::uint8_t>(i % 8), Direction::ZeroToOne};
    r.verdict.kind = i < 3 ? VerdictKind::VulnerablePinned : VerdictKind::NoEffect;
    r.verdict.pinned_class = i < 3 ? static_cast<int>(i % 2) : -1;
    recs.push_back(r);
  }
  const auto s = summarize(recs, 16, 2);
  EXPECT_EQ(s.per_class_pin_counts.at(0), 2u);
  EXPECT_EQ(s.per_class_pin_counts.at(1), 1u);
  EXPECT_THROW(summarize(recs, 17, 2), Error);
  recs.back() = recs.front();
  EXPECT_THROW(summarize(recs, 16, 2), Error);
}

TEST(Summary, HistogramCsvHasOneRowPerBucket) {
  const auto img = tiny();
  const auto res = sweep(img, kSha, set_probe({0, 1, 2}), {});
  const auto csv = histogram_csv(summarize(res.records, 512, 64, 8));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
  EXPECT_NE(csv.find("0,0,8,64,3,0.046875"), std::string::npos);
}
