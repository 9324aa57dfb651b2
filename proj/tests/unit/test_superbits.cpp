#include <gtest/gtest.h>

#include <random>

#include "flipscan/superbits.hpp"
#include "test_support.hpp"

using namespace flipscan;
using namespace flipscan::testing;

namespace {

BitLocation bit(std::uint64_t ordinal) {
  return {ordinal / 8, static_cast<std::uint8_t>(ordinal % 8), ordinal % 3 ? Direction::ZeroToOne : Direction::OneToZero};
}

BitSet bits(std::initializer_list<std::uint64_t> ords) {
  BitSet s;
  for (auto o : ords) s.insert(bit(o));
  return s;
}

// Family member with a fixed vulnerable set; crashing bits report Crash.
class SetMember {
 public:
  SetMember(std::string id, BitSet vuln, std::uint64_t total, BitSet crash = {}, std::string sha = "t")
      : id_(std::move(id)), vuln_(std::move(vuln)), crash_(std::move(crash)), total_(total), sha_(std::move(sha)) {}
  std::string id() const { return id_; }
  std::string text_sha256() const { return sha_; }
  std::uint64_t total_bits() const { return total_; }
  VerdictMap vulnerable_bits() const {
    ++sweeps;
    VerdictMap m;
    for (const auto& l : vuln_) m.emplace(l, judge(l));
    return m;
  }
  VerdictMap verify(const std::vector<BitLocation>& locs) const {
    verified += locs.size();
    VerdictMap m;
    for (const auto& l : locs) m.emplace(l, judge(l));
    return m;
  }
  mutable std::size_t sweeps = 0, verified = 0;

 private:
  Verdict judge(const BitLocation& l) const {
    if (crash_.count(l)) return Verdict::crash();
    Verdict v{vuln_.count(l) ? VerdictKind::Vulnerable : VerdictKind::NoEffect, -1, {}};
    v.metrics.accuracy = vuln_.count(l) ? 0.1 + 0.001 * static_cast<double>(l.ordinal() % 7) : 0.9;
    return v;
  }
  std::string id_;
  BitSet vuln_, crash_;
  std::uint64_t total_;
  std::string sha_;
};

}  // namespace

TEST(Superbits, NaiveIntersection) {
  const std::vector<BitSet> sets{bits({1, 2, 3, 4}), bits({2, 3, 4, 5}), bits({3, 4, 9})};
  EXPECT_EQ(intersect_naive(sets).bits, bits({3, 4}));
  EXPECT_THROW(intersect_naive(std::span<const BitSet>{}), Error);
}

TEST(Superbits, ShrinkMatchesNaiveAndCountsExecutions) {
  const std::vector<SetMember> fam{{"a", bits({1, 2, 3, 4}), 100}, {"b", bits({2, 3, 4, 5}), 100},
                                   {"c", bits({3, 4, 9}), 100}};
  const auto r = shrink_search(std::span<const SetMember>(fam));
  EXPECT_EQ(r.superbits.bits, bits({3, 4}));
  EXPECT_EQ(r.size_after, (std::vector<std::size_t>{4, 3, 2}));
  EXPECT_EQ(r.executions, 100u + 4 + 3);
  EXPECT_EQ(r.naive_executions, 300u);
  EXPECT_EQ(fam[1].sweeps, 0u);
  ASSERT_EQ(r.superbits.provenance.size(), 3u);
  EXPECT_EQ(r.superbits.provenance[2].id, "c");
}

TEST(Superbits, EarlyExitWhenEmpty) {
  const std::vector<SetMember> fam{{"a", bits({1}), 8}, {"b", bits({2}), 8}, {"c", bits({2}), 8}};
  const auto r = shrink_search(std::span<const SetMember>(fam));
  EXPECT_TRUE(r.superbits.bits.empty());
  EXPECT_EQ(r.size_after.size(), 2u);
  EXPECT_EQ(fam[2].verified, 0u);
}

TEST(Superbits, CrashOnLaterEntryRemovesBit) {
  const std::vector<SetMember> fam{{"a", bits({1, 2}), 8}, {"b", bits({1, 2}), 8, bits({2})}};
  EXPECT_EQ(shrink_search(std::span<const SetMember>(fam)).superbits.bits, bits({1}));
}

TEST(Superbits, DirectionIsPartOfIdentity) {
  BitSet a{{0, 0, Direction::ZeroToOne}}, b{{0, 0, Direction::OneToZero}};
  const std::vector<BitSet> sets{a, b};
  EXPECT_TRUE(intersect_naive(sets).bits.empty());
}

TEST(Superbits, RejectsMixedStructures) {
  const std::vector<SetMember> fam{{"a", bits({1}), 8, {}, "x"}, {"b", bits({1}), 8, {}, "y"}};
  try {
    shrink_search(std::span<const SetMember>(fam));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::StructureMismatch);
  }
  EXPECT_THROW(shrink_search(std::span<const SetMember>{}), Error);
}

TEST(Superbits, RandomizedShrinkEqualsNaive) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng() % 4;
    const std::uint64_t n = 64 + rng() % 1024;
    std::vector<SetMember> fam;
    std::vector<BitSet> sets;
    for (std::size_t i = 0; i < k; ++i) {
      BitSet s;
      for (std::uint64_t o = 0; o < n; ++o)
        if (rng() % 4 == 0) s.insert(bit(o));
      sets.push_back(s);
      fam.emplace_back("e" + std::to_string(i), s, n);
    }
    const auto r = shrink_search(std::span<const SetMember>(fam));
    EXPECT_EQ(r.superbits.bits, intersect_naive(sets).bits);
    for (std::size_t i = 1; i < r.size_after.size(); ++i) EXPECT_LE(r.size_after[i], r.size_after[i - 1]);
  }
}

TEST(Superbits, OrderedByMeanAccuracyThenOffset) {
  SuperbitSet s;
  s.bits = bits({10, 20, 30});
  s.mean_accuracy = {{bit(10), 0.3}, {bit(20), 0.1}, {bit(30), 0.1}};
  EXPECT_EQ(s.ordered(), (std::vector<BitLocation>{bit(20), bit(30), bit(10)}));
}

TEST(Superbits, TransferEvaluation) {
  SuperbitSet s;
  s.bits = bits({1, 2, 3, 4});
  s.provenance = {{"a", "t"}};
  const SetMember victim("v", bits({2, 4, 7}), 64);
  const auto rep = transfer_eval(s, victim);
  ASSERT_TRUE(rep.fraction);
  EXPECT_DOUBLE_EQ(*rep.fraction, 0.5);
  EXPECT_FALSE(transfer_eval(SuperbitSet{}, victim).fraction);
  const SetMember other("o", {}, 64, {}, "different");
  EXPECT_THROW(transfer_eval(s, other), Error);
}

TEST(Superbits, TransferCurveQueriesVictimOnce) {
  const std::vector<SetMember> fam{{"a", bits({1, 2, 3, 4}), 64}, {"b", bits({1, 2, 3}), 64}, {"c", bits({1, 2}), 64}};
  const auto r = shrink_search(std::span<const SetMember>(fam));
  const SetMember victim("v", bits({1, 3}), 64);
  const auto curve = transfer_curve(r, victim);
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_DOUBLE_EQ(*curve[0].fraction, 0.5);
  EXPECT_DOUBLE_EQ(*curve[1].fraction, 2.0 / 3);
  EXPECT_DOUBLE_EQ(*curve[2].fraction, 0.5);
  EXPECT_EQ(victim.verified, 4u);
}

TEST(Superbits, FileRoundTrip) {
  const std::vector<SetMember> fam{{"a", bits({5, 6, 7}), 64}, {"b", bits({5, 7}), 64}};
  const auto r = shrink_search(std::span<const SetMember>(fam));
  const auto text = format_superbits(r.superbits, {{"seed", 1}});
  const auto back = parse_superbits(text);
  EXPECT_EQ(back.bits, r.superbits.bits);
  EXPECT_EQ(back.provenance, r.superbits.provenance);
  EXPECT_EQ(back.mean_accuracy, r.superbits.mean_accuracy);
  EXPECT_THROW(parse_superbits("{\"type\":\"header\"}\n"), Error);
  EXPECT_THROW(parse_superbits(""), Error);
}

TEST(Superbits, ProbeMembersOverFixtureImage) {
  const auto img = load_elf(fixture_dir() / "tiny64.so");
  const auto p1 = set_probe({1, 2, 3, 100, 200});
  const auto p2 = set_probe({2, 3, 200, 300}, {1});
  const auto p3 = set_probe({3, 200, 400});
  std::vector<ProbeMember<FunctionProbe>> fam{{"m1", img, p1}, {"m2", img, p2}, {"m3", img, p3}};
  const auto r = shrink_search(std::span<const ProbeMember<FunctionProbe>>(fam));
  BitSet want{location_at(img, 3), location_at(img, 200)};
  EXPECT_EQ(r.superbits.bits, want);
  EXPECT_EQ(p2.calls(), 5u);
  EXPECT_EQ(p3.calls(), 3u);
  EXPECT_EQ(r.naive_executions, 3u * 512);
}
