#include <gtest/gtest.h>

#include <algorithm>

#include "decoder_corpus.hpp"
#include "flipscan/isa_decode.hpp"
#include "test_support.hpp"

using namespace flipscan;
using namespace flipscan::testing;

namespace {

std::vector<std::uint8_t> bytes(std::initializer_list<int> v) {
  std::vector<std::uint8_t> out;
  for (int b : v) out.push_back(static_cast<std::uint8_t>(b));
  return out;
}

SweepRecord record(std::uint64_t off, int bit, bool vuln) {
  SweepRecord r;
  r.loc = {off, static_cast<std::uint8_t>(bit), Direction::ZeroToOne};
  r.verdict.kind = vuln ? VerdictKind::Vulnerable : VerdictKind::NoEffect;
  return r;
}

}  // namespace

TEST(Decode, SingleNop) {
  const auto b = bytes({0x90});
  const auto s = decode_one(b, 0);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->length, 1);
  EXPECT_EQ(s->mnemonic, "nop");
  EXPECT_EQ(s->cls, InsnClass::Nop);
}

TEST(Decode, RetThenNops) {
  const auto spans = linear_sweep(bytes({0xC3, 0x90, 0x90}));
  ASSERT_EQ(spans.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(spans[i].start, i);
    EXPECT_EQ(spans[i].length, 1);
  }
  EXPECT_EQ(spans[0].cls, InsnClass::Branch);
}

TEST(Decode, FieldsOfMovWithDisp32) {
  // mov 0x12345678(%rax),%rcx
  const auto b = bytes({0x48, 0x8B, 0x88, 0x78, 0x56, 0x34, 0x12});
  const auto s = decode_one(b, 0);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->length, 7);
  EXPECT_EQ(s->cls, InsnClass::Mov);
  EXPECT_EQ(s->field_at(0), FieldTag::Prefix);
  EXPECT_EQ(s->field_at(1), FieldTag::Opcode);
  EXPECT_EQ(s->field_at(2), FieldTag::ModRM);
  for (int i = 3; i < 7; ++i) EXPECT_EQ(s->field_at(i), FieldTag::Displacement);
  const auto t = classify_flip(b, {4, 3, Direction::ZeroToOne});
  EXPECT_EQ(t.bucket(), "Data");
  EXPECT_EQ(t.field_token(), "disp");
  EXPECT_EQ(t.post_decode, PostDecode::SameLength);
}

TEST(Decode, VexAndSib) {
  // vaddps %ymm2,%ymm1,%ymm0 ; lea (%rdi,%rsi,4),%rax ; imul $0x10,%eax,%eax
  const auto b = bytes({0xC5, 0xF4, 0x58, 0xC2, 0x48, 0x8D, 0x04, 0xB7, 0x6B, 0xC0, 0x10});
  const auto spans = linear_sweep(b);
  ASSERT_EQ(spans.size(), 3u);
  EXPECT_EQ(spans[0].length, 4);
  EXPECT_EQ(spans[0].cls, InsnClass::Vector);
  EXPECT_EQ(spans[0].field_at(0), FieldTag::Prefix);
  EXPECT_EQ(spans[1].field_at(spans[1].start + 3), FieldTag::SIB);
  EXPECT_EQ(spans[2].field_at(spans[2].start + 2), FieldTag::Immediate);
}

TEST(Decode, EvexIsUndecoded) {
  const auto b = bytes({0x62, 0xF1, 0x7C, 0x48, 0x58, 0xC2});
  EXPECT_FALSE(decode_one(b, 0));
  const auto spans = linear_sweep(b);
  EXPECT_FALSE(spans.front().decoded);
  EXPECT_EQ(spans.front().length, 1);
}

TEST(Decode, TruncatedInstructionIsUndecoded) {
  // b8 needs four immediate bytes; the sweep resyncs on 01 00 (add %eax,(%rax)).
  const auto b = bytes({0xB8, 0x01, 0x00});
  const auto spans = linear_sweep(b);
  ASSERT_EQ(spans.size(), 2u);
  EXPECT_FALSE(spans[0].decoded);
  EXPECT_EQ(spans[1].start, 1u);
  EXPECT_EQ(spans[1].length, 2);
  EXPECT_FALSE(linear_sweep(bytes({0x48, 0x8B}))[0].decoded);
}

TEST(Decode, OpcodeFlipOutcomes) {
  // add %edi,%eax (01 f8): bit 1 of the opcode gives 03 f8, same length.
  const auto add = bytes({0x01, 0xF8});
  const auto t = classify_flip(add, {0, 1, Direction::ZeroToOne});
  EXPECT_EQ(t.bucket(), "Opcode");
  EXPECT_EQ(t.post_decode, PostDecode::SameLength);
  // mov $1,%eax (b8 ...) -> b0: mov $imm8,%al, shorter.
  const auto mov = bytes({0xB8, 0x01, 0x00, 0x00, 0x00});
  const auto r = classify_flip(mov, {0, 3, Direction::OneToZero});
  EXPECT_EQ(r.post_decode, PostDecode::Resized);
  // ret (c3) -> c7 needs a ModRM; a lone byte cannot decode.
  const auto ret = bytes({0xC3});
  EXPECT_EQ(classify_flip(ret, {0, 2, Direction::ZeroToOne}).post_decode, PostDecode::InvalidOpcode);
}

TEST(Layout, PaddingBetweenFunctions) {
  const auto img = load_elf(fixture_dir() / "tiny64.so");
  const auto layout = TextLayout::of(img);
  EXPECT_FALSE(layout.is_padding(0));
  EXPECT_TRUE(layout.is_padding(0x08));   // nopl after f1
  EXPECT_TRUE(layout.is_padding(0x1D));   // nopl after f2
  EXPECT_TRUE(layout.is_padding(0x3F));   // trailing fill
  EXPECT_FALSE(layout.is_padding(0x17));  // disp8 of mov 0x10(%rdi)
  EXPECT_EQ(classify_flip(layout, {0x08, 0, Direction::OneToZero}).bucket(), "Padding");
  const auto d = classify_flip(layout, {0x17, 4, Direction::OneToZero});
  EXPECT_EQ(d.field_token(), "disp");
  EXPECT_EQ(d.class_token(), "mov");
  EXPECT_FALSE(TextLayout(layout.text()).is_padding(0x08));
}

TEST(Report, CountsVulnerableBitsOnly) {
  const auto img = load_elf(fixture_dir() / "tiny64.so");
  const auto layout = TextLayout::of(img);
  std::vector<SweepRecord> recs;
  for (std::uint64_t i = 0; i < 512; ++i) {
    const std::uint64_t off = i / 8;
    // Vulnerable: every bit of the first opcode byte, and bit 0 of the two imm bytes 0x28, 0x29.
    recs.push_back(record(off, static_cast<int>(i % 8), off == 0 || ((off == 0x28 || off == 0x29) && i % 8 == 0)));
  }
  const auto rep = flip_type_report(recs, 512, layout);
  EXPECT_EQ(rep.vulnerable, 10u);
  ASSERT_EQ(rep.ranked.size(), 2u);
  EXPECT_EQ(rep.ranked[0], (FlipTypeRow{"mov", "Opcode", 8, 80.0}));
  EXPECT_EQ(rep.ranked[1], (FlipTypeRow{"mov", "Data", 2, 20.0}));
  std::uint64_t post = 0;
  for (const auto& [k, n] : rep.post_decode) post += n;
  EXPECT_EQ(post, 10u);
  const auto csv = flip_report_csv(rep.ranked);
  EXPECT_EQ(csv, "class,field_bucket,count,percentage\nmov,Opcode,8,80.00\nmov,Data,2,20.00\n");
}

TEST(Report, EmptyAndIncomplete) {
  const auto img = load_elf(fixture_dir() / "tiny64.so");
  const auto layout = TextLayout::of(img);
  std::vector<SweepRecord> recs;
  for (std::uint64_t i = 0; i < 512; ++i) recs.push_back(record(i / 8, static_cast<int>(i % 8), false));
  const auto rep = flip_type_report(recs, 512, layout);
  EXPECT_EQ(rep.vulnerable, 0u);
  EXPECT_TRUE(rep.ranked.empty());
  recs.pop_back();
  try {
    flip_type_report(recs, 512, layout);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IncompleteSweep);
  }
}

TEST(Fixtures, SweepTilesAndMatchesObjdump) {
  const auto fixtures = load_decoder_fixtures(fixture_dir() / "decoder");
  ASSERT_GE(fixtures.size(), 8u);
  std::size_t ref = 0, matched = 0;
  for (const auto& f : fixtures) {
    const auto a = boundary_agreement(f);
    EXPECT_TRUE(a.tiles) << f.name;
    EXPECT_GE(a.fraction(), 0.995) << f.name;
    ref += a.reference;
    matched += a.matched;
  }
  EXPECT_GT(ref, 3000u);
  EXPECT_GE(static_cast<double>(matched) / static_cast<double>(ref), 0.995);
}

TEST(Fixtures, VectorizedBuildUsesVex) {
  const auto fixtures = load_decoder_fixtures(fixture_dir() / "decoder");
  auto vex_count = [&](const std::string& name) {
    const auto it = std::find_if(fixtures.begin(), fixtures.end(), [&](const auto& f) { return f.name == name; });
    EXPECT_NE(it, fixtures.end()) << name;
    std::size_t n = 0;
    for (const auto& s : linear_sweep(it->text)) n += s.decoded && (it->text[s.start] == 0xC4 || it->text[s.start] == 0xC5);
    const auto mix = instruction_mix(TextLayout(it->text));
    EXPECT_GT(mix.byte_share(InsnClass::Vector), 0.0) << name;
    EXPECT_EQ(mix.undecoded_bytes, 0u) << name;
    return n;
  };
  EXPECT_GT(vex_count("mlp_o3_avx2"), 0u);
  EXPECT_EQ(vex_count("mlp_o3_sse"), 0u);
}
