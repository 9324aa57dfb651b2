#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "flipscan/flipscan.hpp"
#include "test_support.hpp"

using namespace flipscan;
using namespace flipscan::testing;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult cli(const std::string& args) {
  const std::string cmd = std::string(FLIPSCAN_CLI) + " " + args + " 2>&1";
  CliResult r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

const char* kWindow = "--exclude-ranges 0x0-0x2c0,0x380-0x100000";

// Records minus wall time, which differs between executions.
std::vector<std::pair<BitLocation, Verdict>> verdicts_of(const std::vector<SweepRecord>& records) {
  std::vector<std::pair<BitLocation, Verdict>> out;
  for (const auto& r : records) out.emplace_back(r.loc, r.verdict);
  return out;
}

std::set<BitLocation> vulnerable_in(const std::filesystem::path& log) {
  std::set<BitLocation> s;
  for (const auto& r : read_campaign_log(log).records)
    if (r.verdict.vulnerable()) s.insert(r.loc);
  return s;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    manifest_ = (dir_->path() / "m.json").string();
    CorpusManifest m;
    m.samples = 64;
    m.family_size = 1;
    write_text_file(manifest_, manifest_to_json(m).dump());
    const auto r = cli("-q --out " + corpus() + " corpus-build " + manifest_);
    ASSERT_EQ(r.code, 0) << r.out;
  }
  static void TearDownTestSuite() { delete dir_; }
  static std::string corpus() { return (dir_->path() / "corpus").string(); }
  static std::string path(const std::string& s) { return (dir_->path() / s).string(); }

  static TempDir* dir_;
  static std::string manifest_;
};

TempDir* Cli::dir_ = nullptr;
std::string Cli::manifest_;

}  // namespace

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("sweep").code, 1);
  EXPECT_EQ(cli("--oracle bogus report x").code, 1);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST_F(Cli, BadInputExitsTwo) {
  write_text_file(path("junk.jsonl"), "not json\n");
  EXPECT_EQ(cli("report " + path("junk.jsonl")).code, 2);
  EXPECT_EQ(cli("sweep " + manifest_ + " --eval " + corpus() + "/victim/eval.fscn").code, 2);
}

TEST_F(Cli, MissingToolchainNamesTheCommand) {
  const auto r = cli("--cc flipscan-missing-cc --out " + path("x") + " corpus-build " + manifest_);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("flipscan-missing-cc"), std::string::npos);
}

TEST_F(Cli, RebuildGivesIdenticalHashes) {
  const auto a = cli("--out " + path("again") + " corpus-build " + manifest_);
  ASSERT_EQ(a.code, 0) << a.out;
  const auto first = load_corpus(corpus()), second = load_corpus(path("again"));
  ASSERT_EQ(first.entries.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(first.entries[i].binary_sha256, second.entries[i].binary_sha256);
    EXPECT_EQ(first.entries[i].text_sha256, first.entries[0].text_sha256);
  }
  EXPECT_NE(first.entries[0].binary_sha256, first.entries[1].binary_sha256);
}

TEST_F(Cli, SweepResumeReportAndSuperbits) {
  const std::string eval = " --eval " + corpus() + "/victim/eval.fscn";
  const auto full = cli(std::string(kWindow) + " --out " + path("s") + " sweep " + corpus() + "/victim/model" + eval);
  ASSERT_EQ(full.code, 0) << full.out;
  const auto log = std::filesystem::path(path("s")) / "campaign.jsonl";
  const auto records = read_campaign_log(log).records;
  ASSERT_EQ(records.size(), 0xC0u * 8);

  // Cut the log mid-line and resume.
  std::string text = read_text_file(log);
  std::size_t cut = 0;
  for (int i = 0; i < 700; ++i) cut = text.find('\n', cut) + 1;
  write_text_file(log, text.substr(0, cut + 20));
  const auto resumed =
      cli(std::string(kWindow) + " --resume --out " + path("s") + " sweep " + corpus() + "/victim/model" + eval);
  ASSERT_EQ(resumed.code, 0) << resumed.out;
  EXPECT_NE(resumed.out.find("executed        837 bits"), std::string::npos) << resumed.out;
  EXPECT_TRUE(verdicts_of(read_campaign_log(log).records) == verdicts_of(records));

  const auto rep = cli("--out " + path("r") + " report " + log.string());
  ASSERT_EQ(rep.code, 0) << rep.out;
  std::ifstream csv(path("r") + "/histogram.csv");
  std::string line;
  std::size_t rows = 0, vuln = 0;
  while (std::getline(csv, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("bucket", 0) == 0) continue;
    ++rows;
    std::size_t pos = 0;
    for (int f = 0; f < 4; ++f) pos = line.find(',', pos) + 1;
    vuln += std::stoull(line.substr(pos));
  }
  EXPECT_EQ(rows, 64u);
  EXPECT_EQ(vuln, vulnerable_in(log).size());

  // One family member: the superbits are exactly that member's vulnerable set.
  const auto e00 =
      cli(std::string(kWindow) + " --out " + path("e") + " sweep " + corpus() + "/e00/model --eval " + corpus() + "/e00/eval.fscn");
  ASSERT_EQ(e00.code, 0) << e00.out;
  const auto sb = cli(std::string(kWindow) + " --out " + path("sb") + " superbits " + corpus());
  ASSERT_EQ(sb.code, 0) << sb.out;
  const auto set = parse_superbits(read_text_file(path("sb") + "/superbits.jsonl"));
  EXPECT_EQ(set.bits, vulnerable_in(std::filesystem::path(path("e")) / "campaign.jsonl"));
  ASSERT_EQ(set.provenance.size(), 1u);
  EXPECT_EQ(set.provenance[0].id, "e00");

  // Seeded simulation writes byte-identical traces.
  if (set.bits.empty()) GTEST_SKIP() << "no superbits in the window";
  const std::string sim = " --seed 7 --out " + path("sim") + " simulate " + path("sb") + "/superbits.jsonl --stub-p 0.5 --runs 50";
  ASSERT_EQ(cli(sim).code, 0);
  const auto first = read_text_file(path("sim") + "/attack.jsonl");
  ASSERT_EQ(cli(sim).code, 0);
  EXPECT_EQ(read_text_file(path("sim") + "/attack.jsonl"), first);
  EXPECT_EQ(cli(" --out " + path("sim") + " simulate " + path("sb") + "/superbits.jsonl").code, 1);
}
