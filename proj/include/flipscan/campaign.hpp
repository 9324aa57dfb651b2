#pragma once

// Full .text sweeps: one verdict per bit, persisted as an append-only JSON
// Lines log that a later run can resume from, plus the summary statistics
// (vulnerable share, 0->1 share, per-class pin counts, spatial histogram).

#include <algorithm>
#include <atomic>
#include <concepts>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flipscan/digest.hpp"
#include "flipscan/elf_image.hpp"
#include "flipscan/error.hpp"
#include "flipscan/oracles.hpp"

namespace flipscan {

enum class EvalScope : std::uint8_t { Fast, Full };

/// What a probe reports for one flipped bit (or for the unmutated binary).
struct ProbeResult {
  std::string status = "exit0";
  bool completed = false;
  Verdict verdict = Verdict::crash();
  std::optional<GenerativeScore> score;  // generative oracle: the campaign decides the verdict
  double wall_ms = 0;
};

/// Something that can judge a single flipped bit. evaluate() must be safe to
/// call concurrently.
template <typename P>
concept FlipProbe = requires(const P& p, const BitLocation& loc, EvalScope scope) {
  { p.evaluate(loc, scope) } -> std::same_as<ProbeResult>;
  { p.baseline() } -> std::convertible_to<ProbeResult>;
  { p.oracle() } -> std::convertible_to<const OracleConfig&>;
  { p.class_count() } -> std::convertible_to<std::size_t>;
  { p.has_fast_scope() } -> std::convertible_to<bool>;
};

struct SweepRecord {
  BitLocation loc;
  Verdict verdict;
  std::string raw_status;
  double wall_ms = 0;

  /// Equality ignores wall time, which is not reproducible.
  friend bool operator==(const SweepRecord& a, const SweepRecord& b) {
    return a.loc == b.loc && a.verdict == b.verdict && a.raw_status == b.raw_status;
  }
};

struct ByteRange {
  std::uint64_t begin = 0;  // text-relative, inclusive
  std::uint64_t end = 0;    // exclusive

  bool contains(std::uint64_t off) const { return off >= begin && off < end; }
};

/// Parses "a-b,c-d" (decimal or 0x-hex, end exclusive).
inline std::vector<ByteRange> parse_ranges(std::string_view spec) {
  std::vector<ByteRange> out;
  auto num = [&](std::string_view s) -> std::uint64_t {
    std::string t(s);
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(t, &used, 0);
    } catch (const std::exception&) {
      throw Error(Errc::BadFormat, "bad range bound '" + t + "'");
    }
    if (used != t.size()) throw Error(Errc::BadFormat, "bad range bound '" + t + "'");
    return v;
  };
  std::size_t pos = 0;
  while (pos < spec.size()) {
    auto comma = spec.find(',', pos);
    if (comma == std::string_view::npos) comma = spec.size();
    const auto item = spec.substr(pos, comma - pos);
    const auto dash = item.find('-');
    if (dash == std::string_view::npos) throw Error(Errc::BadFormat, "range needs begin-end");
    ByteRange r{num(item.substr(0, dash)), num(item.substr(dash + 1))};
    if (r.end <= r.begin) throw Error(Errc::BadFormat, "empty range");
    out.push_back(r);
    pos = comma + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Log format

using Json = nlohmann::ordered_json;

inline Json oracle_to_json(const OracleConfig& c) {
  return Json{{"kind", to_string(c.kind)},
              {"delta", c.random_guess_slack},
              {"pin_threshold", c.pin_threshold},
              {"label_change_threshold", c.label_change_threshold},
              {"distortion_pct", c.distortion_percentile},
              {"warmup", c.warmup}};
}

inline OracleConfig oracle_from_json(const Json& j) {
  OracleConfig c;
  const auto kind = parse_oracle_kind(j.at("kind").get<std::string>());
  if (!kind) throw Error(Errc::BadFormat, "unknown oracle kind");
  c.kind = *kind;
  c.random_guess_slack = j.at("delta").get<double>();
  c.pin_threshold = j.at("pin_threshold").get<double>();
  c.label_change_threshold = j.at("label_change_threshold").get<double>();
  c.distortion_percentile = j.at("distortion_pct").get<double>();
  c.warmup = j.at("warmup").get<std::size_t>();
  return c;
}

struct CampaignHeader {
  std::string campaign_id;
  std::string binary_sha256;
  std::uint64_t text_size = 0;
  std::uint64_t total_bits = 0;
  OracleConfig oracle;
  std::vector<ByteRange> exclude;
  Json config = Json::object();  // caller's global configuration, embedded verbatim
};

inline Json header_to_json(const CampaignHeader& h) {
  Json ex = Json::array();
  for (const auto& r : h.exclude) ex.push_back({r.begin, r.end});
  return Json{{"type", "header"},         {"campaign_id", h.campaign_id}, {"binary_sha256", h.binary_sha256},
              {"text_size", h.text_size}, {"total_bits", h.total_bits},   {"oracle", oracle_to_json(h.oracle)},
              {"exclude", ex},            {"config", h.config}};
}

inline CampaignHeader header_from_json(const Json& j) {
  if (j.value("type", "") != "header") throw Error(Errc::BadFormat, "campaign log does not start with a header");
  CampaignHeader h;
  h.campaign_id = j.at("campaign_id").get<std::string>();
  h.binary_sha256 = j.at("binary_sha256").get<std::string>();
  h.text_size = j.at("text_size").get<std::uint64_t>();
  h.total_bits = j.at("total_bits").get<std::uint64_t>();
  h.oracle = oracle_from_json(j.at("oracle"));
  for (const auto& r : j.at("exclude")) h.exclude.push_back({r.at(0).get<std::uint64_t>(), r.at(1).get<std::uint64_t>()});
  h.config = j.value("config", Json::object());
  return h;
}

namespace detail {
inline Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }
inline std::optional<double> opt(const Json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}
}  // namespace detail

inline Json record_to_json(const SweepRecord& r, const std::string& campaign_id, const std::string& sha) {
  const auto& m = r.verdict.metrics;
  return Json{{"campaign_id", campaign_id},
              {"binary_sha256", sha},
              {"byte_offset", r.loc.byte_offset},
              {"bit_index", r.loc.bit_index},
              {"direction", direction_token(r.loc.direction)},
              {"status", r.raw_status},
              {"verdict_kind", to_string(r.verdict.kind)},
              {"pinned_class", r.verdict.pinned_class},
              {"accuracy", detail::opt(m.accuracy)},
              {"pin_fraction", detail::opt(m.pin_fraction)},
              {"distortion", detail::opt(m.distortion)},
              {"label_change", detail::opt(m.label_change_fraction)},
              {"wall_ms", r.wall_ms}};
}

inline SweepRecord record_from_json(const Json& j) {
  SweepRecord r;
  r.loc.byte_offset = j.at("byte_offset").get<std::uint64_t>();
  r.loc.bit_index = j.at("bit_index").get<std::uint8_t>();
  const auto dir = parse_direction(j.at("direction").get<std::string>());
  const auto kind = parse_verdict_kind(j.at("verdict_kind").get<std::string>());
  if (!dir || !kind || r.loc.bit_index > 7) throw Error(Errc::BadFormat, "bad campaign record");
  r.loc.direction = *dir;
  r.raw_status = j.at("status").get<std::string>();
  r.verdict.kind = *kind;
  r.verdict.pinned_class = j.at("pinned_class").get<int>();
  r.verdict.metrics.accuracy = detail::opt(j.at("accuracy"));
  r.verdict.metrics.pin_fraction = detail::opt(j.at("pin_fraction"));
  r.verdict.metrics.distortion = detail::opt(j.at("distortion"));
  if (j.contains("label_change")) r.verdict.metrics.label_change_fraction = detail::opt(j.at("label_change"));
  r.wall_ms = j.value("wall_ms", 0.0);
  return r;
}

struct CampaignLogContents {
  CampaignHeader header;
  std::vector<SweepRecord> records;
  std::uint64_t valid_bytes = 0;  // length of the prefix made of complete lines
};

/// Reads a log, tolerating a torn final line left by an interrupted writer.
inline CampaignLogContents read_campaign_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open campaign log " + path.string());
  CampaignLogContents out;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (in.eof()) break;  // no trailing newline: torn write
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception&) {
      break;
    }
    if (!have_header) {
      out.header = header_from_json(j);
      have_header = true;
    } else {
      out.records.push_back(record_from_json(j));
    }
    out.valid_bytes += line.size() + 1;
  }
  if (!have_header) throw Error(Errc::BadFormat, "campaign log has no header: " + path.string());
  return out;
}

/// Single-writer append-only log.
class CampaignLogWriter {
 public:
  CampaignLogWriter(const std::filesystem::path& path, const CampaignHeader& header, bool fresh)
      : header_(header) {
    if (fresh) {
      out_.open(path, std::ios::binary | std::ios::trunc);
      if (!out_) throw Error(Errc::Io, "cannot create campaign log " + path.string());
      out_ << header_to_json(header).dump() << '\n';
    } else {
      out_.open(path, std::ios::binary | std::ios::app);
      if (!out_) throw Error(Errc::Io, "cannot append to campaign log " + path.string());
    }
    out_.flush();
  }

  void append(const SweepRecord& r) {
    out_ << record_to_json(r, header_.campaign_id, header_.binary_sha256).dump() << '\n';
    out_.flush();
    if (!out_) throw Error(Errc::Io, "campaign log write failed");
  }

 private:
  CampaignHeader header_;
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Sweep

struct SweepOptions {
  std::size_t workers = 1;
  std::size_t chunk_bits = 256;
  bool fast_filter = true;
  std::vector<ByteRange> exclude;
  std::optional<std::filesystem::path> log_path;
  bool resume = false;
  std::string campaign_id;  // derived from binary hash and oracle when empty
  Json config = Json::object();
  std::function<void(const SweepRecord&)> on_record;
};

inline bool excluded(const std::vector<ByteRange>& ranges, std::uint64_t off) {
  return std::any_of(ranges.begin(), ranges.end(), [&](const ByteRange& r) { return r.contains(off); });
}

/// Bits a sweep covers: all of .text minus excluded byte ranges.
inline std::vector<BitLocation> sweep_locations(const ElfImage& img, const std::vector<ByteRange>& exclude) {
  auto all = enumerate_bits(img);
  std::erase_if(all, [&](const BitLocation& l) { return excluded(exclude, l.byte_offset); });
  return all;
}

/// Unmutated run must complete and, when accuracy is measured, beat 2x random guessing.
inline void check_baseline(const ProbeResult& base, std::size_t class_count) {
  if (!base.completed) throw Error(Errc::BaselineFailed, "unmutated binary did not complete (" + base.status + ")");
  const auto& acc = base.verdict.metrics.accuracy;
  if (acc && class_count > 0 && !(*acc > 2.0 / static_cast<double>(class_count)))
    throw Error(Errc::BaselineFailed, "baseline accuracy " + std::to_string(*acc) + " is not above 2x random guess");
}

inline std::string derive_campaign_id(const std::string& binary_sha, const OracleConfig& oracle,
                                      const std::vector<ByteRange>& exclude) {
  Json j{{"sha", binary_sha}, {"oracle", oracle_to_json(oracle)}, {"exclude", Json::array()}};
  for (const auto& r : exclude) j["exclude"].push_back({r.begin, r.end});
  return sha256_hex(j.dump()).substr(0, 16);
}

namespace detail {

struct Scored {
  SweepRecord rec;
  std::optional<GenerativeScore> score;
};

template <FlipProbe P>
Scored evaluate_location(const P& probe, const BitLocation& loc, bool fast_filter) {
  const auto& cfg = probe.oracle();
  ProbeResult r;
  if (fast_filter && cfg.kind != OracleKind::Generative && probe.has_fast_scope()) {
    r = probe.evaluate(loc, EvalScope::Fast);
    if (r.completed && r.verdict.vulnerable()) {
      const double first = r.wall_ms;
      r = probe.evaluate(loc, EvalScope::Full);
      r.wall_ms += first;
    }
  } else {
    r = probe.evaluate(loc, EvalScope::Full);
  }
  Scored s{{loc, r.completed ? r.verdict : Verdict::crash(), r.status, r.wall_ms}, std::nullopt};
  if (r.completed && cfg.kind == OracleKind::Generative) {
    s.score = r.score;
    if (!s.score) s.rec.verdict = Verdict::crash();
  }
  return s;
}

// Orders commits, and for the generative oracle holds records until the
// distortion history is warm, then scores them.
class Committer {
 public:
  Committer(const OracleConfig& cfg, DistortionHistory history, std::function<void(const SweepRecord&)> sink)
      : cfg_(cfg), history_(std::move(history)), sink_(std::move(sink)) {}

  void commit(Scored s) {
    if (cfg_.kind != OracleKind::Generative) {
      sink_(s.rec);
      return;
    }
    if (history_.size() >= cfg_.warmup && held_.empty()) {
      finalize(s, cfg_);
      if (s.score) history_.add(s.score->distortion);
      sink_(s.rec);
      return;
    }
    if (s.score) history_.add(s.score->distortion);
    held_.push_back(std::move(s));
    if (history_.size() >= cfg_.warmup) flush(cfg_);
  }

  /// End of sweep: score anything still held against whatever history exists.
  void finish() {
    if (held_.empty()) return;
    OracleConfig relaxed = cfg_;
    relaxed.warmup = std::max<std::size_t>(1, std::min(cfg_.warmup, history_.size()));
    flush(relaxed);
  }

  const DistortionHistory& history() const { return history_; }

 private:
  void finalize(Scored& s, const OracleConfig& cfg) {
    if (s.score) s.rec.verdict = generative_verdict_from_score(*s.score, history_, cfg);
  }
  void flush(const OracleConfig& cfg) {
    for (auto& h : held_) {
      if (h.score && history_.size() == 0) h.rec.verdict = Verdict::crash();
      else finalize(h, cfg);
      sink_(h.rec);
    }
    held_.clear();
  }

  OracleConfig cfg_;
  DistortionHistory history_;
  std::function<void(const SweepRecord&)> sink_;
  std::vector<Scored> held_;
};

}  // namespace detail

struct SweepResult {
  CampaignHeader header;
  std::vector<SweepRecord> records;  // ordered by bit
  ProbeResult baseline;
  DistortionHistory history;
  std::size_t executed = 0;  // bits evaluated in this call (excludes resumed records)
};

/// Sweeps every non-excluded .text bit exactly once. With a log path, records
/// are appended as they are committed (in bit order) and `resume` skips bits
/// already present in the log.
template <FlipProbe P>
SweepResult sweep(const ElfImage& img, const std::string& binary_sha, const P& probe, const SweepOptions& opt) {
  const auto& cfg = probe.oracle();
  cfg.validate();
  SweepResult result;
  result.baseline = probe.baseline();
  check_baseline(result.baseline, probe.class_count());

  auto locations = sweep_locations(img, opt.exclude);
  auto& header = result.header;
  header.binary_sha256 = binary_sha;
  header.text_size = img.text().size;
  header.total_bits = locations.size();
  header.oracle = cfg;
  header.exclude = opt.exclude;
  header.config = opt.config;
  header.campaign_id = opt.campaign_id.empty() ? derive_campaign_id(binary_sha, cfg, opt.exclude) : opt.campaign_id;

  std::map<std::uint64_t, SweepRecord> done;
  DistortionHistory history;
  bool fresh = true;
  if (opt.log_path && opt.resume && std::filesystem::exists(*opt.log_path)) {
    auto prior = read_campaign_log(*opt.log_path);
    if (prior.header.binary_sha256 != binary_sha || prior.header.total_bits != header.total_bits)
      throw Error(Errc::ResumeMismatch, "log belongs to a different binary or bit range");
    if (oracle_to_json(prior.header.oracle) != oracle_to_json(cfg))
      throw Error(Errc::ResumeMismatch, "log was written with different oracle settings");
    header.campaign_id = prior.header.campaign_id;
    std::filesystem::resize_file(*opt.log_path, prior.valid_bytes);
    for (auto& r : prior.records) {
      check_location(img, r.loc);
      if (r.loc != location_at(img, r.loc.ordinal()))
        throw Error(Errc::ResumeMismatch, "logged direction disagrees with binary");
      if (cfg.kind == OracleKind::Generative && r.verdict.kind != VerdictKind::Crash && r.verdict.metrics.distortion)
        history.add(*r.verdict.metrics.distortion);
      done.emplace(r.loc.ordinal(), std::move(r));
    }
    fresh = false;
  }

  std::optional<CampaignLogWriter> log;
  if (opt.log_path) log.emplace(*opt.log_path, header, fresh);

  std::vector<BitLocation> todo;
  for (const auto& l : locations)
    if (!done.count(l.ordinal())) todo.push_back(l);
  result.executed = todo.size();

  std::vector<SweepRecord> fresh_records;
  detail::Committer committer(cfg, std::move(history), [&](const SweepRecord& r) {
    if (log) log->append(r);
    if (opt.on_record) opt.on_record(r);
    fresh_records.push_back(r);
  });

  const std::size_t chunk = std::max<std::size_t>(1, opt.chunk_bits);
  const std::size_t nchunks = (todo.size() + chunk - 1) / chunk;
  auto run_chunk = [&](std::size_t c) {
    std::vector<detail::Scored> out;
    const std::size_t end = std::min(todo.size(), (c + 1) * chunk);
    for (std::size_t i = c * chunk; i < end; ++i) out.push_back(detail::evaluate_location(probe, todo[i], opt.fast_filter));
    return out;
  };

  if (opt.workers <= 1 || nchunks <= 1) {
    for (std::size_t c = 0; c < nchunks; ++c)
      for (auto& s : run_chunk(c)) committer.commit(std::move(s));
  } else {
    std::vector<std::optional<std::vector<detail::Scored>>> slots(nchunks);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::mutex m;
    std::condition_variable cv;
    std::exception_ptr failure;
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < std::min(opt.workers, nchunks); ++w) {
        pool.emplace_back([&] {
          for (std::size_t c; !abort && (c = next++) < nchunks;) {
            try {
              auto res = run_chunk(c);
              std::lock_guard lk(m);
              slots[c] = std::move(res);
            } catch (...) {
              std::lock_guard lk(m);
              if (!failure) failure = std::current_exception();
              abort = true;
            }
            cv.notify_all();
          }
        });
      }
      try {
        for (std::size_t c = 0; c < nchunks; ++c) {
          std::vector<detail::Scored> batch;
          {
            std::unique_lock lk(m);
            cv.wait(lk, [&] { return slots[c].has_value() || failure; });
            if (failure) break;
            batch = std::move(*slots[c]);
            slots[c].reset();
          }
          for (auto& s : batch) committer.commit(std::move(s));
        }
      } catch (...) {
        abort = true;
        throw;
      }
    }
    if (failure) std::rethrow_exception(failure);
  }
  committer.finish();
  result.history = committer.history();

  for (auto& r : fresh_records) done.emplace(r.loc.ordinal(), std::move(r));
  result.records.reserve(done.size());
  for (auto& [_, r] : done) result.records.push_back(std::move(r));
  return result;
}

/// Re-executes only the given bits with the full evaluation set. Generative
/// oracles need the sweep's distortion history.
template <FlipProbe P>
std::map<BitLocation, Verdict> verify_bits(const P& probe, const std::vector<BitLocation>& locs,
                                           const DistortionHistory* history = nullptr) {
  std::map<BitLocation, Verdict> out;
  const auto& cfg = probe.oracle();
  for (const auto& loc : locs) {
    if (out.count(loc)) continue;
    auto r = probe.evaluate(loc, EvalScope::Full);
    Verdict v = r.completed ? r.verdict : Verdict::crash();
    if (r.completed && cfg.kind == OracleKind::Generative) {
      if (!history) throw Error(Errc::EmptyHistory, "generative verification needs a distortion history");
      v = r.score ? generative_verdict_from_score(*r.score, *history, cfg) : Verdict::crash();
    }
    out.emplace(loc, v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summary

struct HistogramBucket {
  std::uint64_t begin = 0;  // text-relative byte offsets, end exclusive
  std::uint64_t end = 0;
  std::uint64_t total_bits = 0;
  std::uint64_t vuln_count = 0;
  double density = 0;

  friend bool operator==(const HistogramBucket&, const HistogramBucket&) = default;
};

struct CampaignSummary {
  std::uint64_t total_bits = 0;
  std::uint64_t vuln_count = 0;
  double vuln_pct = 0;         // fraction of all swept bits
  double zero_to_one_pct = 0;  // fraction of vulnerable bits
  std::uint64_t crash_count = 0;
  std::map<int, std::uint64_t> per_class_pin_counts;
  std::vector<HistogramBucket> histogram;

  friend bool operator==(const CampaignSummary&, const CampaignSummary&) = default;
};

inline constexpr std::size_t kDefaultBuckets = 64;

/// Pure fold over the records. `expected_bits` guards against summarizing a
/// partial sweep; `text_size` spans the histogram.
inline CampaignSummary summarize(const std::vector<SweepRecord>& records, std::uint64_t expected_bits,
                                 std::uint64_t text_size, std::size_t buckets = kDefaultBuckets) {
  std::set<std::uint64_t> keys;
  for (const auto& r : records) keys.insert(r.loc.ordinal());
  if (keys.size() != records.size()) throw Error(Errc::IncompleteSweep, "duplicate records");
  if (records.size() != expected_bits)
    throw Error(Errc::IncompleteSweep,
                std::to_string(records.size()) + " of " + std::to_string(expected_bits) + " bits recorded");
  if (buckets == 0 || text_size == 0) throw Error(Errc::BadShape, "histogram needs buckets and a text range");

  CampaignSummary s;
  s.total_bits = records.size();
  s.histogram.resize(buckets);
  for (std::size_t b = 0; b < buckets; ++b) {
    s.histogram[b].begin = text_size * b / buckets;
    s.histogram[b].end = text_size * (b + 1) / buckets;
  }
  std::uint64_t zero_to_one = 0;
  for (const auto& r : records) {
    auto& bucket = s.histogram[std::min<std::uint64_t>(buckets - 1, r.loc.byte_offset * buckets / text_size)];
    ++bucket.total_bits;
    if (r.verdict.kind == VerdictKind::Crash) ++s.crash_count;
    if (!r.verdict.vulnerable()) continue;
    ++s.vuln_count;
    ++bucket.vuln_count;
    zero_to_one += r.loc.direction == Direction::ZeroToOne;
    if (r.verdict.kind == VerdictKind::VulnerablePinned) ++s.per_class_pin_counts[r.verdict.pinned_class];
  }
  for (auto& b : s.histogram)
    b.density = b.total_bits == 0 ? 0.0 : static_cast<double>(b.vuln_count) / static_cast<double>(b.total_bits);
  s.vuln_pct = s.total_bits == 0 ? 0.0 : static_cast<double>(s.vuln_count) / static_cast<double>(s.total_bits);
  s.zero_to_one_pct = s.vuln_count == 0 ? 0.0 : static_cast<double>(zero_to_one) / static_cast<double>(s.vuln_count);
  return s;
}

inline Json summary_to_json(const CampaignSummary& s) {
  Json pins = Json::object();
  for (const auto& [c, n] : s.per_class_pin_counts) pins[std::to_string(c)] = n;
  Json hist = Json::array();
  for (const auto& b : s.histogram)
    hist.push_back({{"begin", b.begin}, {"end", b.end}, {"bits", b.total_bits}, {"vuln", b.vuln_count}, {"density", b.density}});
  return Json{{"total_bits", s.total_bits},
              {"vuln_count", s.vuln_count},
              {"vuln_pct", s.vuln_pct},
              {"zero_to_one_pct", s.zero_to_one_pct},
              {"crash_count", s.crash_count},
              {"per_class_pin_counts", pins},
              {"histogram", hist}};
}

inline std::string histogram_csv(const CampaignSummary& s) {
  std::string out = "bucket,begin,end,bits,vuln,density\n";
  char buf[160];
  for (std::size_t i = 0; i < s.histogram.size(); ++i) {
    const auto& b = s.histogram[i];
    std::snprintf(buf, sizeof buf, "%zu,%llu,%llu,%llu,%llu,%.6f\n", i, static_cast<unsigned long long>(b.begin),
                  static_cast<unsigned long long>(b.end), static_cast<unsigned long long>(b.total_bits),
                  static_cast<unsigned long long>(b.vuln_count), b.density);
    out += buf;
  }
  return out;
}

}  // namespace flipscan
