#pragma once

// Superbits: vulnerable bits shared by every executable of one model
// structure trained to different weights. Computed either by intersecting full
// per-entry sweeps or by the interleaved search that only re-tests the
// surviving candidates on each further entry.

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "flipscan/campaign.hpp"
#include "flipscan/elf_image.hpp"
#include "flipscan/error.hpp"
#include "flipscan/oracles.hpp"

namespace flipscan {

using BitSet = std::set<BitLocation>;
using VerdictMap = std::map<BitLocation, Verdict>;

struct ProvenanceEntry {
  std::string id;
  std::string text_sha256;

  friend bool operator==(const ProvenanceEntry&, const ProvenanceEntry&) = default;
};

struct SuperbitSet {
  BitSet bits;
  std::vector<ProvenanceEntry> provenance;  // entries consumed, in order
  std::map<BitLocation, double> mean_accuracy;  // over consumed entries, when the oracle reports accuracy

  /// Attack priority: lowest mean accuracy first (strongest effect), ties by position.
  std::vector<BitLocation> ordered() const {
    std::vector<BitLocation> out(bits.begin(), bits.end());
    std::stable_sort(out.begin(), out.end(), [&](const BitLocation& a, const BitLocation& b) {
      const auto ia = mean_accuracy.find(a), ib = mean_accuracy.find(b);
      const double xa = ia == mean_accuracy.end() ? 1.0 : ia->second;
      const double xb = ib == mean_accuracy.end() ? 1.0 : ib->second;
      if (xa != xb) return xa < xb;
      return a.ordinal() < b.ordinal();
    });
    return out;
  }
};

/// Exact intersection keyed by (byte_offset, bit_index, direction).
inline SuperbitSet intersect_naive(std::span<const BitSet> vuln_sets) {
  if (vuln_sets.empty()) throw Error(Errc::EmptyInput, "intersection of zero sets");
  SuperbitSet s;
  s.bits = vuln_sets.front();
  for (std::size_t i = 1; i < vuln_sets.size(); ++i) {
    BitSet next;
    std::set_intersection(s.bits.begin(), s.bits.end(), vuln_sets[i].begin(), vuln_sets[i].end(),
                          std::inserter(next, next.end()));
    s.bits = std::move(next);
  }
  return s;
}

/// One executable of a same-structure family, as seen by the superbit search.
template <typename E>
concept FamilyMember = requires(const E& e, const std::vector<BitLocation>& locs) {
  { e.id() } -> std::convertible_to<std::string>;
  { e.text_sha256() } -> std::convertible_to<std::string>;
  { e.total_bits() } -> std::convertible_to<std::uint64_t>;
  { e.vulnerable_bits() } -> std::convertible_to<VerdictMap>;  // full sweep
  { e.verify(locs) } -> std::convertible_to<VerdictMap>;
};

struct ShrinkResult {
  SuperbitSet superbits;
  std::vector<std::size_t> size_after;   // |S| after each consumed entry
  std::vector<BitSet> sets_after;        // S after each consumed entry
  std::uint64_t executions = 0;          // flips evaluated by the interleaved search
  std::uint64_t naive_executions = 0;    // flips a full sweep of every entry would evaluate
};

template <FamilyMember E>
void check_same_structure(std::span<const E> entries) {
  for (const auto& e : entries)
    if (e.text_sha256() != entries.front().text_sha256())
      throw Error(Errc::StructureMismatch, "entry " + std::string(e.id()) + " has different .text bytes");
}

namespace detail {

struct AccuracyAccumulator {
  std::map<BitLocation, std::pair<double, std::size_t>> sums;
  void add(const VerdictMap& vm) {
    for (const auto& [loc, v] : vm)
      if (v.metrics.accuracy) {
        auto& [s, n] = sums[loc];
        s += *v.metrics.accuracy;
        ++n;
      }
  }
  std::map<BitLocation, double> means(const BitSet& keep) const {
    std::map<BitLocation, double> out;
    for (const auto& loc : keep)
      if (auto it = sums.find(loc); it != sums.end() && it->second.second > 0)
        out[loc] = it->second.first / static_cast<double>(it->second.second);
    return out;
  }
};

}  // namespace detail

/// Sweeps the first entry fully, then for every further entry re-tests only
/// the current candidates and keeps those still vulnerable. Stops early once
/// the candidate set is empty.
template <FamilyMember E>
ShrinkResult shrink_search(std::span<const E> entries) {
  if (entries.empty()) throw Error(Errc::EmptyInput, "superbit search over an empty family");
  check_same_structure(entries);
  ShrinkResult r;
  for (const auto& e : entries) r.naive_executions += e.total_bits();

  detail::AccuracyAccumulator acc;
  const auto& first = entries.front();
  const VerdictMap v1 = first.vulnerable_bits();
  acc.add(v1);
  for (const auto& [loc, v] : v1)
    if (v.vulnerable()) r.superbits.bits.insert(loc);
  r.executions += first.total_bits();
  r.superbits.provenance.push_back({first.id(), first.text_sha256()});
  r.size_after.push_back(r.superbits.bits.size());
  r.sets_after.push_back(r.superbits.bits);

  for (std::size_t i = 1; i < entries.size() && !r.superbits.bits.empty(); ++i) {
    const auto& e = entries[i];
    const std::vector<BitLocation> candidates(r.superbits.bits.begin(), r.superbits.bits.end());
    const VerdictMap vm = e.verify(candidates);
    r.executions += candidates.size();
    acc.add(vm);
    BitSet kept;
    for (const auto& loc : candidates)
      if (auto it = vm.find(loc); it != vm.end() && it->second.vulnerable()) kept.insert(loc);
    r.superbits.bits = std::move(kept);
    r.superbits.provenance.push_back({e.id(), e.text_sha256()});
    r.size_after.push_back(r.superbits.bits.size());
    r.sets_after.push_back(r.superbits.bits);
  }
  r.superbits.mean_accuracy = acc.means(r.superbits.bits);
  return r;
}

struct TransferReport {
  std::optional<double> fraction;  // nullopt: no superbits to transfer
  VerdictMap verdicts;
};

/// Share of superbits that are also vulnerable on the victim.
template <FamilyMember E>
TransferReport transfer_eval(const SuperbitSet& superbits, const E& victim) {
  if (!superbits.provenance.empty() && superbits.provenance.front().text_sha256 != victim.text_sha256())
    throw Error(Errc::StructureMismatch, "victim .text differs from the superbit family");
  TransferReport rep;
  if (superbits.bits.empty()) return rep;
  rep.verdicts = victim.verify(std::vector<BitLocation>(superbits.bits.begin(), superbits.bits.end()));
  std::size_t hits = 0;
  for (const auto& [_, v] : rep.verdicts) hits += v.vulnerable();
  rep.fraction = static_cast<double>(hits) / static_cast<double>(superbits.bits.size());
  return rep;
}

struct TransferPoint {
  std::size_t family_size = 0;
  std::size_t superbits = 0;
  std::optional<double> fraction;
};

/// Transfer accuracy of S_n for n = 1..|family|. The victim is queried once on
/// S_1; every later S_n is a subset, so its fraction comes from that cache.
template <FamilyMember E>
std::vector<TransferPoint> transfer_curve(const ShrinkResult& search, const E& victim) {
  std::vector<TransferPoint> curve;
  if (search.sets_after.empty()) return curve;
  if (!search.superbits.provenance.empty() && search.superbits.provenance.front().text_sha256 != victim.text_sha256())
    throw Error(Errc::StructureMismatch, "victim .text differs from the superbit family");
  const auto& s1 = search.sets_after.front();
  const VerdictMap cache = victim.verify(std::vector<BitLocation>(s1.begin(), s1.end()));
  for (std::size_t n = 0; n < search.sets_after.size(); ++n) {
    const auto& s = search.sets_after[n];
    TransferPoint p{n + 1, s.size(), std::nullopt};
    if (!s.empty()) {
      std::size_t hits = 0;
      for (const auto& loc : s) hits += cache.at(loc).vulnerable();
      p.fraction = static_cast<double>(hits) / static_cast<double>(s.size());
    }
    curve.push_back(p);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Family member backed by a FlipProbe.

template <FlipProbe P>
class ProbeMember {
 public:
  ProbeMember(std::string id, const ElfImage& image, const P& probe, SweepOptions opt = {})
      : id_(std::move(id)), image_(&image), probe_(&probe), opt_(std::move(opt)),
        text_sha_(sha256_hex(image.text_bytes())), file_sha_(sha256_hex(image.raw_bytes())) {}

  std::string id() const { return id_; }
  std::string text_sha256() const { return text_sha_; }
  std::uint64_t total_bits() const { return sweep_locations(*image_, opt_.exclude).size(); }

  VerdictMap vulnerable_bits() const {
    VerdictMap out;
    last_sweep_ = sweep(*image_, file_sha_, *probe_, opt_);
    for (const auto& r : last_sweep_->records)
      if (r.verdict.vulnerable()) out.emplace(r.loc, r.verdict);
    return out;
  }

  VerdictMap verify(const std::vector<BitLocation>& locs) const {
    for (const auto& loc : locs) {
      check_location(*image_, loc);
      if (location_at(*image_, loc.ordinal()).direction != loc.direction)
        throw Error(Errc::StructureMismatch, "flip direction differs on entry " + id_);
    }
    return verify_bits(*probe_, locs, history());
  }

  /// Generative verification on an entry that was never swept uses the
  /// distortion history of `other`'s sweep.
  void borrow_history(const ProbeMember& other) { lender_ = &other; }

  const DistortionHistory* history() const {
    if (last_sweep_) return &last_sweep_->history;
    return lender_ && lender_ != this ? lender_->history() : nullptr;
  }

  const std::optional<SweepResult>& last_sweep() const { return last_sweep_; }

 private:
  std::string id_;
  const ElfImage* image_;
  const P* probe_;
  SweepOptions opt_;
  std::string text_sha_;
  std::string file_sha_;
  mutable std::optional<SweepResult> last_sweep_;
  const ProbeMember* lender_ = nullptr;
};

// ---------------------------------------------------------------------------
// Serialization: a provenance header followed by campaign-format records.

inline std::string format_superbits(const SuperbitSet& s, const Json& config = Json::object()) {
  Json prov = Json::array();
  for (const auto& p : s.provenance) prov.push_back({{"id", p.id}, {"text_sha256", p.text_sha256}});
  Json header{{"type", "superbits"}, {"count", s.bits.size()}, {"provenance", prov}, {"config", config}};
  std::string out = header.dump() + '\n';
  const std::string family = s.provenance.empty() ? "" : s.provenance.front().text_sha256;
  for (const auto& loc : s.ordered()) {
    SweepRecord r{loc, Verdict{VerdictKind::Vulnerable, -1, {}}, "exit0", 0};
    if (auto it = s.mean_accuracy.find(loc); it != s.mean_accuracy.end()) r.verdict.metrics.accuracy = it->second;
    out += record_to_json(r, "superbits", family).dump() + '\n';
  }
  return out;
}

inline SuperbitSet parse_superbits(std::string_view text) {
  SuperbitSet s;
  std::size_t pos = 0;
  bool header = false;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::BadFormat, std::string("superbit file: ") + e.what());
    }
    if (!header) {
      if (j.value("type", "") != "superbits") throw Error(Errc::BadFormat, "not a superbit file");
      for (const auto& p : j.at("provenance"))
        s.provenance.push_back({p.at("id").get<std::string>(), p.at("text_sha256").get<std::string>()});
      header = true;
      continue;
    }
    const auto r = record_from_json(j);
    s.bits.insert(r.loc);
    if (r.verdict.metrics.accuracy) s.mean_accuracy[r.loc] = *r.verdict.metrics.accuracy;
  }
  if (!header) throw Error(Errc::BadFormat, "empty superbit file");
  return s;
}

}  // namespace flipscan
