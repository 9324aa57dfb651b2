#pragma once

// Online phase simulator: memory templates, the one-flip-per-merged-page
// rule, and the try-superbits-until-success attack loop.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "flipscan/campaign.hpp"
#include "flipscan/elf_image.hpp"
#include "flipscan/error.hpp"
#include "flipscan/probe.hpp"
#include "flipscan/random.hpp"

namespace flipscan {

inline constexpr std::uint64_t kPageSize = 4096;
inline constexpr std::uint64_t kTemplateRegionPages = (256ULL << 20) / kPageSize;

struct MemoryTemplate {
  std::uint64_t page_frame = 0;
  std::uint16_t offset_in_page = 0;
  std::uint8_t bit_index = 0;
  Direction direction = Direction::ZeroToOne;

  friend bool operator==(const MemoryTemplate&, const MemoryTemplate&) = default;
};

struct TemplatePool {
  std::vector<MemoryTemplate> templates;
  std::uint64_t seed = 0;
  std::size_t count = 0;
  double zero_to_one_ratio = 0;

  std::size_t zero_to_one() const {
    return static_cast<std::size_t>(std::count_if(templates.begin(), templates.end(), [](const auto& t) {
      return t.direction == Direction::ZeroToOne;
    }));
  }
};

/// Uniform (offset_in_page, bit_index), Bernoulli(ratio) direction, page frame
/// uniform over a 256MB region.
inline TemplatePool generate_templates(std::uint64_t seed, std::size_t count, double zero_to_one_ratio) {
  if (!(zero_to_one_ratio >= 0.0 && zero_to_one_ratio <= 1.0))
    throw Error(Errc::BadShape, "zero-to-one ratio must lie in [0,1]");
  TemplatePool pool{{}, seed, count, zero_to_one_ratio};
  Rng rng(seed);
  pool.templates.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    MemoryTemplate t;
    t.page_frame = uniform_below(rng, kTemplateRegionPages);
    t.offset_in_page = static_cast<std::uint16_t>(uniform_below(rng, kPageSize));
    t.bit_index = static_cast<std::uint8_t>(uniform_below(rng, 8));
    t.direction = uniform01(rng) < zero_to_one_ratio ? Direction::ZeroToOne : Direction::OneToZero;
    pool.templates.push_back(t);
  }
  return pool;
}

/// One template for every (offset_in_page, bit_index, direction).
inline TemplatePool full_coverage_templates() {
  TemplatePool pool;
  pool.count = kPageSize * 8 * 2;
  pool.zero_to_one_ratio = 0.5;
  pool.templates.reserve(pool.count);
  for (std::uint16_t off = 0; off < kPageSize; ++off)
    for (std::uint8_t bit = 0; bit < 8; ++bit)
      for (auto dir : {Direction::ZeroToOne, Direction::OneToZero})
        pool.templates.push_back({off, off, bit, dir});
  return pool;
}

enum class AttemptOutcome : std::uint8_t { Success, Crash, NoChange, NoTemplate, PageAlreadyFlipped };

inline const char* to_string(AttemptOutcome o) {
  switch (o) {
    case AttemptOutcome::Success: return "success";
    case AttemptOutcome::Crash: return "crash";
    case AttemptOutcome::NoChange: return "nochange";
    case AttemptOutcome::NoTemplate: return "notemplate";
    case AttemptOutcome::PageAlreadyFlipped: return "pageflipped";
  }
  return "nochange";
}

struct Attempt {
  BitLocation superbit;
  std::uint64_t page = 0;
  std::optional<MemoryTemplate> used;
  AttemptOutcome outcome = AttemptOutcome::NoChange;

  friend bool operator==(const Attempt&, const Attempt&) = default;
};

struct AttackRun {
  std::vector<Attempt> attempts;
  std::size_t flips_attempted = 0;
  std::size_t crashes = 0;
  bool succeeded = false;

  friend bool operator==(const AttackRun&, const AttackRun&) = default;
};

/// Where .text sits in the victim's address space; only its page offset matters.
struct TextPlacement {
  std::uint64_t text_vaddr = 0;

  static TextPlacement of(const ElfImage& img) {
    // Loaders map segments at multiples of their alignment, so the page offset
    // of the link-time address is the runtime page offset.
    return {img.text().virtual_addr % std::max<std::uint64_t>(kPageSize, img.text_segment_align())};
  }
  std::uint64_t page_of(const BitLocation& l) const { return (text_vaddr + l.byte_offset) / kPageSize; }
  std::uint16_t offset_in_page(const BitLocation& l) const {
    return static_cast<std::uint16_t>((text_vaddr + l.byte_offset) % kPageSize);
  }
};

/// The victim process as the attack loop sees it: apply one more flip and
/// query its behaviour, or restart after a crash (dropping all flips).
template <typename V>
concept AttackVictim = requires(V& v, const BitLocation& loc, Rng& rng) {
  { v.flip_and_query(loc, rng) } -> std::same_as<AttemptOutcome>;
  { v.restart() };
};

/// Victim whose response to each superbit is drawn from fixed probabilities.
class StubVictim {
 public:
  struct Odds {
    double success = 0;
    double crash = 0;
  };

  explicit StubVictim(Odds default_odds, std::map<BitLocation, Odds> per_bit = {})
      : default_(default_odds), per_bit_(std::move(per_bit)) {
    auto check = [](const Odds& o) {
      if (!(o.success >= 0 && o.crash >= 0 && o.success + o.crash <= 1.0))
        throw Error(Errc::BadShape, "stub probabilities must lie in [0,1]");
    };
    check(default_);
    for (const auto& [_, o] : per_bit_) check(o);
  }

  AttemptOutcome flip_and_query(const BitLocation& loc, Rng& rng) {
    const auto it = per_bit_.find(loc);
    const Odds& o = it == per_bit_.end() ? default_ : it->second;
    const double u = uniform01(rng);
    if (u < o.success) return AttemptOutcome::Success;
    if (u < o.success + o.crash) return AttemptOutcome::Crash;
    return AttemptOutcome::NoChange;
  }

  void restart() { ++restarts_; }
  std::size_t restarts() const { return restarts_; }

 private:
  Odds default_;
  std::map<BitLocation, Odds> per_bit_;
  std::size_t restarts_ = 0;
};

/// Victim that really runs the corrupted executable; flips accumulate until a crash.
class LiveVictim {
 public:
  explicit LiveVictim(const ExecutableProbe& probe) : probe_(&probe), bytes_(probe.image().raw_bytes()) {}

  AttemptOutcome flip_and_query(const BitLocation& loc, Rng&) {
    flip_in_place(bytes_, probe_->image().text().file_offset, loc);
    const auto r = probe_->run_bytes(bytes_, EvalScope::Full);
    last_ = r;
    if (!r.completed) return AttemptOutcome::Crash;
    return r.verdict.vulnerable() ? AttemptOutcome::Success : AttemptOutcome::NoChange;
  }

  void restart() { bytes_ = probe_->image().raw_bytes(); }

  const std::optional<ProbeResult>& last_result() const { return last_; }

 private:
  const ExecutableProbe* probe_;
  Bytes bytes_;
  std::optional<ProbeResult> last_;
};

/// Templates bucketed by (offset_in_page, bit_index, direction), each bucket in pool order.
class TemplateIndex {
 public:
  explicit TemplateIndex(const TemplatePool& pool) : pool_(&pool), buckets_(kPageSize * 16) {
    for (std::size_t i = 0; i < pool.templates.size(); ++i) {
      const auto& t = pool.templates[i];
      buckets_[key(t.offset_in_page, t.bit_index, t.direction)].push_back(i);
    }
  }

  static std::size_t key(std::uint16_t off, std::uint8_t bit, Direction d) {
    return (static_cast<std::size_t>(off % kPageSize) << 4) | (static_cast<std::size_t>(bit & 7) << 1) |
           (d == Direction::OneToZero ? 1 : 0);
  }
  const std::vector<std::size_t>& bucket(std::size_t k) const { return buckets_[k]; }
  const TemplatePool& pool() const { return *pool_; }

 private:
  const TemplatePool* pool_;
  std::vector<std::vector<std::size_t>> buckets_;
};

/// Tries superbits in the given order. Skips a superbit with no unused
/// matching template or whose page already took a flip in this victim
/// lifetime. A crash restarts the victim, which resets page state; consumed
/// templates stay consumed. Stops on success or after `max_attempts` flips.
template <AttackVictim V>
AttackRun simulate_attack(std::span<const BitLocation> superbits, const TemplateIndex& index, V& victim,
                          std::uint64_t seed, std::size_t max_attempts, TextPlacement placement = {}) {
  if (superbits.empty()) throw Error(Errc::NoSuperbits, "nothing to attack with");
  std::map<std::size_t, std::size_t> consumed;  // per bucket, taken in pool order
  Rng rng(seed);
  AttackRun run;
  std::set<std::uint64_t> flipped_pages;
  for (const auto& s : superbits) {
    if (run.flips_attempted >= max_attempts) break;
    Attempt a{s, placement.page_of(s), std::nullopt, AttemptOutcome::NoTemplate};
    const auto k = TemplateIndex::key(placement.offset_in_page(s), s.bit_index, s.direction);
    const auto& bucket = index.bucket(k);
    auto& taken = consumed[k];
    if (taken >= bucket.size()) {
      run.attempts.push_back(a);
      continue;
    }
    if (flipped_pages.count(a.page)) {
      a.outcome = AttemptOutcome::PageAlreadyFlipped;
      run.attempts.push_back(a);
      continue;
    }
    a.used = index.pool().templates[bucket[taken++]];
    flipped_pages.insert(a.page);
    ++run.flips_attempted;
    a.outcome = victim.flip_and_query(s, rng);
    run.attempts.push_back(a);
    if (a.outcome == AttemptOutcome::Success) {
      run.succeeded = true;
      break;
    }
    if (a.outcome == AttemptOutcome::Crash) {
      ++run.crashes;
      flipped_pages.clear();
      victim.restart();
    }
  }
  return run;
}

template <AttackVictim V>
AttackRun simulate_attack(std::span<const BitLocation> superbits, const TemplatePool& pool, V& victim,
                          std::uint64_t seed, std::size_t max_attempts, TextPlacement placement = {}) {
  return simulate_attack(superbits, TemplateIndex(pool), victim, seed, max_attempts, placement);
}

struct AttackStats {
  std::size_t runs = 0;
  double mean_flips = 0;
  double mean_crashes = 0;
  double success_rate = 0;
  double mean_flips_successful = 0;
  double single_flip_fraction = 0;  // among successful runs
};

inline AttackStats attack_stats(std::span<const AttackRun> runs) {
  if (runs.empty()) throw Error(Errc::EmptyInput, "no attack runs");
  AttackStats s;
  s.runs = runs.size();
  std::size_t ok = 0, single = 0;
  double flips = 0, crashes = 0, ok_flips = 0;
  for (const auto& r : runs) {
    flips += static_cast<double>(r.flips_attempted);
    crashes += static_cast<double>(r.crashes);
    if (r.succeeded) {
      ++ok;
      ok_flips += static_cast<double>(r.flips_attempted);
      single += r.flips_attempted == 1;
    }
  }
  const auto n = static_cast<double>(runs.size());
  s.mean_flips = flips / n;
  s.mean_crashes = crashes / n;
  s.success_rate = static_cast<double>(ok) / n;
  s.mean_flips_successful = ok == 0 ? 0.0 : ok_flips / static_cast<double>(ok);
  s.single_flip_fraction = ok == 0 ? 0.0 : static_cast<double>(single) / static_cast<double>(ok);
  return s;
}

inline Json attempt_to_json(std::size_t run, const Attempt& a) {
  Json j{{"run", run},
         {"byte_offset", a.superbit.byte_offset},
         {"bit_index", a.superbit.bit_index},
         {"direction", direction_token(a.superbit.direction)},
         {"page", a.page},
         {"outcome", to_string(a.outcome)}};
  if (a.used) j["template"] = {{"page_frame", a.used->page_frame}, {"offset_in_page", a.used->offset_in_page}};
  else j["template"] = nullptr;
  return j;
}

inline Json stats_to_json(const AttackStats& s) {
  return Json{{"runs", s.runs},
              {"mean_flips", s.mean_flips},
              {"mean_crashes", s.mean_crashes},
              {"success_rate", s.success_rate},
              {"mean_flips_successful", s.mean_flips_successful},
              {"single_flip_fraction", s.single_flip_fraction}};
}

}  // namespace flipscan
