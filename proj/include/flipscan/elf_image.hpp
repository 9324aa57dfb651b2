#pragma once

// Minimal 64-bit little-endian ELF reader. Only what a .text bit sweep needs:
// section table, the loadable segment that maps .text, and function symbols.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flipscan/error.hpp"

namespace flipscan {

using Bytes = std::vector<std::uint8_t>;

enum class Direction : std::uint8_t { ZeroToOne, OneToZero };

inline const char* direction_token(Direction d) { return d == Direction::ZeroToOne ? "01" : "10"; }

inline std::optional<Direction> parse_direction(std::string_view s) {
  if (s == "01") return Direction::ZeroToOne;
  if (s == "10") return Direction::OneToZero;
  return std::nullopt;
}

/// A single bit of the text section. `byte_offset` is relative to the start
/// of .text; `bit_index` 0 is the least significant bit.
struct BitLocation {
  std::uint64_t byte_offset = 0;
  std::uint8_t bit_index = 0;
  Direction direction = Direction::ZeroToOne;

  /// Position-only ordinal, unique per bit of the section.
  std::uint64_t ordinal() const { return byte_offset * 8 + bit_index; }

  friend bool operator==(const BitLocation&, const BitLocation&) = default;
  friend auto operator<=>(const BitLocation&, const BitLocation&) = default;
};

enum class EntryKind : std::uint8_t { Executable, SharedObject };

struct SectionRef {
  std::string name;
  std::uint64_t file_offset = 0;
  std::uint64_t virtual_addr = 0;
  std::uint64_t size = 0;
  std::uint32_t type = 0;
  bool executable_flag = false;

  friend bool operator==(const SectionRef&, const SectionRef&) = default;
};

struct FunctionSymbol {
  std::string name;
  std::uint64_t virtual_addr = 0;
  std::uint64_t size = 0;
};

namespace detail {

inline constexpr std::uint32_t kShtNobits = 8;
inline constexpr std::uint32_t kShtSymtab = 2;
inline constexpr std::uint64_t kShfExecinstr = 0x4;
inline constexpr std::uint32_t kPtLoad = 1;

template <typename T>
T read_le(std::span<const std::uint8_t> b, std::size_t off) {
  T v{};
  std::memcpy(&v, b.data() + off, sizeof(T));  // host is little-endian x86-64
  return v;
}

}  // namespace detail

class ElfImage {
 public:
  const Bytes& raw_bytes() const { return raw_; }
  const std::vector<SectionRef>& sections() const { return sections_; }
  const std::vector<FunctionSymbol>& functions() const { return functions_; }
  EntryKind entry_kind() const { return kind_; }
  const SectionRef& text() const { return sections_[text_index_]; }

  std::span<const std::uint8_t> text_bytes() const {
    const auto& t = text();
    return std::span<const std::uint8_t>(raw_).subspan(t.file_offset, t.size);
  }

  /// Alignment of the PT_LOAD segment containing .text (4096 when unknown).
  std::uint64_t text_segment_align() const { return text_align_; }

  friend ElfImage parse_elf(std::span<const std::uint8_t> bytes);

 private:
  Bytes raw_;
  std::vector<SectionRef> sections_;
  std::vector<FunctionSymbol> functions_;
  std::size_t text_index_ = 0;
  std::uint64_t text_align_ = 4096;
  EntryKind kind_ = EntryKind::Executable;
};

inline ElfImage parse_elf(std::span<const std::uint8_t> bytes) {
  using detail::read_le;
  if (bytes.size() < 4 || bytes[0] != 0x7F || bytes[1] != 'E' || bytes[2] != 'L' || bytes[3] != 'F')
    throw Error(Errc::BadMagic, "missing \\x7fELF magic");
  if (bytes.size() < 64) throw Error(Errc::TruncatedHeader, "file shorter than ELF64 header");
  if (bytes[4] != 2) throw Error(Errc::UnsupportedClass, "only ELFCLASS64 is supported");
  if (bytes[5] != 1) throw Error(Errc::UnsupportedEndianness, "only little-endian ELF is supported");

  ElfImage img;
  img.raw_.assign(bytes.begin(), bytes.end());
  const std::span<const std::uint8_t> b(img.raw_);

  const auto e_type = read_le<std::uint16_t>(b, 16);
  img.kind_ = e_type == 3 ? EntryKind::SharedObject : EntryKind::Executable;
  const auto e_phoff = read_le<std::uint64_t>(b, 32);
  const auto e_shoff = read_le<std::uint64_t>(b, 40);
  const auto e_phentsize = read_le<std::uint16_t>(b, 54);
  const auto e_phnum = read_le<std::uint16_t>(b, 56);
  const auto e_shentsize = read_le<std::uint16_t>(b, 58);
  const auto e_shnum = read_le<std::uint16_t>(b, 60);
  const auto e_shstrndx = read_le<std::uint16_t>(b, 62);

  if (e_shnum == 0 || e_shentsize < 64) throw Error(Errc::NoTextSection, "no section header table");
  if (e_shoff > b.size() || std::uint64_t(e_shnum) * e_shentsize > b.size() - e_shoff)
    throw Error(Errc::TruncatedHeader, "section header table beyond end of file");
  if (e_shstrndx >= e_shnum) throw Error(Errc::TruncatedHeader, "bad section name table index");

  struct RawSection {
    std::uint32_t name, type, link;
    std::uint64_t flags, addr, offset, size, entsize;
  };
  std::vector<RawSection> raw(e_shnum);
  for (std::size_t i = 0; i < e_shnum; ++i) {
    const std::size_t o = e_shoff + i * e_shentsize;
    raw[i] = {read_le<std::uint32_t>(b, o),      read_le<std::uint32_t>(b, o + 4),
              read_le<std::uint32_t>(b, o + 40), read_le<std::uint64_t>(b, o + 8),
              read_le<std::uint64_t>(b, o + 16), read_le<std::uint64_t>(b, o + 24),
              read_le<std::uint64_t>(b, o + 32), read_le<std::uint64_t>(b, o + 56)};
    if (raw[i].type != detail::kShtNobits && raw[i].type != 0 &&
        (raw[i].offset > b.size() || raw[i].size > b.size() - raw[i].offset))
      throw Error(Errc::TruncatedHeader, "section " + std::to_string(i) + " beyond end of file");
  }

  const auto& strtab = raw[e_shstrndx];
  auto name_at = [&](const RawSection& tab, std::uint32_t off) -> std::string {
    if (off >= tab.size) return {};
    const auto* start = reinterpret_cast<const char*>(b.data() + tab.offset + off);
    return std::string(start, strnlen(start, tab.size - off));
  };

  std::optional<std::size_t> text_idx;
  for (std::size_t i = 0; i < e_shnum; ++i) {
    SectionRef s{name_at(strtab, raw[i].name), raw[i].offset, raw[i].addr,
                 raw[i].size,                  raw[i].type,   (raw[i].flags & detail::kShfExecinstr) != 0};
    if (s.name == ".text") {
      if (text_idx) throw Error(Errc::NoTextSection, "multiple .text sections");
      if (s.size == 0 || s.type == detail::kShtNobits || !s.executable_flag)
        throw Error(Errc::NoTextSection, ".text is empty or not executable");
      text_idx = img.sections_.size();
    }
    img.sections_.push_back(std::move(s));
  }
  if (!text_idx) throw Error(Errc::NoTextSection, "no section named .text");
  img.text_index_ = *text_idx;
  const auto& text = img.sections_[*text_idx];

  if (e_phnum != 0 && e_phentsize >= 56 && e_phoff <= b.size() &&
      std::uint64_t(e_phnum) * e_phentsize <= b.size() - e_phoff) {
    for (std::size_t i = 0; i < e_phnum; ++i) {
      const std::size_t o = e_phoff + i * e_phentsize;
      if (read_le<std::uint32_t>(b, o) != detail::kPtLoad) continue;
      const auto p_offset = read_le<std::uint64_t>(b, o + 8);
      const auto p_filesz = read_le<std::uint64_t>(b, o + 32);
      const auto p_align = read_le<std::uint64_t>(b, o + 48);
      if (text.file_offset >= p_offset && text.file_offset < p_offset + p_filesz) {
        img.text_align_ = p_align == 0 ? 1 : p_align;
        break;
      }
    }
  }

  for (const auto& sec : raw) {
    if (sec.type != detail::kShtSymtab || sec.entsize < 24 || sec.link >= e_shnum) continue;
    const auto& names = raw[sec.link];
    for (std::uint64_t o = sec.offset; o + 24 <= sec.offset + sec.size; o += sec.entsize) {
      const auto info = b[o + 4];
      const auto value = read_le<std::uint64_t>(b, o + 8);
      const auto size = read_le<std::uint64_t>(b, o + 16);
      if ((info & 0xF) != 2 || size == 0) continue;  // STT_FUNC
      if (value < text.virtual_addr || value >= text.virtual_addr + text.size) continue;
      img.functions_.push_back({name_at(names, read_le<std::uint32_t>(b, o)), value, size});
    }
  }
  std::sort(img.functions_.begin(), img.functions_.end(),
            [](const auto& a, const auto& c) { return a.virtual_addr < c.virtual_addr; });
  return img;
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline ElfImage load_elf(const std::filesystem::path& path) { return parse_elf(read_file(path)); }

inline Direction direction_of(std::uint8_t byte, std::uint8_t bit_index) {
  return ((byte >> bit_index) & 1U) ? Direction::OneToZero : Direction::ZeroToOne;
}

/// Every bit of .text in (byte_offset, bit_index) order, with its flip direction.
inline std::vector<BitLocation> enumerate_bits(const ElfImage& img) {
  const auto text = img.text_bytes();
  std::vector<BitLocation> out;
  out.reserve(text.size() * 8);
  for (std::uint64_t off = 0; off < text.size(); ++off)
    for (std::uint8_t bit = 0; bit < 8; ++bit) out.push_back({off, bit, direction_of(text[off], bit)});
  return out;
}

/// Location of `ordinal` (byte_offset * 8 + bit_index) in `img`, direction filled in.
inline BitLocation location_at(const ElfImage& img, std::uint64_t ordinal) {
  const auto text = img.text_bytes();
  if (ordinal >= text.size() * 8) throw Error(Errc::OutOfRange, "bit ordinal beyond .text");
  const std::uint64_t off = ordinal / 8;
  const auto bit = static_cast<std::uint8_t>(ordinal % 8);
  return {off, bit, direction_of(text[off], bit)};
}

inline void check_location(const ElfImage& img, const BitLocation& loc) {
  if (loc.byte_offset >= img.text().size || loc.bit_index > 7)
    throw Error(Errc::OutOfRange, "bit location outside .text (offset " + std::to_string(loc.byte_offset) +
                                      ", bit " + std::to_string(loc.bit_index) + ")");
}

/// Flip one bit in place. Applying the same flip twice restores the input.
inline void flip_in_place(std::span<std::uint8_t> file, std::uint64_t text_file_offset, const BitLocation& loc) {
  file[text_file_offset + loc.byte_offset] ^= static_cast<std::uint8_t>(1U << loc.bit_index);
}

/// Copy of the whole file with exactly one .text bit inverted.
inline Bytes apply_flip(const ElfImage& img, const BitLocation& loc) {
  check_location(img, loc);
  Bytes out = img.raw_bytes();
  flip_in_place(out, img.text().file_offset, loc);
  return out;
}

/// Writes `bytes` to a fresh file at `path` with the given mode. The descriptor
/// is close-on-exec so concurrent fork/exec elsewhere does not keep it open.
inline void write_binary(const std::filesystem::path& path, std::span<const std::uint8_t> bytes,
                         mode_t mode = 0700) {
  ::unlink(path.c_str());
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, mode);
  if (fd < 0) throw Error(Errc::Io, "cannot create " + path.string());
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n <= 0) {
      ::close(fd);
      throw Error(Errc::Io, "short write to " + path.string());
    }
    done += static_cast<std::size_t>(n);
  }
  ::fchmod(fd, mode);
  if (::close(fd) != 0) throw Error(Errc::Io, "close failed for " + path.string());
}

}  // namespace flipscan
