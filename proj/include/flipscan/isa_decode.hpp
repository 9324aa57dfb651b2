#pragma once

// Linear-sweep x86-64 length decoder with per-byte field attribution.
// Covers legacy prefixes, REX, the 0F / 0F38 / 0F3A maps and VEX (C4/C5).
// EVEX, XOP and 3DNow! are reported as undecoded.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "flipscan/campaign.hpp"
#include "flipscan/elf_image.hpp"
#include "flipscan/error.hpp"

namespace flipscan {

enum class InsnClass : std::uint8_t { Mov, Arith, Vector, Branch, Nop, Other };
enum class FieldTag : std::uint8_t { Prefix, Opcode, ModRM, SIB, Displacement, Immediate };

inline const char* to_string(InsnClass c) {
  switch (c) {
    case InsnClass::Mov: return "mov";
    case InsnClass::Arith: return "arith";
    case InsnClass::Vector: return "vector";
    case InsnClass::Branch: return "branch";
    case InsnClass::Nop: return "nop";
    case InsnClass::Other: return "other";
  }
  return "other";
}

inline const char* to_string(FieldTag f) {
  switch (f) {
    case FieldTag::Prefix: return "prefix";
    case FieldTag::Opcode: return "opcode";
    case FieldTag::ModRM: return "modrm";
    case FieldTag::SIB: return "sib";
    case FieldTag::Displacement: return "disp";
    case FieldTag::Immediate: return "imm";
  }
  return "opcode";
}

inline constexpr std::size_t kMaxInsnLength = 15;

struct InsnSpan {
  std::uint64_t start = 0;
  std::uint8_t length = 1;
  bool decoded = false;  // false: a 1-byte Undecoded span
  InsnClass cls = InsnClass::Other;
  std::string mnemonic = "(bad)";
  std::array<FieldTag, kMaxInsnLength> fields{};

  FieldTag field_at(std::uint64_t off) const { return fields[off - start]; }
  std::uint64_t end() const { return start + length; }
};

namespace detail {

enum class Imm : std::uint8_t { None, B, W, Z, V, WB, Moffs, Grp3 };

struct OpInfo {
  bool valid = true;
  bool modrm = false;
  Imm imm = Imm::None;
};

inline OpInfo one_byte_info(std::uint8_t b) {
  if (b < 0x40) {
    switch (b & 7) {
      case 4: return {true, false, Imm::B};
      case 5: return {true, false, Imm::Z};
      case 6:
      case 7: return {false};
      default: return {true, true};
    }
  }
  if (b >= 0x50 && b <= 0x5F) return {};
  if (b >= 0x70 && b <= 0x7F) return {true, false, Imm::B};
  if (b >= 0x84 && b <= 0x8F) return {true, true};
  if (b >= 0x90 && b <= 0x99) return {};
  if (b >= 0x9B && b <= 0x9F) return {};
  if (b >= 0xA0 && b <= 0xA3) return {true, false, Imm::Moffs};
  if (b >= 0xA4 && b <= 0xA7) return {};
  if (b >= 0xAA && b <= 0xAF) return {};
  if (b >= 0xB0 && b <= 0xB7) return {true, false, Imm::B};
  if (b >= 0xB8 && b <= 0xBF) return {true, false, Imm::V};
  if (b >= 0xD0 && b <= 0xD3) return {true, true};
  if (b >= 0xD8 && b <= 0xDF) return {true, true};
  if (b >= 0xE0 && b <= 0xE7) return {true, false, Imm::B};
  if (b >= 0xEC && b <= 0xEF) return {};
  if (b >= 0xF8 && b <= 0xFD) return {};
  switch (b) {
    case 0x63: return {true, true};
    case 0x68: return {true, false, Imm::Z};
    case 0x69: return {true, true, Imm::Z};
    case 0x6A: return {true, false, Imm::B};
    case 0x6B: return {true, true, Imm::B};
    case 0x6C: case 0x6D: case 0x6E: case 0x6F: return {};
    case 0x80: case 0x83: return {true, true, Imm::B};
    case 0x81: return {true, true, Imm::Z};
    case 0xA8: return {true, false, Imm::B};
    case 0xA9: return {true, false, Imm::Z};
    case 0xC0: case 0xC1: return {true, true, Imm::B};
    case 0xC2: return {true, false, Imm::W};
    case 0xC3: return {};
    case 0xC6: return {true, true, Imm::B};
    case 0xC7: return {true, true, Imm::Z};
    case 0xC8: return {true, false, Imm::WB};
    case 0xC9: return {};
    case 0xCA: return {true, false, Imm::W};
    case 0xCB: case 0xCC: return {};
    case 0xCD: return {true, false, Imm::B};
    case 0xCF: return {};
    case 0xD7: return {};
    case 0xE8: case 0xE9: return {true, false, Imm::Z};
    case 0xEB: return {true, false, Imm::B};
    case 0xF1: case 0xF4: case 0xF5: return {};
    case 0xF6: case 0xF7: return {true, true, Imm::Grp3};
    case 0xFE: case 0xFF: return {true, true};
    default: return {false};
  }
}

inline OpInfo map1_info(std::uint8_t b) {
  switch (b) {
    case 0x04: case 0x0A: case 0x0C: case 0x0F: case 0x24: case 0x25: case 0x26: case 0x27:
    case 0x36: case 0x39: case 0x3B: case 0x3C: case 0x3D: case 0x3E: case 0x3F:
    case 0x7A: case 0x7B: case 0xA6: case 0xA7:
      return {false};
    case 0x05: case 0x06: case 0x07: case 0x08: case 0x09: case 0x0B: case 0x0E:
    case 0x30: case 0x31: case 0x32: case 0x33: case 0x34: case 0x35: case 0x37:
    case 0x77: case 0xA0: case 0xA1: case 0xA2: case 0xA8: case 0xA9: case 0xAA:
      return {};
    case 0x70: case 0x71: case 0x72: case 0x73: case 0xA4: case 0xAC: case 0xBA:
    case 0xC2: case 0xC4: case 0xC5: case 0xC6:
      return {true, true, Imm::B};
    default: break;
  }
  if (b >= 0x80 && b <= 0x8F) return {true, false, Imm::Z};
  if (b >= 0xC8 && b <= 0xCF) return {};
  return {true, true};
}

struct Prefixes {
  bool opsize = false, adsize = false, rep = false, repne = false, lock = false;
  std::uint8_t rex = 0;
  bool vex = false;
  std::uint8_t vex_pp = 0;  // 0 none, 1 66, 2 F3, 3 F2
  bool vex_w = false;
  bool vex_l = false;

  // Mandatory-prefix selector for SSE/AVX naming: 0 none, 1 66, 2 F3, 3 F2.
  int simd_prefix() const {
    if (vex) return vex_pp;
    if (repne) return 3;
    if (rep) return 2;
    if (opsize) return 1;
    return 0;
  }
  bool rex_w() const { return vex ? vex_w : (rex & 8) != 0; }
};

inline const char* arith_name(int n) {
  static constexpr const char* k[] = {"add", "or", "adc", "sbb", "and", "sub", "xor", "cmp"};
  return k[n & 7];
}

inline std::string sse_suffixed(const char* base, int pfx) {
  static constexpr const char* k[] = {"ps", "pd", "ss", "sd"};
  return std::string(base) + k[pfx & 3];
}

// Coarse class and a best-effort mnemonic.
inline std::pair<InsnClass, std::string> name_insn(int map, std::uint8_t op, int reg, const Prefixes& p,
                                                   bool mod_reg) {
  using C = InsnClass;
  if (map == 0) {
    if (op < 0x40) return {C::Arith, arith_name(op >> 3)};
    if (op >= 0x50 && op <= 0x57) return {C::Other, "push"};
    if (op >= 0x58 && op <= 0x5F) return {C::Other, "pop"};
    if (op >= 0x70 && op <= 0x7F) return {C::Branch, "jcc"};
    if (op >= 0x80 && op <= 0x83) return {C::Arith, arith_name(reg)};
    if (op >= 0x88 && op <= 0x8C) return {C::Mov, "mov"};
    if (op >= 0xB0 && op <= 0xBF) return {C::Mov, p.rex_w() && op >= 0xB8 ? "movabs" : "mov"};
    if (op >= 0xA0 && op <= 0xA3) return {C::Mov, "movabs"};
    if (op >= 0xD8 && op <= 0xDF) return {C::Other, "x87"};
    if (op >= 0x91 && op <= 0x97) return {C::Mov, "xchg"};
    if (op >= 0xE0 && op <= 0xE3) return {C::Branch, "loop"};
    switch (op) {
      case 0x63: return {C::Mov, "movsxd"};
      case 0x69: case 0x6B: return {C::Arith, "imul"};
      case 0x84: case 0x85: case 0xA8: case 0xA9: return {C::Arith, "test"};
      case 0x86: case 0x87: return {C::Mov, "xchg"};
      case 0x8D: return {C::Mov, "lea"};
      case 0x8F: return {C::Other, "pop"};
      case 0x90:
        if (p.rep) return {C::Other, "pause"};
        if (p.rex & 1) return {C::Mov, "xchg"};
        return {C::Nop, "nop"};
      case 0x98: return {C::Other, p.rex_w() ? "cdqe" : "cwde"};
      case 0x99: return {C::Other, p.rex_w() ? "cqo" : "cdq"};
      case 0xC0: case 0xC1: case 0xD0: case 0xD1: case 0xD2: case 0xD3: {
        static constexpr const char* k[] = {"rol", "ror", "rcl", "rcr", "shl", "shr", "sal", "sar"};
        return {C::Arith, k[reg & 7]};
      }
      case 0xC2: case 0xC3: return {C::Branch, "ret"};
      case 0xC6: case 0xC7: return {C::Mov, "mov"};
      case 0xC9: return {C::Other, "leave"};
      case 0xCC: return {C::Other, "int3"};
      case 0xE8: return {C::Branch, "call"};
      case 0xE9: case 0xEB: return {C::Branch, "jmp"};
      case 0xF4: return {C::Other, "hlt"};
      case 0xF6: case 0xF7: {
        static constexpr const char* k[] = {"test", "test", "not", "neg", "mul", "imul", "div", "idiv"};
        return {C::Arith, k[reg & 7]};
      }
      case 0xFE: return {C::Arith, reg == 0 ? "inc" : "dec"};
      case 0xFF:
        switch (reg) {
          case 0: return {C::Arith, "inc"};
          case 1: return {C::Arith, "dec"};
          case 2: case 3: return {C::Branch, "call"};
          case 4: case 5: return {C::Branch, "jmp"};
          default: return {C::Other, "push"};
        }
      default: return {C::Other, "op"};
    }
  }
  const std::string v = p.vex ? "v" : "";
  const int pfx = p.simd_prefix();
  if (map == 1) {
    if (op >= 0x40 && op <= 0x4F) return {C::Mov, "cmovcc"};
    if (op >= 0x80 && op <= 0x8F) return {C::Branch, "jcc"};
    if (op >= 0x90 && op <= 0x9F) return {C::Other, "setcc"};
    if (op >= 0xC8 && op <= 0xCF) return {C::Other, "bswap"};
    switch (op) {
      case 0x05: return {C::Branch, "syscall"};
      case 0x0B: return {C::Other, "ud2"};
      case 0x1E:
        if (p.rep && mod_reg) return {C::Other, "endbr"};
        return {C::Nop, "nop"};
      case 0x18: case 0x19: case 0x1A: case 0x1B: case 0x1C: case 0x1D: case 0x1F: return {C::Nop, "nop"};
      case 0x10: case 0x11:
        if (pfx == 2 || pfx == 3) return {C::Vector, v + "mov" + (pfx == 2 ? "ss" : "sd")};
        return {C::Vector, v + (pfx == 1 ? "movupd" : "movups")};
      case 0x12: case 0x13: return {C::Vector, v + (pfx == 1 ? "movlpd" : "movlps")};
      case 0x14: return {C::Vector, v + (pfx == 1 ? "unpcklpd" : "unpcklps")};
      case 0x15: return {C::Vector, v + (pfx == 1 ? "unpckhpd" : "unpckhps")};
      case 0x16: case 0x17: return {C::Vector, v + (pfx == 1 ? "movhpd" : "movhps")};
      case 0x28: case 0x29: return {C::Vector, v + (pfx == 1 ? "movapd" : "movaps")};
      case 0x2A: return {C::Vector, v + "cvtsi2" + (pfx == 3 ? "sd" : "ss")};
      case 0x2C: return {C::Vector, v + "cvtt" + (pfx == 3 ? "sd" : "ss") + "2si"};
      case 0x2D: return {C::Vector, v + "cvt" + (pfx == 3 ? "sd" : "ss") + "2si"};
      case 0x2E: return {C::Vector, v + "ucomis" + (pfx == 1 ? "d" : "s")};
      case 0x2F: return {C::Vector, v + "comis" + (pfx == 1 ? "d" : "s")};
      case 0x51: return {C::Vector, v + sse_suffixed("sqrt", pfx)};
      case 0x54: return {C::Vector, v + sse_suffixed("and", pfx)};
      case 0x55: return {C::Vector, v + sse_suffixed("andn", pfx)};
      case 0x56: return {C::Vector, v + sse_suffixed("or", pfx)};
      case 0x57: return {C::Vector, v + sse_suffixed("xor", pfx)};
      case 0x58: return {C::Vector, v + sse_suffixed("add", pfx)};
      case 0x59: return {C::Vector, v + sse_suffixed("mul", pfx)};
      case 0x5A: return {C::Vector, v + "cvt"};
      case 0x5B: return {C::Vector, v + "cvtdq2ps"};
      case 0x5C: return {C::Vector, v + sse_suffixed("sub", pfx)};
      case 0x5D: return {C::Vector, v + sse_suffixed("min", pfx)};
      case 0x5E: return {C::Vector, v + sse_suffixed("div", pfx)};
      case 0x5F: return {C::Vector, v + sse_suffixed("max", pfx)};
      case 0x6E: return {C::Vector, v + (p.rex_w() ? "movq" : "movd")};
      case 0x7E: return {C::Vector, v + (pfx == 2 ? "movq" : p.rex_w() ? "movq" : "movd")};
      case 0x6F: case 0x7F: return {C::Vector, v + (pfx == 2 ? "movdqu" : pfx == 1 ? "movdqa" : "movq")};
      case 0x77: return {p.vex ? C::Vector : C::Other, p.vex ? (p.vex_l ? "vzeroall" : "vzeroupper") : "emms"};
      case 0xAF: return {C::Arith, "imul"};
      case 0xA3: case 0xAB: case 0xB3: case 0xBA: case 0xBB: return {C::Arith, "bt"};
      case 0xA4: case 0xA5: return {C::Arith, "shld"};
      case 0xAC: case 0xAD: return {C::Arith, "shrd"};
      case 0xB0: case 0xB1: return {C::Other, "cmpxchg"};
      case 0xB6: case 0xB7: return {C::Mov, "movzx"};
      case 0xBE: case 0xBF: return {C::Mov, "movsx"};
      case 0xB8: return {C::Arith, "popcnt"};
      case 0xBC: return {C::Arith, pfx == 2 ? "tzcnt" : "bsf"};
      case 0xBD: return {C::Arith, pfx == 2 ? "lzcnt" : "bsr"};
      case 0xC0: case 0xC1: return {C::Arith, "xadd"};
      case 0xC2: return {C::Vector, v + sse_suffixed("cmp", pfx)};
      case 0xC6: return {C::Vector, v + (pfx == 1 ? "shufpd" : "shufps")};
      case 0xD4: return {C::Vector, v + "paddq"};
      case 0xEF: return {C::Vector, v + "pxor"};
      case 0xFE: return {C::Vector, v + "paddd"};
      case 0xFA: return {C::Vector, v + "psubd"};
      case 0xA2: return {C::Other, "cpuid"};
      case 0xAE: return {p.vex ? C::Vector : C::Other, p.vex ? "vstmxcsr" : "fence"};
      default: break;
    }
    if ((op >= 0x10 && op <= 0x17) || (op >= 0x28 && op <= 0x2F) || (op >= 0x50 && op <= 0x7F) ||
        (op >= 0xC2 && op <= 0xC6) || op >= 0xD0)
      return {C::Vector, v + "simd"};
    return {C::Other, "op"};
  }
  if (map == 2) {
    if (!p.vex && (op == 0xF0 || op == 0xF1)) return {C::Other, pfx == 3 ? "crc32" : "movbe"};
    switch (op) {
      case 0x18: return {C::Vector, v + "broadcastss"};
      case 0x19: return {C::Vector, v + "broadcastsd"};
      case 0x58: return {C::Vector, v + "pbroadcastd"};
      default: break;
    }
    if (op >= 0x96 && op <= 0xBF) return {C::Vector, v + "fma"};
    return {C::Vector, v + "simd"};
  }
  switch (op) {
    case 0x18: return {C::Vector, v + "insertf128"};
    case 0x19: return {C::Vector, v + "extractf128"};
    case 0x0A: case 0x0B: return {C::Vector, v + "round"};
    case 0x21: return {C::Vector, v + "insertps"};
    default: return {C::Vector, v + "simd"};
  }
}

}  // namespace detail

/// Decodes one instruction at `pos`; nullopt when the bytes are not an
/// instruction of the supported subset (or run past the end of the buffer).
inline std::optional<InsnSpan> decode_one(std::span<const std::uint8_t> bytes, std::size_t pos) {
  using detail::Imm;
  InsnSpan s;
  s.start = pos;
  std::size_t i = pos;
  auto tag = [&](FieldTag f) -> bool {
    if (i >= bytes.size() || i - pos >= kMaxInsnLength) return false;
    s.fields[i - pos] = f;
    ++i;
    return true;
  };
  auto peek = [&]() -> int { return i < bytes.size() ? bytes[i] : -1; };

  detail::Prefixes p;
  for (;;) {
    const int b = peek();
    if (b == 0x66) p.opsize = true;
    else if (b == 0x67) p.adsize = true;
    else if (b == 0xF3) p.rep = true;
    else if (b == 0xF2) p.repne = true;
    else if (b == 0xF0) p.lock = true;
    else if (b == 0x2E || b == 0x36 || b == 0x3E || b == 0x26 || b == 0x64 || b == 0x65) {
    } else break;
    if (!tag(FieldTag::Prefix)) return std::nullopt;
  }
  if (const int b = peek(); b >= 0x40 && b <= 0x4F) {
    p.rex = static_cast<std::uint8_t>(b);
    if (!tag(FieldTag::Prefix)) return std::nullopt;
  }

  int map = 0;
  int op = peek();
  if (op < 0) return std::nullopt;
  if (op == 0xC4 || op == 0xC5) {
    if (p.rex || p.opsize || p.rep || p.repne || p.lock) return std::nullopt;
    const bool three = op == 0xC4;
    if (!tag(FieldTag::Prefix)) return std::nullopt;
    int last = peek();
    if (last < 0) return std::nullopt;
    map = 1;
    if (three) {
      map = last & 0x1F;
      if (map < 1 || map > 3) return std::nullopt;
      if (!tag(FieldTag::Prefix)) return std::nullopt;
      last = peek();
      if (last < 0) return std::nullopt;
      p.vex_w = (last & 0x80) != 0;
    }
    if (!tag(FieldTag::Prefix)) return std::nullopt;
    p.vex = true;
    p.vex_pp = static_cast<std::uint8_t>(last & 3);
    p.vex_l = (last & 4) != 0;
    op = peek();
    if (op < 0) return std::nullopt;
  } else if (op == 0x0F) {
    if (!tag(FieldTag::Opcode)) return std::nullopt;
    map = 1;
    op = peek();
    if (op == 0x38 || op == 0x3A) {
      map = op == 0x38 ? 2 : 3;
      if (!tag(FieldTag::Opcode)) return std::nullopt;
      op = peek();
    }
    if (op < 0) return std::nullopt;
  } else if (op == 0x62) {
    return std::nullopt;  // EVEX
  } else if (op == 0x8F && i + 1 < bytes.size() && ((bytes[i + 1] >> 3) & 7) != 0) {
    return std::nullopt;  // XOP
  }
  if (!tag(FieldTag::Opcode)) return std::nullopt;
  const auto opcode = static_cast<std::uint8_t>(op);

  detail::OpInfo info;
  if (map == 0) info = detail::one_byte_info(opcode);
  else if (map == 1) info = p.vex && opcode == 0x77 ? detail::OpInfo{} : detail::map1_info(opcode);
  else if (map == 2) info = {true, true, Imm::None};
  else info = {true, true, Imm::B};
  if (p.vex && map == 1 && (opcode >= 0x80 || (opcode >= 0x40 && opcode <= 0x4F)) &&
      !(opcode >= 0xC2 && opcode <= 0xC6) && opcode != 0xAE && opcode < 0xD0)
    return std::nullopt;  // no VEX forms of jcc/cmov/setcc/etc.
  if (!info.valid) return std::nullopt;

  int reg = 0;
  bool mod_reg = false;
  if (info.modrm) {
    const int m = peek();
    if (m < 0 || !tag(FieldTag::ModRM)) return std::nullopt;
    const int mod = m >> 6, rm = m & 7;
    reg = (m >> 3) & 7;
    mod_reg = mod == 3;
    std::size_t disp = 0;
    if (mod != 3) {
      if (rm == 4) {
        const int sib = peek();
        if (sib < 0 || !tag(FieldTag::SIB)) return std::nullopt;
        if (mod == 0 && (sib & 7) == 5) disp = 4;
      }
      if (mod == 0 && rm == 5) disp = 4;
      if (mod == 1) disp = 1;
      if (mod == 2) disp = 4;
    }
    for (std::size_t k = 0; k < disp; ++k)
      if (!tag(FieldTag::Displacement)) return std::nullopt;
  }

  std::size_t imm = 0;
  const std::size_t z = p.opsize ? 2 : 4;
  switch (info.imm) {
    case Imm::None: break;
    case Imm::B: imm = 1; break;
    case Imm::W: imm = 2; break;
    case Imm::Z: imm = (map == 0 && (opcode == 0xE8 || opcode == 0xE9)) || map == 1 ? 4 : z; break;
    case Imm::V: imm = p.rex_w() ? 8 : z; break;
    case Imm::WB: imm = 3; break;
    case Imm::Moffs: imm = p.adsize ? 4 : 8; break;
    case Imm::Grp3: imm = reg < 2 ? (opcode == 0xF6 ? 1 : z) : 0; break;
  }
  for (std::size_t k = 0; k < imm; ++k)
    if (!tag(FieldTag::Immediate)) return std::nullopt;

  s.length = static_cast<std::uint8_t>(i - pos);
  s.decoded = true;
  auto [cls, name] = detail::name_insn(map, opcode, reg, p, mod_reg);
  s.cls = cls;
  s.mnemonic = std::move(name);
  return s;
}

inline InsnSpan undecoded_span(std::uint64_t pos) {
  InsnSpan s;
  s.start = pos;
  s.length = 1;
  s.decoded = false;
  s.fields[0] = FieldTag::Opcode;
  return s;
}

/// Spans tiling bytes[start, end); undecodable bytes become 1-byte spans.
inline std::vector<InsnSpan> linear_sweep(std::span<const std::uint8_t> bytes, std::size_t start = 0) {
  std::vector<InsnSpan> out;
  std::size_t pos = start;
  while (pos < bytes.size()) {
    auto s = decode_one(bytes, pos);
    out.push_back(s ? std::move(*s) : undecoded_span(pos));
    pos += out.back().length;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text layout: decoded spans plus function extents for padding detection.

class TextLayout {
 public:
  /// `functions` are text-relative [begin, end) extents; empty means unknown.
  explicit TextLayout(std::span<const std::uint8_t> text, std::vector<std::pair<std::uint64_t, std::uint64_t>> functions = {})
      : text_(text.begin(), text.end()), spans_(linear_sweep(text)), functions_(std::move(functions)) {
    std::sort(functions_.begin(), functions_.end());
  }

  static TextLayout of(const ElfImage& img) {
    std::vector<std::pair<std::uint64_t, std::uint64_t>> fns;
    const auto base = img.text().virtual_addr;
    for (const auto& f : img.functions())
      if (f.size > 0) fns.emplace_back(f.virtual_addr - base, f.virtual_addr - base + f.size);
    const auto t = img.text_bytes();
    return TextLayout(std::span<const std::uint8_t>(t.data(), t.size()), std::move(fns));
  }

  const std::vector<std::uint8_t>& text() const { return text_; }
  const std::vector<InsnSpan>& spans() const { return spans_; }

  const InsnSpan& span_at(std::uint64_t off) const {
    if (off >= text_.size()) throw Error(Errc::OutOfRange, "offset past end of text");
    auto it = std::upper_bound(spans_.begin(), spans_.end(), off,
                               [](std::uint64_t o, const InsnSpan& s) { return o < s.start; });
    return *std::prev(it);
  }

  bool inside_function(std::uint64_t off) const {
    auto it = std::upper_bound(functions_.begin(), functions_.end(), std::make_pair(off, UINT64_MAX));
    if (it == functions_.begin()) return false;
    --it;
    return off >= it->first && off < it->second;
  }

  /// Fill between functions: a nop or int3 span lying outside every function.
  bool is_padding(std::uint64_t off) const {
    if (functions_.empty()) return false;
    const auto& s = span_at(off);
    if (inside_function(s.start)) return false;
    return s.decoded && (s.cls == InsnClass::Nop || s.mnemonic == "int3");
  }

 private:
  std::vector<std::uint8_t> text_;
  std::vector<InsnSpan> spans_;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> functions_;
};

// ---------------------------------------------------------------------------
// Flip classification

enum class PostDecode : std::uint8_t { SameLength, Resized, InvalidOpcode };

inline const char* to_string(PostDecode p) {
  switch (p) {
    case PostDecode::SameLength: return "same";
    case PostDecode::Resized: return "resized";
    case PostDecode::InvalidOpcode: return "invalid";
  }
  return "invalid";
}

struct FlipType {
  BitLocation loc;
  std::optional<InsnSpan> pre_insn;  // nullopt: Undecoded
  std::optional<FieldTag> field;     // nullopt with pre_insn set: Padding
  bool padding = false;
  PostDecode post_decode = PostDecode::InvalidOpcode;
  std::string post_mnemonic;

  std::string field_token() const {
    if (!pre_insn) return "undecoded";
    if (padding) return "padding";
    return to_string(*field);
  }
  /// Two-bucket view: prefix and opcode bytes vs operand bytes.
  std::string bucket() const {
    if (!pre_insn) return "Undecoded";
    if (padding) return "Padding";
    return *field == FieldTag::Prefix || *field == FieldTag::Opcode ? "Opcode" : "Data";
  }
  std::string class_token() const { return pre_insn ? to_string(pre_insn->cls) : "undecoded"; }
};

inline FlipType classify_flip(const TextLayout& layout, const BitLocation& loc) {
  const auto& text = layout.text();
  if (loc.byte_offset >= text.size() || loc.bit_index > 7) throw Error(Errc::OutOfRange, "bit outside text");
  FlipType t;
  t.loc = loc;
  const auto& span = layout.span_at(loc.byte_offset);
  if (span.decoded) {
    t.pre_insn = span;
    t.padding = layout.is_padding(loc.byte_offset);
    if (!t.padding) t.field = span.field_at(loc.byte_offset);
  }
  const std::size_t end = std::min<std::size_t>(text.size(), span.start + kMaxInsnLength);
  std::vector<std::uint8_t> window(text.begin() + static_cast<std::ptrdiff_t>(span.start),
                                   text.begin() + static_cast<std::ptrdiff_t>(end));
  window[loc.byte_offset - span.start] ^= static_cast<std::uint8_t>(1u << loc.bit_index);
  const auto after = decode_one(window, 0);
  if (!after) t.post_decode = PostDecode::InvalidOpcode;
  else {
    t.post_decode = after->length == span.length ? PostDecode::SameLength : PostDecode::Resized;
    t.post_mnemonic = after->mnemonic;
  }
  return t;
}

inline FlipType classify_flip(std::span<const std::uint8_t> text, const BitLocation& loc) {
  return classify_flip(TextLayout(text), loc);
}

// ---------------------------------------------------------------------------
// Aggregation

struct FlipTypeRow {
  std::string cls;
  std::string bucket;  // Opcode/Data/Padding/Undecoded, or a fine field or mnemonic
  std::uint64_t count = 0;
  double percentage = 0;

  friend bool operator==(const FlipTypeRow&, const FlipTypeRow&) = default;
};

struct FlipTypeReport {
  std::uint64_t vulnerable = 0;
  std::vector<FlipTypeRow> ranked;       // (class, bucket)
  std::vector<FlipTypeRow> fine;         // (class, field)
  std::vector<FlipTypeRow> mnemonics;    // (mnemonic, bucket)
  std::map<std::string, std::uint64_t> post_decode;
};

namespace detail {

inline std::vector<FlipTypeRow> rank(const std::map<std::pair<std::string, std::string>, std::uint64_t>& counts,
                                     std::uint64_t total) {
  std::vector<FlipTypeRow> rows;
  for (const auto& [k, n] : counts)
    rows.push_back({k.first, k.second, n, total ? 100.0 * static_cast<double>(n) / static_cast<double>(total) : 0.0});
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.count > b.count; });
  return rows;
}

}  // namespace detail

/// Flip types among the vulnerable bits of a complete sweep.
inline FlipTypeReport flip_type_report(const std::vector<SweepRecord>& records, std::uint64_t expected_bits,
                                       const TextLayout& layout) {
  std::set<std::uint64_t> keys;
  for (const auto& r : records) keys.insert(r.loc.ordinal());
  if (keys.size() != records.size() || records.size() != expected_bits)
    throw Error(Errc::IncompleteSweep, "flip-type report needs a complete sweep");
  std::map<std::pair<std::string, std::string>, std::uint64_t> coarse, fine, mnem;
  FlipTypeReport rep;
  for (const auto& r : records) {
    if (!r.verdict.vulnerable()) continue;
    const auto t = classify_flip(layout, r.loc);
    ++rep.vulnerable;
    ++coarse[{t.class_token(), t.bucket()}];
    ++fine[{t.class_token(), t.field_token()}];
    ++mnem[{t.pre_insn ? t.pre_insn->mnemonic : "(bad)", t.bucket()}];
    ++rep.post_decode[to_string(t.post_decode)];
  }
  rep.ranked = detail::rank(coarse, rep.vulnerable);
  rep.fine = detail::rank(fine, rep.vulnerable);
  rep.mnemonics = detail::rank(mnem, rep.vulnerable);
  return rep;
}

inline std::string flip_report_csv(const std::vector<FlipTypeRow>& rows, const char* first = "class",
                                   const char* second = "field_bucket") {
  std::string out = std::string(first) + "," + second + ",count,percentage\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%llu,%.2f\n", static_cast<unsigned long long>(r.count), r.percentage);
    out += r.cls + "," + r.bucket + buf;
  }
  return out;
}

/// Static instruction mix of a text region: byte share per class plus the
/// number of bytes left undecoded.
struct InsnMix {
  std::map<InsnClass, std::uint64_t> bytes;
  std::map<InsnClass, std::uint64_t> count;
  std::uint64_t undecoded_bytes = 0;
  std::uint64_t total_bytes = 0;

  double byte_share(InsnClass c) const {
    auto it = bytes.find(c);
    return it == bytes.end() || total_bytes == 0 ? 0.0
                                                 : static_cast<double>(it->second) / static_cast<double>(total_bytes);
  }
};

inline InsnMix instruction_mix(const TextLayout& layout) {
  InsnMix m;
  for (const auto& s : layout.spans()) {
    m.total_bytes += s.length;
    if (!s.decoded) {
      m.undecoded_bytes += s.length;
      continue;
    }
    m.bytes[s.cls] += s.length;
    ++m.count[s.cls];
  }
  return m;
}

}  // namespace flipscan
