#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flipscan {

enum class Errc {
  // elf_image
  BadMagic,
  UnsupportedClass,
  UnsupportedEndianness,
  NoTextSection,
  TruncatedHeader,
  OutOfRange,
  // harness / io
  Io,
  BadFormat,
  // oracles
  LengthMismatch,
  EmptyHistory,
  // campaign
  BaselineFailed,
  IncompleteSweep,
  ResumeMismatch,
  // superbits
  EmptyInput,
  StructureMismatch,
  NoSuperbits,
  // corpus
  BadShape,
  ShapeMismatch,
  UnderTrained,
  UnsupportedLayer,
  ToolchainMissing,
  BaselineMismatch,
  BuildFailed,
};

inline std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::BadMagic: return "BadMagic";
    case Errc::UnsupportedClass: return "UnsupportedClass";
    case Errc::UnsupportedEndianness: return "UnsupportedEndianness";
    case Errc::NoTextSection: return "NoTextSection";
    case Errc::TruncatedHeader: return "TruncatedHeader";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::Io: return "Io";
    case Errc::BadFormat: return "BadFormat";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyHistory: return "EmptyHistory";
    case Errc::BaselineFailed: return "BaselineFailed";
    case Errc::IncompleteSweep: return "IncompleteSweep";
    case Errc::ResumeMismatch: return "ResumeMismatch";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::StructureMismatch: return "StructureMismatch";
    case Errc::NoSuperbits: return "NoSuperbits";
    case Errc::BadShape: return "BadShape";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::UnderTrained: return "UnderTrained";
    case Errc::UnsupportedLayer: return "UnsupportedLayer";
    case Errc::ToolchainMissing: return "ToolchainMissing";
    case Errc::BaselineMismatch: return "BaselineMismatch";
    case Errc::BuildFailed: return "BuildFailed";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so that
/// callers (and the CLI's exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace flipscan
