#pragma once

// Text tensor files exchanged with victim executables, and the prediction
// line protocol they answer with.
//
//   FSCN1 <rank> <dim0> ... <dim{rank-1}> f32 <classes>
//   <dim1*...*dim{rank-1} floats>      one line per sample (dim0 lines)

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "flipscan/error.hpp"

namespace flipscan {

inline constexpr std::string_view kTensorMagic = "FSCN1";

struct TensorFile {
  std::vector<std::size_t> dims;  // dims[0] = sample count
  std::size_t class_count = 0;
  std::vector<float> data;

  std::size_t samples() const { return dims.empty() ? 0 : dims[0]; }
  std::size_t sample_size() const {
    return dims.size() < 2 ? 0 : std::accumulate(dims.begin() + 1, dims.end(), std::size_t{1}, std::multiplies<>());
  }
};

/// Shortest round-trip decimal for a float.
inline std::string format_float(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_tensor_file(const TensorFile& t) {
  if (t.dims.size() < 2 || t.data.size() != t.samples() * t.sample_size())
    throw Error(Errc::BadShape, "tensor dims do not match element count");
  std::string out(kTensorMagic);
  out += ' ' + std::to_string(t.dims.size());
  for (auto d : t.dims) out += ' ' + std::to_string(d);
  out += " f32 " + std::to_string(t.class_count) + '\n';
  const std::size_t row = t.sample_size();
  for (std::size_t i = 0; i < t.samples(); ++i) {
    for (std::size_t j = 0; j < row; ++j) {
      if (j) out += ' ';
      out += format_float(t.data[i * row + j]);
    }
    out += '\n';
  }
  return out;
}

inline TensorFile parse_tensor_file(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string magic, kind;
  std::size_t rank = 0;
  if (!(in >> magic) || magic != kTensorMagic) throw Error(Errc::BadFormat, "missing FSCN1 magic");
  if (!(in >> rank) || rank < 2 || rank > 8) throw Error(Errc::BadFormat, "bad tensor rank");
  TensorFile t;
  t.dims.resize(rank);
  for (auto& d : t.dims)
    if (!(in >> d) || d == 0) throw Error(Errc::BadFormat, "bad tensor dimension");
  if (!(in >> kind) || kind != "f32" || !(in >> t.class_count)) throw Error(Errc::BadFormat, "bad element kind");
  const std::size_t n = t.samples() * t.sample_size();
  t.data.resize(n);
  std::string tok;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(in >> tok)) throw Error(Errc::BadFormat, "truncated tensor data");
    float v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) throw Error(Errc::BadFormat, "bad float " + tok);
    t.data[i] = v;
  }
  return t;
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::Io, "write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

inline std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < s.size()) {
    auto nl = s.find('\n', pos);
    if (nl == std::string_view::npos) nl = s.size();
    lines.push_back(s.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

}  // namespace detail

/// One decimal class index per line. nullopt when the count, syntax or range is off.
inline std::optional<std::vector<int>> parse_class_predictions(std::string_view out, std::size_t expected,
                                                               std::size_t class_count) {
  const auto lines = detail::split_lines(out);
  if (lines.size() != expected) return std::nullopt;
  std::vector<int> preds;
  preds.reserve(expected);
  for (auto line : lines) {
    int v = -1;
    auto res = std::from_chars(line.data(), line.data() + line.size(), v);
    if (res.ec != std::errc() || res.ptr != line.data() + line.size()) return std::nullopt;
    if (v < 0 || static_cast<std::size_t>(v) >= class_count) return std::nullopt;
    preds.push_back(v);
  }
  return preds;
}

/// One whitespace-separated float vector of `width` values per line.
inline std::optional<std::vector<std::vector<float>>> parse_vector_predictions(std::string_view out,
                                                                               std::size_t expected,
                                                                               std::size_t width) {
  const auto lines = detail::split_lines(out);
  if (lines.size() != expected) return std::nullopt;
  std::vector<std::vector<float>> rows;
  rows.reserve(expected);
  for (auto line : lines) {
    std::vector<float> row;
    std::size_t pos = 0;
    while (pos < line.size()) {
      while (pos < line.size() && line[pos] == ' ') ++pos;
      if (pos == line.size()) break;
      auto end = line.find(' ', pos);
      if (end == std::string_view::npos) end = line.size();
      float v = 0;
      auto res = std::from_chars(line.data() + pos, line.data() + end, v);
      if (res.ec != std::errc() || res.ptr != line.data() + end) return std::nullopt;
      row.push_back(v);
      pos = end;
    }
    if (row.size() != width) return std::nullopt;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace flipscan
