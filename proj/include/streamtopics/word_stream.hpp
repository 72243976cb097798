#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "streamtopics/errors.hpp"

namespace stm {

/// One discrete visual word with its pixel location and frame index.
struct WordObservation {
  std::uint32_t word = 0;
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint32_t t = 0;

  bool operator==(const WordObservation&) const = default;
};

struct VocabChannel {
  std::string name;
  std::uint32_t size = 0;

  bool operator==(const VocabChannel&) const = default;
};

// Ordered named channels packed into one global id space. Channel j owns
// the contiguous id range [offset(j), offset(j) + size_j).
class VocabularyLayout {
 public:
  VocabularyLayout() = default;

  explicit VocabularyLayout(std::vector<VocabChannel> channels)
      : channels_(std::move(channels)) {
    offsets_.reserve(channels_.size());
    for (const auto& ch : channels_) {
      if (ch.name.empty()) throw ConfigError("vocabulary channel has empty name");
      for (char c : ch.name) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_')
          throw ConfigError("vocabulary channel name must be alphanumeric: '" + ch.name + "'");
      }
      if (ch.size == 0) throw ConfigError("vocabulary channel '" + ch.name + "' has size 0");
      offsets_.push_back(total_);
      if (total_ > std::numeric_limits<std::uint32_t>::max() - ch.size)
        throw ConfigError("vocabulary size overflows 32 bits");
      total_ += ch.size;
    }
    if (total_ == 0) throw ConfigError("vocabulary layout has no channels");
  }

  static VocabularyLayout single(std::string name, std::uint32_t size) {
    return VocabularyLayout({{std::move(name), size}});
  }

  std::uint32_t total_size() const { return total_; }
  std::size_t channel_count() const { return channels_.size(); }
  const VocabChannel& channel(std::size_t j) const { return channels_.at(j); }
  std::uint32_t offset(std::size_t j) const { return offsets_.at(j); }

  std::uint32_t global_id(std::size_t j, std::uint32_t local) const {
    if (j >= channels_.size() || local >= channels_[j].size)
      throw ConfigError("word id outside channel range");
    return offsets_[j] + local;
  }

  /// Inverse of global_id: channel index and local index for a word id.
  std::pair<std::size_t, std::uint32_t> locate(std::uint32_t word) const {
    if (word >= total_) throw ConfigError("word id outside vocabulary");
    std::size_t j = channels_.size() - 1;
    while (offsets_[j] > word) --j;
    return {j, word - offsets_[j]};
  }

  /// Channel list in header syntax: "name:size+name:size".
  std::string spec_string() const {
    std::string out;
    for (std::size_t j = 0; j < channels_.size(); ++j) {
      if (j) out += '+';
      out += channels_[j].name;
      out += ':';
      out += std::to_string(channels_[j].size);
    }
    return out;
  }

  bool operator==(const VocabularyLayout&) const = default;

 private:
  std::vector<VocabChannel> channels_;
  std::vector<std::uint32_t> offsets_;
  std::uint32_t total_ = 0;
};

/// A parsed word stream: the vocabulary plus observations in file order.
struct WordStream {
  VocabularyLayout layout;
  std::vector<WordObservation> observations;
};

namespace detail {

inline std::uint32_t parse_u32_field(std::string_view text, std::size_t line_no,
                                     const char* what) {
  if (text.empty())
    throw ParseError("line " + std::to_string(line_no) + ": empty " + what + " field");
  std::uint64_t value = 0;
  for (char c : text) {
    if (c < '0' || c > '9')
      throw ParseError("line " + std::to_string(line_no) + ": " + what +
                       " is not an unsigned integer: '" + std::string(text) + "'");
    value = value * 10 + static_cast<std::uint64_t>(c - '0');
    if (value > std::numeric_limits<std::uint32_t>::max())
      throw ParseError("line " + std::to_string(line_no) + ": " + what + " overflows 32 bits");
  }
  return static_cast<std::uint32_t>(value);
}

inline std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(text.substr(start));
      return parts;
    }
    parts.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace detail

// Word-stream file format.
//
//   ROSTWORDS v1 V=<int> channels=<name>:<size>[+<name>:<size>]*
//   t,x,y,word
//   ...
//
// '#'-prefixed lines are comments; blank lines are ignored. Observations
// must be sorted by t. Line numbers in errors are 1-based.
inline WordStream parse_stream(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;

  // Header is the first non-comment, non-blank line.
  std::string header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    header = line;
    break;
  }
  if (header.empty()) throw ParseError("missing word-stream header");

  auto tokens = detail::split(header, ' ');
  if (tokens.size() != 4 || tokens[0] != "ROSTWORDS" || tokens[1] != "v1" ||
      tokens[2].substr(0, 2) != "V=" || tokens[3].substr(0, 9) != "channels=")
    throw ParseError("line " + std::to_string(line_no) +
                     ": malformed header, expected 'ROSTWORDS v1 V=<int> channels=<spec>'");

  std::uint32_t declared_v = detail::parse_u32_field(tokens[2].substr(2), line_no, "V");
  std::vector<VocabChannel> channels;
  for (auto part : detail::split(tokens[3].substr(9), '+')) {
    auto nv = detail::split(part, ':');
    if (nv.size() != 2 || nv[0].empty())
      throw ParseError("line " + std::to_string(line_no) + ": malformed channel spec '" +
                       std::string(part) + "'");
    channels.push_back({std::string(nv[0]), detail::parse_u32_field(nv[1], line_no, "channel size")});
  }
  VocabularyLayout layout;
  try {
    layout = VocabularyLayout(std::move(channels));
  } catch (const ConfigError& e) {
    throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
  }
  if (layout.total_size() != declared_v)
    throw ParseError("line " + std::to_string(line_no) + ": channel sizes sum to " +
                     std::to_string(layout.total_size()) + ", header declares V=" +
                     std::to_string(declared_v));

  std::vector<WordObservation> observations;
  std::uint32_t last_t = 0;
  bool any = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto fields = detail::split(line, ',');
    if (fields.size() != 4)
      throw ParseError("line " + std::to_string(line_no) + ": expected 't,x,y,word', got '" +
                       line + "'");
    WordObservation obs;
    obs.t = detail::parse_u32_field(fields[0], line_no, "t");
    obs.x = detail::parse_u32_field(fields[1], line_no, "x");
    obs.y = detail::parse_u32_field(fields[2], line_no, "y");
    obs.word = detail::parse_u32_field(fields[3], line_no, "word");
    if (obs.word >= layout.total_size())
      throw ParseError("line " + std::to_string(line_no) + ": word out of range (word=" +
                       std::to_string(obs.word) + ", V=" + std::to_string(layout.total_size()) +
                       ")");
    if (any && obs.t < last_t)
      throw ParseError("line " + std::to_string(line_no) + ": frame index decreases (t=" +
                       std::to_string(obs.t) + " after t=" + std::to_string(last_t) + ")");
    last_t = obs.t;
    any = true;
    observations.push_back(obs);
  }
  return {std::move(layout), std::move(observations)};
}

inline WordStream parse_stream(const std::string& text) {
  std::istringstream in(text);
  return parse_stream(in);
}

inline WordStream parse_stream_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open word stream '" + path + "'");
  return parse_stream(in);
}

/// Serializes a stream; refuses inputs that violate the observation
/// invariants so parse(write(x)) == x holds for everything written.
inline void write_stream(std::ostream& out, const WordStream& stream) {
  const auto v = stream.layout.total_size();
  if (v == 0) throw ConfigError("cannot write stream with empty vocabulary");
  std::uint32_t last_t = 0;
  bool any = false;
  for (std::size_t i = 0; i < stream.observations.size(); ++i) {
    const auto& obs = stream.observations[i];
    if (obs.word >= v)
      throw ConfigError("observation " + std::to_string(i) + " has word " +
                        std::to_string(obs.word) + " >= V=" + std::to_string(v));
    if (any && obs.t < last_t)
      throw ConfigError("observation " + std::to_string(i) + " is out of order (t=" +
                        std::to_string(obs.t) + " after t=" + std::to_string(last_t) + ")");
    last_t = obs.t;
    any = true;
  }
  out << "ROSTWORDS v1 V=" << v << " channels=" << stream.layout.spec_string() << "\n";
  for (const auto& obs : stream.observations)
    out << obs.t << ',' << obs.x << ',' << obs.y << ',' << obs.word << "\n";
}

inline std::string write_stream_string(const WordStream& stream) {
  std::ostringstream out;
  write_stream(out, stream);
  return out.str();
}

inline void write_stream_file(const std::string& path, const WordStream& stream) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  write_stream(out, stream);
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

}  // namespace stm
