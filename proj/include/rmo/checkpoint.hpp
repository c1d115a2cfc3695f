#pragma once

// Text checkpoint of the learned optimizer:
//
//   format_version 1
//   hidden_size 20
//   num_layers 2
//   parameter_count 10442
//   seed 1
//   adam_t 300
//   config <key> = <value>          (zero or more)
//   tensor <name> <rows> <cols>
//   <rows * cols values, %.17g, space separated, one line per row>
//   ...
//   end
//
// Tensors are the network weights followed by the Adam moments, prefixed
// "adam_m." and "adam_v.".

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rmo/error.hpp"
#include "rmo/meta_trainer.hpp"
#include "rmo/recurrent_net.hpp"

namespace rmo {

struct Checkpoint {
  OptimizerParams params;
  AdamState adam;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr int kCheckpointVersion = 1;

/// Writes `content` to `path` through a sibling temporary file and rename.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot write " + tmp);
    out << content;
    out.flush();
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(CheckpointError::Kind::Io, "cannot rename " + tmp + ": " + ec.message());
}

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out;
  out += "format_version " + std::to_string(kCheckpointVersion) + "\n";
  out += "hidden_size " + std::to_string(ck.params.hidden()) + "\n";
  out += "num_layers " + std::to_string(ck.params.num_layers()) + "\n";
  out += "parameter_count " + std::to_string(ck.params.scalar_count()) + "\n";
  out += "seed " + std::to_string(ck.seed) + "\n";
  out += "adam_t " + std::to_string(ck.adam.t) + "\n";
  for (const auto& [k, v] : ck.config) out += "config " + k + " = " + v + "\n";
  auto emit = [&out](const std::string& name, const Matrix& m) {
    out += "tensor " + name + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
    char buf[40];
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t j = 0; j < m.cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
        if (j) out += ' ';
        out += buf;
      }
      out += '\n';
    }
  };
  ck.params.for_each_tensor(emit);
  ck.adam.m.for_each_tensor([&](const std::string& n, const Matrix& m) { emit("adam_m." + n, m); });
  ck.adam.v.for_each_tensor([&](const std::string& n, const Matrix& m) { emit("adam_v." + n, m); });
  out += "end\n";
  return out;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(ck));
}

namespace detail {

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::string& text) : in_(text) {}

  std::string next_line() {
    if (pending_) {
      pending_ = false;
      ++line_no_;
      return pushed_;
    }
    std::string line;
    if (!std::getline(in_, line)) {
      throw CheckpointError(CheckpointError::Kind::Malformed,
                            "unexpected end of checkpoint after line " + std::to_string(line_no_));
    }
    ++line_no_;
    return line;
  }
  /// Makes `line` the next line returned.
  void push_back(std::string line) {
    pushed_ = std::move(line);
    pending_ = true;
    --line_no_;
  }
  std::size_t line_no() const noexcept { return line_no_; }

 private:
  std::istringstream in_;
  std::size_t line_no_ = 0;
  std::string pushed_;
  bool pending_ = false;
};

inline std::uint64_t parse_uint(const std::string& s, const std::string& field) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw CheckpointError(CheckpointError::Kind::Malformed,
                          "field '" + field + "' is not an unsigned integer: '" + s + "'");
  }
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), nullptr, 10);
  if (errno == ERANGE) {
    throw CheckpointError(CheckpointError::Kind::Malformed, "field '" + field + "' out of range");
  }
  return v;
}

inline double parse_double(const std::string& s, std::size_t line) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  // Underflow to a subnormal is fine, overflow is not.
  const bool overflow = errno == ERANGE && std::abs(v) == HUGE_VAL;
  if (s.empty() || end != s.c_str() + s.size() || overflow) {
    throw CheckpointError(CheckpointError::Kind::Malformed,
                          "bad number '" + s + "' on line " + std::to_string(line));
  }
  return v;
}

/// Reads `key value` and checks the key.
inline std::string expect_field(CheckpointReader& r, const std::string& key) {
  const std::string line = r.next_line();
  const auto sp = line.find(' ');
  const std::string got = line.substr(0, sp);
  if (got != key) {
    throw CheckpointError(CheckpointError::Kind::Schema,
                          "line " + std::to_string(r.line_no()) + ": expected field '" + key +
                              "', found '" + got + "'");
  }
  if (sp == std::string::npos) {
    throw CheckpointError(CheckpointError::Kind::Malformed, "field '" + key + "' has no value");
  }
  return line.substr(sp + 1);
}

inline std::vector<std::string> split_spaces(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline void read_tensor(CheckpointReader& r, const std::string& name, Matrix& m) {
  const std::string header = r.next_line();
  const auto tok = split_spaces(header);
  if (tok.empty() || tok[0] != "tensor") {
    throw CheckpointError(CheckpointError::Kind::Schema,
                          "line " + std::to_string(r.line_no()) + ": expected 'tensor " + name +
                              "', found '" + header + "'");
  }
  if (tok.size() != 4) {
    throw CheckpointError(CheckpointError::Kind::Malformed,
                          "line " + std::to_string(r.line_no()) + ": tensor header needs name, rows, cols");
  }
  if (tok[1] != name) {
    throw CheckpointError(CheckpointError::Kind::Schema,
                          "line " + std::to_string(r.line_no()) + ": expected tensor '" + name +
                              "', found '" + tok[1] + "'");
  }
  const std::uint64_t rows = parse_uint(tok[2], name + ".rows");
  const std::uint64_t cols = parse_uint(tok[3], name + ".cols");
  if (rows != m.rows() || cols != m.cols()) {
    throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                          "tensor '" + name + "' has shape " + Matrix::shape_string(rows, cols) +
                              ", expected " + m.shape());
  }
  for (std::size_t i = 0; i < rows; ++i) {
    const auto vals = split_spaces(r.next_line());
    if (vals.size() != cols) {
      throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                            "tensor '" + name + "' row " + std::to_string(i) + " has " +
                                std::to_string(vals.size()) + " values, expected " +
                                std::to_string(cols));
    }
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = parse_double(vals[j], r.line_no());
  }
}

}  // namespace detail

inline Checkpoint parse_checkpoint(const std::string& text) {
  detail::CheckpointReader r(text);
  const std::string version = detail::expect_field(r, "format_version");
  if (version != std::to_string(kCheckpointVersion)) {
    throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                          "checkpoint format_version " + version + ", this build reads " +
                              std::to_string(kCheckpointVersion));
  }
  const auto hidden = detail::parse_uint(detail::expect_field(r, "hidden_size"), "hidden_size");
  const auto layers = detail::parse_uint(detail::expect_field(r, "num_layers"), "num_layers");
  if (hidden < 1 || layers < 1 || hidden > 4096 || layers > 64) {
    throw CheckpointError(CheckpointError::Kind::Malformed, "implausible hidden_size/num_layers");
  }
  const auto count =
      detail::parse_uint(detail::expect_field(r, "parameter_count"), "parameter_count");
  if (count != count_parameters(hidden, layers)) {
    throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                          "parameter_count " + std::to_string(count) + " does not match " +
                              std::to_string(count_parameters(hidden, layers)) +
                              " for the declared architecture");
  }
  Checkpoint ck;
  ck.seed = detail::parse_uint(detail::expect_field(r, "seed"), "seed");
  ck.params = OptimizerParams::zeros(hidden, layers);
  ck.adam = AdamState::zeros(hidden, layers);
  ck.adam.t = detail::parse_uint(detail::expect_field(r, "adam_t"), "adam_t");

  std::string line = r.next_line();
  while (line.rfind("config ", 0) == 0) {
    const std::string body = line.substr(7);
    const auto eq = body.find(" = ");
    if (eq == std::string::npos) {
      throw CheckpointError(CheckpointError::Kind::Malformed,
                            "line " + std::to_string(r.line_no()) + ": config entry needs 'key = value'");
    }
    ck.config.emplace_back(body.substr(0, eq), body.substr(eq + 3));
    line = r.next_line();
  }
  r.push_back(line);
  ck.params.for_each_tensor([&](const std::string& n, Matrix& m) { detail::read_tensor(r, n, m); });
  ck.adam.m.for_each_tensor(
      [&](const std::string& n, Matrix& m) { detail::read_tensor(r, "adam_m." + n, m); });
  ck.adam.v.for_each_tensor(
      [&](const std::string& n, Matrix& m) { detail::read_tensor(r, "adam_v." + n, m); });
  const std::string tail = r.next_line();
  if (tail != "end") {
    throw CheckpointError(CheckpointError::Kind::Schema, "expected 'end', found '" + tail + "'");
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

/// Looks up a config echo entry.
inline const std::string* checkpoint_config(const Checkpoint& ck, const std::string& key) {
  for (const auto& [k, v] : ck.config)
    if (k == key) return &v;
  return nullptr;
}

}  // namespace rmo
