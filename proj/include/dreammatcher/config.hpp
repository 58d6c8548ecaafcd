#pragma once

// Session configuration files: flat `key = value` lines, `#` starts a
// comment. Unknown keys, repeated keys and unparsable values are errors that
// name the source and line.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dreammatcher/sampler.hpp"
#include "dreammatcher/synthetic_backend.hpp"

namespace dm {

struct RunConfig {
  SessionConfig session;
  SyntheticBackendSpec backend;
  SubjectPlacement ref_subject{2, 2};
  SubjectPlacement tgt_subject{6, 8};
  double beta_start = 0.00085;
  double beta_end = 0.012;
  std::size_t train_steps = 1000;
  std::uint64_t reference_seed = 1;            // synthetic reference latent
  std::optional<std::filesystem::path> reference_latent;  // or a DMT1 frame

  NoiseSchedule schedule() const {
    return NoiseSchedule::scaled_linear(session.total_steps, beta_start, beta_end, train_steps);
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

class ConfigParser {
 public:
  ConfigParser(std::string source, RunConfig& cfg) : source_(std::move(source)), cfg_(cfg) {}

  void line(std::size_t number, std::string_view raw) {
    line_ = number;
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    raw = trim(raw);
    if (raw.empty()) return;
    const auto eq = raw.find('=');
    if (eq == std::string_view::npos) error("expected `key = value`");
    const std::string key(trim(raw.substr(0, eq)));
    value_ = trim(raw.substr(eq + 1));
    if (key.empty()) error("missing key");
    if (!seen_.insert(key).second) error("duplicate key `" + key + "`");
    if (value_.empty()) error("missing value for `" + key + "`");
    assign(key);
  }

 private:
  [[noreturn]] void error(const std::string& message) const {
    fail(ErrorKind::config, source_ + ":" + std::to_string(line_) + ": " + message);
  }

  std::size_t count() const {
    std::size_t v = 0;
    if (!parse_number(value_, v)) error("expected a non-negative integer, got `" + std::string(value_) + "`");
    return v;
  }

  double real() const {
    double v = 0;
    if (!parse_number(value_, v) || !std::isfinite(v)) error("expected a number, got `" + std::string(value_) + "`");
    return v;
  }

  std::vector<int> layers() const {
    std::vector<int> out;
    for (auto part : split(value_, ',')) {
      int v = 0;
      if (!parse_number(part, v)) error("expected a comma-separated layer list, got `" + std::string(value_) + "`");
      out.push_back(v);
    }
    return out;
  }

  std::pair<std::size_t, std::size_t> pair(char sep, const char* what) const {
    const auto parts = split(value_, sep);
    std::size_t a = 0, b = 0;
    if (parts.size() != 2 || !parse_number(parts[0], a) || !parse_number(parts[1], b)) {
      error(std::string("expected ") + what + ", got `" + std::string(value_) + "`");
    }
    return {a, b};
  }

  void assign(const std::string& key) {
    SessionConfig& s = cfg_.session;
    SyntheticBackendSpec& b = cfg_.backend;
    if (key == "total_steps") {
      s.total_steps = count();
    } else if (key == "ama_steps") {
      const auto [lo, hi] = pair(':', "a step range `begin:end`");
      s.ama_steps = {lo, hi};
    } else if (key == "ama_layers") {
      s.ama_layers = layers();
    } else if (key == "descriptor_layers") {
      s.descriptor_layers = layers();
    } else if (key == "lambda_c") {
      s.lambda_c = real();
    } else if (key == "lambda_g") {
      s.lambda_g = real();
    } else if (key == "cfg_scale") {
      s.cfg_scale = real();
    } else if (key == "pca_dim") {
      s.pca_dim = count();
    } else if (key == "mask_threshold") {
      s.mask_threshold = real();
    } else if (key == "seed") {
      s.seed = count();
    } else if (key == "descriptor_size") {
      const auto [h, w] = pair('x', "`HxW`");
      s.descriptor_size = GridSize{h, w};
    } else if (key == "diagnostics") {
      s.diagnostics = boolean();
    } else if (key == "backend") {
      if (value_ != "synthetic") error("unsupported backend `" + std::string(value_) + "` (only `synthetic`)");
    } else if (key == "latent_size") {
      const auto [h, w] = pair('x', "`HxW`");
      b.latent_height = h;
      b.latent_width = w;
    } else if (key == "latent_channels") {
      b.latent_channels = count();
    } else if (key == "subject_size") {
      b.subject_size = count();
    } else if (key == "backend_seed") {
      b.seed = count();
    } else if (key == "ref_subject_origin") {
      const auto [y, x] = pair(',', "`y, x`");
      cfg_.ref_subject = {y, x};
    } else if (key == "tgt_subject_origin") {
      const auto [y, x] = pair(',', "`y, x`");
      cfg_.tgt_subject = {y, x};
    } else if (key == "beta_start") {
      cfg_.beta_start = real();
    } else if (key == "beta_end") {
      cfg_.beta_end = real();
    } else if (key == "train_steps") {
      cfg_.train_steps = count();
    } else if (key == "reference_seed") {
      cfg_.reference_seed = count();
    } else if (key == "reference_latent") {
      cfg_.reference_latent = std::filesystem::path(std::string(value_));
    } else {
      error("unknown key `" + key + "`");
    }
  }

  bool boolean() const {
    if (value_ == "true" || value_ == "1") return true;
    if (value_ == "false" || value_ == "0") return false;
    error("expected true or false, got `" + std::string(value_) + "`");
  }

  std::string source_;
  RunConfig& cfg_;
  std::size_t line_ = 0;
  std::string_view value_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Applies the keys in `text` on top of `base`.
inline RunConfig parse_config(std::string_view text, const std::string& source, RunConfig base = {}) {
  detail::ConfigParser parser(source, base);
  std::size_t number = 0;
  for (auto line : detail::split(text, '\n')) parser.line(++number, line);
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::error_code ec;
  std::ifstream f(path);
  require(f && !std::filesystem::is_directory(path, ec), ErrorKind::config, "cannot read config file: " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_config(buf.str(), path.string());
}

}  // namespace dm
