#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qgcoc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& msg)
      : Error("config error at '" + key + "': " + msg), key(std::move(key)) {}
  std::string key;
};

class DatasetError : public Error {
 public:
  DatasetError(std::size_t line, std::string field, std::string instance_id, const std::string& msg)
      : Error("dataset error (line " + std::to_string(line) +
              (field.empty() ? "" : ", field '" + field + "'") +
              (instance_id.empty() ? "" : ", instance '" + instance_id + "'") + "): " + msg),
        line(line),
        field(std::move(field)),
        instance_id(std::move(instance_id)) {}
  std::size_t line;
  std::string field;
  std::string instance_id;
};

class ResolutionError : public Error {
 public:
  ResolutionError(std::string source, int status, const std::string& msg)
      : Error("image resolution failed for '" + source + "'" +
              (status ? " (status " + std::to_string(status) + ")" : "") + ": " + msg),
        source(std::move(source)),
        status(status) {}
  std::string source;
  int status;  // HTTP status when applicable, 0 otherwise
};

class TemplateError : public Error {
 public:
  TemplateError(std::string placeholder, const std::string& msg)
      : Error("template error at placeholder '" + placeholder + "': " + msg),
        placeholder(std::move(placeholder)) {}
  std::string placeholder;
};

class ModelError : public Error {
 public:
  enum class Kind { request, availability, empty_reply };
  ModelError(Kind kind, int attempts, const std::string& msg)
      : Error("model error after " + std::to_string(attempts) + " attempt(s): " + msg),
        kind(kind),
        attempts(attempts) {}
  Kind kind;
  int attempts;
};

class ScriptedMissError : public Error {
 public:
  ScriptedMissError(std::string digest, const std::string& preview)
      : Error("no scripted rule matched request " + digest + " (text begins: " + preview + ")"),
        digest(std::move(digest)) {}
  std::string digest;
};

class ApplicabilityError : public Error {
 public:
  ApplicabilityError(std::string strategy, int required, int actual)
      : Error("strategy '" + strategy + "' requires >= " + std::to_string(required) +
              " images, instance has " + std::to_string(actual)),
        strategy(std::move(strategy)),
        required(required),
        actual(actual) {}
  std::string strategy;
  int required;
  int actual;
};

// One answer option of a multiple-choice question.
struct Option {
  char letter = 'A';
  std::string text;
  friend bool operator==(const Option&, const Option&) = default;
};

using WarningSink = std::function<void(const std::string&)>;

inline void warn_to_stderr(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

// ---- hashing --------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string digest_hex(std::string_view data) { return hex16(fnv1a64(data)); }

// ---- base64 ---------------------------------------------------------------

inline std::string base64_encode(std::string_view bytes) {
  static constexpr char tbl[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 3 <= bytes.size()) {
    std::uint32_t n = (static_cast<unsigned char>(bytes[i]) << 16) |
                      (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                      static_cast<unsigned char>(bytes[i + 2]);
    out += tbl[(n >> 18) & 63];
    out += tbl[(n >> 12) & 63];
    out += tbl[(n >> 6) & 63];
    out += tbl[n & 63];
    i += 3;
  }
  std::size_t rem = bytes.size() - i;
  if (rem == 1) {
    std::uint32_t n = static_cast<unsigned char>(bytes[i]) << 16;
    out += tbl[(n >> 18) & 63];
    out += tbl[(n >> 12) & 63];
    out += "==";
  } else if (rem == 2) {
    std::uint32_t n = (static_cast<unsigned char>(bytes[i]) << 16) |
                      (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out += tbl[(n >> 18) & 63];
    out += tbl[(n >> 12) & 63];
    out += tbl[(n >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::optional<std::string> base64_decode(std::string_view text) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::string out;
  out.reserve(text.size() / 4 * 3);
  int buf = 0, bits = 0;
  bool padded = false;
  for (char c : text) {
    if (c == '\n' || c == '\r' || c == ' ') continue;
    if (c == '=') {
      padded = true;
      continue;
    }
    if (padded) return std::nullopt;  // data after padding
    int v = val(c);
    if (v < 0) return std::nullopt;
    buf = (buf << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((buf >> bits) & 0xff);
    }
  }
  return out;
}

// ---- strings --------------------------------------------------------------

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string rtrim(std::string_view s) {
  std::size_t e = s.size();
  while (e > 0 && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(0, e));
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.emplace_back(text.substr(start));
      break;
    }
    std::string line(text.substr(start, nl - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = nl + 1;
  }
  return lines;
}

// ---- numeric formatting ---------------------------------------------------

// Round to one decimal, ties away from zero.
inline double round1(double x) {
  double r = std::floor(std::abs(x) * 10.0 + 0.5) / 10.0;
  r = std::copysign(r, x);
  return r == 0.0 ? 0.0 : r;  // normalize -0.0
}

inline std::string format_1dp(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", round1(x));
  std::string s(buf);
  return s == "-0.0" ? "0.0" : s;
}

// ---- time -----------------------------------------------------------------

inline std::int64_t steady_now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

inline std::string iso8601_utc_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---- files ----------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write via a temp file in the same directory and rename, so concurrent
// readers only ever observe absent or complete files.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  fs::create_directories(path.parent_path());
  static std::atomic<std::uint64_t> seq{0};  // keeps temp names unique across threads
  fs::path tmp = path;
  tmp += "." + hex16(fnv1a64(path.string()) ^ (static_cast<std::uint64_t>(steady_now_ms()) << 16) ^
                     seq.fetch_add(1)) +
         ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot create file: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error("short write: " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace qgcoc
