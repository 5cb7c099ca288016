#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "qgcoc/util.hpp"

namespace qgcoc::dataset {

using json = nlohmann::json;

enum class ImageKind { path, url, base64 };

inline const char* to_string(ImageKind k) {
  switch (k) {
    case ImageKind::path: return "path";
    case ImageKind::url: return "url";
    case ImageKind::base64: return "base64";
  }
  return "path";
}

// Reference to an image; bytes are only materialized by resolve_image.
struct ImageRef {
  std::string source;
  ImageKind kind = ImageKind::path;
  std::string media_type;
  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

struct BenchmarkInstance {
  std::string id;
  std::string dataset;
  std::string task;
  std::string relationship;  // empty when absent
  std::string question;
  std::vector<ImageRef> images;
  std::vector<Option> options;
  char gold = 'A';
  std::map<std::string, std::string> meta;
  friend bool operator==(const BenchmarkInstance&, const BenchmarkInstance&) = default;
};

struct DatasetFilter {
  std::optional<std::set<std::string>> include_tasks;
  std::set<std::string> exclude_tasks;
  std::optional<std::size_t> max_instances;
  std::optional<std::uint64_t> shuffle_seed;
};

inline const std::set<std::string>& default_media_allowlist() {
  static const std::set<std::string> kAllow = {"image/png", "image/jpeg", "image/webp",
                                               "image/gif"};
  return kAllow;
}

namespace detail {

inline std::string require_string(const json& j, const char* field, std::size_t line,
                                  const std::string& instance_id = "") {
  if (!j.contains(field) || !j[field].is_string())
    throw DatasetError(line, field, instance_id, "missing or non-string field");
  return j[field].get<std::string>();
}

}  // namespace detail

// Parses one JSONL line into an instance. Unknown top-level fields are folded
// into meta so they survive a round-trip. No image bytes are touched.
inline BenchmarkInstance parse_instance(const std::string& line, std::size_t line_no,
                                        const std::set<std::string>& media_allowlist =
                                            default_media_allowlist()) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DatasetError(line_no, "json", "", e.what());
  }
  if (!j.is_object()) throw DatasetError(line_no, "json", "", "record is not a JSON object");

  BenchmarkInstance inst;
  inst.id = detail::require_string(j, "id", line_no);
  inst.dataset = detail::require_string(j, "dataset", line_no, inst.id);
  inst.task = detail::require_string(j, "task", line_no, inst.id);
  inst.question = detail::require_string(j, "question", line_no, inst.id);
  if (j.contains("relationship")) {
    if (!j["relationship"].is_string())
      throw DatasetError(line_no, "relationship", inst.id, "must be a string");
    inst.relationship = j["relationship"].get<std::string>();
  }

  if (!j.contains("images") || !j["images"].is_array())
    throw DatasetError(line_no, "images", inst.id, "missing or non-array field");
  std::size_t img_idx = 0;
  for (const json& ji : j["images"]) {
    std::string field = "images[" + std::to_string(img_idx) + "]";
    if (!ji.is_object()) throw DatasetError(line_no, field, inst.id, "must be an object");
    ImageRef ref;
    if (!ji.contains("source") || !ji["source"].is_string() || ji["source"].get<std::string>().empty())
      throw DatasetError(line_no, field + ".source", inst.id, "missing or empty");
    ref.source = ji["source"].get<std::string>();
    std::string kind = ji.contains("kind") && ji["kind"].is_string() ? ji["kind"].get<std::string>() : "";
    if (kind == "path") ref.kind = ImageKind::path;
    else if (kind == "url") ref.kind = ImageKind::url;
    else if (kind == "base64") ref.kind = ImageKind::base64;
    else throw DatasetError(line_no, field + ".kind", inst.id, "must be path|url|base64, got '" + kind + "'");
    if (!ji.contains("media_type") || !ji["media_type"].is_string())
      throw DatasetError(line_no, field + ".media_type", inst.id, "missing or non-string");
    ref.media_type = ji["media_type"].get<std::string>();
    if (!media_allowlist.contains(ref.media_type))
      throw DatasetError(line_no, field + ".media_type", inst.id,
                         "'" + ref.media_type + "' is not in the media-type allow-list");
    inst.images.push_back(std::move(ref));
    ++img_idx;
  }

  if (!j.contains("options") || !j["options"].is_array())
    throw DatasetError(line_no, "options", inst.id, "missing or non-array field");
  std::size_t opt_idx = 0;
  for (const json& jo : j["options"]) {
    std::string field = "options[" + std::to_string(opt_idx) + "]";
    if (!jo.is_object() || !jo.contains("letter") || !jo["letter"].is_string() ||
        jo["letter"].get<std::string>().size() != 1 || !jo.contains("text") ||
        !jo["text"].is_string())
      throw DatasetError(line_no, field, inst.id, "must be {letter: single char, text: string}");
    inst.options.push_back({jo["letter"].get<std::string>()[0], jo["text"].get<std::string>()});
    ++opt_idx;
  }
  if (inst.options.size() < 2)
    throw DatasetError(line_no, "options", inst.id, "at least two options required");
  for (std::size_t i = 0; i < inst.options.size(); ++i) {
    char expected = static_cast<char>('A' + i);
    if (inst.options[i].letter != expected)
      throw DatasetError(line_no, "options", inst.id,
                         std::string("letters must run consecutively from 'A'; position ") +
                             std::to_string(i) + " has '" + inst.options[i].letter + "'");
  }

  std::string gold = detail::require_string(j, "gold", line_no);
  if (gold.size() != 1 ||
      !(gold[0] >= 'A' && gold[0] < static_cast<char>('A' + inst.options.size())))
    throw DatasetError(line_no, "gold", inst.id, "'" + gold + "' is not one of the option letters");
  inst.gold = gold[0];

  if (j.contains("meta")) {
    if (!j["meta"].is_object()) throw DatasetError(line_no, "meta", inst.id, "must be an object");
    for (auto& [k, v] : j["meta"].items())
      inst.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
  }
  static const std::set<std::string> kKnown = {"id",      "dataset", "task", "relationship",
                                               "question", "images",  "options", "gold", "meta"};
  for (auto& [k, v] : j.items())
    if (!kKnown.contains(k)) inst.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();

  return inst;
}

inline void check_image_count(const BenchmarkInstance& inst, bool multi_image, std::size_t line_no) {
  if (multi_image && inst.images.size() < 2)
    throw DatasetError(line_no, "images", inst.id,
                       "multi-image dataset requires >= 2 images, got " +
                           std::to_string(inst.images.size()));
  if (!multi_image && inst.images.size() != 1)
    throw DatasetError(line_no, "images", inst.id,
                       "single-image dataset requires exactly 1 image, got " +
                           std::to_string(inst.images.size()));
}

// One JSONL line, stable key order; parse_instance(serialize_instance(x)) == x.
inline std::string serialize_instance(const BenchmarkInstance& inst) {
  nlohmann::ordered_json j;
  j["id"] = inst.id;
  j["dataset"] = inst.dataset;
  j["task"] = inst.task;
  if (!inst.relationship.empty()) j["relationship"] = inst.relationship;
  j["question"] = inst.question;
  j["images"] = nlohmann::ordered_json::array();
  for (const ImageRef& r : inst.images)
    j["images"].push_back({{"source", r.source}, {"kind", to_string(r.kind)}, {"media_type", r.media_type}});
  j["options"] = nlohmann::ordered_json::array();
  for (const Option& o : inst.options)
    j["options"].push_back({{"letter", std::string(1, o.letter)}, {"text", o.text}});
  j["gold"] = std::string(1, inst.gold);
  if (!inst.meta.empty()) j["meta"] = inst.meta;
  return j.dump();
}

namespace detail {

// Pinned Fisher-Yates so shuffled order is stable across platforms: the
// standard fixes mt19937_64's stream but not the distributions over it.
inline void seeded_shuffle(std::vector<BenchmarkInstance>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace detail

// Loads a JSONL benchmark file. File order is kept unless the filter carries
// a shuffle seed; max_instances truncates after ordering. Image bytes are
// never read here.
inline std::vector<BenchmarkInstance> load_dataset(const std::filesystem::path& path,
                                                   bool multi_image,
                                                   const DatasetFilter& filter = {},
                                                   const WarningSink& warn = warn_to_stderr) {
  if (filter.include_tasks) {
    for (const std::string& t : *filter.include_tasks)
      if (filter.exclude_tasks.contains(t))
        throw ConfigError("filter", "task '" + t + "' is both included and excluded");
  }
  if (filter.max_instances && *filter.max_instances == 0)
    throw ConfigError("filter.max_instances", "must be positive when set");

  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset: " + path.string());

  std::vector<BenchmarkInstance> all;
  std::set<std::string> seen_ids;
  std::set<std::string> seen_tasks;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    BenchmarkInstance inst = parse_instance(line, line_no);
    check_image_count(inst, multi_image, line_no);
    if (!seen_ids.insert(inst.id).second)
      throw DatasetError(line_no, "id", inst.id, "duplicate instance id");
    seen_tasks.insert(inst.task);
    all.push_back(std::move(inst));
  }

  if (filter.include_tasks)
    for (const std::string& t : *filter.include_tasks)
      if (!seen_tasks.contains(t)) warn("filter includes unknown task '" + t + "'");
  for (const std::string& t : filter.exclude_tasks)
    if (!seen_tasks.contains(t)) warn("filter excludes unknown task '" + t + "'");

  std::vector<BenchmarkInstance> kept;
  for (BenchmarkInstance& inst : all) {
    if (filter.include_tasks && !filter.include_tasks->contains(inst.task)) continue;
    if (filter.exclude_tasks.contains(inst.task)) continue;
    kept.push_back(std::move(inst));
  }
  if (filter.shuffle_seed) detail::seeded_shuffle(kept, *filter.shuffle_seed);
  if (filter.max_instances && kept.size() > *filter.max_instances)
    kept.resize(*filter.max_instances);
  return kept;
}

// ---- image resolution -------------------------------------------------------

struct ResolvedImage {
  std::string bytes;
  std::string media_type;
};

namespace detail {

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

inline UrlParts split_url(const std::string& url) {
  std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw ResolutionError(url, 0, "not an absolute http(s) URL");
  std::size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

// Materializes image bytes from the reference. Thread-safe: reads shared
// state only. Errors name the source; HTTP failures carry the status code.
inline ResolvedImage resolve_image(const ImageRef& ref) {
  switch (ref.kind) {
    case ImageKind::path: {
      std::ifstream in(ref.source, std::ios::binary);
      if (!in) throw ResolutionError(ref.source, 0, "cannot open file");
      std::ostringstream ss;
      ss << in.rdbuf();
      std::string bytes = ss.str();
      if (bytes.empty()) throw ResolutionError(ref.source, 0, "file is empty");
      return {std::move(bytes), ref.media_type};
    }
    case ImageKind::url: {
      auto parts = detail::split_url(ref.source);
      httplib::Client client(parts.origin);
      client.set_connection_timeout(10, 0);
      client.set_read_timeout(30, 0);
      auto res = client.Get(parts.path);
      if (!res) throw ResolutionError(ref.source, 0, "connection failed");
      if (res->status != 200)
        throw ResolutionError(ref.source, res->status, "HTTP request failed");
      if (res->body.empty()) throw ResolutionError(ref.source, 200, "empty response body");
      return {res->body, ref.media_type};
    }
    case ImageKind::base64: {
      auto bytes = base64_decode(ref.source);
      if (!bytes || bytes->empty())
        throw ResolutionError(ref.source.substr(0, 32) + "...", 0, "invalid or empty base64 payload");
      return {std::move(*bytes), ref.media_type};
    }
  }
  throw ResolutionError(ref.source, 0, "unknown image kind");
}

// ---- validation ---------------------------------------------------------------

struct ValidationReport {
  std::size_t lines_seen = 0;
  std::size_t instances_ok = 0;
  std::map<std::string, std::size_t> per_task;
  std::map<std::size_t, std::size_t> image_histogram;  // image count -> instances
  struct Violation {
    std::size_t line;
    std::string instance_id;  // may be empty when the line did not parse
    std::string message;
  };
  std::vector<Violation> violations;
  bool clean() const { return violations.empty(); }
};

// Collects every violation instead of stopping at the first; also checks that
// inline base64 payloads actually decode (load_dataset defers that to
// resolve_image).
inline ValidationReport validate_dataset(const std::filesystem::path& path, bool multi_image) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset: " + path.string());
  ValidationReport report;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++report.lines_seen;
    try {
      BenchmarkInstance inst = parse_instance(line, line_no);
      check_image_count(inst, multi_image, line_no);
      if (!seen_ids.insert(inst.id).second)
        throw DatasetError(line_no, "id", inst.id, "duplicate instance id");
      for (const ImageRef& r : inst.images)
        if (r.kind == ImageKind::base64) {
          auto bytes = base64_decode(r.source);
          if (!bytes || bytes->empty())
            throw DatasetError(line_no, "images", inst.id, "inline base64 payload does not decode");
        }
      ++report.instances_ok;
      ++report.per_task[inst.task];
      ++report.image_histogram[inst.images.size()];
    } catch (const DatasetError& e) {
      report.violations.push_back({e.line, e.instance_id, e.what()});
    }
  }
  return report;
}

inline std::string render_validation_report(const ValidationReport& r) {
  std::ostringstream out;
  out << "instances: " << r.instances_ok << " ok / " << r.lines_seen << " lines\n";
  out << "per-task counts:\n";
  for (const auto& [task, n] : r.per_task) out << "  " << task << ": " << n << "\n";
  out << "image-count histogram:\n";
  for (const auto& [k, n] : r.image_histogram)
    out << "  " << k << " image(s): " << n << " instance(s)\n";
  if (r.clean()) {
    out << "violations: none\n";
  } else {
    out << "violations (" << r.violations.size() << "):\n";
    for (const auto& v : r.violations) out << "  " << v.message << "\n";
  }
  return out.str();
}

}  // namespace qgcoc::dataset
