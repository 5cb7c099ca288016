#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "qgcoc/client.hpp"
#include "qgcoc/util.hpp"

namespace qgcoc::exec {

using json = nlohmann::json;

// Canonical form of a completion request: model id, generation parameters,
// and the message list with every image part replaced by a digest of its
// payload. Two requests collide iff they would be sent identically.
inline std::string canonical_request(const std::string& model_id,
                                     const client::ChatRequest& req) {
  json c;
  c["model"] = model_id;
  c["temperature"] = req.params.temperature;
  c["max_tokens"] = req.params.max_tokens;
  c["stop"] = req.params.stop;
  c["messages"] = json::array();
  for (const client::Message& m : req.messages) {
    json parts = json::array();
    for (const client::ContentPart& p : m.parts) {
      if (p.kind == client::ContentPart::Kind::text)
        parts.push_back({{"text", p.text}});
      else
        parts.push_back({{"image", digest_hex(p.image_base64)}, {"media", p.media_type}});
    }
    c["messages"].push_back({{"role", client::to_string(m.role)}, {"parts", std::move(parts)}});
  }
  return c.dump();
}

inline std::string cache_key(const std::string& model_id, const client::ChatRequest& req) {
  return digest_hex(canonical_request(model_id, req));
}

struct CacheStats {
  std::size_t entries = 0;
  std::size_t corrupt = 0;
  std::uintmax_t bytes = 0;
};

// Replies stored one file per key under <dir>/<key[0..1]>/<key>.json. Writes
// are temp-file + rename, so concurrent readers see entries atomically. The
// canonical request string is stored inside each entry and checked on read;
// a digest collision therefore degrades to a miss, never a wrong reply.
class ResponseCache {
 public:
  ResponseCache(std::filesystem::path dir, WarningSink warn = warn_to_stderr)
      : dir_(std::move(dir)), warn_(std::move(warn)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::optional<client::ModelReply> get(const std::string& key, const std::string& canonical) {
    auto path = entry_path(key);
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    json entry;
    try {
      entry = json::parse(read_file(path));
      if (!entry.contains("canonical") || !entry.contains("reply") ||
          !entry["reply"].contains("text"))
        throw Error("entry missing required fields");
    } catch (const std::exception& e) {
      quarantine(path, e.what());
      return std::nullopt;
    }
    if (entry["canonical"].get<std::string>() != canonical) return std::nullopt;
    client::ModelReply reply;
    reply.text = entry["reply"]["text"].get<std::string>();
    reply.prompt_tokens = entry["reply"].value("prompt_tokens", 0L);
    reply.completion_tokens = entry["reply"].value("completion_tokens", 0L);
    reply.attempts = 1;
    reply.from_cache = true;
    return reply;
  }

  void put(const std::string& key, const std::string& canonical,
           const client::ModelReply& reply) {
    json entry;
    entry["canonical"] = canonical;
    entry["created_at"] = iso8601_utc_now();
    entry["reply"] = {{"text", reply.text},
                      {"prompt_tokens", reply.prompt_tokens},
                      {"completion_tokens", reply.completion_tokens}};
    write_file_atomic(entry_path(key), entry.dump());
  }

  CacheStats stats() const {
    CacheStats s;
    std::error_code ec;
    if (!std::filesystem::exists(dir_, ec)) return s;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir_)) {
      if (!e.is_regular_file()) continue;
      if (e.path().extension() == ".json") {
        ++s.entries;
        s.bytes += e.file_size();
      } else if (e.path().extension() == ".corrupt") {
        ++s.corrupt;
      }
    }
    return s;
  }

 private:
  std::filesystem::path entry_path(const std::string& key) const {
    return dir_ / key.substr(0, 2) / (key + ".json");
  }

  void quarantine(const std::filesystem::path& path, const std::string& why) {
    std::error_code ec;
    std::filesystem::rename(path, path.string() + ".corrupt", ec);
    warn_("quarantined corrupt cache entry " + path.string() + ": " + why);
  }

  std::filesystem::path dir_;
  WarningSink warn_;
};

// Wraps any client with read-through caching. Hits come back with
// from_cache=true, attempts=1, and latency covering only the lookup.
class CachingClient : public client::ModelClient {
 public:
  CachingClient(client::ModelClient& inner, ResponseCache& cache)
      : inner_(inner), cache_(cache) {}

  client::ModelReply complete(const client::ModelRoute& route,
                              const client::ChatRequest& request) override {
    std::string canonical = canonical_request(route.model_id, request);
    std::string key = digest_hex(canonical);
    std::int64_t t0 = steady_now_ms();
    if (auto hit = cache_.get(key, canonical)) {
      hit->latency_ms = steady_now_ms() - t0;
      return *hit;
    }
    client::ModelReply reply = inner_.complete(route, request);
    cache_.put(key, canonical, reply);
    return reply;
  }

 private:
  client::ModelClient& inner_;
  ResponseCache& cache_;
};

}  // namespace qgcoc::exec
