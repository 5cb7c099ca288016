#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "qgcoc/util.hpp"

namespace qgcoc::client {

using json = nlohmann::json;

enum class Role { system, user, assistant };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

struct ContentPart {
  enum class Kind { text, image };
  Kind kind = Kind::text;
  std::string text;           // kind == text
  std::string image_base64;   // kind == image, already base64-encoded
  std::string media_type;     // kind == image

  static ContentPart make_text(std::string t) {
    ContentPart p;
    p.kind = Kind::text;
    p.text = std::move(t);
    return p;
  }
  static ContentPart make_image(std::string b64, std::string media) {
    ContentPart p;
    p.kind = Kind::image;
    p.image_base64 = std::move(b64);
    p.media_type = std::move(media);
    return p;
  }
};

struct Message {
  Role role = Role::user;
  std::vector<ContentPart> parts;
};

struct GenerationParams {
  double temperature = 0.0;
  int max_tokens = 2048;
  std::vector<std::string> stop;
};

struct ChatRequest {
  std::vector<Message> messages;
  GenerationParams params;

  // All text parts in order, newline-joined; the surface scripted matchers
  // and token estimation operate on.
  std::string text_concat() const {
    std::string out;
    for (const Message& m : messages)
      for (const ContentPart& p : m.parts)
        if (p.kind == ContentPart::Kind::text) {
          if (!out.empty()) out += '\n';
          out += p.text;
        }
    return out;
  }
};

inline void validate_request(const ChatRequest& req) {
  bool has_user = false;
  for (const Message& m : req.messages) {
    if (m.role == Role::user) has_user = true;
    if (m.role != Role::user)
      for (const ContentPart& p : m.parts)
        if (p.kind == ContentPart::Kind::image)
          throw ModelError(ModelError::Kind::request, 0,
                           "image parts are only allowed in user messages");
  }
  if (!has_user)
    throw ModelError(ModelError::Kind::request, 0, "request must contain a user message");
}

struct RetryPolicy {
  int max_attempts = 3;
  int base_backoff_ms = 250;
  double backoff_multiplier = 2.0;
};

struct ModelRoute {
  std::string name;
  std::string base_url;
  std::string model_id;
  std::string auth_env_var;  // empty -> no auth header
  int rate_limit = 60;       // max requests per minute, >= 1
  RetryPolicy retry;
};

struct ModelReply {
  std::string text;
  long prompt_tokens = 0;
  long completion_tokens = 0;
  long latency_ms = 0;
  int attempts = 1;
  bool from_cache = false;
};

// Fallback when the endpoint reports no usage block: ceil(chars / 4).
inline long estimate_tokens(std::string_view text) {
  return static_cast<long>((text.size() + 3) / 4);
}

// ---- clock abstraction (lets rate-limit and backoff tests run instantly) ----

class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now_ms() = 0;
  virtual void sleep_ms(std::int64_t ms) = 0;
};

class SystemClock : public Clock {
 public:
  std::int64_t now_ms() override { return steady_now_ms(); }
  void sleep_ms(std::int64_t ms) override {
    if (ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(ms));
  }
};

class FakeClock : public Clock {
 public:
  std::int64_t now_ms() override { return t_.load(); }
  void sleep_ms(std::int64_t ms) override {
    if (ms > 0) t_.fetch_add(ms);
  }
  void advance_ms(std::int64_t ms) { t_.fetch_add(ms); }

 private:
  std::atomic<std::int64_t> t_{0};
};

inline SystemClock& system_clock() {
  static SystemClock clock;
  return clock;
}

// Sliding-window limiter: over any 60s window at most `rpm` acquisitions.
class RateLimiter {
 public:
  RateLimiter(int rpm, Clock& clock) : rpm_(rpm < 1 ? 1 : rpm), clock_(clock) {}

  void acquire() {
    std::unique_lock lock(mu_);
    for (;;) {
      std::int64_t now = clock_.now_ms();
      while (!stamps_.empty() && stamps_.front() <= now - 60000) stamps_.pop_front();
      if (stamps_.size() < static_cast<std::size_t>(rpm_)) {
        stamps_.push_back(now);
        return;
      }
      std::int64_t wait = stamps_.front() + 60000 - now;
      lock.unlock();
      clock_.sleep_ms(wait > 0 ? wait : 1);
      lock.lock();
    }
  }

  std::vector<std::int64_t> acquisition_times() const {
    std::scoped_lock lock(mu_);
    return {stamps_.begin(), stamps_.end()};
  }

 private:
  int rpm_;
  Clock& clock_;
  mutable std::mutex mu_;
  std::deque<std::int64_t> stamps_;  // times of acquisitions within the window
};

// ---- client interface --------------------------------------------------------

class ModelClient {
 public:
  virtual ~ModelClient() = default;
  virtual ModelReply complete(const ModelRoute& route, const ChatRequest& request) = 0;
};

// ---- scripted backend ----------------------------------------------------------

struct ScriptedRule {
  bool is_regex = false;
  std::string expr;
  std::string response;
};

// Deterministic stand-in for a live endpoint: ordered rules matched against
// the request's concatenated text, first match wins. Rules are immutable
// after construction; counters make call patterns assertable in tests.
class ScriptedClient : public ModelClient {
 public:
  explicit ScriptedClient(std::vector<ScriptedRule> rules,
                          std::optional<std::string> default_response = std::nullopt)
      : rules_(std::move(rules)), default_response_(std::move(default_response)) {
    for (const ScriptedRule& r : rules_)
      compiled_.emplace_back(r.is_regex
                                 ? std::optional<std::regex>(std::regex(r.expr))
                                 : std::nullopt);
  }

  static ModelRoute route() {
    ModelRoute r;
    r.name = "scripted";
    r.base_url = "scripted://local";
    r.model_id = "scripted";
    r.rate_limit = 1000000;
    r.retry.max_attempts = 1;
    return r;
  }

  ModelReply complete(const ModelRoute&, const ChatRequest& request) override {
    int live = concurrent_.fetch_add(1) + 1;
    int peak = peak_concurrent_.load();
    while (live > peak && !peak_concurrent_.compare_exchange_weak(peak, live)) {
    }
    std::string text = request.text_concat();
    std::string response;
    bool matched = false;
    for (std::size_t i = 0; i < rules_.size(); ++i) {
      bool hit = compiled_[i] ? std::regex_search(text, *compiled_[i])
                              : text.find(rules_[i].expr) != std::string::npos;
      if (hit) {
        response = rules_[i].response;
        matched = true;
        break;
      }
    }
    if (!matched) {
      if (!default_response_) {
        concurrent_.fetch_sub(1);
        throw ScriptedMissError(digest_hex(text), text.substr(0, 48));
      }
      response = *default_response_;
    }
    {
      std::scoped_lock lock(mu_);
      history_.push_back(text);
    }
    calls_.fetch_add(1);
    concurrent_.fetch_sub(1);
    ModelReply reply;
    reply.text = response;
    reply.prompt_tokens = estimate_tokens(text);
    reply.completion_tokens = estimate_tokens(response);
    reply.latency_ms = 0;
    reply.attempts = 1;
    return reply;
  }

  long calls() const { return calls_.load(); }
  int peak_concurrency() const { return peak_concurrent_.load(); }
  std::vector<std::string> history() const {
    std::scoped_lock lock(mu_);
    return history_;
  }
  void reset_counters() {
    std::scoped_lock lock(mu_);
    history_.clear();
    calls_.store(0);
    peak_concurrent_.store(0);
  }

 private:
  std::vector<ScriptedRule> rules_;
  std::vector<std::optional<std::regex>> compiled_;
  std::optional<std::string> default_response_;
  std::atomic<long> calls_{0};
  std::atomic<int> concurrent_{0};
  std::atomic<int> peak_concurrent_{0};
  mutable std::mutex mu_;
  std::vector<std::string> history_;
};

// ---- HTTP backend ---------------------------------------------------------------

// POST {base_url}/chat/completions with the image-capable message schema.
inline json build_request_body(const ModelRoute& route, const ChatRequest& req) {
  json body;
  body["model"] = route.model_id;
  body["messages"] = json::array();
  for (const Message& m : req.messages) {
    json parts = json::array();
    for (const ContentPart& p : m.parts) {
      if (p.kind == ContentPart::Kind::text) {
        parts.push_back({{"type", "text"}, {"text", p.text}});
      } else {
        parts.push_back({{"type", "image_url"},
                         {"image_url",
                          {{"url", "data:" + p.media_type + ";base64," + p.image_base64}}}});
      }
    }
    body["messages"].push_back({{"role", to_string(m.role)}, {"content", std::move(parts)}});
  }
  body["temperature"] = req.params.temperature;
  body["max_tokens"] = req.params.max_tokens;
  if (!req.params.stop.empty()) body["stop"] = req.params.stop;
  return body;
}

class HttpClient : public ModelClient {
 public:
  explicit HttpClient(Clock& clock = system_clock()) : clock_(clock) {}

  ModelReply complete(const ModelRoute& route, const ChatRequest& request) override {
    validate_request(request);
    std::string auth_token;
    if (!route.auth_env_var.empty()) {
      const char* v = std::getenv(route.auth_env_var.c_str());
      if (!v || !*v)
        throw ModelError(ModelError::Kind::request, 0,
                         "auth env var '" + route.auth_env_var + "' is not set");
      auth_token = v;
    }

    std::string body = build_request_body(route, request).dump();
    auto [origin, prefix] = split_base_url(route.base_url);
    std::string path = prefix + "/chat/completions";

    RateLimiter& limiter = limiter_for(route);
    int max_attempts = route.retry.max_attempts < 1 ? 1 : route.retry.max_attempts;
    std::int64_t t0 = clock_.now_ms();
    std::string last_failure = "no attempt made";

    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
      limiter.acquire();
      httplib::Client http(origin);
      http.set_connection_timeout(10, 0);
      http.set_read_timeout(60, 0);
      httplib::Headers headers;
      if (!auth_token.empty()) headers.emplace("Authorization", "Bearer " + auth_token);
      auto res = http.Post(path, headers, body, "application/json");

      if (res && res->status == 200) {
        ModelReply reply = parse_reply(res->body, request, attempt);
        reply.latency_ms = clock_.now_ms() - t0;
        return reply;
      }
      if (res && res->status >= 400 && res->status < 500 && res->status != 429)
        throw ModelError(ModelError::Kind::request, attempt,
                         "endpoint returned status " + std::to_string(res->status) + ": " +
                             res->body.substr(0, 200));
      last_failure = res ? "status " + std::to_string(res->status)
                         : "transport error (" + httplib::to_string(res.error()) + ")";
      if (attempt < max_attempts) clock_.sleep_ms(backoff_ms(route.retry, attempt));
    }
    throw ModelError(ModelError::Kind::availability, max_attempts,
                     "gave up on '" + route.name + "': " + last_failure);
  }

 private:
  static std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
    std::size_t scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos)
      throw ConfigError("base_url", "'" + base_url + "' is not an absolute URL");
    std::size_t path_start = base_url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {base_url, ""};
    std::string prefix = base_url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {base_url.substr(0, path_start), prefix};
  }

  ModelReply parse_reply(const std::string& body, const ChatRequest& request, int attempt) {
    json j;
    try {
      j = json::parse(body);
    } catch (const json::exception& e) {
      throw ModelError(ModelError::Kind::availability, attempt,
                       std::string("unparsable response body: ") + e.what());
    }
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
      throw ModelError(ModelError::Kind::availability, attempt, "response carries no choices");
    const json& msg = j["choices"][0].value("message", json::object());
    std::string text;
    if (msg.contains("content")) {
      if (msg["content"].is_string()) {
        text = msg["content"].get<std::string>();
      } else if (msg["content"].is_array()) {
        for (const json& part : msg["content"])
          if (part.value("type", "") == "text") text += part.value("text", "");
      }
    }
    if (trim(text).empty())
      throw ModelError(ModelError::Kind::empty_reply, attempt, "endpoint returned an empty reply");
    ModelReply reply;
    reply.text = text;
    reply.attempts = attempt;
    const json usage = j.value("usage", json::object());
    reply.prompt_tokens = usage.contains("prompt_tokens") && usage["prompt_tokens"].is_number()
                              ? usage["prompt_tokens"].get<long>()
                              : estimate_tokens(request.text_concat());
    reply.completion_tokens =
        usage.contains("completion_tokens") && usage["completion_tokens"].is_number()
            ? usage["completion_tokens"].get<long>()
            : estimate_tokens(text);
    return reply;
  }

  std::int64_t backoff_ms(const RetryPolicy& retry, int attempt) {
    double cap = retry.base_backoff_ms;
    for (int i = 1; i < attempt; ++i) cap *= retry.backoff_multiplier;
    thread_local std::mt19937_64 rng(std::random_device{}() ^
                                     std::hash<std::thread::id>{}(std::this_thread::get_id()));
    std::uniform_real_distribution<double> jitter(0.0, 1.0);
    return static_cast<std::int64_t>(cap * jitter(rng));  // full jitter
  }

  RateLimiter& limiter_for(const ModelRoute& route) {
    std::scoped_lock lock(mu_);
    auto it = limiters_.find(route.name);
    if (it == limiters_.end())
      it = limiters_.emplace(route.name, std::make_unique<RateLimiter>(route.rate_limit, clock_))
               .first;
    return *it->second;
  }

  Clock& clock_;
  std::mutex mu_;
  std::map<std::string, std::unique_ptr<RateLimiter>> limiters_;
};

}  // namespace qgcoc::client
