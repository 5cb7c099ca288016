#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qgcoc/client.hpp"
#include "qgcoc/executor.hpp"
#include "qgcoc/util.hpp"

namespace qgcoc::config {

using json = nlohmann::json;

namespace detail {

template <typename T>
T require(const json& j, const std::string& scope, const std::string& key) {
  if (!j.contains(key)) throw ConfigError(scope + key, "required field is missing");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(scope + key, "has the wrong type");
  }
}

template <typename T>
T optional_or(const json& j, const std::string& scope, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(scope + key, "has the wrong type");
  }
}

inline client::ModelRoute route_from_json(const json& j, const std::string& scope) {
  if (!j.is_object()) throw ConfigError(scope, "must be an object");
  client::ModelRoute r;
  r.name = optional_or<std::string>(j, scope + ".", "name", "default");
  r.base_url = require<std::string>(j, scope + ".", "base_url");
  r.model_id = require<std::string>(j, scope + ".", "model_id");
  r.auth_env_var = optional_or<std::string>(j, scope + ".", "auth_env_var", "");
  r.rate_limit = optional_or<int>(j, scope + ".", "rate_limit", r.rate_limit);
  if (r.rate_limit < 1) throw ConfigError(scope + ".rate_limit", "must be >= 1");
  r.retry.max_attempts =
      optional_or<int>(j, scope + ".", "max_attempts", r.retry.max_attempts);
  if (r.retry.max_attempts < 1) throw ConfigError(scope + ".max_attempts", "must be >= 1");
  r.retry.base_backoff_ms =
      optional_or<long>(j, scope + ".", "base_backoff_ms", r.retry.base_backoff_ms);
  r.retry.backoff_multiplier =
      optional_or<double>(j, scope + ".", "backoff_multiplier", r.retry.backoff_multiplier);
  return r;
}

inline exec::DatasetSpec dataset_from_json(const json& j, const std::string& scope) {
  if (!j.is_object()) throw ConfigError(scope, "must be an object");
  exec::DatasetSpec d;
  d.path = require<std::string>(j, scope + ".", "path");
  d.multi_image = optional_or<bool>(j, scope + ".", "multi_image", true);
  d.shuffle = optional_or<bool>(j, scope + ".", "shuffle", false);
  if (j.contains("include_tasks")) {
    auto v = require<std::vector<std::string>>(j, scope + ".", "include_tasks");
    d.filter.include_tasks = std::set<std::string>(v.begin(), v.end());
  }
  if (j.contains("exclude_tasks")) {
    auto v = require<std::vector<std::string>>(j, scope + ".", "exclude_tasks");
    d.filter.exclude_tasks = std::set<std::string>(v.begin(), v.end());
  }
  if (j.contains("max_instances"))
    d.filter.max_instances = require<std::size_t>(j, scope + ".", "max_instances");
  if (j.contains("shuffle_seed"))
    d.filter.shuffle_seed = require<std::uint64_t>(j, scope + ".", "shuffle_seed");
  return d;
}

}  // namespace detail

// Reads a run configuration, applying the documented defaults: workers 4,
// temperature 0, max_tokens 2048, and stage_one falling back to the answerer
// route when omitted.
inline exec::RunConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError(path.string(), "top level must be an object");

  exec::RunConfig cfg;
  cfg.run_id = detail::require<std::string>(j, "", "run_id");
  if (cfg.run_id.empty() || cfg.run_id.find('/') != std::string::npos ||
      cfg.run_id.find("..") != std::string::npos)
    throw ConfigError("run_id", "must be a non-empty filesystem-safe name");
  cfg.strategies = detail::require<std::vector<std::string>>(j, "", "strategies");
  if (cfg.strategies.empty()) throw ConfigError("strategies", "must list at least one strategy");

  if (!j.contains("datasets") || !j["datasets"].is_array() || j["datasets"].empty())
    throw ConfigError("datasets", "must be a non-empty array");
  for (std::size_t i = 0; i < j["datasets"].size(); ++i)
    cfg.datasets.push_back(
        detail::dataset_from_json(j["datasets"][i], "datasets[" + std::to_string(i) + "]"));

  if (!j.contains("routes") || !j["routes"].is_object())
    throw ConfigError("routes", "must be an object with at least an 'answerer' route");
  if (!j["routes"].contains("answerer"))
    throw ConfigError("routes.answerer", "required route is missing");
  for (const auto& [role, jr] : j["routes"].items())
    cfg.routes[role] = detail::route_from_json(jr, "routes." + role);

  cfg.workers = detail::optional_or<int>(j, "", "workers", 4);
  if (cfg.workers < 1) throw ConfigError("workers", "must be >= 1");
  cfg.cache_dir = detail::optional_or<std::string>(j, "", "cache_dir", "cache");
  cfg.seed = detail::optional_or<std::uint64_t>(j, "", "seed", 0);
  cfg.template_overrides = detail::optional_or<std::string>(j, "", "template_overrides", "");
  cfg.out_dir = detail::optional_or<std::string>(j, "", "out_dir", "runs");

  if (j.contains("generation")) {
    const json& g = j["generation"];
    if (!g.is_object()) throw ConfigError("generation", "must be an object");
    cfg.generation.temperature =
        detail::optional_or<double>(g, "generation.", "temperature", 0.0);
    cfg.generation.max_tokens = detail::optional_or<int>(g, "generation.", "max_tokens", 2048);
    if (cfg.generation.max_tokens < 1)
      throw ConfigError("generation.max_tokens", "must be >= 1");
    cfg.generation.stop =
        detail::optional_or<std::vector<std::string>>(g, "generation.", "stop", {});
  }
  return cfg;
}

// Scripted-backend rules file: {"rules": [{"match"|"pattern": ..., "response": ...}...],
// "default": ...}. "match" is a substring, "pattern" a regex; first rule wins.
inline std::pair<std::vector<client::ScriptedRule>, std::optional<std::string>>
load_scripted_rules(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
  std::vector<client::ScriptedRule> rules;
  if (j.contains("rules")) {
    if (!j["rules"].is_array()) throw ConfigError("rules", "must be an array");
    for (std::size_t i = 0; i < j["rules"].size(); ++i) {
      const json& jr = j["rules"][i];
      std::string scope = "rules[" + std::to_string(i) + "]";
      client::ScriptedRule r;
      bool has_match = jr.contains("match"), has_pattern = jr.contains("pattern");
      if (has_match == has_pattern)
        throw ConfigError(scope, "needs exactly one of 'match' or 'pattern'");
      r.is_regex = has_pattern;
      r.expr = detail::require<std::string>(jr, scope + ".", has_pattern ? "pattern" : "match");
      r.response = detail::require<std::string>(jr, scope + ".", "response");
      rules.push_back(std::move(r));
    }
  }
  std::optional<std::string> fallback;
  if (j.contains("default")) fallback = detail::require<std::string>(j, "", "default");
  if (rules.empty() && !fallback)
    throw ConfigError(path.string(), "scripted rules file must define 'rules' or 'default'");
  return {std::move(rules), std::move(fallback)};
}

}  // namespace qgcoc::config
