#pragma once

#include <atomic>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "qgcoc/cache.hpp"
#include "qgcoc/client.hpp"
#include "qgcoc/dataset.hpp"
#include "qgcoc/parse.hpp"
#include "qgcoc/strategy.hpp"
#include "qgcoc/util.hpp"

namespace qgcoc::exec {

using json = nlohmann::json;

struct DatasetSpec {
  std::string path;
  bool multi_image = true;
  bool shuffle = false;  // shuffled with filter.shuffle_seed, else the run seed
  dataset::DatasetFilter filter;
};

struct RunConfig {
  std::string run_id;
  std::vector<std::string> strategies;
  std::vector<DatasetSpec> datasets;
  std::map<std::string, client::ModelRoute> routes;  // "answerer", "stage_one"
  int workers = 4;
  std::string cache_dir;
  std::uint64_t seed = 0;
  std::string template_overrides;  // path, empty -> none
  client::GenerationParams generation;
  std::string out_dir = "runs";
  bool resume = false;
};

struct EvalRecord {
  std::string instance_id;
  std::string dataset;
  std::string task;
  std::string relationship;
  std::string strategy;
  std::optional<char> predicted;
  char gold = 'A';
  bool correct = false;
  bool unparsed = false;
  bool skipped = false;
  long additional_tokens = 0;  // completion tokens of non-final stages
  long total_tokens = 0;       // prompt + completion over every call
  long runtime_ms = 0;         // wall clock across all calls incl. retries
  int cache_hits = 0;
  std::string transcript_ref;
  std::string error;  // empty unless the pipeline failed

  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

inline json record_to_json(const EvalRecord& r) {
  json j;
  j["instance_id"] = r.instance_id;
  j["dataset"] = r.dataset;
  j["task"] = r.task;
  j["relationship"] = r.relationship;
  j["strategy"] = r.strategy;
  j["predicted"] = r.predicted ? json(std::string(1, *r.predicted)) : json(nullptr);
  j["gold"] = std::string(1, r.gold);
  j["correct"] = r.correct;
  j["unparsed"] = r.unparsed;
  j["skipped"] = r.skipped;
  j["additional_tokens"] = r.additional_tokens;
  j["total_tokens"] = r.total_tokens;
  j["runtime_ms"] = r.runtime_ms;
  j["cache_hits"] = r.cache_hits;
  j["transcript_ref"] = r.transcript_ref;
  j["error"] = r.error;
  return j;
}

inline EvalRecord record_from_json(const json& j) {
  EvalRecord r;
  r.instance_id = j.at("instance_id").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.task = j.at("task").get<std::string>();
  r.relationship = j.value("relationship", "");
  r.strategy = j.at("strategy").get<std::string>();
  if (j.contains("predicted") && j["predicted"].is_string() &&
      !j["predicted"].get<std::string>().empty())
    r.predicted = j["predicted"].get<std::string>()[0];
  r.gold = j.at("gold").get<std::string>().at(0);
  r.correct = j.value("correct", false);
  r.unparsed = j.value("unparsed", false);
  r.skipped = j.value("skipped", false);
  r.additional_tokens = j.value("additional_tokens", 0L);
  r.total_tokens = j.value("total_tokens", 0L);
  r.runtime_ms = j.value("runtime_ms", 0L);
  r.cache_hits = j.value("cache_hits", 0);
  r.transcript_ref = j.value("transcript_ref", "");
  r.error = j.value("error", "");
  return r;
}

inline std::vector<EvalRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open records file: " + path.string());
  std::vector<EvalRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw Error("bad record at " + path.string() + ":" + std::to_string(line_no) + ": " +
                  e.what());
    }
  }
  return out;
}

// ---- overhead accounting ------------------------------------------------------

struct Overhead {
  long mean_additional_tokens = 0;  // nearest integer
  double mean_runtime_s = 0.0;      // one decimal
};

// Per-strategy mean additional tokens and mean runtime; skipped records are
// excluded from both means.
inline std::map<std::string, Overhead> account_overhead(const std::vector<EvalRecord>& records) {
  std::map<std::string, std::pair<long double, long double>> sums;  // tokens, runtime_ms
  std::map<std::string, long> counts;
  for (const EvalRecord& r : records) {
    if (r.skipped) continue;
    sums[r.strategy].first += r.additional_tokens;
    sums[r.strategy].second += r.runtime_ms;
    ++counts[r.strategy];
  }
  std::map<std::string, Overhead> out;
  for (const auto& [name, sum] : sums) {
    long n = counts[name];
    Overhead o;
    o.mean_additional_tokens =
        static_cast<long>(std::floor(static_cast<double>(sum.first) / n + 0.5));
    o.mean_runtime_s = round1(static_cast<double>(sum.second) / n / 1000.0);
    out[name] = o;
  }
  return out;
}

// ---- run ------------------------------------------------------------------------

struct RunResult {
  std::filesystem::path run_dir;
  std::filesystem::path records_path;
  std::filesystem::path metadata_path;
  std::vector<EvalRecord> records;
};

inline json config_to_json(const RunConfig& c) {
  json j;
  j["run_id"] = c.run_id;
  j["strategies"] = c.strategies;
  j["datasets"] = json::array();
  for (const DatasetSpec& d : c.datasets) {
    json jd;
    jd["path"] = d.path;
    jd["multi_image"] = d.multi_image;
    jd["shuffle"] = d.shuffle;
    if (d.filter.include_tasks)
      jd["include_tasks"] = std::vector<std::string>(d.filter.include_tasks->begin(),
                                                     d.filter.include_tasks->end());
    if (!d.filter.exclude_tasks.empty())
      jd["exclude_tasks"] =
          std::vector<std::string>(d.filter.exclude_tasks.begin(), d.filter.exclude_tasks.end());
    if (d.filter.max_instances) jd["max_instances"] = *d.filter.max_instances;
    if (d.filter.shuffle_seed) jd["shuffle_seed"] = *d.filter.shuffle_seed;
    j["datasets"].push_back(std::move(jd));
  }
  j["routes"] = json::object();
  for (const auto& [role, r] : c.routes)
    j["routes"][role] = {{"name", r.name},
                         {"base_url", r.base_url},
                         {"model_id", r.model_id},
                         {"auth_env_var", r.auth_env_var},
                         {"rate_limit", r.rate_limit},
                         {"max_attempts", r.retry.max_attempts},
                         {"base_backoff_ms", r.retry.base_backoff_ms},
                         {"backoff_multiplier", r.retry.backoff_multiplier}};
  j["workers"] = c.workers;
  j["cache_dir"] = c.cache_dir;
  j["seed"] = c.seed;
  j["template_overrides"] = c.template_overrides;
  j["generation"] = {{"temperature", c.generation.temperature},
                     {"max_tokens", c.generation.max_tokens},
                     {"stop", c.generation.stop}};
  j["out_dir"] = c.out_dir;
  return j;
}

namespace detail {

// Keeps cache-hit reporting independent of scheduling: a reply served from an
// entry this same run wrote is relabeled as a fresh computation, so
// from_cache / cache_hits mean "served from a prior run's cache" and records
// come out identical at any worker count.
class SameRunDeduper : public client::ModelClient {
 public:
  explicit SameRunDeduper(client::ModelClient& inner) : inner_(inner) {}
  client::ModelReply complete(const client::ModelRoute& route,
                              const client::ChatRequest& request) override {
    std::string key = cache_key(route.model_id, request);
    client::ModelReply reply = inner_.complete(route, request);
    std::scoped_lock lock(mu_);
    if (!reply.from_cache)
      written_.insert(key);
    else if (written_.count(key))
      reply.from_cache = false;
    return reply;
  }

 private:
  client::ModelClient& inner_;
  std::mutex mu_;
  std::set<std::string> written_;
};

// Per-pipeline adapter so cache hits and call counts can be attributed to a
// single record while the underlying (caching) client stays shared.
class CountingClient : public client::ModelClient {
 public:
  explicit CountingClient(client::ModelClient& inner) : inner_(inner) {}
  client::ModelReply complete(const client::ModelRoute& route,
                              const client::ChatRequest& request) override {
    client::ModelReply reply = inner_.complete(route, request);
    ++calls_;
    if (reply.from_cache) ++cache_hits_;
    total_tokens_ += reply.prompt_tokens + reply.completion_tokens;
    return reply;
  }
  int cache_hits() const { return cache_hits_; }
  long total_tokens() const { return total_tokens_; }

 private:
  client::ModelClient& inner_;
  int calls_ = 0;
  int cache_hits_ = 0;
  long total_tokens_ = 0;
};

inline bool record_order(const EvalRecord& a, const EvalRecord& b) {
  if (a.strategy != b.strategy) return a.strategy < b.strategy;
  if (a.dataset != b.dataset) return a.dataset < b.dataset;
  return a.instance_id < b.instance_id;
}

inline std::string transcript_rel_path(const std::string& strategy, const std::string& id) {
  return "transcripts/" + strategy + "/" + id + ".json";
}

}  // namespace detail

// Executes every (strategy, instance) pair over a bounded worker pool.
// Records land in records.jsonl sorted by (strategy, dataset, instance id)
// regardless of completion order; an append-only partial log makes interrupted
// runs resumable. Per-instance model failures produce fail-soft records.
inline RunResult run(const RunConfig& config, client::ModelClient& raw_client,
                     const WarningSink& warn = warn_to_stderr) {
  namespace fs = std::filesystem;
  if (config.run_id.empty()) throw ConfigError("run_id", "must be non-empty");
  if (config.workers < 1) throw ConfigError("workers", "must be >= 1");
  if (config.strategies.empty()) throw ConfigError("strategies", "must list at least one strategy");
  if (config.datasets.empty()) throw ConfigError("datasets", "must list at least one dataset");
  if (config.cache_dir.empty()) throw ConfigError("cache_dir", "must be non-empty");

  strategy::StrategyRegistry registry;
  if (!config.template_overrides.empty())
    registry.apply_overrides(json::parse(read_file(config.template_overrides)));
  std::vector<const strategy::Strategy*> strategies;
  for (const std::string& name : config.strategies) strategies.push_back(&registry.get(name));

  strategy::RouteSet routes;
  {
    auto it = config.routes.find("answerer");
    if (it == config.routes.end())
      throw ConfigError("routes.answerer", "an answerer route is required");
    routes.answerer = it->second;
    auto st = config.routes.find("stage_one");
    routes.stage_one = st == config.routes.end() ? routes.answerer : st->second;
  }

  struct Job {
    const strategy::Strategy* strat;
    dataset::BenchmarkInstance instance;
    std::string dataset_name;
  };
  std::vector<Job> jobs;
  for (const DatasetSpec& spec : config.datasets) {
    dataset::DatasetFilter filter = spec.filter;
    if (spec.shuffle && !filter.shuffle_seed) filter.shuffle_seed = config.seed;
    auto instances = dataset::load_dataset(spec.path, spec.multi_image, filter, warn);
    for (const strategy::Strategy* strat : strategies)
      for (const dataset::BenchmarkInstance& inst : instances)
        jobs.push_back({strat, inst, inst.dataset});
  }

  fs::path run_dir = fs::path(config.out_dir) / config.run_id;
  fs::create_directories(run_dir / "transcripts");
  fs::path records_path = run_dir / "records.jsonl";
  fs::path partial_path = run_dir / "records.partial.jsonl";
  fs::path metadata_path = run_dir / "metadata.json";

  // Previously completed work that --resume may reuse.
  std::map<std::tuple<std::string, std::string, std::string>, EvalRecord> done;
  if (config.resume) {
    for (const fs::path& p : {records_path, partial_path}) {
      std::error_code ec;
      if (!fs::exists(p, ec)) continue;
      for (EvalRecord& r : read_records(p))
        done[{r.strategy, r.dataset, r.instance_id}] = std::move(r);
    }
  }

  ResponseCache cache(config.cache_dir, warn);
  CachingClient cached(raw_client, cache);
  detail::SameRunDeduper deduped(cached);

  std::string started_at = iso8601_utc_now();
  std::vector<EvalRecord> slots(jobs.size());
  std::ofstream partial(partial_path, std::ios::app);
  std::mutex partial_mu;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> fatal{false};
  std::string fatal_message;
  std::mutex fatal_mu;

  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= jobs.size() || fatal.load()) return;
      const Job& job = jobs[i];
      const dataset::BenchmarkInstance& inst = job.instance;
      EvalRecord rec;
      rec.instance_id = inst.id;
      rec.dataset = job.dataset_name;
      rec.task = inst.task;
      rec.relationship = inst.relationship;
      rec.strategy = job.strat->name;
      rec.gold = inst.gold;

      auto it = done.find({rec.strategy, rec.dataset, rec.instance_id});
      if (it != done.end()) {
        slots[i] = it->second;
        continue;
      }

      detail::CountingClient counting(deduped);
      std::int64_t t0 = steady_now_ms();
      try {
        strategy::PipelineResult pipeline =
            strategy::run_strategy(*job.strat, inst, routes, config.generation, counting);
        parse::ChoiceExtraction extraction =
            parse::extract_choice(pipeline.final_reply.text, inst.options);
        rec.predicted = extraction.letter;
        rec.correct = extraction.letter && *extraction.letter == inst.gold;
        rec.unparsed = !extraction.letter.has_value();
        for (const strategy::StageTranscript& t : pipeline.transcripts)
          rec.additional_tokens += t.reply.completion_tokens;
        rec.total_tokens = counting.total_tokens();
        rec.cache_hits = counting.cache_hits();
        rec.transcript_ref = detail::transcript_rel_path(rec.strategy, rec.instance_id);
        json transcript = strategy::pipeline_to_json(pipeline);
        transcript["extraction"] = {{"letter", extraction.letter
                                                   ? json(std::string(1, *extraction.letter))
                                                   : json(nullptr)},
                                    {"rule", parse::to_string(extraction.rule_fired)},
                                    {"evidence", extraction.evidence}};
        write_file_atomic(run_dir / rec.transcript_ref, transcript.dump(2));
      } catch (const ApplicabilityError& e) {
        rec.skipped = true;
        rec.error = e.what();
      } catch (const Error& e) {
        rec.unparsed = true;
        rec.cache_hits = counting.cache_hits();
        rec.total_tokens = counting.total_tokens();
        rec.error = e.what();
        rec.transcript_ref = detail::transcript_rel_path(rec.strategy, rec.instance_id);
        json transcript = {{"instance_id", rec.instance_id},
                           {"strategy", rec.strategy},
                           {"error", rec.error}};
        try {
          write_file_atomic(run_dir / rec.transcript_ref, transcript.dump(2));
        } catch (const std::exception& io) {
          std::scoped_lock lock(fatal_mu);
          fatal_message = io.what();
          fatal.store(true);
          return;
        }
        warn("instance '" + rec.instance_id + "' (" + rec.strategy + ") failed: " + rec.error);
      } catch (const std::exception& e) {
        std::scoped_lock lock(fatal_mu);
        fatal_message = e.what();
        fatal.store(true);
        return;
      }
      rec.runtime_ms = steady_now_ms() - t0;
      {
        std::scoped_lock lock(partial_mu);
        partial << record_to_json(rec).dump() << "\n";
        partial.flush();
      }
      slots[i] = std::move(rec);
    }
  };

  std::vector<std::thread> pool;
  int n_workers = static_cast<int>(std::min<std::size_t>(
      static_cast<std::size_t>(config.workers), jobs.empty() ? 1 : jobs.size()));
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (fatal.load()) throw Error("run aborted: " + fatal_message);

  std::sort(slots.begin(), slots.end(), detail::record_order);
  std::string body;
  for (const EvalRecord& r : slots) body += record_to_json(r).dump() + "\n";
  write_file_atomic(records_path, body);

  json metadata;
  metadata["run_id"] = config.run_id;
  metadata["started_at"] = started_at;
  metadata["finished_at"] = iso8601_utc_now();
  metadata["config_digest"] = digest_hex(config_to_json(config).dump());
  json digests = json::object();
  for (const strategy::Strategy* s : strategies) digests[s->name] = strategy::template_digest(*s);
  metadata["template_digests"] = std::move(digests);
  metadata["extractor_constants"] = {{"trigger_window", parse::kExtractor.trigger_window},
                                     {"tail_chars", parse::kExtractor.tail_chars}};
  json route_meta = json::array();
  for (const auto& [role, r] : config.routes)
    route_meta.push_back(
        {{"role", role}, {"name", r.name}, {"base_url", r.base_url}, {"model_id", r.model_id}});
  metadata["routes"] = std::move(route_meta);
  metadata["generation"] = {{"temperature", config.generation.temperature},
                            {"max_tokens", config.generation.max_tokens}};
  metadata["workers"] = config.workers;
  metadata["seed"] = config.seed;
  metadata["records"] = "records.jsonl";
  metadata["notes"] = {{"runtime_includes_retry_delays", true}};
  write_file_atomic(metadata_path, metadata.dump(2));

  partial.close();
  std::error_code ec;
  std::filesystem::remove(partial_path, ec);

  return {run_dir, records_path, metadata_path, std::move(slots)};
}

}  // namespace qgcoc::exec
