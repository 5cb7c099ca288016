#pragma once

#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qgcoc/analysis.hpp"
#include "qgcoc/config.hpp"
#include "qgcoc/executor.hpp"
#include "qgcoc/strategy.hpp"

namespace qgcoc::cli {

namespace detail {

// Reports embed the run's config digest so tables stay traceable to the
// exact configuration that produced the records. Digest-of-contents would
// drag timestamps in and break rerun idempotence.
inline std::string run_config_digest(const std::filesystem::path& records_path) {
  auto meta = records_path.parent_path() / "metadata.json";
  std::error_code ec;
  if (std::filesystem::exists(meta, ec)) {
    try {
      return nlohmann::json::parse(read_file(meta)).value("config_digest", "unknown");
    } catch (const std::exception&) {
    }
  }
  return "unknown";
}

inline std::string render_report_header(const std::filesystem::path& records_path) {
  return "# run_config_digest: " + run_config_digest(records_path) + "\n";
}

inline bool wants_csv(const std::string& out_path) {
  return out_path.size() >= 4 && out_path.compare(out_path.size() - 4, 4, ".csv") == 0;
}

inline std::string render_table(const analysis::Table& t, bool csv) {
  return csv ? analysis::render_csv_table(t) : analysis::render_text_table(t);
}

// Either prints the report or writes it to --out (echoing the path).
inline void deliver(const std::string& body, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << body;
  } else {
    write_file_atomic(out_path, body);
    out << "report: " << out_path << "\n";
  }
}

inline analysis::Table strategy_summary(const std::vector<exec::EvalRecord>& records) {
  auto cells = analysis::accuracy(records, analysis::by_strategy());
  std::map<std::string, long> skipped;
  for (const exec::EvalRecord& r : records)
    if (r.skipped) ++skipped[r.strategy];
  analysis::Table t;
  t.headers = {"strategy", "n", "correct", "accuracy", "unparsed", "skipped"};
  for (const analysis::AccuracyCell& c : cells) {
    long sk = 0;
    if (c.key == analysis::kTotalKey)
      for (const auto& [_, count] : skipped) sk += count;
    else if (skipped.count(c.key))
      sk = skipped.at(c.key);
    t.rows.push_back({c.key, std::to_string(c.n), std::to_string(c.correct),
                      format_1dp(c.accuracy_pct), std::to_string(c.unparsed),
                      std::to_string(sk)});
  }
  return t;
}

inline analysis::Table overhead_table(const std::vector<exec::EvalRecord>& records) {
  analysis::Table t;
  t.headers = {"strategy", "mean_additional_tokens", "mean_runtime_s"};
  for (const auto& [name, o] : exec::account_overhead(records))
    t.rows.push_back({name, std::to_string(o.mean_additional_tokens), format_1dp(o.mean_runtime_s)});
  return t;
}

}  // namespace detail

inline int cmd_validate(const std::string& dataset_path, bool multi_image, std::ostream& out) {
  dataset::ValidationReport report = dataset::validate_dataset(dataset_path, multi_image);
  out << dataset::render_validation_report(report);
  return report.clean() ? 0 : 1;
}

inline int cmd_run(const std::string& config_path, int workers_override, bool resume,
                   const std::vector<std::string>& strategy_override,
                   const std::string& scripted_path, std::ostream& out, std::ostream& err) {
  exec::RunConfig cfg = config::load_config(config_path);
  if (workers_override > 0) cfg.workers = workers_override;
  if (resume) cfg.resume = true;
  if (!strategy_override.empty()) cfg.strategies = strategy_override;

  std::unique_ptr<client::ModelClient> model;
  if (!scripted_path.empty()) {
    auto [rules, fallback] = config::load_scripted_rules(scripted_path);
    model = std::make_unique<client::ScriptedClient>(std::move(rules), std::move(fallback));
  } else {
    model = std::make_unique<client::HttpClient>();
  }
  exec::RunResult result =
      exec::run(cfg, *model, [&err](const std::string& w) { err << "warning: " << w << "\n"; });

  long skipped = 0, unparsed = 0, correct = 0, usable = 0;
  for (const exec::EvalRecord& r : result.records) {
    if (r.skipped) {
      ++skipped;
      continue;
    }
    ++usable;
    if (r.correct) ++correct;
    if (r.unparsed) ++unparsed;
  }
  out << "records: " << result.records_path.string() << "\n";
  out << "metadata: " << result.metadata_path.string() << "\n";
  out << "completed: " << usable << " (correct " << correct << ", unparsed " << unparsed
      << ", skipped " << skipped << ")\n";
  return 0;
}

inline int cmd_report(const std::string& records_path, const std::string& baseline,
                      const std::string& out_path, std::ostream& out) {
  auto records = exec::read_records(records_path);
  bool csv = detail::wants_csv(out_path);
  std::string body = detail::render_report_header(records_path) + "\n";
  body += "## accuracy by strategy\n";
  body += detail::render_table(detail::strategy_summary(records), csv);
  if (!baseline.empty()) {
    body += "\n## accuracy vs '" + baseline + "' by dataset\n";
    body += detail::render_table(analysis::delta_table(records, baseline), csv);
  }
  body += "\n## overhead by strategy\n";
  body += detail::render_table(detail::overhead_table(records), csv);
  detail::deliver(body, out_path, out);
  return 0;
}

inline int cmd_grid_report(const std::string& records_path, const std::string& out_path,
                           std::ostream& out) {
  auto records = exec::read_records(records_path);
  std::string body = detail::render_report_header(records_path) + "\n";
  body += "## captioning factor marginals\n";
  for (const analysis::FactorSpec& spec : analysis::default_factors()) {
    analysis::MarginalResult r = analysis::factor_marginals(records, spec);
    body += spec.factor + " (" + spec.level_a + " vs " + spec.level_b +
            "): " + analysis::render_marginal(r.mean_a, r.mean_b) + "\n";
  }
  detail::deliver(body, out_path, out);
  return 0;
}

inline int cmd_errors_sample(const std::string& records_path, int per_task, std::uint64_t seed,
                             const std::string& out_path, std::ostream& out, std::ostream& err) {
  auto records = exec::read_records(records_path);
  auto sample = analysis::sample_errors(records, per_task, seed, [&err](const std::string& w) {
    err << "warning: " << w << "\n";
  });
  analysis::write_worksheet(out_path, sample);
  out << "worksheet: " << out_path << "\n";
  out << "sampled: " << sample.size() << "\n";
  return 0;
}

inline int cmd_errors_stats(const std::string& annotations_path, std::ostream& out) {
  auto annotations = analysis::read_annotations(annotations_path);
  analysis::ErrorStats stats = analysis::error_stats(annotations);
  out << analysis::render_error_overview(stats);
  out << "\n";
  out << analysis::render_text_table(analysis::error_task_table(stats));
  return 0;
}

inline int cmd_cache_stats(const std::string& config_path, std::ostream& out) {
  exec::RunConfig cfg = config::load_config(config_path);
  exec::ResponseCache cache(cfg.cache_dir);
  exec::CacheStats s = cache.stats();
  out << "cache_dir: " << cfg.cache_dir << "\n";
  out << "entries: " << s.entries << "\n";
  out << "corrupt: " << s.corrupt << "\n";
  out << "bytes: " << s.bytes << "\n";
  return 0;
}

inline int cmd_strategies_list(std::ostream& out) {
  strategy::StrategyRegistry registry;
  for (const std::string& name : registry.names()) out << name << "\n";
  return 0;
}

// Entry point behind the binary: returns 0 on success, 1 on validation or
// run failures, 2 on usage errors.
inline int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Run multi-stage prompting strategies over multi-image multiple-choice benchmarks"};
  app.name("qgcoc");
  app.require_subcommand(0, 1);

  std::string v_dataset;
  bool v_multi = false;
  CLI::App* validate =
      app.add_subcommand("validate", "Check a JSONL dataset and print a violation report");
  validate->add_option("--dataset", v_dataset, "Dataset JSONL path")->required();
  validate->add_flag("--multi-image", v_multi,
                     "Require at least two images per instance (default: exactly one)");

  std::string r_config, r_scripted;
  std::vector<std::string> r_strategies;
  int r_workers = 0;
  bool r_resume = false;
  CLI::App* run = app.add_subcommand(
      "run",
      "Execute strategies over datasets (defaults: workers 4, temperature 0, max_tokens 2048)");
  run->add_option("--config", r_config, "Run configuration JSON path")->required();
  run->add_option("--strategy", r_strategies,
                  "Restrict the run to these strategies (repeatable; default: config list)");
  run->add_option("--workers", r_workers, "Override the worker count (default: config, else 4)");
  run->add_flag("--resume", r_resume, "Reuse records already present in the run directory");
  run->add_option("--scripted", r_scripted,
                  "Scripted-backend rules JSON; replaces live endpoints for offline runs");

  std::string p_records, p_baseline, p_out;
  CLI::App* report =
      app.add_subcommand("report", "Accuracy, baseline-delta, and overhead tables from records");
  report->add_option("--records", p_records, "records.jsonl path")->required();
  report->add_option("--baseline", p_baseline, "Baseline strategy for delta columns");
  report->add_option("--out", p_out, "Write the report here (.csv switches to CSV tables)");

  std::string g_records, g_out;
  CLI::App* grid =
      app.add_subcommand("grid-report", "Captioning-grid factor marginals from records");
  grid->add_option("--records", g_records, "records.jsonl path")->required();
  grid->add_option("--out", g_out, "Write the report here instead of printing");

  std::string s_records, s_out;
  int s_per_task = 10;
  std::uint64_t s_seed = 0;
  CLI::App* sample = app.add_subcommand(
      "errors-sample", "Draw a seeded per-task sample of failures into an annotation worksheet");
  sample->add_option("--records", s_records, "records.jsonl path")->required();
  sample->add_option("--per-task", s_per_task, "Failures to draw per task (default 10)");
  sample->add_option("--seed", s_seed, "Sampling seed (default 0)");
  sample->add_option("--out", s_out, "Worksheet CSV path")->required();

  std::string e_annotations;
  CLI::App* stats = app.add_subcommand(
      "errors-stats", "Error-type distribution from an annotated worksheet");
  stats->add_option("--annotations", e_annotations, "Annotated worksheet CSV path")->required();

  std::string c_config;
  CLI::App* cache = app.add_subcommand("cache-stats", "Entry counts and size of the response cache");
  cache->add_option("--config", c_config, "Run configuration JSON path (supplies cache_dir)")
      ->required();

  CLI::App* list = app.add_subcommand("strategies-list", "Print every registered strategy name");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    auto subs = app.get_subcommands();
    if (subs.empty())
      out << app.help();
    else
      for (CLI::App* sub : subs) out << sub->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    err << "run 'qgcoc --help' for usage\n";
    return 2;
  }
  if (app.get_subcommands().empty()) {
    out << app.help();
    return 0;
  }

  try {
    if (validate->parsed()) return cmd_validate(v_dataset, v_multi, out);
    if (run->parsed())
      return cmd_run(r_config, r_workers, r_resume, r_strategies, r_scripted, out, err);
    if (report->parsed()) return cmd_report(p_records, p_baseline, p_out, out);
    if (grid->parsed()) return cmd_grid_report(g_records, g_out, out);
    if (sample->parsed()) return cmd_errors_sample(s_records, s_per_task, s_seed, s_out, out, err);
    if (stats->parsed()) return cmd_errors_stats(e_annotations, out);
    if (cache->parsed()) return cmd_cache_stats(c_config, out);
    if (list->parsed()) return cmd_strategies_list(out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  out << app.help();
  return 0;
}

}  // namespace qgcoc::cli
