#pragma once

#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "qgcoc/executor.hpp"
#include "qgcoc/util.hpp"

namespace qgcoc::analysis {

using exec::EvalRecord;

// ---- accuracy aggregation ------------------------------------------------------

inline constexpr const char* kTotalKey = "TOTAL";

struct AccuracyCell {
  std::string key;
  long n = 0;
  long correct = 0;
  double accuracy_pct = 0.0;  // one decimal, half away from zero
  long unparsed = 0;

  friend bool operator==(const AccuracyCell&, const AccuracyCell&) = default;
};

using KeySelector = std::function<std::string(const EvalRecord&)>;

inline KeySelector by_dataset() {
  return [](const EvalRecord& r) { return r.dataset; };
}
inline KeySelector by_task() {
  return [](const EvalRecord& r) { return r.task; };
}
inline KeySelector by_relationship() {
  return [](const EvalRecord& r) { return r.relationship; };
}
inline KeySelector by_strategy() {
  return [](const EvalRecord& r) { return r.strategy; };
}

inline double raw_accuracy(long correct, long n) {
  return n == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

// Groups non-skipped records, one cell per key in sorted order, plus a final
// TOTAL row. Skipped records never enter any denominator.
inline std::vector<AccuracyCell> accuracy(const std::vector<EvalRecord>& records,
                                          const KeySelector& key) {
  std::map<std::string, AccuracyCell> cells;
  AccuracyCell total;
  total.key = kTotalKey;
  for (const EvalRecord& r : records) {
    if (r.skipped) continue;
    AccuracyCell& c = cells[key(r)];
    ++c.n;
    ++total.n;
    if (r.correct) {
      ++c.correct;
      ++total.correct;
    }
    if (r.unparsed) {
      ++c.unparsed;
      ++total.unparsed;
    }
  }
  std::vector<AccuracyCell> out;
  for (auto& [k, c] : cells) {
    c.key = k;
    c.accuracy_pct = round1(raw_accuracy(c.correct, c.n));
    out.push_back(c);
  }
  total.accuracy_pct = round1(raw_accuracy(total.correct, total.n));
  out.push_back(total);
  return out;
}

// ---- delta tables ----------------------------------------------------------------

// "53.3 (+12.1)": the delta is computed on unrounded accuracies, then rounded;
// a delta that rounds to zero renders as (+0.0).
inline std::string render_delta(double accuracy_pct_raw, double delta_raw) {
  double d = round1(delta_raw);
  char sign = d < 0.0 ? '-' : '+';
  return format_1dp(accuracy_pct_raw) + " (" + sign + format_1dp(std::abs(d)) + ")";
}

struct Table {
  std::vector<std::string> headers;
  std::vector<std::vector<std::string>> rows;
};

// Rows = strategies (baseline first), columns = datasets; each non-baseline
// cell carries its delta against the baseline strategy on the same dataset.
inline Table delta_table(const std::vector<EvalRecord>& records,
                         const std::string& baseline_strategy) {
  struct Counts {
    long n = 0, correct = 0;
  };
  std::map<std::string, std::map<std::string, Counts>> grid;  // strategy -> dataset -> counts
  std::set<std::string> datasets;
  for (const EvalRecord& r : records) {
    if (r.skipped) continue;
    Counts& c = grid[r.strategy][r.dataset];
    ++c.n;
    if (r.correct) ++c.correct;
    datasets.insert(r.dataset);
  }
  if (!grid.count(baseline_strategy))
    throw Error("baseline strategy '" + baseline_strategy + "' has no records");

  Table t;
  t.headers.push_back("strategy");
  for (const std::string& d : datasets) t.headers.push_back(d);

  std::vector<std::string> order{baseline_strategy};
  for (const auto& [s, _] : grid)
    if (s != baseline_strategy) order.push_back(s);

  for (const std::string& s : order) {
    std::vector<std::string> row{s};
    for (const std::string& d : datasets) {
      auto it = grid[s].find(d);
      if (it == grid[s].end()) {
        row.push_back("-");
        continue;
      }
      double acc = raw_accuracy(it->second.correct, it->second.n);
      if (s == baseline_strategy) {
        row.push_back(format_1dp(acc));
      } else {
        auto base = grid[baseline_strategy].find(d);
        if (base == grid[baseline_strategy].end())
          throw Error("baseline strategy '" + baseline_strategy + "' has no records for dataset '" +
                      d + "'");
        double base_acc = raw_accuracy(base->second.correct, base->second.n);
        row.push_back(render_delta(acc, acc - base_acc));
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---- factorial marginals ---------------------------------------------------------

struct FactorSpec {
  std::string factor;   // "length" | "scope" | "guidance"
  std::string level_a;  // e.g. "concise"
  std::string level_b;  // e.g. "detailed"
};

inline std::vector<FactorSpec> default_factors() {
  return {{"length", "concise", "detailed"},
          {"scope", "summarized", "individual"},
          {"guidance", "unguided", "guided"}};
}

// A level selects a strategy iff it equals one of the '_'-separated name
// tokens; plain substring search would let "guided" swallow "unguided".
inline bool strategy_has_level(const std::string& strategy, const std::string& level) {
  std::size_t start = 0;
  while (start <= strategy.size()) {
    std::size_t end = strategy.find('_', start);
    if (end == std::string::npos) end = strategy.size();
    if (strategy.compare(start, end - start, level) == 0) return true;
    start = end + 1;
  }
  return false;
}

struct MarginalResult {
  double mean_a = 0.0;  // unrounded
  double mean_b = 0.0;
  std::vector<std::string> strategies_a;
  std::vector<std::string> strategies_b;
};

// Unweighted mean of the per-strategy accuracies on each side of the factor.
// Every grid strategy must contribute records, and each side must hold
// exactly four of the eight.
inline MarginalResult factor_marginals(const std::vector<EvalRecord>& records,
                                       const FactorSpec& spec) {
  struct Counts {
    long n = 0, correct = 0;
  };
  std::map<std::string, Counts> per_strategy;
  for (const EvalRecord& r : records) {
    if (r.skipped) continue;
    Counts& c = per_strategy[r.strategy];
    ++c.n;
    if (r.correct) ++c.correct;
  }
  MarginalResult result;
  double sum_a = 0.0, sum_b = 0.0;
  for (const auto& [name, c] : per_strategy) {
    bool a = strategy_has_level(name, spec.level_a);
    bool b = strategy_has_level(name, spec.level_b);
    if (a == b) continue;  // not a grid strategy for this factor
    if (c.n == 0) throw Error("strategy '" + name + "' has no usable records");
    (a ? sum_a : sum_b) += raw_accuracy(c.correct, c.n);
    (a ? result.strategies_a : result.strategies_b).push_back(name);
  }
  if (result.strategies_a.size() != 4 || result.strategies_b.size() != 4)
    throw Error("factor '" + spec.factor + "' needs 4 strategies per level, found " +
                std::to_string(result.strategies_a.size()) + " '" + spec.level_a + "' and " +
                std::to_string(result.strategies_b.size()) + " '" + spec.level_b + "'");
  result.mean_a = sum_a / 4.0;
  result.mean_b = sum_b / 4.0;
  return result;
}

// "54.1 → **54.9**" with the larger side bolded; the comparison uses the
// rounded values the reader sees, and a rounded tie bolds neither.
inline std::string render_marginal(double mean_a, double mean_b) {
  double a = round1(mean_a), b = round1(mean_b);
  std::string sa = format_1dp(a), sb = format_1dp(b);
  if (a < b)
    sb = "**" + sb + "**";
  else if (b < a)
    sa = "**" + sa + "**";
  return sa + " → " + sb;
}

// ---- error sampling --------------------------------------------------------------

struct SampledError {
  std::string instance_id;
  std::string task;
  std::string strategy;
  std::string transcript_ref;

  friend bool operator==(const SampledError&, const SampledError&) = default;
};

// Seeded per-task sample of failing (incorrect, non-skipped) records.
// Deterministic in (records, per_task, seed) only: candidates are sorted
// before the seeded shuffle, each task mixes its name into the seed, and the
// result is sorted by (task, instance id). Instances failing under several
// strategies appear once, under the lexicographically first strategy.
inline std::vector<SampledError> sample_errors(const std::vector<EvalRecord>& records,
                                               int per_task, std::uint64_t seed,
                                               const WarningSink& warn = warn_to_stderr) {
  if (per_task < 1) throw Error("per_task must be positive");
  std::map<std::string, std::map<std::string, SampledError>> failing;  // task -> id -> sample
  for (const EvalRecord& r : records) {
    if (r.skipped || r.correct) continue;
    SampledError s{r.instance_id, r.task, r.strategy, r.transcript_ref};
    auto [it, inserted] = failing[r.task].try_emplace(r.instance_id, s);
    if (!inserted && s.strategy < it->second.strategy) it->second = s;
  }
  std::vector<SampledError> out;
  for (const auto& [task, by_id] : failing) {
    std::vector<SampledError> pool;
    for (const auto& [_, s] : by_id) pool.push_back(s);  // already id-sorted
    std::mt19937_64 rng(seed ^ fnv1a64(task));
    for (std::size_t i = pool.size() - 1; i > 0; --i)
      std::swap(pool[i], pool[rng() % (i + 1)]);
    if (pool.size() < static_cast<std::size_t>(per_task))
      warn("task '" + task + "' has only " + std::to_string(pool.size()) +
           " failing instances; requested " + std::to_string(per_task) + ", taking all");
    else
      pool.resize(per_task);
    out.insert(out.end(), pool.begin(), pool.end());
  }
  std::sort(out.begin(), out.end(), [](const SampledError& x, const SampledError& y) {
    return std::tie(x.task, x.instance_id) < std::tie(y.task, y.instance_id);
  });
  return out;
}

// ---- annotation worksheet --------------------------------------------------------

struct ErrorAnnotation {
  std::string instance_id;
  std::string task;
  std::string strategy;
  std::string label;  // E1 | E2 | E3
  std::string note;
  std::string annotator;

  friend bool operator==(const ErrorAnnotation&, const ErrorAnnotation&) = default;
};

inline const std::map<std::string, std::string>& error_label_names() {
  static const std::map<std::string, std::string> names = {
      {"E1", "Wrong question understanding"},
      {"E2", "Inaccurate perception"},
      {"E3", "Wrong reasoning"},
  };
  return names;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  return quoted + "\"";
}

inline std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace detail

inline constexpr const char* kWorksheetHeader = "id,task,strategy,transcript,label,note";

// One row per sampled instance; annotators fill in the empty label/note
// columns and the file round-trips through read_annotations.
inline void write_worksheet(const std::filesystem::path& path,
                            const std::vector<SampledError>& samples) {
  std::string body = std::string(kWorksheetHeader) + "\n";
  for (const SampledError& s : samples)
    body += detail::csv_field(s.instance_id) + "," + detail::csv_field(s.task) + "," +
            detail::csv_field(s.strategy) + "," + detail::csv_field(s.transcript_ref) + ",,\n";
  write_file_atomic(path, body);
}

// Reads back a worksheet, keeping only rows whose label column was filled in.
// Unknown labels are an error naming the row.
inline std::vector<ErrorAnnotation> read_annotations(const std::filesystem::path& path) {
  std::string content = read_file(path);
  std::vector<std::string> lines = split_lines(content);
  if (lines.empty() || trim(lines[0]) != kWorksheetHeader)
    throw Error("worksheet " + path.string() + " must start with header '" + kWorksheetHeader +
                "'");
  std::vector<ErrorAnnotation> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    std::vector<std::string> f = detail::parse_csv_line(lines[i]);
    if (f.size() < 6)
      throw Error("worksheet row " + std::to_string(i + 1) + " has " + std::to_string(f.size()) +
                  " fields, expected 6");
    std::string label = trim(f[4]);
    if (label.empty()) continue;  // not annotated yet
    if (!error_label_names().count(label))
      throw Error("worksheet row " + std::to_string(i + 1) + " has unknown label '" + label +
                  "' (expected E1, E2, or E3)");
    out.push_back({f[0], f[1], f[2], label, f[5], ""});
  }
  return out;
}

// ---- error statistics ------------------------------------------------------------

struct ErrorStats {
  long total = 0;
  std::map<std::string, long> overall;                      // label -> count
  std::map<std::string, std::map<std::string, long>> per_task;  // task -> label -> count
};

inline ErrorStats error_stats(const std::vector<ErrorAnnotation>& annotations) {
  if (annotations.empty()) throw Error("no annotations: fill in the worksheet's label column");
  ErrorStats s;
  for (const ErrorAnnotation& a : annotations) {
    if (!error_label_names().count(a.label))
      throw Error("unknown error label '" + a.label + "' for instance '" + a.instance_id + "'");
    ++s.total;
    ++s.overall[a.label];
    ++s.per_task[a.task][a.label];
  }
  return s;
}

// "33.3% (40/120)"
inline std::string render_fraction(long count, long total) {
  return format_1dp(round1(raw_accuracy(count, total))) + "% (" + std::to_string(count) + "/" +
         std::to_string(total) + ")";
}

// Overall distribution, one labeled line per error code.
inline std::string render_error_overview(const ErrorStats& s) {
  std::string out;
  for (const auto& [code, name] : error_label_names()) {
    long count = s.overall.count(code) ? s.overall.at(code) : 0;
    out += "(" + code + ") " + name + ": " + render_fraction(count, s.total) + "\n";
  }
  return out;
}

// Rows E1..E3, one column per task; cells are percentages of that task's
// annotations. Each column sums to 100 within 0.1 of rounding slack.
inline Table error_task_table(const ErrorStats& s) {
  Table t;
  t.headers.push_back("error");
  for (const auto& [task, _] : s.per_task) t.headers.push_back(task);
  for (const auto& [code, name] : error_label_names()) {
    std::vector<std::string> row{code};
    for (const auto& [task, counts] : s.per_task) {
      long task_total = 0;
      for (const auto& [_, c] : counts) task_total += c;
      long count = counts.count(code) ? counts.at(code) : 0;
      row.push_back(format_1dp(round1(raw_accuracy(count, task_total))));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---- table renderers -------------------------------------------------------------

inline std::string render_text_table(const Table& t) {
  std::vector<std::size_t> widths(t.headers.size());
  for (std::size_t c = 0; c < t.headers.size(); ++c) widths[c] = t.headers[c].size();
  for (const auto& row : t.rows)
    for (std::size_t c = 0; c < row.size() && c < widths.size(); ++c)
      widths[c] = std::max(widths[c], row[c].size());
  auto emit_row = [&](const std::vector<std::string>& row) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) line += "  ";
      line += row[c];
      if (c + 1 < row.size()) line += std::string(widths[c] - row[c].size(), ' ');
    }
    return rtrim(line) + "\n";
  };
  std::string out = emit_row(t.headers);
  std::string rule;
  for (std::size_t c = 0; c < widths.size(); ++c) {
    if (c) rule += "  ";
    rule += std::string(widths[c], '-');
  }
  out += rule + "\n";
  for (const auto& row : t.rows) out += emit_row(row);
  return out;
}

inline std::string render_csv_table(const Table& t) {
  auto emit = [](const std::vector<std::string>& row) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) line += ",";
      line += detail::csv_field(row[c]);
    }
    return line + "\n";
  };
  std::string out = emit(t.headers);
  for (const auto& row : t.rows) out += emit(row);
  return out;
}

}  // namespace qgcoc::analysis
