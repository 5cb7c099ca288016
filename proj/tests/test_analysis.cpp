#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "qgcoc/analysis.hpp"
#include "test_support.hpp"

using namespace qgcoc;
using analysis::strategy_has_level;
using exec::EvalRecord;

namespace {

EvalRecord rec(const std::string& strategy, const std::string& id, const std::string& task,
               bool correct, const std::string& dataset = "toy") {
  EvalRecord r;
  r.instance_id = id;
  r.dataset = dataset;
  r.task = task;
  r.strategy = strategy;
  r.gold = 'A';
  if (correct) {
    r.predicted = 'A';
    r.correct = true;
  } else {
    r.predicted = 'B';
  }
  r.transcript_ref = "transcripts/" + strategy + "/" + id + ".json";
  return r;
}

// `correct` of `n` records for one strategy, spread over one dataset/task.
void add_cell(std::vector<EvalRecord>& out, const std::string& strategy, long correct, long n,
              const std::string& dataset = "toy", const std::string& task = "T") {
  for (long i = 0; i < n; ++i)
    out.push_back(rec(strategy, strategy + "-" + dataset + "-" + std::to_string(i), task, i < correct,
                      dataset));
}

const std::vector<std::string>& grid_names() {
  static const std::vector<std::string> names = {
      "grid_concise_summarized_unguided",  "grid_concise_summarized_guided",
      "grid_concise_individual_unguided",  "grid_concise_individual_guided",
      "grid_detailed_summarized_unguided", "grid_detailed_summarized_guided",
      "grid_detailed_individual_unguided", "grid_detailed_individual_guided"};
  return names;
}

}  // namespace

TEST_SUITE("analysis") {
  TEST_CASE("accuracy groups by key, rounds half away from zero, and conserves counts") {
    std::vector<EvalRecord> records;
    for (int i = 0; i < 5; ++i) {
      EvalRecord r = rec("direct", "a" + std::to_string(i), "T", i < 3);
      r.relationship = "temporal";
      records.push_back(r);
    }
    for (int i = 0; i < 4; ++i) {
      EvalRecord r = rec("direct", "b" + std::to_string(i), "T", false);
      r.relationship = "semantic";
      r.unparsed = (i == 0);
      records.push_back(r);
    }
    // Skipped records must never reach a denominator.
    EvalRecord sk = rec("cocot", "skipme", "T", false);
    sk.skipped = true;
    records.push_back(sk);

    auto cells = analysis::accuracy(records, analysis::by_relationship());
    REQUIRE(cells.size() == 3);
    CHECK(cells[0].key == "semantic");
    CHECK(cells[0].n == 4);
    CHECK(cells[0].correct == 0);
    CHECK(cells[0].accuracy_pct == doctest::Approx(0.0));
    CHECK(cells[0].unparsed == 1);
    CHECK(cells[1].key == "temporal");
    CHECK(cells[1].n == 5);
    CHECK(cells[1].accuracy_pct == doctest::Approx(60.0));
    CHECK(cells[2].key == analysis::kTotalKey);
    CHECK(cells[2].n == 9);
    CHECK(cells[2].correct == 3);
    CHECK(cells[2].accuracy_pct == doctest::Approx(33.3));

    long conserved = 0;
    for (std::size_t i = 0; i + 1 < cells.size(); ++i) conserved += cells[i].n;
    CHECK(conserved == cells.back().n);

    // 1 of 8 rounds up at the .5 boundary.
    std::vector<EvalRecord> eighth;
    add_cell(eighth, "direct", 1, 8);
    CHECK(analysis::accuracy(eighth, analysis::by_strategy())[0].accuracy_pct ==
          doctest::Approx(12.5));
  }

  TEST_CASE("delta strings reproduce the published table cells") {
    // Raw accuracies built from counts so the deltas carry float dust.
    CHECK(analysis::render_delta(analysis::raw_accuracy(533, 1000),
                                 analysis::raw_accuracy(533, 1000) -
                                     analysis::raw_accuracy(412, 1000)) == "53.3 (+12.1)");
    CHECK(analysis::render_delta(analysis::raw_accuracy(851, 1000), 0.0) == "85.1 (+0.0)");
    CHECK(analysis::render_delta(analysis::raw_accuracy(449, 1000),
                                 analysis::raw_accuracy(449, 1000) -
                                     analysis::raw_accuracy(450, 1000)) == "44.9 (-0.1)");
    // A delta that rounds to zero renders with a plus sign.
    CHECK(analysis::render_delta(50.0, -0.04) == "50.0 (+0.0)");
  }

  TEST_CASE("delta table pairs every strategy with the baseline per dataset") {
    std::vector<EvalRecord> records;
    add_cell(records, "direct", 412, 1000, "muir");
    add_cell(records, "qg_coc", 533, 1000, "muir");
    add_cell(records, "ccot", 412, 1000, "muir");
    add_cell(records, "direct", 450, 1000, "mmiu");
    add_cell(records, "qg_coc", 449, 1000, "mmiu");
    add_cell(records, "ccot", 851, 1000, "mmiu");

    analysis::Table t = analysis::delta_table(records, "direct");
    REQUIRE(t.headers == std::vector<std::string>{"strategy", "mmiu", "muir"});
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[0] == std::vector<std::string>{"direct", "45.0", "41.2"});
    CHECK(t.rows[1] == std::vector<std::string>{"ccot", "85.1 (+40.1)", "41.2 (+0.0)"});
    CHECK(t.rows[2] == std::vector<std::string>{"qg_coc", "44.9 (-0.1)", "53.3 (+12.1)"});

    // A dataset where only the method ran cannot be reported against a baseline.
    add_cell(records, "qg_coc", 5, 10, "solo");
    CHECK_THROWS_WITH_AS(analysis::delta_table(records, "direct"),
                         doctest::Contains("solo"), Error);
    CHECK_THROWS_AS(analysis::delta_table(records, "nonexistent"), Error);
  }

  TEST_CASE("rounded deltas are antisymmetric") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 500; ++trial) {
      long n0 = 1 + static_cast<long>(rng() % 400);
      long n1 = 1 + static_cast<long>(rng() % 400);
      double a = analysis::raw_accuracy(static_cast<long>(rng() % (n0 + 1)), n0);
      double b = analysis::raw_accuracy(static_cast<long>(rng() % (n1 + 1)), n1);
      CHECK(round1(a - b) == doctest::Approx(-round1(b - a)).epsilon(1e-12));
    }
  }

  TEST_CASE("factor levels match whole name tokens only") {
    CHECK(strategy_has_level("grid_concise_summarized_unguided", "unguided"));
    CHECK_FALSE(strategy_has_level("grid_concise_summarized_unguided", "guided"));
    CHECK(strategy_has_level("grid_detailed_individual_guided", "guided"));
    CHECK(strategy_has_level("grid_detailed_individual_guided", "detailed"));
    CHECK_FALSE(strategy_has_level("qg_coc", "concise"));
    CHECK_FALSE(strategy_has_level("direct", "direct_x"));
    CHECK(strategy_has_level("direct", "direct"));
  }

  TEST_CASE("factor marginals equal a brute-force recomputation for all three factors") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<EvalRecord> records;
      std::map<std::string, std::pair<long, long>> counts;  // name -> (correct, n)
      for (const std::string& name : grid_names()) {
        long n = 40 + static_cast<long>(rng() % 80);
        long correct = static_cast<long>(rng() % (n + 1));
        counts[name] = {correct, n};
        add_cell(records, name, correct, n);
      }
      // Non-grid strategies must not disturb the marginals.
      add_cell(records, "direct", 3, 9);
      add_cell(records, "qg_coc", 7, 9);

      double overall = 0.0;
      for (const std::string& name : grid_names())
        overall += 100.0 * counts[name].first / counts[name].second;
      overall /= 8.0;

      for (const analysis::FactorSpec& spec : analysis::default_factors()) {
        auto result = analysis::factor_marginals(records, spec);
        double side_a = 0.0, side_b = 0.0;
        int na = 0, nb = 0;
        for (const std::string& name : grid_names()) {
          double acc = 100.0 * counts[name].first / counts[name].second;
          if (name.find("_" + spec.level_a) != std::string::npos) {
            side_a += acc;
            ++na;
          } else {
            side_b += acc;
            ++nb;
          }
        }
        REQUIRE(na == 4);
        REQUIRE(nb == 4);
        CHECK(result.mean_a == doctest::Approx(side_a / 4).epsilon(1e-9));
        CHECK(result.mean_b == doctest::Approx(side_b / 4).epsilon(1e-9));
        // Each factor splits the grid 4/4, so the factor means average back
        // to the grand mean.
        CHECK((result.mean_a + result.mean_b) / 2 == doctest::Approx(overall).epsilon(1e-9));
      }
    }
  }

  TEST_CASE("marginal rendering reproduces the published arrow cells") {
    CHECK(analysis::render_marginal(54.1, 54.9) == "54.1 → **54.9**");
    CHECK(analysis::render_marginal(44.1, 43.9) == "**44.1** → 43.9");
    CHECK(analysis::render_marginal(54.5, 54.5) == "54.5 → 54.5");
    // Bolding follows the rounded values the reader sees.
    CHECK(analysis::render_marginal(54.04, 54.01) == "54.0 → 54.0");

    // A fixture whose sides average exactly to the published pair.
    std::vector<EvalRecord> records;
    for (const std::string& name : grid_names())
      add_cell(records, name, strategy_has_level(name, "concise") ? 541 : 549, 1000);
    auto result = analysis::factor_marginals(records, {"length", "concise", "detailed"});
    CHECK(analysis::render_marginal(result.mean_a, result.mean_b) == "54.1 → **54.9**");
  }

  TEST_CASE("factor marginals demand exactly four strategies per level") {
    std::vector<EvalRecord> records;
    for (const std::string& name : grid_names())
      if (name != "grid_detailed_individual_guided") add_cell(records, name, 5, 10);
    CHECK_THROWS_WITH_AS(
        analysis::factor_marginals(records, analysis::default_factors()[0]),
        doctest::Contains("length"), Error);

    add_cell(records, "grid_detailed_individual_guided", 5, 10);
    add_cell(records, "extra_concise_probe", 5, 10);  // fifth strategy on one side
    CHECK_THROWS_AS(analysis::factor_marginals(records, analysis::default_factors()[0]), Error);
  }

  TEST_CASE("error sampling is deterministic, deduplicated, and honest about shortfalls") {
    std::vector<EvalRecord> records;
    std::vector<std::string> tasks;
    for (int t = 0; t < 12; ++t) tasks.push_back("Task" + std::to_string(t));
    for (const std::string& task : tasks)
      for (int i = 0; i < 15; ++i) {
        records.push_back(rec("qg_coc", task + "-f" + std::to_string(i), task, false));
        records.push_back(rec("qg_coc", task + "-ok" + std::to_string(i), task, true));
      }
    EvalRecord sk = rec("cocot", "Task0-sk", "Task0", false);
    sk.skipped = true;
    records.push_back(sk);

    std::vector<std::string> warnings;
    auto capture = [&](const std::string& w) { warnings.push_back(w); };
    auto sample = analysis::sample_errors(records, 10, 42, capture);
    REQUIRE(sample.size() == 120);
    CHECK(warnings.empty());

    std::set<std::string> ids;
    for (std::size_t i = 0; i < sample.size(); ++i) {
      ids.insert(sample[i].instance_id);
      CHECK(sample[i].instance_id.find("-ok") == std::string::npos);
      CHECK(sample[i].instance_id != "Task0-sk");
      if (i) {
        CHECK(std::tie(sample[i - 1].task, sample[i - 1].instance_id) <
              std::tie(sample[i].task, sample[i].instance_id));
      }
    }
    CHECK(ids.size() == 120);

    CHECK(analysis::sample_errors(records, 10, 42, capture) == sample);
    CHECK(analysis::sample_errors(records, 10, 43, capture) != sample);

    // Order of the input records must not matter.
    std::vector<EvalRecord> reversed(records.rbegin(), records.rend());
    CHECK(analysis::sample_errors(reversed, 10, 42, capture) == sample);

    // A task with too few failures yields everything it has, plus a warning.
    std::vector<EvalRecord> sparse;
    for (int i = 0; i < 4; ++i) sparse.push_back(rec("qg_coc", "s" + std::to_string(i), "Rare", false));
    warnings.clear();
    auto short_sample = analysis::sample_errors(sparse, 10, 1, capture);
    CHECK(short_sample.size() == 4);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("Rare") != std::string::npos);
    CHECK(warnings[0].find("4") != std::string::npos);

    // An instance failing under two strategies appears once, under the
    // lexicographically first strategy.
    std::vector<EvalRecord> multi = {rec("qg_coc", "dup", "T", false),
                                     rec("ccot", "dup", "T", false)};
    auto one = analysis::sample_errors(multi, 5, 1, capture);
    REQUIRE(one.size() == 1);
    CHECK(one[0].strategy == "ccot");
  }

  TEST_CASE("worksheet writes, quotes, and reads back annotations") {
    auto dir = testsup::fresh_dir("worksheet");
    std::vector<analysis::SampledError> samples = {
        {"e1", "Temporal", "qg_coc", "transcripts/qg_coc/e1.json"},
        {"e2", "Count, with comma", "qg_coc", "transcripts/qg_coc/e2.json"},
    };
    auto path = dir / "worksheet.csv";
    analysis::write_worksheet(path, samples);

    std::string content = read_file(path);
    CHECK(content.rfind(analysis::kWorksheetHeader, 0) == 0);
    CHECK(content.find("\"Count, with comma\"") != std::string::npos);

    // Unannotated sheets surface zero annotations (not an error yet).
    CHECK(analysis::read_annotations(path).empty());

    std::string annotated = std::string(analysis::kWorksheetHeader) + "\n" +
                            "e1,Temporal,qg_coc,transcripts/qg_coc/e1.json,E2,misses the bird\n" +
                            "e2,\"Count, with comma\",qg_coc,t.json,E3,\"said \"\"seven\"\", is six\"\n" +
                            "e3,Temporal,qg_coc,t3.json,,\n";
    testsup::write_text(path, annotated);
    auto back = analysis::read_annotations(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0] == analysis::ErrorAnnotation{"e1", "Temporal", "qg_coc", "E2", "misses the bird",
                                               ""});
    CHECK(back[1].task == "Count, with comma");
    CHECK(back[1].note == "said \"seven\", is six");

    testsup::write_text(path, std::string(analysis::kWorksheetHeader) + "\ne1,T,s,t.json,E9,x\n");
    CHECK_THROWS_WITH_AS(analysis::read_annotations(path), doctest::Contains("E9"), Error);
    testsup::write_text(path, "wrong,header\n");
    CHECK_THROWS_AS(analysis::read_annotations(path), Error);
    testsup::write_text(path, std::string(analysis::kWorksheetHeader) + "\nonly,three,fields\n");
    CHECK_THROWS_AS(analysis::read_annotations(path), Error);
  }

  TEST_CASE("error statistics reproduce the published distribution strings") {
    std::vector<analysis::ErrorAnnotation> annotations;
    auto add = [&](int count, const std::string& label) {
      for (int i = 0; i < count; ++i)
        annotations.push_back({"i" + std::to_string(annotations.size()), "T", "qg_coc", label,
                               "", ""});
    };
    add(40, "E1");
    add(38, "E2");
    add(42, "E3");

    analysis::ErrorStats stats = analysis::error_stats(annotations);
    CHECK(stats.total == 120);
    std::string overview = analysis::render_error_overview(stats);
    CHECK(overview.find("(E1) Wrong question understanding: 33.3% (40/120)") != std::string::npos);
    CHECK(overview.find("(E2) Inaccurate perception: 31.7% (38/120)") != std::string::npos);
    CHECK(overview.find("(E3) Wrong reasoning: 35.0% (42/120)") != std::string::npos);

    CHECK_THROWS_AS(analysis::error_stats({}), Error);
    CHECK_THROWS_AS(analysis::error_stats({{"x", "T", "s", "E7", "", ""}}), Error);
  }

  TEST_CASE("per-task error table columns sum to 100 within rounding slack") {
    // The published Geographic column is exact.
    std::vector<analysis::ErrorAnnotation> annotations;
    for (int i = 0; i < 5; ++i) annotations.push_back({"g" + std::to_string(i), "Geographic", "s", "E1", "", ""});
    for (int i = 0; i < 3; ++i) annotations.push_back({"h" + std::to_string(i), "Geographic", "s", "E2", "", ""});
    for (int i = 0; i < 2; ++i) annotations.push_back({"k" + std::to_string(i), "Geographic", "s", "E3", "", ""});
    analysis::Table t = analysis::error_task_table(analysis::error_stats(annotations));
    REQUIRE(t.headers == std::vector<std::string>{"error", "Geographic"});
    CHECK(t.rows[0] == std::vector<std::string>{"E1", "50.0"});
    CHECK(t.rows[1] == std::vector<std::string>{"E2", "30.0"});
    CHECK(t.rows[2] == std::vector<std::string>{"E3", "20.0"});

    // Randomized tasks: every column of rounded percentages stays within 0.1.
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<analysis::ErrorAnnotation> anns;
      int tasks = 1 + static_cast<int>(rng() % 6);
      for (int task = 0; task < tasks; ++task)
        for (const char* label : {"E1", "E2", "E3"}) {
          int count = static_cast<int>(rng() % 8);
          for (int i = 0; i < count; ++i)
            anns.push_back({"t" + std::to_string(task) + label + std::to_string(i),
                            "Task" + std::to_string(task), "s", label, "", ""});
        }
      if (anns.empty()) continue;
      analysis::Table table = analysis::error_task_table(analysis::error_stats(anns));
      for (std::size_t col = 1; col < table.headers.size(); ++col) {
        double sum = 0.0;
        for (const auto& row : table.rows) sum += std::stod(row[col]);
        CHECK(std::abs(sum - 100.0) <= 0.1 + 1e-9);
      }
    }
  }

  TEST_CASE("table renderers align text and quote csv") {
    analysis::Table t;
    t.headers = {"strategy", "muir"};
    t.rows = {{"direct", "41.2"}, {"qg_coc", "53.3 (+12.1)"}};
    CHECK(analysis::render_text_table(t) ==
          "strategy  muir\n"
          "--------  ------------\n"
          "direct    41.2\n"
          "qg_coc    53.3 (+12.1)\n");

    analysis::Table c;
    c.headers = {"id", "note"};
    c.rows = {{"e1", "a,b"}, {"e2", "said \"hi\""}};
    CHECK(analysis::render_csv_table(c) ==
          "id,note\n"
          "e1,\"a,b\"\n"
          "e2,\"said \"\"hi\"\"\"\n");
  }
}
