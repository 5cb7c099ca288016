#include <functional>

#include "doctest.h"
#include "qgcoc/strategy.hpp"
#include "test_support.hpp"

using namespace qgcoc;
using namespace qgcoc::strategy;

namespace {

// Records every request verbatim so tests can assert on attached images.
struct CapturingClient : client::ModelClient {
  std::function<std::string(const std::string&)> responder;
  std::vector<client::ChatRequest> requests;

  explicit CapturingClient(std::function<std::string(const std::string&)> r)
      : responder(std::move(r)) {}

  client::ModelReply complete(const client::ModelRoute&,
                              const client::ChatRequest& request) override {
    requests.push_back(request);
    client::ModelReply reply;
    reply.text = responder(request.text_concat());
    reply.prompt_tokens = client::estimate_tokens(request.text_concat());
    reply.completion_tokens = client::estimate_tokens(reply.text);
    return reply;
  }

  std::size_t images_in(std::size_t call_index) const {
    std::size_t n = 0;
    for (const auto& m : requests.at(call_index).messages)
      for (const auto& p : m.parts)
        if (p.kind == client::ContentPart::Kind::image) ++n;
    return n;
  }
};

std::vector<client::ScriptedRule> qg_coc_rules() {
  return {
      {false, "Break the question down",
       "1. What is in the first image?\n2. What is in the second image?"},
      {false, "Answer the sub-question using the captions", "It is a small square."},
      {false, "Caption the key visual information", "The image shows a tiny square."},
      {false, "answer the original question", "The answer is (B)."},
  };
}

RouteSet scripted_routes() {
  auto r = client::ScriptedClient::route();
  return {r, r};
}

dataset::BenchmarkInstance two_image_instance() {
  return testsup::make_instance("inst1", "Ordering", 2, 'B', "Which image comes first?");
}

}  // namespace

TEST_SUITE("strategy") {

TEST_CASE("render_template substitutes question, options, and image_count") {
  auto inst = two_image_instance();
  RenderScope scope{&inst, nullptr, std::nullopt, std::nullopt};
  auto text = render_template("Q: {{question}}\n{{options}}\nimages: {{image_count}}", scope);
  CHECK(text == "Q: Which image comes first?\n"
                "(A) cat inst1\n(B) dog inst1\n(C) bird inst1\n(D) fish inst1\n"
                "images: 2");
}

TEST_CASE("render_template renders list roles as enumerated blocks") {
  auto inst = two_image_instance();
  Context ctx;
  ctx["captions"] = std::vector<std::string>{"c1", "c2"};
  ctx["summary"] = std::string("a scalar");
  RenderScope scope{&inst, &ctx, std::nullopt, std::nullopt};
  CHECK(render_template("{{captions}}", scope) == "1. c1\n2. c2");
  CHECK(render_template("{{summary}}", scope) == "a scalar");
}

TEST_CASE("render_template escape sequence produces a literal brace pair") {
  auto inst = two_image_instance();
  RenderScope scope{&inst, nullptr, std::nullopt, std::nullopt};
  CHECK(render_template("json {{{{ok}} style", scope) == "json {{ok}} style");
}

TEST_CASE("render_template names unresolved placeholders") {
  auto inst = two_image_instance();
  RenderScope scope{&inst, nullptr, std::nullopt, std::nullopt};
  try {
    render_template("hello {{no_such_role}}", scope);
    FAIL("expected TemplateError");
  } catch (const TemplateError& e) {
    CHECK(e.placeholder == "no_such_role");
  }
  CHECK_THROWS_AS(render_template("{{subquestion}}", scope), TemplateError);
  CHECK_THROWS_AS(render_template("{{image_index}}", scope), TemplateError);
  CHECK_THROWS_AS(render_template("{{unterminated", scope), TemplateError);
}

TEST_CASE("build_builtin: direct has no stages and asks the question directly") {
  Strategy s = build_builtin("direct");
  CHECK(s.stages.empty());
  CHECK(s.final_template.find("{{question}}") != std::string::npos);
  CHECK(s.final_template.find("{{options}}") != std::string::npos);
  CHECK(s.min_images == 0);
}

TEST_CASE("build_builtin: cocot is only defined over image sets") {
  CHECK(build_builtin("cocot").min_images == 2);
}

TEST_CASE("build_builtin: qg_coc has the three-step shape") {
  Strategy s = build_builtin("qg_coc");
  REQUIRE(s.stages.size() == 3);
  CHECK(s.stages[0].output_role == "subquestions");
  CHECK(s.stages[0].parser == StageParser::numbered_list);
  CHECK(s.stages[1].output_role == "captions");
  CHECK(s.stages[1].image_binding == ImageBinding::each_subquestion_with_all_images);
  CHECK(s.stages[2].output_role == "subanswers");
  CHECK(s.stages[2].image_binding == ImageBinding::each_subquestion_with_all_images);
  CHECK(s.max_subquestions == 5);
  CHECK(s.final_template.find("{{qa_pairs}}") != std::string::npos);
}

TEST_CASE("build_builtin: unknown names list the valid identifiers") {
  try {
    build_builtin("does_not_exist");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("qg_coc") != std::string::npos);
    CHECK(std::string(e.what()).find("direct") != std::string::npos);
  }
}

TEST_CASE("every builtin and grid strategy builds and validates") {
  for (const auto& n : builtin_names()) CHECK_NOTHROW(build_builtin(n));
  for (const auto& n : grid_names()) CHECK_NOTHROW(build_builtin(n));
  CHECK(builtin_names().size() == 8);
  CHECK(grid_names().size() == 8);
}

TEST_CASE("caption_grid covers all eight factor combinations") {
  auto grid = caption_grid();
  REQUIRE(grid.size() == 8);
  int guided = 0, individual = 0, concise = 0;
  for (const Strategy& s : grid) {
    REQUIRE(s.stages.size() == 1);
    bool is_guided = s.name.ends_with("_guided") && !s.name.ends_with("_unguided");
    bool is_individual = s.name.find("_individual_") != std::string::npos;
    bool is_concise = s.name.find("_concise_") != std::string::npos;
    guided += is_guided;
    individual += is_individual;
    concise += is_concise;
    // guidance is visible in the stage template
    CHECK((s.stages[0].template_text.find("{{question}}") != std::string::npos) == is_guided);
    CHECK((s.stages[0].image_binding == ImageBinding::each_image) == is_individual);
    CHECK((s.stages[0].image_binding == ImageBinding::all_images) == !is_individual);
    CHECK((s.stages[0].template_text.find("concise") != std::string::npos) == is_concise);
  }
  CHECK(guided == 4);
  CHECK(individual == 4);
  CHECK(concise == 4);
}

TEST_CASE("validate_strategy rejects forward references and reserved names") {
  Strategy s;
  s.name = "bad";
  s.final_template = "{{question}} {{options}}";
  Stage st;
  st.name = "one";
  st.template_text = "uses {{not_yet_produced}}";
  st.image_binding = ImageBinding::all_images;
  st.output_role = "x";
  s.stages = {st};
  CHECK_THROWS_AS(validate_strategy(s), TemplateError);

  s.stages[0].template_text = "fine";
  s.final_template = "{{question}} {{missing_role}}";
  CHECK_THROWS_AS(validate_strategy(s), TemplateError);

  s.final_template = "{{question}}";
  s.stages[0].output_role = "question";
  CHECK_THROWS_AS(validate_strategy(s), ConfigError);
}

TEST_CASE("validate_strategy rejects sub-question stages without a decomposition") {
  Strategy s;
  s.name = "bad";
  s.final_template = "{{question}}";
  Stage st;
  st.name = "loop";
  st.template_text = "{{subquestion}}";
  st.image_binding = ImageBinding::each_subquestion_with_all_images;
  st.output_role = "subanswers";
  s.stages = {st};
  CHECK_THROWS_AS(validate_strategy(s), ConfigError);
}

TEST_CASE("validate_strategy rejects numbered_list on fan-out stages") {
  Strategy s;
  s.name = "bad";
  s.final_template = "{{question}}";
  Stage st;
  st.name = "cap";
  st.template_text = "describe image {{image_index}}";
  st.image_binding = ImageBinding::each_image;
  st.output_role = "captions";
  st.parser = StageParser::numbered_list;
  s.stages = {st};
  CHECK_THROWS_AS(validate_strategy(s), ConfigError);
}

TEST_CASE("qg_coc with a two-item decomposition issues exactly six calls in order") {
  client::ScriptedClient sc(qg_coc_rules());
  auto inst = two_image_instance();
  auto result = run_strategy(build_builtin("qg_coc"), inst, scripted_routes(), {}, sc);

  CHECK(sc.calls() == 6);
  auto h = sc.history();
  REQUIRE(h.size() == 6);
  CHECK(h[0].find("Break the question down") != std::string::npos);
  CHECK(h[1].find("Caption the key visual information") != std::string::npos);
  CHECK(h[1].find("What is in the first image?") != std::string::npos);
  CHECK(h[2].find("What is in the second image?") != std::string::npos);
  CHECK(h[3].find("Answer the sub-question using the captions") != std::string::npos);
  CHECK(h[3].find("What is in the first image?") != std::string::npos);
  CHECK(h[4].find("What is in the second image?") != std::string::npos);
  CHECK(h[5].find("answer the original question") != std::string::npos);

  REQUIRE(result.transcripts.size() == 5);
  CHECK(result.transcripts[0].stage_name == "decompose");
  CHECK_FALSE(result.transcripts[0].iteration_index.has_value());
  CHECK(result.transcripts[1].stage_name == "caption");
  CHECK(result.transcripts[1].iteration_index == 0);
  CHECK(result.transcripts[2].iteration_index == 1);
  CHECK(result.transcripts[3].stage_name == "subanswer");
  CHECK(result.final_reply.text == "The answer is (B).");

  auto subqs = std::get<std::vector<std::string>>(result.context.at("subquestions"));
  CHECK(subqs == std::vector<std::string>{"What is in the first image?",
                                          "What is in the second image?"});
  CHECK(std::get<std::vector<std::string>>(result.context.at("captions")).size() == 2);
  CHECK(std::get<std::vector<std::string>>(result.context.at("subanswers")).size() == 2);
}

TEST_CASE("qg_coc final prompt interleaves sub-question and answer pairs") {
  client::ScriptedClient sc(qg_coc_rules());
  auto inst = two_image_instance();
  auto result = run_strategy(build_builtin("qg_coc"), inst, scripted_routes(), {}, sc);
  const std::string& fp = result.final_prompt;
  auto q1 = fp.find("Sub-question 1: What is in the first image?");
  auto a1 = fp.find("Answer 1: It is a small square.");
  auto q2 = fp.find("Sub-question 2: What is in the second image?");
  auto a2 = fp.find("Answer 2: It is a small square.");
  REQUIRE(q1 != std::string::npos);
  REQUIRE(a1 != std::string::npos);
  REQUIRE(q2 != std::string::npos);
  REQUIRE(a2 != std::string::npos);
  CHECK(q1 < a1);
  CHECK(a1 < q2);
  CHECK(q2 < a2);
  CHECK(fp.find(inst.question) != std::string::npos);
  CHECK(fp.find("(B) dog inst1") != std::string::npos);
}

TEST_CASE("direct issues a single call with no intermediate stages") {
  client::ScriptedClient sc({}, std::string("The answer is (A)."));
  auto inst = two_image_instance();
  auto result = run_strategy(build_builtin("direct"), inst, scripted_routes(), {}, sc);
  CHECK(sc.calls() == 1);
  CHECK(result.transcripts.empty());
  CHECK(result.final_reply.text == "The answer is (A).");
}

TEST_CASE("image fan-out: every stage call carries the right images") {
  CapturingClient cc([](const std::string& text) {
    if (text.find("Describe this image") != std::string::npos) return std::string("a caption");
    return std::string("The answer is (C).");
  });
  auto inst = testsup::make_instance("i3", "Counting", 3, 'C');
  auto routes = scripted_routes();

  // each_image: one call per image, exactly one image attached
  run_strategy(build_builtin("grid_detailed_individual_unguided"), inst, routes, {}, cc);
  REQUIRE(cc.requests.size() == 4);  // 3 captions + final
  CHECK(cc.images_in(0) == 1);
  CHECK(cc.images_in(1) == 1);
  CHECK(cc.images_in(2) == 1);
  CHECK(cc.images_in(3) == 3);  // final call carries all images

  // all_images: a single call carrying the whole set
  cc.requests.clear();
  run_strategy(build_builtin("grid_detailed_summarized_unguided"), inst, routes, {}, cc);
  REQUIRE(cc.requests.size() == 2);
  CHECK(cc.images_in(0) == 3);
  CHECK(cc.images_in(1) == 3);
}

TEST_CASE("each_image stages see a 1-based image index") {
  CapturingClient cc([](const std::string& text) {
    if (text.find("Describe this image") != std::string::npos) return std::string("cap");
    return std::string("The answer is (A).");
  });
  auto inst = testsup::make_instance("idx", "Counting", 3);
  run_strategy(build_builtin("grid_detailed_individual_unguided"), inst, scripted_routes(), {}, cc);
  CHECK(cc.requests[0].text_concat().find("image 1 of 3") != std::string::npos);
  CHECK(cc.requests[1].text_concat().find("image 2 of 3") != std::string::npos);
  CHECK(cc.requests[2].text_concat().find("image 3 of 3") != std::string::npos);
}

TEST_CASE("cocot refuses single-image instances before any model call") {
  client::ScriptedClient sc({}, std::string("never"));
  auto inst = testsup::make_instance("solo", "Scene", 1);
  CHECK_THROWS_AS(run_strategy(build_builtin("cocot"), inst, scripted_routes(), {}, sc),
                  ApplicabilityError);
  CHECK(sc.calls() == 0);
}

TEST_CASE("unparsable decomposition falls back to the original question and is flagged") {
  std::vector<client::ScriptedRule> rules = {
      {false, "Break the question down", "I cannot split this."},
      {false, "Answer the sub-question using the captions", "ans"},
      {false, "Caption the key visual information", "cap"},
      {false, "answer the original question", "The answer is (B)."},
  };
  client::ScriptedClient sc(rules);
  auto inst = two_image_instance();
  auto result = run_strategy(build_builtin("qg_coc"), inst, scripted_routes(), {}, sc);
  CHECK(sc.calls() == 4);  // decompose + 1 caption + 1 subanswer + final
  CHECK(result.transcripts[0].degenerate_fallback);
  auto subqs = std::get<std::vector<std::string>>(result.context.at("subquestions"));
  REQUIRE(subqs.size() == 1);
  CHECK(subqs[0] == inst.question);
}

TEST_CASE("decomposition is truncated to max_subquestions") {
  std::string many;
  for (int i = 1; i <= 9; ++i) many += std::to_string(i) + ". sub " + std::to_string(i) + "?\n";
  std::vector<client::ScriptedRule> rules = {
      {false, "Break the question down", many},
      {false, "Answer the sub-question using the captions", "ans"},
      {false, "Caption the key visual information", "cap"},
      {false, "answer the original question", "The answer is (B)."},
  };
  client::ScriptedClient sc(rules);
  auto inst = two_image_instance();
  auto result = run_strategy(build_builtin("qg_coc"), inst, scripted_routes(), {}, sc);
  auto subqs = std::get<std::vector<std::string>>(result.context.at("subquestions"));
  CHECK(subqs.size() == 5);
  CHECK(sc.calls() == 1 + 5 + 5 + 1);
}

TEST_CASE("pipelines are isolated: repeated runs give byte-identical results") {
  client::ScriptedClient sc(qg_coc_rules());
  auto inst = two_image_instance();
  auto a = run_strategy(build_builtin("qg_coc"), inst, scripted_routes(), {}, sc);
  auto b = run_strategy(build_builtin("qg_coc"), inst, scripted_routes(), {}, sc);
  CHECK(pipeline_to_json(a).dump() == pipeline_to_json(b).dump());
}

TEST_CASE("stage-one and answerer roles pick the configured route") {
  struct RouteTrackingClient : client::ModelClient {
    std::vector<std::string> route_names;
    client::ModelReply complete(const client::ModelRoute& route,
                                const client::ChatRequest&) override {
      route_names.push_back(route.name);
      client::ModelReply r;
      r.text = "The answer is (A).";
      return r;
    }
  } tracker;
  RouteSet routes;
  routes.answerer = client::ScriptedClient::route();
  routes.answerer.name = "final-route";
  routes.stage_one = client::ScriptedClient::route();
  routes.stage_one.name = "oracle-route";
  auto inst = two_image_instance();
  run_strategy(build_builtin("caption"), inst, routes, {}, tracker);
  REQUIRE(tracker.route_names.size() == 3);
  CHECK(tracker.route_names[0] == "oracle-route");
  CHECK(tracker.route_names[1] == "oracle-route");
  CHECK(tracker.route_names[2] == "final-route");
}

TEST_CASE("registry applies overrides and keeps unknown names fatal") {
  StrategyRegistry reg;
  CHECK(reg.names().size() == 16);
  CHECK(reg.get("qg_coc").stages.size() == 3);

  json overrides;
  overrides["direct"] = {
      {"stages", json::array()},
      {"final_template", "Custom: {{question}}\n{{options}}\nAnswer with a letter."}};
  overrides["my_probe"] = {
      {"stages",
       {{{"name", "probe"},
         {"template", "look: {{question}}"},
         {"image_binding", "all_images"},
         {"output_role", "notes"}}}},
      {"final_template", "{{question}} {{options}} {{notes}}"}};
  reg.apply_overrides(overrides);
  CHECK(reg.get("direct").final_template.starts_with("Custom:"));
  CHECK(reg.get("my_probe").stages.size() == 1);
  CHECK(reg.names().size() == 17);
  CHECK_THROWS_AS(reg.get("nope"), ConfigError);
}

TEST_CASE("template digests track template edits") {
  Strategy a = build_builtin("qg_coc");
  Strategy b = a;
  CHECK(template_digest(a) == template_digest(b));
  b.final_template += " ";
  CHECK(template_digest(a) != template_digest(b));
}

}  // TEST_SUITE
