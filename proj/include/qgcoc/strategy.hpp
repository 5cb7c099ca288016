#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "qgcoc/client.hpp"
#include "qgcoc/dataset.hpp"
#include "qgcoc/parse.hpp"
#include "qgcoc/strategy_defaults.hpp"
#include "qgcoc/util.hpp"

namespace qgcoc::strategy {

using json = nlohmann::json;

enum class ImageBinding { none, all_images, each_image, each_subquestion_with_all_images };
enum class RouteRole { answerer, stage_one };
enum class StageParser { raw_text, numbered_list };

// The role every each_subquestion_with_all_images stage iterates over, and
// the roles whose presence makes the derived {{qa_pairs}} value available.
inline constexpr const char* kSubquestionsRole = "subquestions";
inline constexpr const char* kSubanswersRole = "subanswers";
inline constexpr const char* kQaPairsRole = "qa_pairs";

struct Stage {
  std::string name;
  std::string template_text;
  ImageBinding image_binding = ImageBinding::none;
  RouteRole route_role = RouteRole::stage_one;
  std::string output_role;
  StageParser parser = StageParser::raw_text;
};

struct Strategy {
  std::string name;
  std::vector<Stage> stages;
  std::string final_template;
  int min_images = 0;
  int max_subquestions = 5;
};

using ContextValue = std::variant<std::string, std::vector<std::string>>;
using Context = std::map<std::string, ContextValue>;

struct StageTranscript {
  std::string stage_name;
  std::optional<int> iteration_index;  // absent for single-call stages
  std::string rendered_prompt;
  client::ModelReply reply;
  ContextValue parsed_output;
  bool degenerate_fallback = false;  // decomposition came back unparsable
};

struct PipelineResult {
  std::string instance_id;
  std::string strategy_name;
  std::vector<StageTranscript> transcripts;  // (stage order, iteration) order
  std::string final_prompt;
  client::ModelReply final_reply;
  Context context;
};

// ---- rendering ------------------------------------------------------------

inline std::string render_options(const std::vector<Option>& options) {
  std::string out;
  for (const Option& o : options) {
    if (!out.empty()) out += '\n';
    out += "(";
    out += o.letter;
    out += ") " + o.text;
  }
  return out;
}

inline std::string render_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!out.empty()) out += '\n';
    out += std::to_string(i + 1) + ". " + items[i];
  }
  return out;
}

struct RenderScope {
  const dataset::BenchmarkInstance* instance = nullptr;
  const Context* context = nullptr;
  std::optional<std::string> subquestion;
  std::optional<int> image_index;  // 1-based
};

namespace detail {

template <typename OnLiteral, typename OnPlaceholder>
void scan_template(const std::string& tmpl, OnLiteral&& literal, OnPlaceholder&& placeholder) {
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl.compare(i, 4, "{{{{") == 0) {
      literal("{{");
      i += 4;
      continue;
    }
    if (tmpl.compare(i, 2, "{{") == 0) {
      std::size_t close = tmpl.find("}}", i + 2);
      if (close == std::string::npos)
        throw TemplateError(tmpl.substr(i, 16), "unterminated placeholder");
      placeholder(trim(tmpl.substr(i + 2, close - i - 2)));
      i = close + 2;
      continue;
    }
    literal(std::string(1, tmpl[i]));
    ++i;
  }
}

}  // namespace detail

inline std::vector<std::string> template_placeholders(const std::string& tmpl) {
  std::vector<std::string> names;
  detail::scan_template(
      tmpl, [](const std::string&) {}, [&](const std::string& name) { names.push_back(name); });
  return names;
}

// Deterministic substitution; an unresolvable placeholder is an error naming
// the placeholder. "{{{{" renders as a literal "{{".
inline std::string render_template(const std::string& tmpl, const RenderScope& scope) {
  std::string out;
  detail::scan_template(
      tmpl, [&](const std::string& lit) { out += lit; },
      [&](const std::string& name) {
        if (name == "question") {
          if (!scope.instance) throw TemplateError(name, "no instance in scope");
          out += scope.instance->question;
        } else if (name == "options") {
          if (!scope.instance) throw TemplateError(name, "no instance in scope");
          out += render_options(scope.instance->options);
        } else if (name == "image_count") {
          if (!scope.instance) throw TemplateError(name, "no instance in scope");
          out += std::to_string(scope.instance->images.size());
        } else if (name == "subquestion") {
          if (!scope.subquestion)
            throw TemplateError(name, "only available in each_subquestion stages");
          out += *scope.subquestion;
        } else if (name == "image_index") {
          if (!scope.image_index) throw TemplateError(name, "only available in each_image stages");
          out += std::to_string(*scope.image_index);
        } else if (scope.context && scope.context->contains(name)) {
          const ContextValue& v = scope.context->at(name);
          if (std::holds_alternative<std::string>(v))
            out += std::get<std::string>(v);
          else
            out += render_list(std::get<std::vector<std::string>>(v));
        } else {
          throw TemplateError(name, "no value bound for placeholder");
        }
      });
  return out;
}

// ---- construction and validation -------------------------------------------

inline ImageBinding binding_from_string(const std::string& s) {
  if (s == "none") return ImageBinding::none;
  if (s == "all_images") return ImageBinding::all_images;
  if (s == "each_image") return ImageBinding::each_image;
  if (s == "each_subquestion_with_all_images") return ImageBinding::each_subquestion_with_all_images;
  throw ConfigError("image_binding", "unknown value '" + s + "'");
}

inline const char* to_string(ImageBinding b) {
  switch (b) {
    case ImageBinding::none: return "none";
    case ImageBinding::all_images: return "all_images";
    case ImageBinding::each_image: return "each_image";
    case ImageBinding::each_subquestion_with_all_images:
      return "each_subquestion_with_all_images";
  }
  return "none";
}

inline const char* to_string(RouteRole r) {
  return r == RouteRole::answerer ? "answerer" : "stage_one";
}

inline const char* to_string(StageParser p) {
  return p == StageParser::numbered_list ? "numbered_list" : "raw_text";
}

// Static checks: every placeholder a template references must be satisfiable
// by the time that template renders.
inline void validate_strategy(const Strategy& s) {
  if (s.name.empty()) throw ConfigError("strategy.name", "must be non-empty");
  if (s.min_images < 0) throw ConfigError(s.name + ".min_images", "must be >= 0");
  if (s.max_subquestions < 1) throw ConfigError(s.name + ".max_subquestions", "must be >= 1");

  const std::set<std::string> builtins = {"question", "options", "image_count"};
  std::set<std::string> produced;
  for (std::size_t i = 0; i < s.stages.size(); ++i) {
    const Stage& st = s.stages[i];
    std::string where = s.name + ".stages[" + std::to_string(i) + "]";
    if (st.name.empty()) throw ConfigError(where + ".name", "must be non-empty");
    if (st.output_role.empty()) throw ConfigError(where + ".output_role", "must be non-empty");
    if (builtins.contains(st.output_role) || st.output_role == kQaPairsRole ||
        st.output_role == "subquestion" || st.output_role == "image_index")
      throw ConfigError(where + ".output_role", "'" + st.output_role + "' is a reserved name");
    if (produced.contains(st.output_role))
      throw ConfigError(where + ".output_role", "'" + st.output_role + "' produced twice");
    if (st.parser == StageParser::numbered_list &&
        (st.image_binding == ImageBinding::each_image ||
         st.image_binding == ImageBinding::each_subquestion_with_all_images))
      throw ConfigError(where + ".parser",
                        "numbered_list is only valid on single-call stages (none/all_images)");
    if (st.image_binding == ImageBinding::each_subquestion_with_all_images &&
        !produced.contains(kSubquestionsRole))
      throw ConfigError(where + ".image_binding",
                        "each_subquestion stage needs an earlier stage producing 'subquestions'");

    for (const std::string& ph : template_placeholders(st.template_text)) {
      bool ok = builtins.contains(ph) || produced.contains(ph) ||
                (ph == "subquestion" &&
                 st.image_binding == ImageBinding::each_subquestion_with_all_images) ||
                (ph == "image_index" && st.image_binding == ImageBinding::each_image);
      if (!ok)
        throw TemplateError(ph, "not available in stage '" + st.name + "' of strategy '" +
                                    s.name + "'");
    }
    produced.insert(st.output_role);
  }

  bool qa_pairs_available =
      produced.contains(kSubquestionsRole) && produced.contains(kSubanswersRole);
  for (const std::string& ph : template_placeholders(s.final_template)) {
    bool ok = builtins.contains(ph) || produced.contains(ph) ||
              (ph == kQaPairsRole && qa_pairs_available);
    if (!ok)
      throw TemplateError(ph, "not available in the final template of strategy '" + s.name + "'");
  }
}

inline Strategy strategy_from_json(const std::string& name, const json& j) {
  Strategy s;
  s.name = name;
  if (!j.is_object()) throw ConfigError(name, "strategy definition must be an object");
  if (!j.contains("final_template") || !j["final_template"].is_string())
    throw ConfigError(name + ".final_template", "missing or non-string");
  s.final_template = j["final_template"].get<std::string>();
  s.min_images = j.value("min_images", 0);
  s.max_subquestions = j.value("max_subquestions", 5);
  for (const json& js : j.value("stages", json::array())) {
    Stage st;
    st.name = js.value("name", "");
    if (!js.contains("template") || !js["template"].is_string())
      throw ConfigError(name + ".stages." + st.name + ".template", "missing or non-string");
    st.template_text = js["template"].get<std::string>();
    st.image_binding = binding_from_string(js.value("image_binding", "none"));
    std::string role = js.value("route_role", "stage_one");
    if (role == "answerer") st.route_role = RouteRole::answerer;
    else if (role == "stage_one") st.route_role = RouteRole::stage_one;
    else throw ConfigError(name + ".stages." + st.name + ".route_role", "unknown value '" + role + "'");
    st.output_role = js.value("output_role", "");
    std::string parser = js.value("parser", "raw_text");
    if (parser == "raw_text") st.parser = StageParser::raw_text;
    else if (parser == "numbered_list") st.parser = StageParser::numbered_list;
    else throw ConfigError(name + ".stages." + st.name + ".parser", "unknown value '" + parser + "'");
    s.stages.push_back(std::move(st));
  }
  validate_strategy(s);
  return s;
}

inline json strategy_to_json(const Strategy& s) {
  json j;
  j["final_template"] = s.final_template;
  j["min_images"] = s.min_images;
  j["max_subquestions"] = s.max_subquestions;
  j["stages"] = json::array();
  for (const Stage& st : s.stages)
    j["stages"].push_back({{"name", st.name},
                           {"template", st.template_text},
                           {"image_binding", to_string(st.image_binding)},
                           {"route_role", to_string(st.route_role)},
                           {"output_role", st.output_role},
                           {"parser", to_string(st.parser)}});
  return j;
}

inline std::string template_digest(const Strategy& s) {
  return digest_hex(strategy_to_json(s).dump());
}

// ---- registry ---------------------------------------------------------------

inline const json& builtin_defaults_json() {
  static const json defaults = json::parse(kBuiltinStrategyData);
  return defaults;
}

inline const std::vector<std::string>& builtin_names() {
  static const std::vector<std::string> kNames = {"direct", "caption", "qg_caption", "ddcot",
                                                  "ccot",   "cocot",   "qg_coc",     "decompose_only"};
  return kNames;
}

inline const std::vector<std::string>& grid_names() {
  static const std::vector<std::string> kNames = {
      "grid_concise_summarized_unguided",  "grid_concise_summarized_guided",
      "grid_concise_individual_unguided",  "grid_concise_individual_guided",
      "grid_detailed_summarized_unguided", "grid_detailed_summarized_guided",
      "grid_detailed_individual_unguided", "grid_detailed_individual_guided"};
  return kNames;
}

inline Strategy build_builtin(const std::string& name) {
  const json& defaults = builtin_defaults_json();
  if (!defaults.contains(name)) {
    std::string known;
    for (const std::string& n : builtin_names()) known += n + " ";
    for (const std::string& n : grid_names()) known += n + " ";
    throw ConfigError("strategy", "unknown strategy '" + name + "'; valid names: " + known);
  }
  return strategy_from_json(name, defaults[name]);
}

// The eight captioning-grid cells: {concise|detailed} x {summarized|individual}
// x {unguided|guided}.
inline std::vector<Strategy> caption_grid() {
  std::vector<Strategy> out;
  for (const std::string& name : grid_names()) out.push_back(build_builtin(name));
  return out;
}

class StrategyRegistry {
 public:
  StrategyRegistry() {
    for (const std::string& n : builtin_names()) insert(build_builtin(n));
    for (const std::string& n : grid_names()) insert(build_builtin(n));
  }

  // Override file schema mirrors the built-in data: name -> definition.
  void apply_overrides(const json& overrides) {
    if (!overrides.is_object())
      throw ConfigError("template_overrides", "override document must be an object");
    for (auto& [name, def] : overrides.items()) {
      Strategy s = strategy_from_json(name, def);
      auto it = index_.find(name);
      if (it == index_.end()) {
        order_.push_back(name);
        index_[name] = std::move(s);
      } else {
        it->second = std::move(s);
      }
    }
  }

  const Strategy& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      std::string known;
      for (const std::string& n : order_) known += n + " ";
      throw ConfigError("strategy", "unknown strategy '" + name + "'; valid names: " + known);
    }
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }

 private:
  void insert(Strategy s) {
    order_.push_back(s.name);
    index_[s.name] = std::move(s);
  }
  std::vector<std::string> order_;
  std::map<std::string, Strategy> index_;
};

// ---- execution -----------------------------------------------------------------

struct RouteSet {
  client::ModelRoute answerer;
  client::ModelRoute stage_one;

  const client::ModelRoute& for_role(RouteRole r) const {
    return r == RouteRole::answerer ? answerer : stage_one;
  }
};

namespace detail {

inline std::string render_qa_pairs(const std::vector<std::string>& questions,
                                   const std::vector<std::string>& answers) {
  std::string out;
  std::size_t n = std::min(questions.size(), answers.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (!out.empty()) out += '\n';
    out += "Sub-question " + std::to_string(i + 1) + ": " + questions[i] + "\n";
    out += "Answer " + std::to_string(i + 1) + ": " + answers[i];
  }
  return out;
}

}  // namespace detail

// Runs every stage in order, then the final integration call. Stages bound
// each_image/each_subquestion fan out into one call per element; their
// outputs are collected as ordered lists under the stage's output_role. The
// final call always attaches all of the instance's images.
inline PipelineResult run_strategy(const Strategy& strat, const dataset::BenchmarkInstance& inst,
                                   const RouteSet& routes, const client::GenerationParams& params,
                                   client::ModelClient& model) {
  if (static_cast<int>(inst.images.size()) < strat.min_images)
    throw ApplicabilityError(strat.name, strat.min_images, static_cast<int>(inst.images.size()));

  std::vector<client::ContentPart> image_parts;
  for (const dataset::ImageRef& ref : inst.images) {
    dataset::ResolvedImage img = dataset::resolve_image(ref);
    image_parts.push_back(
        client::ContentPart::make_image(base64_encode(img.bytes), img.media_type));
  }

  PipelineResult result;
  result.instance_id = inst.id;
  result.strategy_name = strat.name;
  Context& ctx = result.context;

  auto call_model = [&](const std::string& prompt, RouteRole role,
                        const std::vector<client::ContentPart>& images) {
    client::ChatRequest req;
    req.params = params;
    client::Message msg;
    msg.role = client::Role::user;
    msg.parts.push_back(client::ContentPart::make_text(prompt));
    for (const client::ContentPart& p : images) msg.parts.push_back(p);
    req.messages.push_back(std::move(msg));
    return model.complete(routes.for_role(role), req);
  };

  for (const Stage& stage : strat.stages) {
    RenderScope scope{&inst, &ctx, std::nullopt, std::nullopt};
    switch (stage.image_binding) {
      case ImageBinding::none:
      case ImageBinding::all_images: {
        std::string prompt = render_template(stage.template_text, scope);
        const std::vector<client::ContentPart> none;
        client::ModelReply reply = call_model(
            prompt, stage.route_role,
            stage.image_binding == ImageBinding::all_images ? image_parts : none);
        StageTranscript t{stage.name, std::nullopt, prompt, reply, std::string(), false};
        if (stage.parser == StageParser::numbered_list) {
          std::vector<std::string> items = parse::parse_numbered_list(
              reply.text, static_cast<std::size_t>(strat.max_subquestions));
          if (items.empty()) {
            items = {inst.question};  // degenerate decomposition: fall back to the question
            t.degenerate_fallback = true;
          }
          t.parsed_output = items;
          ctx[stage.output_role] = std::move(items);
        } else {
          std::string text = trim(reply.text);
          t.parsed_output = text;
          ctx[stage.output_role] = std::move(text);
        }
        result.transcripts.push_back(std::move(t));
        break;
      }
      case ImageBinding::each_image: {
        std::vector<std::string> outputs;
        for (std::size_t i = 0; i < image_parts.size(); ++i) {
          scope.image_index = static_cast<int>(i + 1);
          std::string prompt = render_template(stage.template_text, scope);
          client::ModelReply reply =
              call_model(prompt, stage.route_role, {image_parts[i]});
          std::string text = trim(reply.text);
          result.transcripts.push_back(
              {stage.name, static_cast<int>(i), prompt, reply, text, false});
          outputs.push_back(std::move(text));
        }
        ctx[stage.output_role] = std::move(outputs);
        break;
      }
      case ImageBinding::each_subquestion_with_all_images: {
        auto it = ctx.find(kSubquestionsRole);
        if (it == ctx.end() || !std::holds_alternative<std::vector<std::string>>(it->second))
          throw TemplateError(kSubquestionsRole,
                              "stage '" + stage.name + "' has no sub-questions to iterate");
        std::vector<std::string> subqs = std::get<std::vector<std::string>>(it->second);
        std::vector<std::string> outputs;
        for (std::size_t i = 0; i < subqs.size(); ++i) {
          scope.subquestion = subqs[i];
          std::string prompt = render_template(stage.template_text, scope);
          client::ModelReply reply = call_model(prompt, stage.route_role, image_parts);
          std::string text = trim(reply.text);
          result.transcripts.push_back(
              {stage.name, static_cast<int>(i), prompt, reply, text, false});
          outputs.push_back(std::move(text));
        }
        ctx[stage.output_role] = std::move(outputs);
        break;
      }
    }
  }

  if (ctx.contains(kSubquestionsRole) && ctx.contains(kSubanswersRole) &&
      !ctx.contains(kQaPairsRole)) {
    ctx[kQaPairsRole] = detail::render_qa_pairs(
        std::get<std::vector<std::string>>(ctx.at(kSubquestionsRole)),
        std::get<std::vector<std::string>>(ctx.at(kSubanswersRole)));
  }

  RenderScope final_scope{&inst, &ctx, std::nullopt, std::nullopt};
  result.final_prompt = render_template(strat.final_template, final_scope);
  result.final_reply = call_model(result.final_prompt, RouteRole::answerer, image_parts);
  return result;
}

// ---- transcript serialization ------------------------------------------------

inline json reply_to_json(const client::ModelReply& r) {
  return {{"text", r.text},
          {"prompt_tokens", r.prompt_tokens},
          {"completion_tokens", r.completion_tokens},
          {"latency_ms", r.latency_ms},
          {"attempts", r.attempts},
          {"from_cache", r.from_cache}};
}

inline json context_value_to_json(const ContextValue& v) {
  if (std::holds_alternative<std::string>(v)) return std::get<std::string>(v);
  return std::get<std::vector<std::string>>(v);
}

inline json pipeline_to_json(const PipelineResult& p) {
  json j;
  j["instance_id"] = p.instance_id;
  j["strategy"] = p.strategy_name;
  j["transcripts"] = json::array();
  for (const StageTranscript& t : p.transcripts) {
    json jt;
    jt["stage"] = t.stage_name;
    if (t.iteration_index) jt["iteration"] = *t.iteration_index;
    jt["prompt"] = t.rendered_prompt;
    jt["reply"] = reply_to_json(t.reply);
    jt["parsed_output"] = context_value_to_json(t.parsed_output);
    jt["degenerate_fallback"] = t.degenerate_fallback;
    j["transcripts"].push_back(std::move(jt));
  }
  j["final_prompt"] = p.final_prompt;
  j["final_reply"] = reply_to_json(p.final_reply);
  json ctx;
  for (const auto& [k, v] : p.context) ctx[k] = context_value_to_json(v);
  j["context"] = std::move(ctx);
  return j;
}

}  // namespace qgcoc::strategy
