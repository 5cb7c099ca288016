#pragma once

#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qgcoc/util.hpp"

namespace qgcoc::parse {

// Constants pinned by the extraction cascade. They are surfaced into run
// metadata so downstream reports can state exactly which values were active.
struct ExtractorConstants {
  int trigger_window = 12;  // chars after a trigger phrase scanned for a letter
  int tail_chars = 200;     // tail length scanned for option-text matches
};

inline constexpr ExtractorConstants kExtractor{};

enum class ExtractRule { explicit_pattern, lone_letter, option_text_match, none };

inline const char* to_string(ExtractRule r) {
  switch (r) {
    case ExtractRule::explicit_pattern: return "explicit_pattern";
    case ExtractRule::lone_letter: return "lone_letter";
    case ExtractRule::option_text_match: return "option_text_match";
    case ExtractRule::none: return "none";
  }
  return "none";
}

struct ChoiceExtraction {
  std::optional<char> letter;  // always one of the instance's option letters
  ExtractRule rule_fired = ExtractRule::none;
  std::string evidence;  // matched span, empty when rule_fired == none
};

// Pulls "N. item" / "N) item" lines out of free-form text. When no numbered
// line exists, falls back to non-empty lines ending in '?'. Duplicates
// (case-insensitive) are dropped keeping the first, then the list is cut to
// max_items.
inline std::vector<std::string> parse_numbered_list(std::string_view text, std::size_t max_items) {
  std::vector<std::string> captured;
  for (const std::string& line : split_lines(text)) {
    std::size_t i = 0;
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t d = i;
    while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
    if (d == i || d >= line.size()) continue;
    if (line[d] != '.' && line[d] != ')') continue;
    std::size_t s = d + 1;
    if (s >= line.size() || !std::isspace(static_cast<unsigned char>(line[s]))) continue;
    while (s < line.size() && std::isspace(static_cast<unsigned char>(line[s]))) ++s;
    std::string item = rtrim(std::string_view(line).substr(s));
    if (!item.empty()) captured.push_back(std::move(item));
  }
  if (captured.empty()) {
    for (const std::string& line : split_lines(text)) {
      std::string t = trim(line);
      if (!t.empty() && t.back() == '?') captured.push_back(std::move(t));
    }
  }
  std::vector<std::string> out;
  std::vector<std::string> seen;
  for (std::string& item : captured) {
    std::string key = to_lower(item);
    bool dup = false;
    for (const std::string& k : seen)
      if (k == key) { dup = true; break; }
    if (dup) continue;
    seen.push_back(std::move(key));
    out.push_back(std::move(item));
    if (out.size() == max_items) break;
  }
  return out;
}

namespace detail {

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

inline bool valid_letter(char c, const std::vector<Option>& options) {
  for (const Option& o : options)
    if (o.letter == c) return true;
  return false;
}

struct LetterHit {
  std::size_t begin = 0;  // index of the letter (or '(' for parenthesized)
  std::size_t end = 0;    // one past the match
  char letter = 0;
};

// Finds isolated option letters in text[from, to). A bare letter must be
// uppercase with non-word neighbors ("a"/"b" as words are too common to be
// safe); a parenthesized letter may be either case.
inline std::vector<LetterHit> find_letters(std::string_view text, std::size_t from, std::size_t to,
                                           const std::vector<Option>& options) {
  std::vector<LetterHit> hits;
  for (std::size_t i = from; i < to && i < text.size(); ++i) {
    char c = text[i];
    if (c == '(' && i + 2 < text.size() && i + 2 < to && text[i + 2] == ')') {
      char up = static_cast<char>(std::toupper(static_cast<unsigned char>(text[i + 1])));
      if (std::isalpha(static_cast<unsigned char>(text[i + 1])) && valid_letter(up, options)) {
        hits.push_back({i, i + 3, up});
        i += 2;
        continue;
      }
    }
    if (c >= 'A' && c <= 'Z' && valid_letter(c, options)) {
      bool left_ok = i == 0 || !is_word_char(text[i - 1]);
      bool right_ok = i + 1 >= text.size() || !is_word_char(text[i + 1]);
      if (left_ok && right_ok) hits.push_back({i, i + 1, c});
    }
  }
  return hits;
}

}  // namespace detail

// Deterministic answer-letter extraction. Rules are tried in a fixed order
// and the first hit wins:
//   1. explicit_pattern: last "answer is"/"answer:"/"option"/"choose"
//      (case-insensitive) followed within kExtractor.trigger_window chars by
//      "(X)" or an isolated uppercase X.
//   2. lone_letter: exactly one distinct isolated letter on the final
//      non-empty line.
//   3. option_text_match: exactly one option's full text occurs in the final
//      kExtractor.tail_chars characters.
//   4. none.
inline ChoiceExtraction extract_choice(std::string_view text, const std::vector<Option>& options) {
  using detail::LetterHit;

  // Rule 1: explicit pattern, last complete occurrence wins.
  {
    static constexpr std::string_view triggers[] = {"answer is", "answer:", "option", "choose"};
    std::string lower = to_lower(text);
    std::optional<std::size_t> best_pos;
    ChoiceExtraction best;
    for (std::string_view trig : triggers) {
      std::size_t pos = 0;
      while ((pos = lower.find(trig, pos)) != std::string::npos) {
        std::size_t wstart = pos + trig.size();
        std::size_t wend = wstart + static_cast<std::size_t>(kExtractor.trigger_window);
        auto hits = detail::find_letters(text, wstart, wend, options);
        if (!hits.empty()) {
          const LetterHit& h = hits.front();
          if (!best_pos || pos > *best_pos) {
            best_pos = pos;
            best.letter = h.letter;
            best.rule_fired = ExtractRule::explicit_pattern;
            best.evidence = std::string(text.substr(pos, h.end - pos));
          }
        }
        ++pos;
      }
    }
    if (best_pos) return best;
  }

  // Rule 2: lone letter on the final non-empty line.
  {
    std::vector<std::string> lines = split_lines(text);
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
      std::string line = trim(*it);
      if (line.empty()) continue;
      auto hits = detail::find_letters(line, 0, line.size(), options);
      std::vector<char> distinct;
      for (const LetterHit& h : hits)
        if (std::find(distinct.begin(), distinct.end(), h.letter) == distinct.end())
          distinct.push_back(h.letter);
      if (distinct.size() == 1) {
        const LetterHit& h = hits.back();
        return {distinct[0], ExtractRule::lone_letter,
                std::string(line.substr(h.begin, h.end - h.begin))};
      }
      break;  // only the final non-empty line is considered
    }
  }

  // Rule 3: exactly one option's text in the tail.
  {
    std::size_t tail_len = std::min<std::size_t>(text.size(), kExtractor.tail_chars);
    std::string tail = to_lower(text.substr(text.size() - tail_len));
    std::optional<char> found;
    std::string evidence;
    int matches = 0;
    for (const Option& o : options) {
      if (o.text.empty()) continue;
      if (tail.find(to_lower(o.text)) != std::string::npos) {
        ++matches;
        found = o.letter;
        evidence = o.text;
      }
    }
    if (matches == 1) return {found, ExtractRule::option_text_match, evidence};
  }

  return {std::nullopt, ExtractRule::none, ""};
}

}  // namespace qgcoc::parse
