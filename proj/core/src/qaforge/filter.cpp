#include "radvqa/qaforge/filter.hpp"

#include <nlohmann/json.hpp>

#include <set>

#include "radvqa/common/error.hpp"
#include "radvqa/common/text.hpp"

namespace radvqa::qaforge {

std::vector<std::string> FilterRules::default_stopwords() {
  return {"a",    "an",   "the",  "of",   "in",    "on",   "at",   "to",   "is",    "are",  "was",
          "were", "be",   "this", "that", "these", "what", "which", "who", "where", "when", "how",
          "does", "do",   "did",  "and",  "or",    "with", "for",  "from", "by",    "as",   "it",
          "its",  "there", "any", "image", "shown", "seen", "show", "shows", "can", "you"};
}

FilterRules FilterRules::load(const std::string& path) {
  const auto j = nlohmann::json::parse(text::read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError("bad_filter_rules", path + " is not a JSON object");
  return from_json(j);
}

FilterRules FilterRules::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("bad_filter_rules", "filter rules must be an object");
  static const std::set<std::string> kKnown{"min_answer_tokens", "max_answer_tokens", "banned_phrases",
                                            "min_caption_overlap", "stopwords"};
  for (const auto& [key, value] : j.items()) {
    if (!kKnown.count(key)) throw ConfigError("unknown_key", "unknown filter rule '" + key + "'");
  }
  FilterRules r;
  try {
    r.min_answer_tokens = j.value("min_answer_tokens", r.min_answer_tokens);
    r.max_answer_tokens = j.value("max_answer_tokens", r.max_answer_tokens);
    r.banned_phrases = j.value("banned_phrases", r.banned_phrases);
    r.min_caption_overlap = j.value("min_caption_overlap", r.min_caption_overlap);
    r.stopwords = j.value("stopwords", r.stopwords);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad_filter_rules", e.what());
  }
  return r;
}

int caption_overlap(std::string_view question, std::string_view caption, const std::vector<std::string>& stopwords) {
  const std::set<std::string> stop(stopwords.begin(), stopwords.end());
  std::set<std::string> caption_words;
  for (auto& w : text::words(caption)) {
    if (!stop.count(w)) caption_words.insert(std::move(w));
  }
  std::set<std::string> shared;
  for (auto& w : text::words(question)) {
    if (caption_words.count(w)) shared.insert(std::move(w));
  }
  return static_cast<int>(shared.size());
}

FilterResult filter_noisy(const std::vector<QAPair>& pairs, const FilterRules& rules, std::string_view caption) {
  FilterResult out;
  for (const auto& p : pairs) {
    const std::string haystack = text::to_lower_ascii(p.question + "\n" + p.answer);
    const char* rule = nullptr;
    for (const auto& phrase : rules.banned_phrases) {
      if (!phrase.empty() && haystack.find(text::to_lower_ascii(phrase)) != std::string::npos) {
        rule = kRuleBannedPhrase;
        break;
      }
    }
    const auto answer_tokens = static_cast<int>(text::split_ws(p.answer).size());
    if (!rule && answer_tokens < rules.min_answer_tokens) rule = kRuleTooShort;
    if (!rule && answer_tokens > rules.max_answer_tokens) rule = kRuleTooLong;
    if (!rule && caption_overlap(p.question, caption, rules.stopwords) < rules.min_caption_overlap) {
      rule = kRuleLowOverlap;
    }
    if (rule) {
      out.rejected.push_back({p, rule});
    } else {
      out.kept.push_back(p);
    }
  }
  return out;
}

}  // namespace radvqa::qaforge
