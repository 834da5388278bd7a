#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "radvqa/qaforge/qa_format.hpp"

namespace radvqa::qaforge {

struct FilterRules {
  int min_answer_tokens = 1;
  int max_answer_tokens = 48;
  /// Case-insensitive substrings marking hedging or hallucinated output.
  std::vector<std::string> banned_phrases;
  /// Minimum number of content words the question must share with the caption.
  int min_caption_overlap = 1;
  std::vector<std::string> stopwords = default_stopwords();

  static std::vector<std::string> default_stopwords();
  static FilterRules load(const std::string& path);
  static FilterRules from_json(const nlohmann::json& j);
};

/// Rule ids, checked in this order; a rejection carries the first that fires.
inline constexpr const char* kRuleBannedPhrase = "banned_phrase";
inline constexpr const char* kRuleTooShort = "too_short";
inline constexpr const char* kRuleTooLong = "too_long";
inline constexpr const char* kRuleLowOverlap = "low_overlap";

struct FilterRejection {
  QAPair pair;
  std::string rule_id;
};

struct FilterResult {
  std::vector<QAPair> kept;
  std::vector<FilterRejection> rejected;
};

/// Count of content words shared between question and caption.
int caption_overlap(std::string_view question, std::string_view caption, const std::vector<std::string>& stopwords);

/// Partitions `pairs` into kept and rejected; kept + rejected == input.
FilterResult filter_noisy(const std::vector<QAPair>& pairs, const FilterRules& rules, std::string_view caption);

}  // namespace radvqa::qaforge
