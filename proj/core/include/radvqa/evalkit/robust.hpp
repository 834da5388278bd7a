#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace radvqa::evalkit {

inline constexpr std::size_t kGenerationsPerItem = 5;

/// Answer equality key: MCQ letters ("B", "(b)", "B) text") are mapped to
/// option text when options are given, then the text is lowercased with
/// punctuation and the articles a/an/the removed.
std::string normalize_answer(std::string_view answer, const std::optional<std::vector<std::string>>& options = std::nullopt);

struct GenerationSet {
  std::string item_id;
  std::string gold;
  std::vector<std::string> generations;
  std::vector<std::uint64_t> seeds;
  std::optional<std::vector<std::string>> options;
};

struct ModalAnswer {
  std::string answer;  // normalized; ties go to the lexicographically smallest
  std::size_t count = 0;
};

ModalAnswer modal_answer(const GenerationSet& set);

struct InstanceOutcome {
  std::string item_id;
  std::string modal_answer;
  std::size_t modal_count = 0;
  bool robust = false;
  bool modal_correct = false;
  int credit = 0;
};

struct RobustResult {
  double accuracy = 0.0;
  std::size_t n_penalized = 0;  // non-robust instances whose modal answer was right
  std::size_t n_nonrobust = 0;
  std::vector<InstanceOutcome> instances;
};

/// An instance is non-robust when its modal answer appears at most twice in
/// five generations. Credit is 1 only for a robust, correct modal answer.
/// Throws DataError("bad_generation_count") unless every set has 5 generations.
RobustResult robust_mcq_accuracy(const std::vector<GenerationSet>& sets);

}  // namespace radvqa::evalkit
