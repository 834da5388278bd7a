#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace radvqa::evalkit {

/// Metric tokenization: lowercase, split on Unicode whitespace, strip
/// punctuation from each token, drop tokens that end up empty.
std::vector<std::string> metric_tokens(std::string_view text);

enum class BleuSmoothing {
  none,         // any zero n-gram precision makes the score 0
  add_epsilon,  // zero numerators replaced by 0.1
  add_one,      // +1 to numerator and denominator for n > 1
};

std::string_view to_string(BleuSmoothing s);

struct BleuOptions {
  int max_n = 4;
  BleuSmoothing smoothing = BleuSmoothing::none;
};

struct BleuResult {
  double score = 0.0;
  std::vector<double> precisions;  // per order actually used
  double brevity_penalty = 0.0;
  /// min(max_n, candidate length): orders the candidate cannot contain are
  /// left out of the geometric mean, so short identical strings score 1.
  int effective_order = 0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
  BleuSmoothing smoothing = BleuSmoothing::none;
};

/// Sentence BLEU with clipped n-gram counts and the closest-reference-length
/// brevity penalty. Throws ConfigError for an empty reference list.
BleuResult bleu(std::string_view candidate, const std::vector<std::string>& references, const BleuOptions& options = {});

enum class RougeKind { N, L, S };

struct RougeVariant {
  RougeKind kind = RougeKind::L;
  int n = 1;       // for N
  int window = 4;  // for S: maximum distance between the two words of a skip-bigram

  static RougeVariant ngram(int n) { return {RougeKind::N, n, 0}; }
  static RougeVariant lcs() { return {RougeKind::L, 0, 0}; }
  static RougeVariant skip(int window) { return {RougeKind::S, 0, window}; }
  /// The tables' "ROUGE-M" has no standard definition; it is reported as
  /// ROUGE-N with this n and flagged.
  static RougeVariant m(int n = 2) { return {RougeKind::N, n, 0}; }

  std::string name() const;
};

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<std::string> flags;  // empty_inputs, insufficient_length
};

RougeScore rouge(std::string_view candidate, std::string_view reference, const RougeVariant& variant);

}  // namespace radvqa::evalkit
