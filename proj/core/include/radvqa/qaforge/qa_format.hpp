#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "radvqa/corpus/types.hpp"

namespace radvqa::qaforge {

struct QAPair {
  std::string question;
  std::string answer;
  corpus::RecordKind kind = corpus::RecordKind::open;
  std::optional<std::vector<std::string>> options;

  bool operator==(const QAPair&) const = default;
};

struct ParseReject {
  std::string segment;
  std::string reason;  // no_question, truncated, empty_question, bad_options, bad_type, duplicate_field
};

struct ParseResult {
  std::vector<QAPair> pairs;
  std::vector<ParseReject> rejects;
};

/// Generation output format. Blocks are separated by blank lines:
///
///   Q: <question>
///   A: <answer>
///   Options: <a> | <b> | <c> | <d>     (optional; makes the pair mcq)
///   Type: open|short|closed|mcq        (optional)
///
/// "Q: ... A: ..." on one line is accepted. Without a Type line the kind is
/// inferred: options -> mcq, yes/no answer -> short, otherwise open.
/// Total: never throws; unparseable blocks come back as rejects.
ParseResult parse_qa(std::string_view text);

/// Emits pairs in the format above with an explicit Type line, so that
/// parse_qa(format_qa(p)).pairs == p for well-formed pairs.
std::string format_qa(const std::vector<QAPair>& pairs);

}  // namespace radvqa::qaforge
