#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "radvqa/qaforge/client.hpp"
#include "radvqa/qaforge/template.hpp"

namespace radvqa::evalkit {

enum class Verdict { correct, incorrect };

std::string_view to_string(Verdict v);
Verdict parse_verdict_name(std::string_view s);

struct JudgeItem {
  std::string item_id;
  std::string question;
  std::string gold;
  std::string generated;
};

struct JudgeVerdict {
  std::string item_id;
  Verdict verdict = Verdict::incorrect;
  std::string rationale;
  std::string prompt_hash;
  std::string reason;  // "unparseable" when the judge never produced a verdict line

  bool operator==(const JudgeVerdict&) const = default;
};

nlohmann::ordered_json to_json(const JudgeVerdict& v);
JudgeVerdict verdict_from_json(const nlohmann::json& j);
std::string serialize_verdicts(const std::vector<JudgeVerdict>& verdicts);

struct ParsedResponse {
  Verdict verdict;
  std::string rationale;
};

/// Looks for a line "VERDICT: correct|incorrect" (case-insensitive); the
/// rationale is the text of a "RATIONALE:" line, or empty.
std::optional<ParsedResponse> parse_judge_response(std::string_view response);

/// Prompt-hash keyed verdict cache, safe for concurrent use.
class VerdictCache {
 public:
  std::optional<JudgeVerdict> get(const std::string& prompt_hash) const;
  void put(const JudgeVerdict& v);
  std::size_t size() const;

  /// Merges a JSONL cache file; a missing file is treated as empty.
  void load(const std::string& path);
  void save(const std::string& path) const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, JudgeVerdict> entries_;
};

struct JudgeOptions {
  qaforge::SamplingParams sampling{0.0, 256, 0};
  std::size_t concurrency = 1;
  int max_client_retries = 2;
  VerdictCache* cache = nullptr;
};

/// Checks that the template declares {question}, {gold} and {generated}.
void check_judge_template(const qaforge::PromptTemplate& tmpl);

std::string render_judge_prompt(const qaforge::PromptTemplate& tmpl, const JudgeItem& item);

/// One verdict per item, in input order. An unparseable response is retried
/// once with the next seed and then recorded as incorrect/unparseable.
/// Client errors are retried up to max_client_retries times, then rethrown.
std::vector<JudgeVerdict> judge_open(const std::vector<JudgeItem>& items, qaforge::TextGenClient& client,
                                     const qaforge::PromptTemplate& tmpl, const JudgeOptions& options = {});

/// Test double: recovers gold and generated text from the prompt and answers
/// "correct" iff they are equal after answer normalization.
class EchoJudgeClient : public qaforge::TextGenClient {
 public:
  explicit EchoJudgeClient(qaforge::PromptTemplate tmpl) : tmpl_(std::move(tmpl)) {}

  std::string generate(const std::string& prompt, const qaforge::SamplingParams& sampling) override;
  std::string identity() const override { return "echo-judge"; }

 private:
  qaforge::PromptTemplate tmpl_;
};

}  // namespace radvqa::evalkit
