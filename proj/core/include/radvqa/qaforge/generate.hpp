#pragma once

#include <map>
#include <string>
#include <vector>

#include "radvqa/corpus/types.hpp"
#include "radvqa/qaforge/client.hpp"
#include "radvqa/qaforge/filter.hpp"
#include "radvqa/qaforge/template.hpp"

namespace radvqa::qaforge {

struct GenerateOptions {
  SamplingParams sampling;
  FilterRules rules;
  /// Pairs kept per caption: open-ended first, then closed (short or mcq).
  int open_per_caption = 2;
  int closed_per_caption = 1;
  /// Upper bound on in-flight client calls.
  int concurrency = 1;
  /// Extra attempts after a ClientError before the run is aborted.
  int max_retries = 2;
};

struct SkipEntry {
  std::string record_id;
  std::string reason;  // no_pairs_parsed, all_filtered
  std::string detail;
};

struct GenerateResult {
  corpus::DatasetManifest manifest;
  std::vector<SkipEntry> skips;
  std::size_t parsed_pairs = 0;
  std::size_t parse_rejects = 0;
  std::size_t kept_pairs = 0;
  std::map<std::string, std::size_t> rejected_by_rule;
};

/// Synthesizes QA records from a caption manifest. Output order follows the
/// input order regardless of client completion order. A client failure that
/// survives retries raises ClientError naming the caption record.
GenerateResult generate_dataset(const corpus::DatasetManifest& captions, TextGenClient& client,
                                const PromptTemplate& tmpl, const GenerateOptions& options);

}  // namespace radvqa::qaforge
