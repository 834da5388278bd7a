#pragma once

#include <string>
#include <vector>

#include "radvqa/corpus/types.hpp"

namespace radvqa::corpus {

enum class Adapter { caption_pairs, qa_pairs, mcq_pairs };

std::string_view to_string(Adapter a);
Adapter parse_adapter(std::string_view s);

/// Name of the index file every ingestible directory must contain.
inline constexpr const char* kIndexFile = "index.jsonl";

struct RejectedLine {
  std::size_t line = 0;   // 1-based
  std::string record_id;  // empty when the id itself was unreadable
  std::string code;
  std::string message;
  std::string raw;
};

struct IngestResult {
  DatasetManifest manifest;
  std::vector<RejectedLine> rejects;
};

/// Reads `<dir>/index.jsonl`. Each line becomes one validated record or one
/// entry in `rejects`; nothing is dropped silently. Throws DataError
/// (code "missing_index") when the index file is absent.
IngestResult ingest(const std::string& dir, Adapter adapter);

/// Quarantine sidecar: one JSON object per rejected line.
std::string serialize_rejects(const std::vector<RejectedLine>& rejects);

}  // namespace radvqa::corpus
