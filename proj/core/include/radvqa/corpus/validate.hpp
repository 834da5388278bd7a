#pragma once

#include <string>
#include <vector>

#include "radvqa/corpus/types.hpp"

namespace radvqa::corpus {

struct Finding {
  std::string record_id;
  std::string kind;  // e.g. duplicate_id, answer_not_in_options
  std::string message;
};

struct ValidationReport {
  bool pass = true;
  std::vector<Finding> findings;
};

/// Per-record invariant checks shared with ingest.
std::vector<Finding> check_record(const QARecord& r);

/// Checks every record and manifest-level invariant; never throws.
ValidationReport validate(const DatasetManifest& manifest);

}  // namespace radvqa::corpus
