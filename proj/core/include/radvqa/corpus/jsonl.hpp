#pragma once

#include <nlohmann/json.hpp>

#include <string>

#include "radvqa/corpus/types.hpp"

namespace radvqa::corpus {

/// Field order follows the published JSONL schema:
/// {"id","image":{"id"?,"path","width","height","modality","organ"},"kind",
///  "question","answer","options"?,"source","quality_tier"}.
/// Absent optional fields are omitted, never null.
nlohmann::ordered_json record_to_json(const QARecord& r);

/// Strict structural parse; throws DataError (codes: bad_json, missing_field,
/// bad_type, bad_enum) on the first problem. Invariants are not checked here.
QARecord record_from_json(const nlohmann::json& j);

std::string serialize_record(const QARecord& r);
std::string serialize_records(const DatasetManifest& m);

/// Writes `<path>` (JSONL) and `<stem>.meta.json` (name + provenance).
/// Image paths are rewritten relative to the output directory.
void write_manifest(const DatasetManifest& m, const std::string& path);

/// Reads a manifest previously written by write_manifest. Any malformed line
/// is an error (quarantining happens only during ingest).
DatasetManifest read_manifest(const std::string& path);

std::string meta_path_for(const std::string& manifest_path);

}  // namespace radvqa::corpus
