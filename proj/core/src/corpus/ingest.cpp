#include "radvqa/corpus/ingest.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <set>
#include <sstream>

#include "radvqa/common/error.hpp"
#include "radvqa/common/text.hpp"
#include "radvqa/corpus/jsonl.hpp"
#include "radvqa/corpus/validate.hpp"

namespace radvqa::corpus {
namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Adapter a) {
  switch (a) {
    case Adapter::caption_pairs: return "caption_pairs";
    case Adapter::qa_pairs: return "qa_pairs";
    case Adapter::mcq_pairs: return "mcq_pairs";
  }
  return "?";
}

Adapter parse_adapter(std::string_view s) {
  if (s == "caption_pairs") return Adapter::caption_pairs;
  if (s == "qa_pairs") return Adapter::qa_pairs;
  if (s == "mcq_pairs") return Adapter::mcq_pairs;
  throw ConfigError("bad_adapter", "unknown adapter '" + std::string(s) + "'");
}

namespace {

// Adapter-level acceptance on top of the generic record invariants.
void check_adapter(Adapter adapter, const QARecord& r) {
  switch (adapter) {
    case Adapter::caption_pairs:
      if (r.kind != RecordKind::caption) {
        throw DataError("wrong_kind", "caption_pairs accepts kind=caption only, got " + std::string(to_string(r.kind)));
      }
      break;
    case Adapter::qa_pairs:
      if (r.kind == RecordKind::caption) throw DataError("wrong_kind", "qa_pairs does not accept caption records");
      break;
    case Adapter::mcq_pairs:
      if (r.kind != RecordKind::mcq) {
        throw DataError("wrong_kind", "mcq_pairs accepts kind=mcq only, got " + std::string(to_string(r.kind)));
      }
      break;
  }
}

}  // namespace

IngestResult ingest(const std::string& dir, Adapter adapter) {
  const fs::path index = fs::path(dir) / kIndexFile;
  if (!fs::exists(index)) {
    throw DataError("missing_index", "no " + std::string(kIndexFile) + " in " + dir);
  }

  IngestResult result;
  auto& m = result.manifest;
  m.base_dir = fs::absolute(fs::path(dir)).lexically_normal();
  m.name = m.base_dir.filename().string();

  std::istringstream in(text::read_file(index.string()));
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> ids;

  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    RejectedLine reject{line_no, "", "", "", line};

    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      reject.code = "bad_json";
      reject.message = "line is not valid JSON";
      result.rejects.push_back(std::move(reject));
      continue;
    }
    if (j.is_object() && j.contains("id") && j["id"].is_string()) reject.record_id = j["id"].get<std::string>();

    try {
      QARecord r = record_from_json(j);
      check_adapter(adapter, r);
      auto findings = check_record(r);
      if (!findings.empty()) throw DataError(findings.front().kind, findings.front().message);
      if (!ids.insert(r.id).second) throw DataError("duplicate_id", "record id '" + r.id + "' already ingested");
      if (!is_url(r.image.path) && !fs::exists(m.resolve_image(r))) {
        throw DataError("image_unresolvable", "image path does not resolve: " + r.image.path);
      }
      m.records.push_back(std::move(r));
    } catch (const DataError& e) {
      reject.code = e.code();
      reject.message = e.what();
      result.rejects.push_back(std::move(reject));
    }
  }

  m.provenance.push_back("ingest adapter=" + std::string(to_string(adapter)) + " source=" + m.name +
                         " accepted=" + std::to_string(m.records.size()) +
                         " rejected=" + std::to_string(result.rejects.size()));
  return result;
}

std::string serialize_rejects(const std::vector<RejectedLine>& rejects) {
  std::string out;
  for (const auto& r : rejects) {
    nlohmann::ordered_json j;
    j["line"] = r.line;
    if (!r.record_id.empty()) j["id"] = r.record_id;
    j["code"] = r.code;
    j["message"] = r.message;
    j["raw"] = r.raw;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace radvqa::corpus
