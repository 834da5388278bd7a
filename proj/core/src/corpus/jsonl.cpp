#include "radvqa/corpus/jsonl.hpp"

#include <filesystem>
#include <sstream>

#include "radvqa/common/error.hpp"
#include "radvqa/common/text.hpp"

namespace radvqa::corpus {
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw DataError("missing_field", std::string("missing field '") + key + "'");
  return *it;
}

std::string require_string(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_string()) throw DataError("bad_type", std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

int require_int(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_number_integer()) throw DataError("bad_type", std::string("field '") + key + "' must be an integer");
  return v.get<int>();
}

std::string optional_string(const json& j, const char* key, std::string fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_string()) throw DataError("bad_type", std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

}  // namespace

ordered_json record_to_json(const QARecord& r) {
  ordered_json image;
  if (r.image.id != default_image_id(r.image.path)) image["id"] = r.image.id;
  image["path"] = r.image.path;
  image["width"] = r.image.width;
  image["height"] = r.image.height;
  image["modality"] = std::string(to_string(r.image.modality));
  image["organ"] = std::string(to_string(r.image.organ));

  ordered_json j;
  j["id"] = r.id;
  j["image"] = std::move(image);
  j["kind"] = std::string(to_string(r.kind));
  j["question"] = r.question;
  j["answer"] = r.answer;
  if (r.options) j["options"] = *r.options;
  j["source"] = std::string(to_string(r.source));
  j["quality_tier"] = std::string(to_string(r.quality_tier));
  return j;
}

QARecord record_from_json(const json& j) {
  if (!j.is_object()) throw DataError("bad_type", "record must be a JSON object");
  QARecord r;
  r.id = require_string(j, "id");
  const json& img = require(j, "image");
  if (!img.is_object()) throw DataError("bad_type", "field 'image' must be an object");
  r.image.path = require_string(img, "path");
  r.image.id = optional_string(img, "id", default_image_id(r.image.path));
  r.image.width = require_int(img, "width");
  r.image.height = require_int(img, "height");
  r.image.modality = parse_modality(optional_string(img, "modality", "other"));
  r.image.organ = parse_organ(optional_string(img, "organ", "other"));
  r.kind = parse_kind(require_string(j, "kind"));
  r.question = optional_string(j, "question", "");
  r.answer = require_string(j, "answer");
  if (auto it = j.find("options"); it != j.end()) {
    if (!it->is_array()) throw DataError("bad_type", "field 'options' must be an array");
    std::vector<std::string> opts;
    for (const auto& o : *it) {
      if (!o.is_string()) throw DataError("bad_type", "options must be strings");
      opts.push_back(o.get<std::string>());
    }
    r.options = std::move(opts);
  }
  r.source = parse_source(optional_string(j, "source", "native"));
  r.quality_tier = parse_quality_tier(optional_string(j, "quality_tier", "base"));
  return r;
}

std::string serialize_record(const QARecord& r) { return record_to_json(r).dump(); }

std::string serialize_records(const DatasetManifest& m) {
  std::string out;
  for (const auto& r : m.records) {
    out += serialize_record(r);
    out.push_back('\n');
  }
  return out;
}

std::string meta_path_for(const std::string& manifest_path) {
  fs::path p(manifest_path);
  return (p.parent_path() / (p.stem().string() + ".meta.json")).string();
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  const fs::path out_dir = fs::absolute(fs::path(path)).parent_path();
  DatasetManifest rebased = m;
  for (auto& r : rebased.records) {
    if (is_url(r.image.path)) continue;
    const fs::path resolved = fs::absolute(fs::path(m.resolve_image(r))).lexically_normal();
    r.image.path = resolved.lexically_relative(out_dir).generic_string();
  }
  text::write_file(path, serialize_records(rebased));
  ordered_json meta;
  meta["name"] = m.name;
  meta["records"] = m.records.size();
  meta["provenance"] = m.provenance;
  text::write_file(meta_path_for(path), meta.dump(2) + "\n");
}

DatasetManifest read_manifest(const std::string& path) {
  DatasetManifest m;
  m.base_dir = fs::absolute(fs::path(path)).parent_path();
  m.name = fs::path(path).stem().string();
  std::istringstream in(text::read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw DataError("bad_json", path + ":" + std::to_string(line_no) + ": not valid JSON");
    }
    try {
      m.records.push_back(record_from_json(j));
    } catch (const DataError& e) {
      throw DataError(e.code(), path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  const std::string meta_path = meta_path_for(path);
  if (fs::exists(meta_path)) {
    json meta = json::parse(text::read_file(meta_path));
    m.name = meta.value("name", m.name);
    m.provenance = meta.value("provenance", std::vector<std::string>{});
  }
  return m;
}

}  // namespace radvqa::corpus
