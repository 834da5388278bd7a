#include "radvqa/corpus/validate.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace radvqa::corpus {

std::vector<Finding> check_record(const QARecord& r) {
  std::vector<Finding> out;
  auto add = [&](const char* kind, std::string msg) { out.push_back({r.id, kind, std::move(msg)}); };

  if (r.id.empty()) add("empty_id", "record id is empty");
  if (r.image.width <= 0 || r.image.height <= 0) {
    add("bad_image_size", "image " + r.image.id + " has non-positive size " + std::to_string(r.image.width) + "x" +
                              std::to_string(r.image.height));
  }
  if (r.image.path.empty()) add("empty_image_path", "image path is empty");

  switch (r.kind) {
    case RecordKind::caption:
      if (!r.question.empty()) add("caption_has_question", "caption records carry no question");
      if (r.answer.empty()) add("empty_answer", "caption text is empty");
      if (r.options) add("options_on_non_mcq", "only mcq records carry options");
      break;
    case RecordKind::mcq:
      if (r.question.empty()) add("empty_question", "question is empty");
      if (!r.options || r.options->size() != 4) {
        add("mcq_option_count", "mcq records need exactly 4 options, got " +
                                    std::to_string(r.options ? r.options->size() : 0));
      } else if (std::find(r.options->begin(), r.options->end(), r.answer) == r.options->end()) {
        add("answer_not_in_options", "answer '" + r.answer + "' is not one of the options");
      }
      break;
    case RecordKind::open:
    case RecordKind::short_answer:
      if (r.question.empty()) add("empty_question", "question is empty");
      if (r.answer.empty()) add("empty_answer", "answer is empty");
      if (r.options) add("options_on_non_mcq", "only mcq records carry options");
      break;
  }
  return out;
}

ValidationReport validate(const DatasetManifest& manifest) {
  ValidationReport report;
  std::set<std::string> seen;
  std::map<std::string, std::string> image_paths;
  bool any_enrichment = false;

  for (const auto& r : manifest.records) {
    for (auto& f : check_record(r)) report.findings.push_back(std::move(f));
    if (!r.id.empty() && !seen.insert(r.id).second) {
      report.findings.push_back({r.id, "duplicate_id", "record id '" + r.id + "' appears more than once"});
    }
    auto [it, inserted] = image_paths.emplace(r.image.id, r.image.path);
    if (!inserted && it->second != r.image.path) {
      report.findings.push_back({r.id, "image_id_conflict",
                                 "image id '" + r.image.id + "' maps to both " + it->second + " and " + r.image.path});
    }
    any_enrichment = any_enrichment || r.quality_tier == QualityTier::enrichment;
  }

  if (any_enrichment) {
    const bool tagged = std::any_of(manifest.provenance.begin(), manifest.provenance.end(),
                                    [](const std::string& p) { return p.rfind("tag_enrichment", 0) == 0; });
    if (!tagged) {
      for (const auto& r : manifest.records) {
        if (r.quality_tier == QualityTier::enrichment) {
          report.findings.push_back({r.id, "enrichment_untagged",
                                     "quality_tier=enrichment without a mixer tagging step in provenance"});
        }
      }
    }
  }
  report.pass = report.findings.empty();
  return report;
}

}  // namespace radvqa::corpus
