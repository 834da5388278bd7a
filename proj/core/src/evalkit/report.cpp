#include "radvqa/evalkit/report.hpp"

#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "radvqa/common/error.hpp"
#include "radvqa/common/text.hpp"

namespace radvqa::evalkit {

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::correct: return "correct";
    case Outcome::incorrect: return "incorrect";
    case Outcome::abstain: return "abstain";
  }
  return "?";
}

Outcome parse_outcome(std::string_view s) {
  if (s == "correct") return Outcome::correct;
  if (s == "incorrect") return Outcome::incorrect;
  if (s == "abstain") return Outcome::abstain;
  throw DataError("bad_enum", "unknown verdict '" + std::string(s) + "'");
}

std::vector<OrganVerdict> to_organ_verdicts(const std::vector<JudgeVerdict>& verdicts) {
  std::vector<OrganVerdict> out;
  out.reserve(verdicts.size());
  for (const auto& v : verdicts) {
    out.push_back({v.item_id, v.verdict == Verdict::correct ? Outcome::correct : Outcome::incorrect, std::nullopt});
  }
  return out;
}

std::string organ_display_name(corpus::Organ o) {
  switch (o) {
    case corpus::Organ::chest: return "Chest";
    case corpus::Organ::gastrointestinal: return "Gastrointestinal";
    case corpus::Organ::musculoskeletal: return "Musculoskeletal";
    case corpus::Organ::brain_neuro: return "Brain and Neuro";
    case corpus::Organ::other: return "Other";
  }
  return "?";
}

namespace {

std::string fraction(std::size_t a, std::size_t b) { return std::to_string(a) + "/" + std::to_string(b); }

}  // namespace

std::string OrganReport::cell(corpus::Organ o) const {
  for (const auto& r : rows) {
    if (r.organ == o) return fraction(r.tally.correct, r.tally.total());
  }
  return "0/0";
}

std::string OrganReport::markdown() const {
  bool with_baseline = false;
  std::size_t abstains = 0;
  for (const auto& r : rows) {
    with_baseline |= r.baseline.has_value();
    abstains += r.tally.abstain;
  }
  std::string out = with_baseline ? "| Organ | Correct/Total | Baseline |\n|---|---|---|\n"
                                  : "| Organ | Correct/Total |\n|---|---|\n";
  for (const auto& r : rows) {
    out += "| " + organ_display_name(r.organ) + " | " + fraction(r.tally.correct, r.tally.total());
    if (r.tally.abstain > 0) out += "*";
    out += " |";
    if (with_baseline) {
      out += " " + (r.baseline ? "(" + fraction(r.baseline->numerator, r.baseline->denominator) + ")" : std::string("--")) +
             " |";
    }
    out += "\n";
  }
  if (abstains > 0) {
    std::vector<std::string> parts;
    for (const auto& r : rows) {
      if (r.tally.abstain > 0) parts.push_back(organ_display_name(r.organ) + " " + std::to_string(r.tally.abstain));
    }
    out += "\n\\* Abstentions, counted in totals and never as correct: " + text::join(parts, ", ") + ".\n";
  }
  return out;
}

nlohmann::ordered_json OrganReport::to_json() const {
  nlohmann::ordered_json rows_j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["organ"] = corpus::to_string(r.organ);
    j["label"] = organ_display_name(r.organ);
    j["correct"] = r.tally.correct;
    j["incorrect"] = r.tally.incorrect;
    j["abstain"] = r.tally.abstain;
    j["total"] = r.tally.total();
    j["cell"] = fraction(r.tally.correct, r.tally.total());
    if (r.baseline) j["baseline"] = fraction(r.baseline->numerator, r.baseline->denominator);
    rows_j.push_back(std::move(j));
  }
  nlohmann::ordered_json out;
  out["rows"] = std::move(rows_j);
  out["total_verdicts"] = total_verdicts;
  out["markdown"] = markdown();
  return out;
}

OrganReport organ_report(const std::vector<OrganVerdict>& verdicts, const corpus::DatasetManifest* manifest,
                         const std::map<corpus::Organ, Fraction>& baseline) {
  std::unordered_map<std::string, corpus::Organ> lookup;
  if (manifest) {
    for (const auto& r : manifest->records) lookup.emplace(r.id, r.image.organ);
  }
  std::map<corpus::Organ, OrganTally> tallies;
  for (const auto& v : verdicts) {
    corpus::Organ organ;
    if (v.organ) {
      organ = *v.organ;
    } else {
      auto it = lookup.find(v.item_id);
      if (it == lookup.end()) throw DataError("unresolvable_item", "no organ tag for item '" + v.item_id + "'");
      organ = it->second;
    }
    auto& t = tallies[organ];
    switch (v.outcome) {
      case Outcome::correct: ++t.correct; break;
      case Outcome::incorrect: ++t.incorrect; break;
      case Outcome::abstain: ++t.abstain; break;
    }
  }
  OrganReport rep;
  rep.total_verdicts = verdicts.size();
  for (auto o : corpus::kAllOrgans) {
    if (o == corpus::Organ::other && !tallies.count(o)) continue;
    OrganReport::Row row{o, tallies[o], std::nullopt};
    if (auto it = baseline.find(o); it != baseline.end()) row.baseline = it->second;
    rep.rows.push_back(row);
  }
  return rep;
}

CellStat summarize(const std::vector<double>& values) {
  CellStat s;
  s.runs = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::string format_percent(const CellStat& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f \xC2\xB1 %.2f", 100.0 * s.mean, 100.0 * s.std);
  return buf;
}

std::string AblationTable::markdown() const {
  std::string out = "| Dataset |";
  std::string rule = "|---|";
  for (const auto& a : arm_labels) {
    out += " " + a + " |";
    rule += "---|";
  }
  out += "\n" + rule + "\n";
  for (const auto& r : rows) {
    out += "| " + r.dataset + " |";
    for (std::size_t i = 0; i < arm_labels.size(); ++i) {
      const bool have = i < r.cells.size() && r.cells[i].has_value();
      out += " " + (have ? format_percent(*r.cells[i]) : std::string("--")) + " |";
    }
    out += "\n";
  }
  return out;
}

nlohmann::ordered_json AblationTable::to_json() const {
  nlohmann::ordered_json out;
  out["arms"] = arm_labels;
  auto& rows_j = out["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["dataset"] = r.dataset;
    auto& cells = row["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : r.cells) {
      if (c) {
        cells.push_back({{"mean", c->mean}, {"std", c->std}, {"runs", c->runs}});
      } else {
        cells.push_back(nullptr);
      }
    }
    rows_j.push_back(std::move(row));
  }
  out["markdown"] = markdown();
  return out;
}

void EvalReport::check(std::size_t expected_samples) const {
  for (const auto& [name, v] : metrics) {
    if (name.find("accuracy") != std::string::npos && (v.mean < 0.0 || v.mean > 1.0)) {
      throw DataError("accuracy_out_of_range", name + " = " + std::to_string(v.mean));
    }
  }
  if (expected_samples > 0 && !organs.empty()) {
    std::size_t sum = 0;
    for (const auto& [o, t] : organs) sum += t.total();
    if (sum != expected_samples) {
      throw DataError("organ_tally_mismatch",
                      "organ tallies sum to " + std::to_string(sum) + ", expected " + std::to_string(expected_samples));
    }
  }
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json out;
  out["dataset"] = dataset;
  auto& m = out["metrics"] = nlohmann::ordered_json::object();
  for (const auto& [name, v] : metrics) m[name] = {{"mean", v.mean}, {"std", v.std}, {"runs", v.runs}};
  auto& o = out["organs"] = nlohmann::ordered_json::object();
  for (const auto& [name, t] : organs) {
    o[name] = {{"correct", t.correct}, {"incorrect", t.incorrect}, {"abstain", t.abstain}, {"total", t.total()}};
  }
  out["metadata"] = metadata;
  out["flags"] = flags;
  return out;
}

std::string EvalReport::markdown() const {
  std::string out = "| Metric | " + dataset + " |\n|---|---|\n";
  for (const auto& [name, v] : metrics) out += "| " + name + " | " + format_percent(v) + " |\n";
  return out;
}

}  // namespace radvqa::evalkit
