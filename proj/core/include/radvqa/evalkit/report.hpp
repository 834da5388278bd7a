#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "radvqa/corpus/types.hpp"
#include "radvqa/evalkit/judge.hpp"

namespace radvqa::evalkit {

enum class Outcome { correct, incorrect, abstain };

std::string_view to_string(Outcome o);
Outcome parse_outcome(std::string_view s);

struct OrganVerdict {
  std::string item_id;
  Outcome outcome = Outcome::incorrect;
  /// Explicit organ tag; when absent the item is looked up in the manifest.
  std::optional<corpus::Organ> organ;
};

std::vector<OrganVerdict> to_organ_verdicts(const std::vector<JudgeVerdict>& verdicts);

struct OrganTally {
  std::size_t correct = 0;
  std::size_t incorrect = 0;
  std::size_t abstain = 0;

  /// Abstentions count towards the total but never as correct.
  std::size_t total() const { return correct + incorrect + abstain; }
  bool operator==(const OrganTally&) const = default;
};

struct Fraction {
  std::size_t numerator = 0;
  std::size_t denominator = 0;
};

std::string organ_display_name(corpus::Organ o);

struct OrganReport {
  struct Row {
    corpus::Organ organ;
    OrganTally tally;
    std::optional<Fraction> baseline;
  };
  std::vector<Row> rows;
  std::size_t total_verdicts = 0;

  /// "x/n" for one organ; "0/0" when the organ has no verdicts.
  std::string cell(corpus::Organ o) const;
  std::string markdown() const;
  nlohmann::ordered_json to_json() const;
};

/// Per-organ correct/total in report order. The four reported classes always
/// appear; `other` only when it has verdicts. Throws DataError
/// ("unresolvable_item") for a verdict whose organ cannot be determined.
OrganReport organ_report(const std::vector<OrganVerdict>& verdicts, const corpus::DatasetManifest* manifest = nullptr,
                         const std::map<corpus::Organ, Fraction>& baseline = {});

struct CellStat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single run
  std::size_t runs = 0;
};

CellStat summarize(const std::vector<double>& values);

/// "mean ± std" in percent with two decimals, e.g. "32.22 ± 2.23".
std::string format_percent(const CellStat& s);

/// With/without-stage-1 comparison laid out like the paper's ablation table.
struct AblationTable {
  std::vector<std::string> arm_labels{"w/o Stage 1", "with Stage 1"};
  struct Row {
    std::string dataset;
    std::vector<std::optional<CellStat>> cells;  // one per arm; missing renders as "--"
  };
  std::vector<Row> rows;

  std::string markdown() const;
  nlohmann::ordered_json to_json() const;
};

struct EvalReport {
  std::string dataset;
  std::map<std::string, CellStat> metrics;
  std::map<std::string, OrganTally> organs;
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
  std::vector<std::string> flags;

  /// Throws DataError when an accuracy leaves [0,1] or organ tallies do not
  /// sum to `expected_samples` (skipped when zero).
  void check(std::size_t expected_samples = 0) const;
  nlohmann::ordered_json to_json() const;
  std::string markdown() const;
};

}  // namespace radvqa::evalkit
