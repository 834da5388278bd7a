#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "radvqa/corpus/types.hpp"
#include "radvqa/mixer/mixer.hpp"

namespace radvqa::mixer {

/// Distribution report over a manifest: organ, modality, kind, source and
/// the top-k pathology terms.
struct StatsReport {
  std::string dataset;
  std::size_t records = 0;
  std::map<std::string, std::size_t> organ;
  std::map<std::string, std::size_t> modality;
  std::map<std::string, std::size_t> kind;
  std::map<std::string, std::size_t> source;
  std::vector<std::pair<std::string, std::size_t>> top_terms;
  std::size_t unmatched = 0;
};

StatsReport compute_stats(const corpus::DatasetManifest& manifest, const PathologyIndex* index, std::size_t top_k);

nlohmann::ordered_json to_json(const StatsReport& report);
/// Long-format CSV: section,label,count
std::string to_csv(const StatsReport& report);

}  // namespace radvqa::mixer
