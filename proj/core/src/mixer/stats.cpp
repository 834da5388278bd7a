#include "radvqa/mixer/stats.hpp"

#include <sstream>

namespace radvqa::mixer {

StatsReport compute_stats(const corpus::DatasetManifest& manifest, const PathologyIndex* index, std::size_t top_k) {
  StatsReport s;
  s.dataset = manifest.name;
  s.records = manifest.size();
  for (auto o : corpus::kAllOrgans) s.organ[std::string(corpus::to_string(o))] = 0;
  for (auto m : corpus::kAllModalities) s.modality[std::string(corpus::to_string(m))] = 0;
  for (const auto& r : manifest.records) {
    s.organ[std::string(corpus::to_string(r.image.organ))] += 1;
    s.modality[std::string(corpus::to_string(r.image.modality))] += 1;
    s.kind[std::string(corpus::to_string(r.kind))] += 1;
    s.source[std::string(corpus::to_string(r.source))] += 1;
  }
  if (index) {
    auto ranked = ranked_terms(*index);
    if (ranked.size() > top_k) ranked.resize(top_k);
    for (const auto& t : ranked) s.top_terms.emplace_back(t, index->frequency.at(t));
    s.unmatched = index->unmatched;
  }
  return s;
}

nlohmann::ordered_json to_json(const StatsReport& r) {
  nlohmann::ordered_json j;
  j["dataset"] = r.dataset;
  j["records"] = r.records;
  j["organ"] = r.organ;
  j["modality"] = r.modality;
  j["kind"] = r.kind;
  j["source"] = r.source;
  nlohmann::ordered_json terms = nlohmann::ordered_json::array();
  for (const auto& [t, c] : r.top_terms) terms.push_back({{"term", t}, {"count", c}});
  j["top_terms"] = terms;
  j["unmatched"] = r.unmatched;
  return j;
}

std::string to_csv(const StatsReport& r) {
  std::ostringstream out;
  out << "section,label,count\n";
  for (const auto& [k, v] : r.organ) out << "organ," << k << "," << v << "\n";
  for (const auto& [k, v] : r.modality) out << "modality," << k << "," << v << "\n";
  for (const auto& [k, v] : r.kind) out << "kind," << k << "," << v << "\n";
  for (const auto& [k, v] : r.source) out << "source," << k << "," << v << "\n";
  for (const auto& [t, c] : r.top_terms) out << "term," << t << "," << c << "\n";
  return out.str();
}

}  // namespace radvqa::mixer
