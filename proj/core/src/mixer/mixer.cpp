#include "radvqa/mixer/mixer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "radvqa/common/error.hpp"
#include "radvqa/common/random.hpp"
#include "radvqa/common/text.hpp"

namespace radvqa::mixer {

Taxonomy load_taxonomy(const std::string& path) {
  const auto j = nlohmann::json::parse(text::read_file(path), nullptr, false);
  if (j.is_discarded() || !j.contains("terms") || !j["terms"].is_array()) {
    throw ConfigError("bad_taxonomy", path + ": expected {\"terms\": [...]}");
  }
  Taxonomy out;
  for (const auto& t : j["terms"]) {
    out.push_back({t.at("term").get<std::string>(), t.value("synonyms", std::vector<std::string>{})});
  }
  return out;
}

namespace {

bool contains_phrase(const std::vector<std::string>& words, const std::vector<std::string>& phrase) {
  if (phrase.empty() || phrase.size() > words.size()) return false;
  for (std::size_t i = 0; i + phrase.size() <= words.size(); ++i) {
    if (std::equal(phrase.begin(), phrase.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) return true;
  }
  return false;
}

}  // namespace

PathologyIndex index_pathologies(const corpus::DatasetManifest& manifest, const Taxonomy& taxonomy) {
  if (taxonomy.empty()) throw ConfigError("empty_taxonomy", "pathology taxonomy is empty");

  std::vector<std::pair<std::string, std::vector<std::vector<std::string>>>> forms;
  for (const auto& t : taxonomy) {
    std::vector<std::vector<std::string>> phrases{text::words(t.term)};
    for (const auto& s : t.synonyms) phrases.push_back(text::words(s));
    forms.emplace_back(t.term, std::move(phrases));
  }

  PathologyIndex index;
  for (const auto& t : taxonomy) index.frequency[t.term] = 0;
  for (const auto& r : manifest.records) {
    index.record_ids.push_back(r.id);
    const auto words = text::words(r.question + " " + r.answer);
    std::set<std::string> hits;
    for (const auto& [term, phrases] : forms) {
      for (const auto& ph : phrases) {
        if (contains_phrase(words, ph)) {
          hits.insert(term);
          break;
        }
      }
    }
    if (hits.empty()) {
      ++index.unmatched;
      continue;
    }
    ++index.matched;
    for (const auto& h : hits) index.frequency[h] += 1;
    index.record_terms[r.id] = std::move(hits);
  }
  return index;
}

std::vector<std::string> ranked_terms(const PathologyIndex& index) {
  std::vector<std::pair<std::string, std::size_t>> terms;
  for (const auto& [t, f] : index.frequency) {
    if (f > 0) terms.emplace_back(t, f);
  }
  std::sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  for (auto& [t, f] : terms) out.push_back(t);
  return out;
}

corpus::DatasetManifest filter_relevant(const corpus::DatasetManifest& manifest, const PathologyIndex& index,
                                        std::size_t top_k) {
  if (top_k == 0) throw ConfigError("bad_top_k", "top_k must be at least 1");
  std::vector<std::string> ids;
  for (const auto& r : manifest.records) ids.push_back(r.id);
  if (ids != index.record_ids) {
    throw DataError("index_mismatch", "pathology index was not built over manifest " + manifest.name);
  }

  auto ranked = ranked_terms(index);
  std::string warning;
  if (top_k > ranked.size()) {
    warning = "warning: top_k=" + std::to_string(top_k) + " exceeds " + std::to_string(ranked.size()) +
              " distinct matched terms; keeping all matched records";
  } else {
    ranked.resize(top_k);
  }
  const std::set<std::string> keep_terms(ranked.begin(), ranked.end());

  corpus::DatasetManifest out;
  out.name = manifest.name + "-relevant";
  out.base_dir = manifest.base_dir;
  out.provenance = manifest.provenance;
  for (const auto& r : manifest.records) {
    auto it = index.record_terms.find(r.id);
    if (it == index.record_terms.end()) continue;
    const bool hit = std::any_of(it->second.begin(), it->second.end(),
                                 [&](const std::string& t) { return keep_terms.count(t) > 0; });
    if (hit) out.records.push_back(r);
  }
  out.provenance.push_back("filter_relevant top_k=" + std::to_string(top_k) + " kept_terms=[" +
                           text::join(ranked, ",") + "] kept=" + std::to_string(out.records.size()) + "/" +
                           std::to_string(manifest.size()));
  if (!warning.empty()) out.provenance.push_back(warning);
  return out;
}

corpus::DatasetManifest tag_enrichment(const corpus::DatasetManifest& manifest) {
  corpus::DatasetManifest out = manifest;
  for (auto& r : out.records) r.quality_tier = corpus::QualityTier::enrichment;
  out.provenance.push_back("tag_enrichment records=" + std::to_string(out.records.size()));
  return out;
}

void check_mix_spec(const MixSpec& spec) {
  if (!(spec.enrichment_fraction > 0.0 && spec.enrichment_fraction < 1.0)) {
    throw ConfigError("bad_mix_spec", "enrichment_fraction must lie strictly between 0 and 1");
  }
  if (spec.top_k_pathologies < 1) throw ConfigError("bad_mix_spec", "top_k_pathologies must be at least 1");
}

std::size_t base_count_for(std::size_t enrichment_count, double enrichment_fraction) {
  const double exact = static_cast<double>(enrichment_count) * (1.0 - enrichment_fraction) / enrichment_fraction;
  return static_cast<std::size_t>(std::llround(exact));
}

corpus::DatasetManifest anneal(const corpus::DatasetManifest& base, const corpus::DatasetManifest& enrichment,
                               const MixSpec& spec) {
  check_mix_spec(spec);
  for (const auto& r : enrichment.records) {
    if (r.quality_tier != corpus::QualityTier::enrichment) {
      throw DataError("untagged_enrichment", "enrichment record " + r.id + " is not tagged quality_tier=enrichment");
    }
  }
  const std::string base_prefix = base.name + ":";
  const std::string enrich_prefix = enrichment.name + ":";
  if (base_prefix == enrich_prefix) {
    throw DataError("id_collision", "base and enrichment manifests share the name '" + base.name + "'");
  }

  const std::size_t need = base_count_for(enrichment.size(), spec.enrichment_fraction);
  if (need > base.size()) {
    throw DataError("base_too_small", "fraction " + std::to_string(spec.enrichment_fraction) + " with " +
                                          std::to_string(enrichment.size()) + " enrichment records needs " +
                                          std::to_string(need) + " base records, have " +
                                          std::to_string(base.size()));
  }

  Rng rng(spec.seed);
  std::vector<std::size_t> pick(base.size());
  std::iota(pick.begin(), pick.end(), 0);
  // Partial Fisher-Yates: the first `need` slots are a uniform sample.
  for (std::size_t i = 0; i < need; ++i) std::swap(pick[i], pick[i + rng.below(pick.size() - i)]);
  pick.resize(need);
  std::sort(pick.begin(), pick.end());

  corpus::DatasetManifest out;
  out.name = base.name + "+" + enrichment.name;
  out.base_dir = base.base_dir;
  for (const auto& p : base.provenance) out.provenance.push_back("[" + base.name + "] " + p);
  for (const auto& p : enrichment.provenance) out.provenance.push_back("[" + enrichment.name + "] " + p);

  // Enrichment images may live elsewhere; store them resolved.
  for (const auto& r : enrichment.records) {
    corpus::QARecord c = r;
    c.id = enrich_prefix + r.id;
    c.image.path = enrichment.resolve_image(r);
    out.records.push_back(std::move(c));
  }
  for (std::size_t i : pick) {
    corpus::QARecord c = base.records[i];
    c.id = base_prefix + c.id;
    c.image.path = base.resolve_image(base.records[i]);
    out.records.push_back(std::move(c));
  }
  rng.shuffle(out.records);

  std::ostringstream prov;
  prov << "anneal base=" << (spec.base.empty() ? base.name : spec.base)
       << " enrichment=" << (spec.enrichment.empty() ? enrichment.name : spec.enrichment)
       << " enrichment_fraction=" << spec.enrichment_fraction << " top_k=" << spec.top_k_pathologies
       << " seed=" << spec.seed << " base_sampled=" << need << "/" << base.size()
       << " enrichment_kept=" << enrichment.size() << " total=" << out.records.size();
  out.provenance.push_back(prov.str());
  return out;
}

}  // namespace radvqa::mixer
