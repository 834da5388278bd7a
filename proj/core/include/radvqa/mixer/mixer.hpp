#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "radvqa/corpus/types.hpp"

namespace radvqa::mixer {

/// One canonical pathology term and the surface forms that count toward it.
struct TaxonomyTerm {
  std::string term;
  std::vector<std::string> synonyms;
};

using Taxonomy = std::vector<TaxonomyTerm>;

/// Reads {"terms":[{"term":"lesion","synonyms":["tumour","mass"]}, ...]}.
Taxonomy load_taxonomy(const std::string& path);

struct PathologyIndex {
  /// Number of records mentioning each term (every taxonomy term present, possibly 0).
  std::map<std::string, std::size_t> frequency;
  std::size_t matched = 0;
  std::size_t unmatched = 0;
  /// Terms matched per record id; records without a match are absent.
  std::map<std::string, std::set<std::string>> record_terms;
  /// Ids of the indexed manifest, used to check the index belongs to it.
  std::vector<std::string> record_ids;
};

/// Case-insensitive whole-word (or whole-phrase) matching over question and
/// answer text. A record may count toward several terms but at most once per term.
PathologyIndex index_pathologies(const corpus::DatasetManifest& manifest, const Taxonomy& taxonomy);

/// Terms ranked by descending frequency, ties broken lexicographically;
/// zero-frequency terms are excluded.
std::vector<std::string> ranked_terms(const PathologyIndex& index);

/// Keeps records that match any of the `top_k` most frequent terms. When
/// top_k exceeds the number of distinct matched terms every matched record
/// is kept and a warning is appended to provenance.
corpus::DatasetManifest filter_relevant(const corpus::DatasetManifest& manifest, const PathologyIndex& index,
                                        std::size_t top_k);

/// Marks every record quality_tier=enrichment and logs the tagging step.
corpus::DatasetManifest tag_enrichment(const corpus::DatasetManifest& manifest);

struct MixSpec {
  std::string base;        // manifest name
  std::string enrichment;  // manifest name
  double enrichment_fraction = 0.0;
  std::size_t top_k_pathologies = 1;
  std::uint64_t seed = 0;
};

void check_mix_spec(const MixSpec& spec);

/// Number of base records that makes e/(e+b) closest to the fraction.
std::size_t base_count_for(std::size_t enrichment_count, double enrichment_fraction);

/// Static annealed mix: every enrichment record plus a seeded sample (without
/// replacement) of base records, shuffled by seed. Ids are prefixed with
/// their manifest name so the two id sets stay disjoint.
corpus::DatasetManifest anneal(const corpus::DatasetManifest& base, const corpus::DatasetManifest& enrichment,
                               const MixSpec& spec);

}  // namespace radvqa::mixer
