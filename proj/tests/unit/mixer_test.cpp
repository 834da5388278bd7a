#include <doctest.h>

#include <cmath>
#include <set>

#include "radvqa/common/error.hpp"
#include "radvqa/corpus/ingest.hpp"
#include "radvqa/mixer/mixer.hpp"
#include "radvqa/mixer/stats.hpp"
#include "support.hpp"

using namespace radvqa;
using namespace radvqa::mixer;
using corpus::DatasetManifest;
using testsupport::make_record;

namespace {

DatasetManifest manifest_of(const std::string& name, const std::vector<std::string>& answers) {
  DatasetManifest m;
  m.name = name;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    m.records.push_back(make_record(name + std::to_string(i), "what is seen?", answers[i]));
  }
  m.provenance.push_back("ingest test");
  return m;
}

DatasetManifest sized(const std::string& name, std::size_t n, bool enrichment) {
  DatasetManifest m;
  m.name = name;
  for (std::size_t i = 0; i < n; ++i) m.records.push_back(make_record(name + std::to_string(i), "q", "a"));
  m.provenance.push_back("ingest test");
  return enrichment ? tag_enrichment(m) : m;
}

const Taxonomy kTaxonomy{{"fracture", {}}, {"lesion", {"tumour", "mass"}}, {"pleural effusion", {}}};

std::set<std::string> ids(const DatasetManifest& m) {
  std::set<std::string> s;
  for (const auto& r : m.records) s.insert(r.id);
  return s;
}

}  // namespace

TEST_SUITE("mixer") {

TEST_CASE("index_pathologies counts records per term") {
  const auto m = manifest_of("m", {"a fracture", "Fracture of the wrist", "FRACTURE and fracture", "a lesion",
                                   "nothing here", "fractured? no"});
  const auto idx = index_pathologies(m, kTaxonomy);
  CHECK(idx.frequency.at("fracture") == 3);
  CHECK(idx.frequency.at("lesion") == 1);
  CHECK(idx.frequency.at("pleural effusion") == 0);
  CHECK(idx.matched == 4);
  CHECK(idx.unmatched == 2);
  CHECK(idx.matched + idx.unmatched == m.size());
}

TEST_CASE("synonyms and phrases") {
  const auto m = manifest_of("m", {"a large tumour", "small pleural  effusion", "effusion only"});
  const auto idx = index_pathologies(m, kTaxonomy);
  CHECK(idx.frequency.at("lesion") == 1);
  CHECK(idx.frequency.at("pleural effusion") == 1);
  CHECK(idx.unmatched == 1);
  CHECK_THROWS_AS(index_pathologies(m, {}), ConfigError);
}

TEST_CASE("filter_relevant keeps the top-k terms") {
  const auto m = manifest_of("m", {"fracture", "fracture", "fracture", "lesion", "nothing"});
  const auto idx = index_pathologies(m, kTaxonomy);
  const auto k1 = filter_relevant(m, idx, 1);
  CHECK(k1.size() == 3);
  for (const auto& r : k1.records) CHECK(r.answer == "fracture");
  CHECK(filter_relevant(m, idx, 2).size() == 4);
  CHECK(k1.provenance.back().find("kept_terms=[fracture]") != std::string::npos);
}

TEST_CASE("ties break lexicographically") {
  const Taxonomy tax{{"b", {}}, {"a", {}}};
  const auto m = manifest_of("m", {"a", "a", "b", "b"});
  const auto idx = index_pathologies(m, tax);
  CHECK(ranked_terms(idx) == std::vector<std::string>{"a", "b"});
  const auto kept = filter_relevant(m, idx, 1);
  REQUIRE(kept.size() == 2);
  for (const auto& r : kept.records) CHECK(r.answer == "a");
}

TEST_CASE("unbounded top_k returns exactly the matched subset") {
  Rng rng(2);
  const std::vector<std::string> pool{"fracture", "tumour", "mass", "normal", "pleural effusion", "fine"};
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::string> answers;
    for (std::size_t i = 0, n = 1 + rng.below(30); i < n; ++i) answers.push_back(pool[rng.below(pool.size())]);
    const auto m = manifest_of("m", answers);
    const auto idx = index_pathologies(m, kTaxonomy);
    const auto kept = filter_relevant(m, idx, 1000);
    CHECK(kept.size() == idx.matched);
    for (const auto& r : kept.records) CHECK(idx.record_terms.count(r.id) == 1);
    CHECK(kept.provenance.size() > m.provenance.size());
  }
}

TEST_CASE("filter_relevant rejects a foreign index") {
  const auto m = manifest_of("m", {"fracture"});
  const auto other = manifest_of("o", {"fracture"});
  CHECK_THROWS_AS(filter_relevant(m, index_pathologies(other, kTaxonomy), 1), DataError);
}

TEST_CASE("anneal sizes") {
  CHECK(base_count_for(100, 0.2) == 400);
  CHECK(base_count_for(100, 0.5) == 100);
  const auto base = sized("base", 900, false);
  const auto enr = sized("enr", 100, true);
  const auto mix = anneal(base, enr, {"base", "enr", 0.2, 1, 7});
  CHECK(mix.size() == 500);
  std::size_t e = 0;
  for (const auto& r : mix.records) e += r.quality_tier == corpus::QualityTier::enrichment;
  CHECK(e == 100);
  CHECK(anneal(base, enr, {"base", "enr", 0.5, 1, 7}).size() == 200);
  const auto again = anneal(base, enr, {"base", "enr", 0.2, 1, 7});
  CHECK(again.records == mix.records);
  CHECK(anneal(base, enr, {"base", "enr", 0.2, 1, 8}).records != mix.records);
}

TEST_CASE("anneal errors") {
  const auto base = sized("base", 10, false);
  const auto enr = sized("enr", 10, true);
  CHECK_THROWS_AS(anneal(base, enr, {"base", "enr", 0.2, 1, 1}), DataError);
  CHECK_THROWS_AS(anneal(base, enr, {"base", "enr", 1.0, 1, 1}), ConfigError);
  CHECK_THROWS_AS(anneal(base, enr, {"base", "enr", 0.0, 1, 1}), ConfigError);
  CHECK_THROWS_AS(anneal(base, sized("enr", 3, false), {"base", "enr", 0.5, 1, 1}), DataError);
  CHECK_THROWS_AS(anneal(base, sized("base", 3, true), {"base", "base", 0.5, 1, 1}), DataError);
}

TEST_CASE("anneal fraction holds within one record") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const auto e = 1 + rng.below(60);
    const double f = 0.05 + 0.9 * rng.uniform();
    const auto need = base_count_for(e, f);
    const auto base = sized("base", need + rng.below(50), false);
    const auto enr = sized("enr", e, true);
    const auto mix = anneal(base, enr, {"base", "enr", f, 1, rng.next_u64()});
    CHECK(mix.size() == e + need);
    const double ideal_base = static_cast<double>(e) * (1.0 - f) / f;
    CHECK(std::abs(static_cast<double>(need) - ideal_base) <= 1.0);
    CHECK(ids(mix).size() == mix.size());
  }
}

TEST_CASE("mixer transforms append provenance and keep record content") {
  const auto base = manifest_of("base", {"fracture", "lesion", "normal", "fracture"});
  const auto enr_raw = manifest_of("enr", {"fracture", "mass"});
  const auto tagged = tag_enrichment(enr_raw);
  CHECK(tagged.provenance.size() == enr_raw.provenance.size() + 1);
  const auto mix = anneal(base, tagged, {"base", "enr", 0.5, 1, 3});
  CHECK(mix.provenance.size() > base.provenance.size() + tagged.provenance.size());
  std::multiset<std::string> in, out;
  for (const auto& r : base.records) in.insert(r.question + "|" + r.answer);
  for (const auto& r : tagged.records) in.insert(r.question + "|" + r.answer);
  for (const auto& r : mix.records) out.insert(r.question + "|" + r.answer);
  for (const auto& s : out) CHECK(in.count(s) >= out.count(s));
}

TEST_CASE("stats report on the qa fixture") {
  const auto m = corpus::ingest(testsupport::fixture("qa200"), corpus::Adapter::qa_pairs).manifest;
  const auto tax = load_taxonomy(testsupport::fixture("taxonomy.json"));
  const auto idx = index_pathologies(m, tax);
  const auto s = compute_stats(m, &idx, 3);
  CHECK(s.records == 200);
  CHECK(s.organ.at("chest") == 60);
  std::size_t total = 0;
  for (const auto& [k, v] : s.modality) total += v;
  CHECK(total == 200);
  CHECK(s.top_terms.size() <= 3);
  CHECK(s.unmatched == idx.unmatched);
  const auto csv = to_csv(s);
  CHECK(csv.rfind("section,label,count\n", 0) == 0);
  CHECK(csv.find("organ,chest,60") != std::string::npos);
  CHECK(to_json(s)["records"] == 200);
}

}
