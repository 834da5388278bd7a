#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "radvqa/common/error.hpp"
#include "radvqa/common/text.hpp"
#include "radvqa/corpus/ingest.hpp"
#include "radvqa/corpus/jsonl.hpp"
#include "radvqa/corpus/split.hpp"
#include "radvqa/corpus/validate.hpp"
#include "support.hpp"

using namespace radvqa;
using namespace radvqa::corpus;
using testsupport::fixture;
using testsupport::make_record;

namespace {

DatasetManifest random_manifest(Rng& rng, std::size_t n) {
  static const std::vector<std::string> words{"effusion", "left", "small", "no", "yes", "fracture", "ct", "é"};
  auto phrase = [&](std::size_t k) {
    std::string s;
    for (std::size_t i = 0; i < k; ++i) s += (i ? " " : "") + words[rng.below(words.size())];
    return s;
  };
  DatasetManifest m;
  m.name = "random";
  for (std::size_t i = 0; i < n; ++i) {
    QARecord r = make_record("r" + std::to_string(i), phrase(1 + rng.below(5)), phrase(1 + rng.below(3)),
                             kAllOrgans[rng.below(5)]);
    r.image.path = "https://example.org/img/" + std::to_string(rng.below(20)) + ".png";
    r.image.id = default_image_id(r.image.path);
    r.image.modality = kAllModalities[rng.below(5)];
    r.image.width = 1 + static_cast<int>(rng.below(512));
    r.image.height = 1 + static_cast<int>(rng.below(512));
    const auto kind = rng.below(3);
    if (kind == 1) {
      r.kind = RecordKind::short_answer;
    } else if (kind == 2) {
      r.kind = RecordKind::mcq;
      r.options = std::vector<std::string>{"a", "b", "c", "d"};
      r.answer = (*r.options)[rng.below(4)];
    }
    r.source = rng.below(2) ? Source::native : Source::synthetic_case;
    m.records.push_back(r);
  }
  return m;
}

std::string write_index(const std::string& name, const std::string& body) {
  const auto dir = testsupport::scratch(name);
  text::write_file((dir / kIndexFile).string(), body);
  return dir.string();
}

std::set<std::string> ids(const DatasetManifest& m) {
  std::set<std::string> s;
  for (const auto& r : m.records) s.insert(r.id);
  return s;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("caption fixture ingests ten caption records") {
  const auto res = ingest(fixture("captions10"), Adapter::caption_pairs);
  CHECK(res.manifest.size() == 10);
  CHECK(res.rejects.empty());
  for (const auto& r : res.manifest.records) {
    CHECK(r.kind == RecordKind::caption);
    CHECK(r.question.empty());
  }
  CHECK_FALSE(res.manifest.provenance.empty());
}

TEST_CASE("mcq with three options is rejected and reported") {
  const std::string ok =
      R"({"id":"m1","image":{"path":"https://x/1.png","width":4,"height":4,"modality":"ct","organ":"chest"},"kind":"mcq","question":"which?","answer":"a","options":["a","b","c","d"],"source":"native","quality_tier":"base"})";
  const std::string bad =
      R"({"id":"m2","image":{"path":"https://x/2.png","width":4,"height":4,"modality":"ct","organ":"chest"},"kind":"mcq","question":"which?","answer":"a","options":["a","b","c"],"source":"native","quality_tier":"base"})";
  const auto dir = write_index("mcq3", ok + "\n" + bad + "\nnot json\n");
  const auto res = ingest(dir, Adapter::mcq_pairs);
  REQUIRE(res.manifest.size() == 1);
  REQUIRE(res.rejects.size() == 2);
  CHECK(res.rejects[0].record_id == "m2");
  CHECK(res.rejects[0].code == "mcq_option_count");
  CHECK(res.rejects[0].line == 2);
  CHECK(res.rejects[1].code == "bad_json");
  const auto sidecar = serialize_rejects(res.rejects);
  CHECK(sidecar.find("\"id\":\"m2\"") != std::string::npos);
}

TEST_CASE("ingest errors") {
  const auto empty = testsupport::scratch("no_index");
  try {
    ingest(empty.string(), Adapter::qa_pairs);
    FAIL("expected missing_index");
  } catch (const DataError& e) {
    CHECK(e.code() == "missing_index");
  }
  const auto dir = write_index(
      "unresolvable",
      R"({"id":"a","image":{"path":"nope.pgm","width":4,"height":4,"modality":"ct","organ":"chest"},"kind":"open","question":"q","answer":"a","source":"native","quality_tier":"base"})"
      "\n");
  const auto res = ingest(dir, Adapter::qa_pairs);
  REQUIRE(res.rejects.size() == 1);
  CHECK(res.rejects[0].code == "image_unresolvable");
}

TEST_CASE("qa200 organ histogram matches the documented histogram") {
  const auto res = ingest(fixture("qa200"), Adapter::qa_pairs);
  REQUIRE(res.rejects.empty());
  REQUIRE(res.manifest.size() == 200);
  std::map<std::string, std::size_t> counted;
  for (const auto& r : res.manifest.records) ++counted[std::string(to_string(r.image.organ))];
  const auto documented = nlohmann::json::parse(text::read_file(fixture("qa200/organ_histogram.json")));
  for (const auto& [organ, n] : documented.items()) CHECK(counted[organ] == n.get<std::size_t>());
}

#ifdef RADVQA_PYTHON
TEST_CASE("qa200 organ histogram matches an independent organ count") {
  const auto [out, status] = testsupport::run_command(std::string(RADVQA_PYTHON) + " " +
                                                      testsupport::source("scripts/count_organs.py") + " " +
                                                      fixture("qa200/index.jsonl"));
  REQUIRE(status == 0);
  const auto res = ingest(fixture("qa200"), Adapter::qa_pairs);
  std::istringstream in(out);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    const auto organ = parse_organ(line.substr(0, comma));
    const auto expected = std::stoul(line.substr(comma + 1));
    const auto n = std::count_if(res.manifest.records.begin(), res.manifest.records.end(),
                                 [&](const QARecord& r) { return r.image.organ == organ; });
    CHECK(static_cast<std::size_t>(n) == expected);
    ++lines;
  }
  CHECK(lines == 5);
}
#endif

TEST_CASE("split 200 records 0.8/0.1/0.1") {
  const auto m = ingest(fixture("qa200"), Adapter::qa_pairs).manifest;
  const auto s = split(m, {0.8, 0.1, 0.1}, 7);
  CHECK(s.train.size() == 160);
  CHECK(s.val.size() == 20);
  CHECK(s.test.size() == 20);
  auto all = ids(s.train);
  for (const auto& part : {s.val, s.test})
    for (const auto& id : ids(part)) CHECK(all.insert(id).second);
  CHECK(all == ids(m));

  const auto again = split(m, {0.8, 0.1, 0.1}, 7);
  CHECK(again.train.records == s.train.records);
  CHECK(again.val.records == s.val.records);
  CHECK(again.test.records == s.test.records);
}

TEST_CASE("split of a single-organ manifest") {
  DatasetManifest m;
  m.name = "chest";
  for (int i = 0; i < 100; ++i) m.records.push_back(make_record("c" + std::to_string(i), "q", "a"));
  const auto s = split(m, {0.5, 0.25, 0.25}, 1);
  CHECK(s.train.size() == 50);
  CHECK(s.val.size() == 25);
  CHECK(s.test.size() == 25);
}

TEST_CASE("split errors") {
  DatasetManifest m;
  m.records.push_back(make_record("a", "q", "a"));
  CHECK_THROWS_AS(split(m, {0.5, 0.5, 0.5}, 1), ConfigError);
  CHECK_THROWS_AS(split(m, {1.0, 0.0, 0.0}, 1), ConfigError);
  CHECK_THROWS_AS(split(DatasetManifest{}, {0.8, 0.1, 0.1}, 1), Error);
}

TEST_CASE("split is a partition for random manifests") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = 1 + rng.below(120);
    const auto m = random_manifest(rng, n);
    const double a = 0.1 + rng.uniform(), b = 0.1 + rng.uniform(), c = 0.1 + rng.uniform();
    const double t = a + b + c;
    const auto s = split(m, {a / t, b / t, c / t}, rng.next_u64());
    CHECK(s.train.size() + s.val.size() + s.test.size() == n);
    auto all = ids(s.train);
    std::size_t inserted = all.size();
    for (const auto& part : {s.val, s.test})
      for (const auto& id : ids(part)) inserted += all.insert(id).second;
    CHECK(inserted == n);
    CHECK(all == ids(m));
  }
}

TEST_CASE("validate clean fixture and injected faults") {
  auto m = ingest(fixture("qa200"), Adapter::qa_pairs).manifest;
  auto report = validate(m);
  CHECK(report.pass);
  CHECK(report.findings.empty());

  auto dup = m;
  dup.records.push_back(dup.records[3]);
  report = validate(dup);
  REQUIRE(report.findings.size() == 1);
  CHECK(report.findings[0].kind == "duplicate_id");
  CHECK(report.findings[0].record_id == m.records[3].id);

  auto mcq = m;
  auto it = std::find_if(mcq.records.begin(), mcq.records.end(), [](const QARecord& r) { return r.kind == RecordKind::mcq; });
  REQUIRE(it != mcq.records.end());
  it->answer = "not an option";
  report = validate(mcq);
  REQUIRE(report.findings.size() == 1);
  CHECK(report.findings[0].kind == "answer_not_in_options");
}

TEST_CASE("validate flags each broken invariant") {
  Rng rng(5);
  const auto base = random_manifest(rng, 30);
  REQUIRE(validate(base).pass);
  const auto first_mcq = static_cast<std::size_t>(
      std::find_if(base.records.begin(), base.records.end(), [](const QARecord& r) { return r.kind == RecordKind::mcq; }) -
      base.records.begin());
  const auto first_open = static_cast<std::size_t>(
      std::find_if(base.records.begin(), base.records.end(), [](const QARecord& r) { return r.kind != RecordKind::mcq; }) -
      base.records.begin());
  REQUIRE(first_mcq < base.size());
  REQUIRE(first_open < base.size());

  struct Mutation {
    std::string kind;
    std::function<void(DatasetManifest&)> apply;
  };
  const std::vector<Mutation> mutations{
      {"duplicate_id", [](DatasetManifest& m) { m.records[1].id = m.records[0].id; }},
      {"empty_id", [](DatasetManifest& m) { m.records[0].id.clear(); }},
      {"bad_image_size", [](DatasetManifest& m) { m.records[0].image.width = 0; }},
      {"mcq_option_count", [&](DatasetManifest& m) { m.records[first_mcq].options->pop_back(); }},
      {"answer_not_in_options", [&](DatasetManifest& m) { m.records[first_mcq].answer = "zzz"; }},
      {"options_on_non_mcq",
       [&](DatasetManifest& m) { m.records[first_open].options = std::vector<std::string>{"a", "b", "c", "d"}; }},
      {"empty_question", [&](DatasetManifest& m) { m.records[first_open].question.clear(); }},
      {"caption_has_question", [&](DatasetManifest& m) { m.records[first_open].kind = RecordKind::caption; }},
      {"enrichment_untagged", [](DatasetManifest& m) { m.records[0].quality_tier = QualityTier::enrichment; }},
  };
  for (const auto& mut : mutations) {
    CAPTURE(mut.kind);
    auto m = base;
    mut.apply(m);
    const auto report = validate(m);
    CHECK_FALSE(report.pass);
    REQUIRE(report.findings.size() == 1);
    CHECK(report.findings[0].kind == mut.kind);
  }
}

TEST_CASE("serialize then ingest round-trips bit-identically") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_manifest(rng, 1 + rng.below(40));
    const auto text = serialize_records(m);
    const auto dir = write_index("roundtrip", text);
    const auto res = ingest(dir, Adapter::qa_pairs);
    REQUIRE(res.rejects.empty());
    CHECK(res.manifest.records == m.records);
    CHECK(serialize_records(res.manifest) == text);
  }
}

TEST_CASE("jsonl schema omits absent optionals") {
  auto r = make_record("x", "q", "a");
  const auto j = record_to_json(r);
  CHECK_FALSE(j.contains("options"));
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"id", "image", "kind", "question", "answer", "source", "quality_tier"});
  CHECK_THROWS_AS(record_from_json(nlohmann::json{{"id", "x"}}), DataError);
  auto bad = nlohmann::json::parse(serialize_record(r));
  bad["image"]["organ"] = "liver";
  try {
    record_from_json(bad);
    FAIL("expected bad_enum");
  } catch (const DataError& e) {
    CHECK(e.code() == "bad_enum");
  }
}

TEST_CASE("write_manifest and read_manifest round trip with relative images") {
  const auto m = ingest(fixture("qa200"), Adapter::qa_pairs).manifest;
  const auto dir = testsupport::scratch("manifest_rt");
  const auto path = (dir / "out" / "qa.jsonl").string();
  write_manifest(m, path);
  const auto back = read_manifest(path);
  REQUIRE(back.size() == m.size());
  CHECK(back.provenance == m.provenance);
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK(std::filesystem::equivalent(back.resolve_image(back.records[i]), m.resolve_image(m.records[i])));
  }
}

}
