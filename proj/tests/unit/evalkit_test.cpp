#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "radvqa/common/error.hpp"
#include "radvqa/corpus/ingest.hpp"
#include "radvqa/evalkit/judge.hpp"
#include "radvqa/evalkit/metrics.hpp"
#include "radvqa/evalkit/report.hpp"
#include "radvqa/evalkit/robust.hpp"
#include "radvqa/qaforge/client.hpp"
#include "radvqa/qaforge/template.hpp"
#include "support.hpp"

using namespace radvqa;
using namespace radvqa::evalkit;
using testsupport::fixture;

namespace {

// Reference values from nltk sentence_bleu and rouge-score (scripts/metric_oracles.py).
constexpr const char* kCand = "the chest radiograph shows a small effusion in the left lower lobe";
constexpr const char* kRef = "chest radiograph shows a small left pleural effusion in the lower lobe";
constexpr double kTol = 1e-6;

std::vector<JudgeItem> judge20_items() {
  std::vector<JudgeItem> items;
  std::istringstream in(text::read_file(fixture("judge20/items.jsonl")));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    items.push_back({j["id"], j["question"], j["gold"], j["generated"]});
  }
  return items;
}

qaforge::PromptTemplate judge_template() {
  return qaforge::PromptTemplate::load(fixture("templates/judge.txt"), qaforge::TemplateMode::judge);
}

class CountingClient : public qaforge::TextGenClient {
 public:
  explicit CountingClient(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string generate(const std::string&, const qaforge::SamplingParams& s) override {
    seeds.push_back(s.seed);
    const auto i = std::min<std::size_t>(calls++, replies_.size() - 1);
    if (replies_[i] == "!throw") throw ClientError("http_status", "down");
    return replies_[i];
  }
  std::string identity() const override { return "counting"; }
  std::size_t calls = 0;
  std::vector<std::uint64_t> seeds;

 private:
  std::vector<std::string> replies_;
};

std::vector<OrganVerdict> table2_verdicts() {
  std::vector<OrganVerdict> out;
  std::istringstream in(text::read_file(fixture("table2/verdicts.jsonl")));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j["id"], parse_outcome(j["verdict"].get<std::string>()), std::nullopt});
  }
  return out;
}

}  // namespace

TEST_SUITE("evalkit") {

TEST_CASE("metric tokenization") {
  CHECK(metric_tokens("The CHEST, x-ray!  shows...") == std::vector<std::string>{"the", "chest", "xray", "shows"});
  CHECK(metric_tokens(" ... ").empty());
}

TEST_CASE("bleu matches the reference implementation on the fixture pair") {
  const std::vector<std::string> refs{kRef};
  CHECK(std::abs(bleu(kCand, refs).score - 0.477189707581) <= kTol);
  CHECK(std::abs(bleu(kCand, refs, {4, BleuSmoothing::add_epsilon}).score - 0.477189707581) <= kTol);
  CHECK(std::abs(bleu(kCand, refs, {4, BleuSmoothing::add_one}).score - 0.537284965912) <= kTol);
  const auto r = bleu(kCand, refs);
  CHECK(r.effective_order == 4);
  CHECK(r.candidate_length == 12);
  CHECK(r.reference_length == 12);
  CHECK(r.brevity_penalty == 1.0);
}

TEST_CASE("bleu identity and degenerate cases") {
  CHECK(bleu(kRef, {kRef}).score == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(bleu("no", {"no"}).score == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(bleu("no", {"no"}).effective_order == 1);
  // No shared trigram: unsmoothed score is zero, as in the reference.
  CHECK(bleu("small left effusion", {"a small left pleural effusion is seen"}).score == 0.0);
  CHECK(bleu("", {"x"}).score == 0.0);
  CHECK_THROWS_AS(bleu("x", {}), ConfigError);
  const auto two = bleu("a small effusion", {"a small effusion is seen", "a small effusion"});
  CHECK(two.brevity_penalty == 1.0);
}

TEST_CASE("rouge matches the reference implementation") {
  const auto r1 = rouge(kCand, kRef, RougeVariant::ngram(1));
  const auto r2 = rouge(kCand, kRef, RougeVariant::ngram(2));
  const auto rl = rouge(kCand, kRef, RougeVariant::lcs());
  const auto rs = rouge(kCand, kRef, RougeVariant::skip(4));
  CHECK(std::abs(r1.f1 - 0.916666666667) <= kTol);
  CHECK(std::abs(r2.f1 - 0.636363636364) <= kTol);
  CHECK(std::abs(rl.f1 - 0.833333333333) <= kTol);
  CHECK(std::abs(rs.f1 - 0.605263157895) <= kTol);

  const char* cand = "small left effusion";
  const char* ref = "a small left pleural effusion is seen";
  const auto s1 = rouge(cand, ref, RougeVariant::ngram(1));
  CHECK(std::abs(s1.precision - 1.0) <= kTol);
  CHECK(std::abs(s1.recall - 0.428571428571) <= kTol);
  CHECK(std::abs(s1.f1 - 0.6) <= kTol);
  const auto s2 = rouge(cand, ref, RougeVariant::ngram(2));
  CHECK(std::abs(s2.precision - 0.5) <= kTol);
  CHECK(std::abs(s2.recall - 0.166666666667) <= kTol);
  CHECK(std::abs(s2.f1 - 0.25) <= kTol);
  CHECK(std::abs(rouge(cand, ref, RougeVariant::lcs()).f1 - 0.6) <= kTol);
  const auto ss = rouge(cand, ref, RougeVariant::skip(4));
  CHECK(std::abs(ss.precision - 1.0) <= kTol);
  CHECK(std::abs(ss.recall - 0.166666666667) <= kTol);
  CHECK(std::abs(ss.f1 - 0.285714285714) <= kTol);
}

TEST_CASE("rouge-l on a c versus a b c") {
  const auto r = rouge("a c", "a b c", RougeVariant::lcs());
  CHECK(r.precision == doctest::Approx(1.0));
  CHECK(r.recall == doctest::Approx(2.0 / 3.0));
  CHECK(std::abs(r.f1 - 0.8) <= 1e-12);
}

TEST_CASE("rouge identity and flags") {
  for (const auto& v : {RougeVariant::ngram(1), RougeVariant::ngram(2), RougeVariant::lcs(), RougeVariant::skip(4),
                        RougeVariant::m()}) {
    CAPTURE(v.name());
    CHECK(rouge(kRef, kRef, v).f1 == doctest::Approx(1.0).epsilon(1e-12));
  }
  const auto empty = rouge("", "x", RougeVariant::lcs());
  CHECK(empty.f1 == 0.0);
  CHECK(std::find(empty.flags.begin(), empty.flags.end(), "empty_inputs") != empty.flags.end());
  const auto shortr = rouge("a", "a", RougeVariant::ngram(2));
  CHECK(std::find(shortr.flags.begin(), shortr.flags.end(), "insufficient_length") != shortr.flags.end());
  CHECK(RougeVariant::m().n == 2);
}

TEST_CASE("rouge is symmetric in f1 and bounded") {
  Rng rng(12);
  const std::vector<std::string> words{"a", "b", "c", "d", "e"};
  for (int i = 0; i < 300; ++i) {
    std::string x, y;
    for (std::size_t k = 0, n = 1 + rng.below(8); k < n; ++k) x += words[rng.below(5)] + " ";
    for (std::size_t k = 0, n = 1 + rng.below(8); k < n; ++k) y += words[rng.below(5)] + " ";
    for (const auto& v : {RougeVariant::ngram(1), RougeVariant::lcs(), RougeVariant::skip(4)}) {
      const auto xy = rouge(x, y, v), yx = rouge(y, x, v);
      CHECK(xy.f1 == doctest::Approx(yx.f1).epsilon(1e-12));
      CHECK(xy.precision == doctest::Approx(yx.recall).epsilon(1e-12));
      CHECK(xy.f1 >= 0.0);
      CHECK(xy.f1 <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("answer normalization") {
  const std::vector<std::string> opts{"x-ray", "ct", "mri", "ultrasound"};
  CHECK(normalize_answer("B", opts) == "ct");
  CHECK(normalize_answer("(c)", opts) == "mri");
  CHECK(normalize_answer("D) ultrasound", opts) == "ultrasound");
  CHECK(normalize_answer("The Chest.") == "chest");
  CHECK(normalize_answer("an effusion") == "effusion");
}

TEST_CASE("robustness rule over every 5-generation pattern") {
  const std::vector<std::string> alphabet{"a", "b", "c"};
  std::vector<GenerationSet> sets;
  std::vector<std::pair<bool, int>> oracle;
  for (int code = 0; code < 243; ++code) {
    GenerationSet s;
    s.item_id = "p" + std::to_string(code);
    s.gold = "a";
    int counts[3] = {0, 0, 0};
    for (int k = 0, c = code; k < 5; ++k, c /= 3) {
      s.generations.push_back(alphabet[c % 3]);
      ++counts[c % 3];
    }
    const int modal = *std::max_element(counts, counts + 3);
    oracle.emplace_back(modal <= 2, modal >= 3 && counts[0] == modal ? 1 : 0);
    sets.push_back(s);
  }
  const auto res = robust_mcq_accuracy(sets);
  REQUIRE(res.instances.size() == 243);
  std::size_t credited = 0, nonrobust = 0;
  for (std::size_t i = 0; i < 243; ++i) {
    CAPTURE(i);
    CHECK(res.instances[i].robust == !oracle[i].first);
    CHECK(res.instances[i].credit == oracle[i].second);
    credited += static_cast<std::size_t>(oracle[i].second);
    nonrobust += oracle[i].first;
  }
  CHECK(res.n_nonrobust == nonrobust);
  CHECK(res.accuracy == doctest::Approx(static_cast<double>(credited) / 243.0));
}

TEST_CASE("robust accuracy is invariant to generation order") {
  Rng rng(13);
  const std::vector<std::string> alphabet{"yes", "no", "maybe", "Yes."};
  for (int trial = 0; trial < 200; ++trial) {
    GenerationSet s;
    s.item_id = "x";
    s.gold = alphabet[rng.below(4)];
    for (int k = 0; k < 5; ++k) s.generations.push_back(alphabet[rng.below(4)]);
    auto shuffled = s;
    rng.shuffle(shuffled.generations);
    const auto a = robust_mcq_accuracy({s}), b = robust_mcq_accuracy({shuffled});
    CHECK(a.instances[0].modal_answer == b.instances[0].modal_answer);
    CHECK(a.instances[0].credit == b.instances[0].credit);
  }
}

TEST_CASE("modal ties and generation counts") {
  GenerationSet s{"t", "y", {"y", "x", "y", "x", "z"}, {}, std::nullopt};
  const auto m = modal_answer(s);
  CHECK(m.answer == "x");
  CHECK(m.count == 2);
  const auto r = robust_mcq_accuracy({s});
  CHECK_FALSE(r.instances[0].robust);
  CHECK(r.instances[0].credit == 0);
  s.generations.pop_back();
  try {
    robust_mcq_accuracy({s});
    FAIL("expected bad_generation_count");
  } catch (const DataError& e) {
    CHECK(e.code() == "bad_generation_count");
  }
}

TEST_CASE("judge20 through the replay cassette reproduces the golden verdicts") {
  auto client = qaforge::ReplayClient::load(fixture("judge20/cassette.jsonl"));
  const auto verdicts = judge_open(judge20_items(), client, judge_template());
  REQUIRE(verdicts.size() == 20);
  CHECK(testsupport::matches_golden("judge20_verdicts.jsonl", serialize_verdicts(verdicts)));
  const auto correct = std::count_if(verdicts.begin(), verdicts.end(),
                                     [](const JudgeVerdict& v) { return v.verdict == Verdict::correct; });
  CHECK(correct == 13);
  CHECK(verdicts[16].reason == "unparseable");
  CHECK(verdicts[16].verdict == Verdict::incorrect);
  for (std::size_t i = 0; i < verdicts.size(); ++i) CHECK(verdicts[i].item_id == judge20_items()[i].item_id);
}

TEST_CASE("judge retries, caching and template checks") {
  const auto tmpl = judge_template();
  const std::vector<JudgeItem> one{{"i", "q", "g", "x"}};

  CountingClient retry({"mumble", "VERDICT: correct\nRATIONALE: ok"});
  auto v = judge_open(one, retry, tmpl);
  CHECK(retry.calls == 2);
  CHECK(retry.seeds[0] != retry.seeds[1]);
  CHECK(v[0].verdict == Verdict::correct);
  CHECK(v[0].rationale == "ok");

  CountingClient flaky({"!throw", "VERDICT: incorrect"});
  CHECK(judge_open(one, flaky, tmpl)[0].verdict == Verdict::incorrect);
  CountingClient dead({"!throw"});
  CHECK_THROWS_AS(judge_open(one, dead, tmpl), ClientError);

  VerdictCache cache;
  JudgeOptions opts;
  opts.cache = &cache;
  CountingClient cached({"VERDICT: correct"});
  judge_open(one, cached, tmpl, opts);
  judge_open(one, cached, tmpl, opts);
  CHECK(cached.calls == 1);
  const auto dir = testsupport::scratch("verdict_cache");
  cache.save((dir / "c.jsonl").string());
  VerdictCache reloaded;
  reloaded.load((dir / "c.jsonl").string());
  CHECK(reloaded.size() == 1);
  reloaded.load((dir / "missing.jsonl").string());

  CHECK_THROWS_AS(check_judge_template(qaforge::PromptTemplate(qaforge::TemplateMode::judge, "{question} {gold}")),
                  ConfigError);
  CHECK(parse_judge_response("blah\nverdict: Incorrect\nrationale: nope")->verdict == Verdict::incorrect);
  CHECK_FALSE(parse_judge_response("VERDICT: perhaps"));
}

TEST_CASE("echo judge grades by normalized equality") {
  const auto tmpl = judge_template();
  EchoJudgeClient echo(tmpl);
  const auto v = judge_open({{"a", "q", "The chest.", "chest"}, {"b", "q", "knee", "elbow"}}, echo, tmpl);
  CHECK(v[0].verdict == Verdict::correct);
  CHECK(v[1].verdict == Verdict::incorrect);
}

TEST_CASE("organ report on the table fixture") {
  const auto m = corpus::ingest(fixture("table2"), corpus::Adapter::qa_pairs).manifest;
  const auto report = organ_report(table2_verdicts(), &m);
  using corpus::Organ;
  std::string row;
  for (auto o : {Organ::chest, Organ::gastrointestinal, Organ::musculoskeletal, Organ::brain_neuro}) {
    row += (row.empty() ? "" : ", ") + report.cell(o);
  }
  CHECK(row == "15/50, 28/50, 39/50, 14/50");
  CHECK(report.rows.size() == 4);
  CHECK(report.total_verdicts == 200);
  CHECK(report.markdown().find("| Chest | 15/50 |") != std::string::npos);
  CHECK(report.to_json()["rows"][2]["cell"] == "39/50");
}

TEST_CASE("organ report abstentions and errors") {
  std::vector<OrganVerdict> v{{"a", Outcome::correct, corpus::Organ::chest},
                              {"b", Outcome::abstain, corpus::Organ::chest},
                              {"c", Outcome::incorrect, corpus::Organ::other}};
  const auto r = organ_report(v, nullptr, {{corpus::Organ::chest, {3, 4}}});
  CHECK(r.cell(corpus::Organ::chest) == "1/2");
  CHECK(r.cell(corpus::Organ::brain_neuro) == "0/0");
  CHECK(r.rows.size() == 5);
  CHECK(r.markdown().find("(3/4)") != std::string::npos);
  CHECK(r.markdown().find("Abstentions") != std::string::npos);
  try {
    organ_report({{"zzz", Outcome::correct, std::nullopt}});
    FAIL("expected unresolvable_item");
  } catch (const DataError& e) {
    CHECK(e.code() == "unresolvable_item");
  }
}

TEST_CASE("ablation table layout") {
  AblationTable t;
  t.rows.push_back({"qa", {summarize({0.30, 0.35, 0.32, 0.31, 0.33}), summarize({0.40, 0.38, 0.41, 0.39, 0.42})}});
  t.rows.push_back({"annealed", {std::nullopt, summarize({0.5})}});
  const auto md = t.markdown();
  CHECK(md ==
        "| Dataset | w/o Stage 1 | with Stage 1 |\n"
        "|---|---|---|\n"
        "| qa | 32.20 \xC2\xB1 1.92 | 40.00 \xC2\xB1 1.58 |\n"
        "| annealed | -- | 50.00 \xC2\xB1 0.00 |\n");
  const auto s = summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == 2.5);
  CHECK(s.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(summarize({0.7}).std == 0.0);
}

TEST_CASE("eval report invariants") {
  EvalReport r;
  r.dataset = "d";
  r.metrics["accuracy"] = summarize({0.5, 0.6});
  r.organs["chest"] = {3, 1, 0};
  CHECK_NOTHROW(r.check(4));
  CHECK_THROWS_AS(r.check(5), DataError);
  r.metrics["accuracy"] = summarize({1.5});
  CHECK_THROWS_AS(r.check(), DataError);
}

}
