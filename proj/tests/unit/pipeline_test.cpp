#include <doctest.h>

#include <nlohmann/json.hpp>

#include "radvqa/common/error.hpp"
#include "radvqa/common/hash.hpp"
#include "radvqa/corpus/jsonl.hpp"
#include "radvqa/common/text.hpp"
#include "radvqa/pipeline/config.hpp"
#include "radvqa/pipeline/stages.hpp"
#include "support.hpp"

using namespace radvqa;
using namespace radvqa::pipeline;
using nlohmann::json;

namespace {

EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars = std::move(vars)](const std::string& k) -> std::optional<std::string> {
    const auto it = vars.find(k);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

std::string fixture_config() { return testsupport::source("config/fixture.json"); }

json fixture_doc() { return json::parse(text::read_file(fixture_config())); }

std::string config_error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.code();
  }
  return "";
}

std::string config_error_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

RunConfig config_in(const std::filesystem::path& dir, const std::vector<std::string>& overrides = {}) {
  return load_config(fixture_config(), overrides, env_of({{"RADVQA_RUN_DIR", dir.string()}}));
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("environment interpolation") {
  const json doc{{"a", "${HOME_DIR}/x"}, {"b", {{"c", "${MISSING:-fallback}"}}}, {"d", json::array({"${N}", 3})},
                 {"e", "plain $ text"}};
  const auto out = interpolate_env(doc, env_of({{"HOME_DIR", "/h"}, {"N", "7"}}));
  CHECK(out["a"] == "/h/x");
  CHECK(out["b"]["c"] == "fallback");
  CHECK(out["d"][0] == "7");
  CHECK(out["d"][1] == 3);
  CHECK(out["e"] == "plain $ text");
  CHECK(interpolate_env(json{{"x", "${SET:-fb}"}}, env_of({{"SET", "v"}}))["x"] == "v");

  CHECK(config_error_code([] { interpolate_env(json{{"x", "${NOPE}"}}, env_of({})); }) == "unset_env");
  CHECK(config_error_code([] { interpolate_env(json{{"x", "${OPEN"}}, env_of({})); }) == "bad_interpolation");
  CHECK(config_error_code([] { interpolate_env(json{{"x", "${}"}}, env_of({})); }) == "bad_interpolation");
}

TEST_CASE("overrides") {
  json doc{{"stage1", {{"epochs", 5}}}};
  apply_override(doc, "stage1.epochs=3");
  CHECK(doc["stage1"]["epochs"] == 3);
  apply_override(doc, "run.name=abc");
  CHECK(doc["run"]["name"] == "abc");
  apply_override(doc, "lora.targets=[\"q\",\"v\"]");
  CHECK(doc["lora"]["targets"].size() == 2);
  CHECK(config_error_code([&] { apply_override(doc, "no-equals"); }) == "bad_override");
  CHECK(config_error_code([&] { apply_override(doc, "a..b=1"); }) == "bad_override");
  CHECK(config_error_code([&] { apply_override(doc, "stage1.epochs.x=1"); }) == "bad_override");
}

TEST_CASE("fixture config parses with resolved paths") {
  const auto dir = testsupport::scratch("cfg_parse");
  const auto c = config_in(dir);
  CHECK(c.name == "fixture");
  CHECK(c.output_dir == dir);
  CHECK(c.seed == 1);
  CHECK(std::filesystem::path(c.qa.path).is_absolute());
  CHECK(std::filesystem::exists(c.qa.path));
  CHECK(std::filesystem::exists(c.mix.taxonomy));
  CHECK(c.stage1.epochs == 5);
  CHECK(c.stage1.learning_rate == doctest::Approx(0.003));
  CHECK(c.lora.rank == 4);
  CHECK(c.hash.size() == 64);
}

TEST_CASE("config hash is stable and sensitive") {
  const auto dir = testsupport::scratch("cfg_hash");
  const auto a = config_in(dir);
  const auto b = config_in(dir);
  CHECK(a.hash == b.hash);
  CHECK(config_in(dir, {"stage1.epochs=4"}).hash != a.hash);
  CHECK(config_in(testsupport::scratch("cfg_hash_other")).hash != a.hash);

  // Key order in the document does not matter.
  const auto doc = fixture_doc();
  nlohmann::ordered_json reversed;
  std::vector<std::string> keys;
  for (auto it = doc.begin(); it != doc.end(); ++it) keys.push_back(it.key());
  for (auto k = keys.rbegin(); k != keys.rend(); ++k) reversed[*k] = doc[*k];
  const auto base = std::filesystem::path(fixture_config()).parent_path();
  const auto env = env_of({{"RADVQA_RUN_DIR", dir.string()}});
  CHECK(parse_config(json::parse(reversed.dump()), base, env).hash == a.hash);
}

TEST_CASE("unknown keys are reported with their path") {
  const auto base = std::filesystem::path(fixture_config()).parent_path();
  const auto env = env_of({{"RADVQA_RUN_DIR", "/tmp/x"}});
  auto doc = fixture_doc();
  doc["stage1"]["momentum"] = 0.9;
  CHECK(config_error_code([&] { parse_config(doc, base, env); }) == "unknown_key");
  CHECK(config_error_message([&] { parse_config(doc, base, env); }).find("stage1.momentum") != std::string::npos);

  doc = fixture_doc();
  doc["qagen"]["client"]["retries"] = 2;
  CHECK(config_error_message([&] { parse_config(doc, base, env); }).find("qagen.client.retries") != std::string::npos);

  doc = fixture_doc();
  doc["extra"] = 1;
  CHECK(config_error_message([&] { parse_config(doc, base, env); }).find("'extra'") != std::string::npos);
}

TEST_CASE("invalid values are config errors") {
  const auto base = std::filesystem::path(fixture_config()).parent_path();
  const auto env = env_of({{"RADVQA_RUN_DIR", "/tmp/x"}});
  auto with = [&](const std::string& o) {
    auto doc = fixture_doc();
    apply_override(doc, o);
    return config_error_code([&] { parse_config(doc, base, env); });
  };
  CHECK(with("data.train_dataset=\"both\"") == "bad_enum");
  CHECK(with("evaluate.runs=0") == "bad_value");
  CHECK(with("qagen.client.kind=\"carrier-pigeon\"") == "bad_enum");
  CHECK(with("stage1.epochs=\"five\"") == "bad_type");
  CHECK(with("data.qa.adapter=\"xml\"") == "bad_enum");
  CHECK(config_error_code([] { load_config(testsupport::fixture("taxonomy.json")); }) != "");
  CHECK(config_error_code([] {
          load_config(fixture_config(), {}, env_of({}));
        }) == "");
}

TEST_CASE("data stages write manifests and an artifact index") {
  const auto dir = testsupport::scratch("stages_data");
  const auto c = config_in(dir);
  const Workspace ws{c.output_dir};

  CHECK_THROWS_AS(run_mix(c), DataError);

  const auto ingest = run_ingest(c);
  CHECK(ingest.summary["config_hash"] == c.hash);
  CHECK(std::filesystem::exists(ws.manifest("qa.train")));
  CHECK(std::filesystem::exists(ws.manifest("qa.test")));

  run_qagen(c);
  run_mix(c);
  CHECK(std::filesystem::exists(ws.manifest("annealed")));
  const auto stats = run_stats(c);
  CHECK_FALSE(stats.artifacts.empty());

  const auto index = json::parse(text::read_file(ws.artifact_index().string()));
  CHECK(index["config_hash"] == c.hash);
  for (const auto& a : stats.artifacts) CHECK(index["files"].contains(a));
  const auto resolved = json::parse(text::read_file(ws.resolved_config().string()));
  CHECK(resolved["config_hash"] == c.hash);

  for (const auto& [file, digest] : index["files"].items()) {
    CAPTURE(file);
    CHECK(digest == sha256_hex(text::read_file((dir / file).string())));
  }
  const auto annealed = corpus::read_manifest(ws.manifest("annealed").string());
  bool tagged = false;
  for (const auto& p : annealed.provenance) tagged = tagged || p == "run config_hash=" + c.hash;
  CHECK(tagged);

  // Re-running a stage reproduces its bytes.
  const auto before = text::read_file(ws.manifest("annealed").string());
  run_mix(c);
  CHECK(text::read_file(ws.manifest("annealed").string()) == before);
}

TEST_CASE("training stages need their inputs") {
  const auto c = config_in(testsupport::scratch("stages_missing"));
  try {
    run_stage1(c);
    FAIL("expected missing_artifact");
  } catch (const DataError& e) {
    CHECK(std::string(e.code()) == "missing_artifact");
  }
  CHECK_THROWS_AS(run_evaluate(c), DataError);
}

TEST_CASE("cli reports errors as json with exit codes") {
  const std::string cli = RADVQA_CLI;
  auto [bad_args, code] = testsupport::run_command(cli + " ingest 2>&1");
  CHECK(code == 2);
  CHECK(json::parse(bad_args)["error"]["code"] == "bad_arguments");

  const auto dir = testsupport::scratch("cli_errors");
  const auto cfg = (dir / "bad.json").string();
  auto doc = fixture_doc();
  doc["stage2"]["warmup"] = 10;
  text::write_file(cfg, doc.dump());
  auto [out, status] = testsupport::run_command("RADVQA_RUN_DIR=" + dir.string() + " " + cli + " ingest -c " + cfg + " 2>&1");
  CHECK(status == 2);
  const auto err = json::parse(out);
  CHECK(err["error"]["code"] == "unknown_key");
  CHECK(err["error"]["stage"] == "config");
  CHECK(err["error"]["message"].get<std::string>().find("stage2.warmup") != std::string::npos);

  auto [out2, status2] = testsupport::run_command("RADVQA_RUN_DIR=" + dir.string() + " " + cli + " train-stage1 -c " +
                                                  fixture_config() + " 2>&1");
  CHECK(status2 == 3);
  CHECK(json::parse(out2)["error"]["code"] == "missing_artifact");
  CHECK(json::parse(out2)["error"]["stage"] == "train-stage1");

  auto [out3, status3] = testsupport::run_command("RADVQA_RUN_DIR=" + dir.string() + " " + cli + " ingest -c " +
                                                  fixture_config() + " --set data.split.seed=4 2>/dev/null");
  CHECK(status3 == 0);
  const auto line = json::parse(out3);
  CHECK(line["stage"] == "ingest");
  CHECK(line["summary"]["config_hash"].get<std::string>().size() == 64);
}

}
