#include <csignal>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "radvqa/common/error.hpp"
#include "radvqa/inspector/service.hpp"
#include "radvqa/pipeline/config.hpp"
#include "radvqa/pipeline/stages.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

using radvqa::pipeline::RunConfig;
using radvqa::pipeline::StageResult;

int fail(int code, const std::string& stage, const std::string& error_code, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = {{"code", error_code}, {"message", message}, {"stage", stage}};
  std::cerr << j.dump() << std::endl;
  return code;
}

void print(const StageResult& r) {
  nlohmann::ordered_json j;
  j["stage"] = r.stage;
  j["artifacts"] = r.artifacts;
  j["summary"] = r.summary;
  std::cout << j.dump() << std::endl;
}

radvqa::inspector::InspectorService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"radvqa: radiological VQA toolkit (corpus, synthetic QA, toy VLM training, evaluation, saliency)"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* sub, bool required = true) {
    auto* opt = sub->add_option("-c,--config", config_path, "Pipeline config (JSON)")->check(CLI::ExistingFile);
    if (required) opt->required();
    sub->add_option("--set", overrides, "Override a config value, e.g. --set stage1.epochs=3 (repeatable)");
  };

  std::optional<std::string> init, checkpoint, dataset, points, record;
  std::optional<std::size_t> token_index;

  auto* ingest = app.add_subcommand("ingest", "Ingest caption, QA and enrichment sources; write manifests and splits");
  auto* qagen = app.add_subcommand("qagen", "Generate synthetic QA pairs from captions through a text-generation client");
  auto* mix = app.add_subcommand("mix", "Filter enrichment records by pathology and anneal them into the base set");
  auto* stats = app.add_subcommand("stats", "Write distribution reports for the manifests of a run");
  auto* pretrain = app.add_subcommand("pretrain", "Train the base checkpoint on captions (all weights)");
  auto* stage1 = app.add_subcommand("train-stage1", "Stage 1: train the projection head only");
  auto* stage2 = app.add_subcommand("train-stage2", "Stage 2: train low-rank adapters only");
  stage2->add_option("--init", init, "Checkpoint to start from (default: the run's stage-1 checkpoint)")
      ->check(CLI::ExistingFile);
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint; writes an EvalReport");
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint (default: the run's stage-2 checkpoint)")
      ->check(CLI::ExistingFile);
  evaluate->add_option("--dataset", dataset, "Manifest JSONL to evaluate (default: the run's test split)")
      ->check(CLI::ExistingFile);
  auto* ablate = app.add_subcommand("ablate", "Compare stage 2 with and without stage 1 across datasets");
  auto* scaling = app.add_subcommand("scaling-fit", "Fit the empirical loss model to (X, D_f, L) points");
  scaling->add_option("--points", points, "CSV of points (default: config, else a LoRA sweep)")->check(CLI::ExistingFile);
  auto* sal = app.add_subcommand("saliency-export", "Export attention dumps, saliency maps and overlays for one case");
  sal->add_option("--checkpoint", checkpoint, "Checkpoint (default: the run's stage-2 checkpoint)")
      ->check(CLI::ExistingFile);
  sal->add_option("--record", record, "Record id (default: config, else the first test record)");
  sal->add_option("--token", token_index, "Response token index to query");
  auto* pipe = app.add_subcommand("pipeline", "Run every stage in order, stopping at the first failure");

  for (auto* sub : {ingest, qagen, mix, stats, pretrain, stage1, stage2, evaluate, ablate, scaling, sal, pipe}) {
    add_config(sub);
  }

  auto* serve = app.add_subcommand("serve", "Serve the inspector HTTP API");
  std::string serve_ckpt, data_dir, host = "127.0.0.1";
  int port = 8080;
  std::size_t max_body = 1 << 20;
  serve->add_option("--checkpoint", serve_ckpt, "Checkpoint loaded at startup")->check(CLI::ExistingFile);
  serve->add_option("--port", port, "TCP port")->check(CLI::Range(1, 65535));
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--data-dir", data_dir, "Case store and verdict log directory")->required();
  serve->add_option("--max-body", max_body, "Largest accepted request body in bytes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail(kExitConfig, "cli", "bad_arguments", e.what());
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string stage = chosen->get_name();

  if (chosen == serve) {
    try {
      radvqa::inspector::ServiceOptions opts;
      opts.checkpoint = serve_ckpt;
      opts.data_dir = data_dir;
      opts.max_body_bytes = max_body;
      radvqa::inspector::InspectorService service(opts);
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "serving on http://" << host << ":" << port << (service.has_model() ? "" : " (no checkpoint)")
                << std::endl;
      if (!service.listen(host, port)) return fail(kExitStage, stage, "bind_failed", "cannot bind " + host);
      g_service = nullptr;
      return 0;
    } catch (const radvqa::ConfigError& e) {
      return fail(kExitConfig, stage, e.code(), e.what());
    } catch (const radvqa::Error& e) {
      return fail(kExitStage, stage, e.code(), e.what());
    } catch (const std::exception& e) {
      return fail(kExitStage, stage, "internal", e.what());
    }
  }

  RunConfig config;
  try {
    config = radvqa::pipeline::load_config(config_path, overrides);
  } catch (const radvqa::Error& e) {
    return fail(kExitConfig, "config", e.code(), e.what());
  } catch (const std::exception& e) {
    return fail(kExitConfig, "config", "bad_config", e.what());
  }

  std::string current = stage;
  try {
    namespace p = radvqa::pipeline;
    if (chosen == ingest) print(p::run_ingest(config));
    if (chosen == qagen) print(p::run_qagen(config));
    if (chosen == mix) print(p::run_mix(config));
    if (chosen == stats) print(p::run_stats(config));
    if (chosen == pretrain) print(p::run_pretrain(config));
    if (chosen == stage1) print(p::run_stage1(config));
    if (chosen == stage2) print(p::run_stage2(config, init));
    if (chosen == evaluate) print(p::run_evaluate(config, {checkpoint, dataset}));
    if (chosen == ablate) print(p::run_ablate(config));
    if (chosen == scaling) print(p::run_scaling_fit(config, points));
    if (chosen == sal) print(p::run_saliency_export(config, {checkpoint, record, token_index}));
    if (chosen == pipe) {
      const auto& stages = p::pipeline_stages();
      std::size_t next = 0;
      current = stages[next];
      p::run_pipeline(config, [&](const StageResult& r) {
        print(r);
        if (++next < stages.size()) current = stages[next];
      });
    }
  } catch (const radvqa::ConfigError& e) {
    return fail(kExitConfig, current, e.code(), e.what());
  } catch (const radvqa::Error& e) {
    return fail(kExitStage, current, e.code(), e.what());
  } catch (const std::exception& e) {
    return fail(kExitStage, current, "internal", e.what());
  }
  return 0;
}
