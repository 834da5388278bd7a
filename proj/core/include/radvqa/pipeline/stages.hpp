#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radvqa/corpus/types.hpp"
#include "radvqa/evalkit/judge.hpp"
#include "radvqa/evalkit/report.hpp"
#include "radvqa/pipeline/config.hpp"
#include "radvqa/qaforge/client.hpp"
#include "radvqa/toyvlm/model.hpp"

namespace radvqa::pipeline {

/// Fixed layout of a run's output directory.
struct Workspace {
  std::filesystem::path root;

  std::filesystem::path manifest(const std::string& name) const { return root / "manifests" / (name + ".jsonl"); }
  std::filesystem::path checkpoint(const std::string& name) const { return root / "checkpoints" / (name + ".ckpt"); }
  std::filesystem::path report(const std::string& file) const { return root / "reports" / file; }
  std::filesystem::path curve(const std::string& name) const { return root / "curves" / (name + ".csv"); }
  std::filesystem::path saliency(const std::string& file) const { return root / "saliency" / file; }
  std::filesystem::path resolved_config() const { return root / "resolved_config.json"; }
  std::filesystem::path artifact_index() const { return root / "artifacts.json"; }
};

struct StageResult {
  std::string stage;
  std::vector<std::string> artifacts;  // relative to the workspace root
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();
};

/// Builds the client a config section names. Judge-mode echo clients
/// answer through `judge_template`.
std::unique_ptr<qaforge::TextGenClient> make_client(const ClientConfig& c,
                                                    const qaforge::PromptTemplate* judge_template = nullptr);

/// Resolves every record's image to an absolute path (or URL) so manifests
/// from different directories can be combined.
corpus::DatasetManifest detach(const corpus::DatasetManifest& m);

struct EvalOutcome {
  evalkit::EvalReport report;
  std::vector<evalkit::JudgeVerdict> verdicts;  // open-ended items, every run
  std::string generations_jsonl;
};

/// Runs `runs` sampled inferences per test record and scores them: per-run
/// accuracy (exact match for closed items, judge verdicts for open ones),
/// robust closed-ended accuracy, n-gram metrics on open answers, and organ
/// tallies from the first run.
EvalOutcome evaluate_model(const toyvlm::ToyVlm& model, const corpus::DatasetManifest& test,
                           const EvaluateConfig& cfg, qaforge::TextGenClient& judge,
                           const qaforge::PromptTemplate& judge_template, std::uint64_t seed);

StageResult run_ingest(const RunConfig& c);
StageResult run_qagen(const RunConfig& c);
StageResult run_mix(const RunConfig& c);
StageResult run_stats(const RunConfig& c);
StageResult run_pretrain(const RunConfig& c);
StageResult run_stage1(const RunConfig& c);
/// Starts from `init` (default: the stage-1 checkpoint).
StageResult run_stage2(const RunConfig& c, const std::optional<std::string>& init = std::nullopt);

struct EvaluateRequest {
  std::optional<std::string> checkpoint;  // default: the stage-2 checkpoint
  std::optional<std::string> dataset;     // manifest path; default: the configured test split
};
StageResult run_evaluate(const RunConfig& c, const EvaluateRequest& req = {});
StageResult run_ablate(const RunConfig& c);
/// Fits points from `csv` (default: config points, else a LoRA sweep).
StageResult run_scaling_fit(const RunConfig& c, const std::optional<std::string>& csv = std::nullopt);

struct SaliencyExportRequest {
  std::optional<std::string> checkpoint;
  std::optional<std::string> record;
  std::optional<std::size_t> token_index;
};
StageResult run_saliency_export(const RunConfig& c, const SaliencyExportRequest& req = {});

inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> kStages{"ingest",   "qagen",    "mix",    "stats",       "pretrain",
                                                "stage1",   "stage2",   "evaluate", "ablate",    "scaling-fit",
                                                "saliency-export"};
  return kStages;
}

using StageCallback = std::function<void(const StageResult&)>;

/// Runs every stage in order, stopping at the first failure (the exception
/// propagates).
std::vector<StageResult> run_pipeline(const RunConfig& c, const StageCallback& on_stage = nullptr);

}  // namespace radvqa::pipeline
