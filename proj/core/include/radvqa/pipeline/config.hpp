#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radvqa/corpus/ingest.hpp"
#include "radvqa/corpus/split.hpp"
#include "radvqa/qaforge/generate.hpp"
#include "radvqa/saliency/saliency.hpp"
#include "radvqa/toyvlm/config.hpp"
#include "radvqa/toyvlm/train.hpp"

namespace radvqa::pipeline {

/// Looks up an environment variable; injectable for tests.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_env();

/// Replaces `${NAME}` and `${NAME:-fallback}` in every string value. An
/// unset variable without a fallback raises ConfigError("unset_env").
nlohmann::json interpolate_env(const nlohmann::json& j, const EnvLookup& env);

/// Applies "a.b.c=value" overrides. The value is parsed as JSON when it
/// parses, otherwise taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

struct SourceConfig {
  std::string path;
  corpus::Adapter adapter = corpus::Adapter::qa_pairs;
};

struct ClientConfig {
  std::string kind = "replay";  // replay, echo, http
  std::string cassette;
  std::string url;
  std::string api_key_env = "RADVQA_API_KEY";
  int timeout_seconds = 60;
};

struct QagenConfig {
  bool enabled = true;
  SourceConfig captions{"", corpus::Adapter::caption_pairs};
  qaforge::TemplateMode mode = qaforge::TemplateMode::case_based;
  std::string template_path;
  ClientConfig client;
  std::string filter_path;  // optional FilterRules JSON
  qaforge::GenerateOptions options;
};

struct MixConfig {
  std::string taxonomy;
  double enrichment_fraction = 0.3;
  std::size_t top_k_pathologies = 3;
  std::uint64_t seed = 0;
  bool include_synthetic = true;
};

struct EvaluateConfig {
  std::string dataset = "qa";
  int runs = 5;
  double temperature = 0.7;
  int max_new_tokens = 16;
  std::string judge_template;
  ClientConfig judge_client{"echo", "", "", "RADVQA_API_KEY", 60};
  std::size_t judge_concurrency = 1;
};

struct AblateConfig {
  std::vector<std::string> datasets{"qa", "annealed"};
};

struct ScalingSweepConfig {
  std::vector<int> ranks{1, 2, 4};
  std::vector<double> fractions{0.34, 0.67, 1.0};
  int epochs = 2;
};

struct ScalingConfig {
  std::string points;  // CSV; when empty the sweep produces the points
  ScalingSweepConfig sweep;
};

struct SaliencyConfig {
  std::string record;  // record id; first test record when empty
  std::size_t token_index = 0;
  std::vector<saliency::Method> methods{saliency::Method::raw, saliency::Method::rollout};
  saliency::HeadFusion head_fusion = saliency::HeadFusion::mean;
  int max_new_tokens = 16;
};

struct RunConfig {
  std::string name = "run";
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;

  SourceConfig captions{"", corpus::Adapter::caption_pairs};
  SourceConfig qa;
  std::optional<SourceConfig> enrichment;
  corpus::SplitRatios split{0.8, 0.1, 0.1};
  std::uint64_t split_seed = 0;
  std::string train_dataset = "annealed";

  QagenConfig qagen;
  MixConfig mix;
  std::size_t stats_top_k = 5;
  toyvlm::VlmConfig model;
  toyvlm::TrainHyper pretrain;
  toyvlm::TrainHyper stage1;
  toyvlm::TrainHyper stage2;
  toyvlm::LoraSpec lora;
  EvaluateConfig evaluate;
  AblateConfig ablate;
  ScalingConfig scaling;
  SaliencyConfig saliency;

  /// Interpolated config document; paths stay as written.
  nlohmann::ordered_json resolved;
  /// SHA-256 of `resolved` in canonical (sorted-key) form.
  std::string hash;
};

/// Parses a config document. Relative paths resolve against `base_dir`.
/// Unknown keys anywhere raise ConfigError("unknown_key") naming the path.
RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir, const EnvLookup& env);

/// Reads, interpolates, applies overrides and parses.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {},
                      const EnvLookup& env = process_env());

}  // namespace radvqa::pipeline
