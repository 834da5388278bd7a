#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace radvqa::toyvlm {

struct VlmConfig {
  int grid_rows = 8;
  int grid_cols = 8;
  int patch_size = 4;  // pixels per patch side; images are resampled to grid × patch_size
  int d_vision = 32;
  int vision_layers = 1;
  int vision_heads = 4;
  int d_model = 48;
  int lm_layers = 2;
  int lm_heads = 4;
  int mlp_ratio = 2;
  int vocab_size = 512;
  int max_seq_len = 128;
  int pad_token_id = 0;
  int sep_token_id = 1;
  int eos_token_id = 2;
  double init_std = 0.05;

  int patch_count() const { return grid_rows * grid_cols; }
  int patch_dim() const { return patch_size * patch_size; }
  int image_width() const { return grid_cols * patch_size; }
  int image_height() const { return grid_rows * patch_size; }

  /// Throws ConfigError on inconsistent sizes.
  void validate() const;

  bool operator==(const VlmConfig&) const = default;
};

nlohmann::ordered_json to_json(const VlmConfig& c);
/// Unknown keys are rejected; missing keys keep their defaults.
VlmConfig vlm_config_from_json(const nlohmann::json& j);

/// Low-rank adapter request. Targets name attention projections:
/// "vision.q" .. "vision.o", "lm.q" .. "lm.o", or the shorthands
/// "vision.*", "lm.*" and "all".
struct LoraSpec {
  std::vector<std::string> targets{"vision.q", "vision.k", "vision.v", "vision.o",
                                   "lm.q",     "lm.k",     "lm.v",     "lm.o"};
  int rank = 4;
  double alpha = 8.0;

  double scaling() const { return alpha / rank; }
  /// Expands shorthands; throws ConfigError("unknown_lora_target").
  std::vector<std::string> expanded_targets() const;

  bool operator==(const LoraSpec&) const = default;
};

nlohmann::ordered_json to_json(const LoraSpec& s);
LoraSpec lora_spec_from_json(const nlohmann::json& j);

}  // namespace radvqa::toyvlm
