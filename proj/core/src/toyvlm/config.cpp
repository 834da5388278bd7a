#include "radvqa/toyvlm/config.hpp"

#include <algorithm>
#include <set>

#include "radvqa/common/error.hpp"

namespace radvqa::toyvlm {

void VlmConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError("bad_model_config", std::string(name) + " must be positive");
  };
  positive(grid_rows, "grid_rows");
  positive(grid_cols, "grid_cols");
  positive(patch_size, "patch_size");
  positive(d_vision, "d_vision");
  positive(vision_layers, "vision_layers");
  positive(vision_heads, "vision_heads");
  positive(d_model, "d_model");
  positive(lm_layers, "lm_layers");
  positive(lm_heads, "lm_heads");
  positive(mlp_ratio, "mlp_ratio");
  if (d_model % lm_heads != 0) throw ConfigError("bad_model_config", "d_model must be divisible by lm_heads");
  if (d_vision % vision_heads != 0) {
    throw ConfigError("bad_model_config", "d_vision must be divisible by vision_heads");
  }
  if (vocab_size < 259) throw ConfigError("bad_model_config", "vocab_size must cover the 3 specials and 256 bytes");
  if (max_seq_len < patch_count() + 2) {
    throw ConfigError("bad_model_config", "max_seq_len must exceed patch_count + 1 (image slots and separator)");
  }
  if (pad_token_id != 0 || sep_token_id != 1 || eos_token_id != 2) {
    throw ConfigError("bad_model_config", "special token ids are fixed at pad=0, sep=1, eos=2");
  }
  if (!(init_std > 0.0)) throw ConfigError("bad_model_config", "init_std must be positive");
}

nlohmann::ordered_json to_json(const VlmConfig& c) {
  return {{"grid_rows", c.grid_rows},         {"grid_cols", c.grid_cols},
          {"patch_size", c.patch_size},       {"d_vision", c.d_vision},
          {"vision_layers", c.vision_layers}, {"vision_heads", c.vision_heads},
          {"d_model", c.d_model},             {"lm_layers", c.lm_layers},
          {"lm_heads", c.lm_heads},           {"mlp_ratio", c.mlp_ratio},
          {"vocab_size", c.vocab_size},       {"max_seq_len", c.max_seq_len},
          {"pad_token_id", c.pad_token_id},   {"sep_token_id", c.sep_token_id},
          {"eos_token_id", c.eos_token_id},   {"init_std", c.init_std}};
}

VlmConfig vlm_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("bad_model_config", "model config must be an object");
  VlmConfig c;
  const std::set<std::string> known = [] {
    std::set<std::string> k;
    const auto defaults = to_json(VlmConfig{});
    for (const auto& [key, v] : defaults.items()) k.insert(key);
    return k;
  }();
  for (const auto& [key, v] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown_key", "unknown model config key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, int& out) {
      if (j.contains(key)) out = j.at(key).get<int>();
    };
    get("grid_rows", c.grid_rows);
    get("grid_cols", c.grid_cols);
    get("patch_size", c.patch_size);
    get("d_vision", c.d_vision);
    get("vision_layers", c.vision_layers);
    get("vision_heads", c.vision_heads);
    get("d_model", c.d_model);
    get("lm_layers", c.lm_layers);
    get("lm_heads", c.lm_heads);
    get("mlp_ratio", c.mlp_ratio);
    get("vocab_size", c.vocab_size);
    get("max_seq_len", c.max_seq_len);
    get("pad_token_id", c.pad_token_id);
    get("sep_token_id", c.sep_token_id);
    get("eos_token_id", c.eos_token_id);
    if (j.contains("init_std")) c.init_std = j.at("init_std").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad_model_config", e.what());
  }
  c.validate();
  return c;
}

std::vector<std::string> LoraSpec::expanded_targets() const {
  static const std::vector<std::string> kProj{"q", "k", "v", "o"};
  std::vector<std::string> out;
  auto add = [&](const std::string& t) {
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  };
  for (const auto& t : targets) {
    if (t == "all" || t == "vision.*" || t == "lm.*") {
      for (const char* comp : {"vision", "lm"}) {
        if (t != "all" && t.rfind(comp, 0) != 0) continue;
        for (const auto& p : kProj) add(std::string(comp) + "." + p);
      }
      continue;
    }
    const auto dot = t.find('.');
    const auto comp = t.substr(0, dot);
    const auto proj = dot == std::string::npos ? "" : t.substr(dot + 1);
    if ((comp != "vision" && comp != "lm") || std::find(kProj.begin(), kProj.end(), proj) == kProj.end()) {
      throw ConfigError("unknown_lora_target", "unknown LoRA target '" + t + "'");
    }
    add(t);
  }
  if (out.empty()) throw ConfigError("unknown_lora_target", "LoRA spec names no targets");
  if (rank < 1) throw ConfigError("bad_lora_rank", "LoRA rank must be at least 1");
  return out;
}

nlohmann::ordered_json to_json(const LoraSpec& s) {
  return {{"targets", s.targets}, {"rank", s.rank}, {"alpha", s.alpha}};
}

LoraSpec lora_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("bad_lora_config", "lora config must be an object");
  LoraSpec s;
  for (const auto& [key, v] : j.items()) {
    if (key != "targets" && key != "rank" && key != "alpha") {
      throw ConfigError("unknown_key", "unknown lora config key '" + key + "'");
    }
  }
  try {
    if (j.contains("targets")) s.targets = j.at("targets").get<std::vector<std::string>>();
    if (j.contains("rank")) s.rank = j.at("rank").get<int>();
    if (j.contains("alpha")) s.alpha = j.at("alpha").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad_lora_config", e.what());
  }
  s.expanded_targets();
  return s;
}

}  // namespace radvqa::toyvlm
