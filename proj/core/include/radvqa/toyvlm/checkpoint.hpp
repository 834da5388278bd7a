#pragma once

#include <map>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "radvqa/toyvlm/model.hpp"

namespace radvqa::toyvlm {

enum class Stage { base, stage1, stage2 };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

/// SHA-256 over the shape and the row-major little-endian float64 values.
std::string tensor_hash(const Matrix& m);
std::map<std::string, std::string> tensor_hashes(const ToyVlm& model);
/// Digest of config, tokenizer, adapter spec and every tensor hash.
std::string content_hash(const ToyVlm& model);

struct LoadedCheckpoint {
  ToyVlm model;
  Stage stage = Stage::base;
  nlohmann::ordered_json trainer;
  std::string content_hash;
};

/// Layout: "RVQACKPT", u32 version, u64 metadata length, metadata JSON, then
/// each tensor's values (row-major float64) in metadata order. The file is
/// a pure function of its inputs.
void save_checkpoint(const std::string& path, const ToyVlm& model, Stage stage,
                     const nlohmann::ordered_json& trainer = nlohmann::ordered_json::object());
/// Verifies every tensor hash and the content hash; DataError("checkpoint_corrupt") otherwise.
LoadedCheckpoint load_checkpoint(const std::string& path);
nlohmann::ordered_json read_checkpoint_metadata(const std::string& path);

}  // namespace radvqa::toyvlm
