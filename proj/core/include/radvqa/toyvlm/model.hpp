#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "radvqa/common/image.hpp"
#include "radvqa/toyvlm/attention.hpp"
#include "radvqa/toyvlm/autograd.hpp"
#include "radvqa/toyvlm/config.hpp"
#include "radvqa/toyvlm/tokenizer.hpp"

namespace radvqa::toyvlm {

/// Position bookkeeping for [P image slots][SEP][text][pads].
struct SequenceLayout {
  std::size_t image_tokens = 0;
  std::size_t sep_index = 0;
  std::size_t text_begin = 0;
  /// Positions before this attend bidirectionally among themselves; later
  /// positions attend causally.
  std::size_t prefix_end = 0;
  std::size_t length = 0;         // without pads
  std::size_t padded_length = 0;  // with pads
  /// One id per position; image slots hold -1.
  std::vector<int> token_ids;
  bool truncated = false;

  std::size_t pad_count() const { return padded_length - length; }
  std::size_t text_length() const { return length - text_begin; }
};

/// `prefix_len` of the text ids form the bidirectional prompt. Text that does
/// not fit is truncated from the tail (flagged). With `pad`, the sequence is
/// filled to max_len with pad ids. Throws ShapeError when the image slots and
/// separator alone exceed max_len.
SequenceLayout assemble_sequence(std::size_t image_tokens, const std::vector<int>& text_ids, std::size_t prefix_len,
                                 std::size_t max_len, bool pad = true, int sep_id = Tokenizer::kSep,
                                 int pad_id = Tokenizer::kPad);

/// Prefix-LM visibility: key j is visible to query i when j is not padding
/// (or j == i) and j lies in the prefix or j ≤ i.
Mask prefix_lm_mask(const SequenceLayout& layout);

struct VisionOutput {
  Matrix features;  // P × d_vision
  AttentionStack stack;
};

struct ForwardOutput {
  Matrix logits;  // seq × vocab
  AttentionStack stack;
};

struct GenerateOptions {
  int max_new_tokens = 24;
  double temperature = 0.0;  // 0 selects greedy decoding
  std::uint64_t seed = 0;
};

struct Generation {
  std::vector<int> tokens;  // response ids, EOS excluded
  std::string text;
  bool stopped_on_eos = false;
  SequenceLayout layout;  // prompt plus response, unpadded
  /// LM attention over the final sequence; the row of response token k
  /// (position generated_start + k) is the attention that produced token k+1.
  AttentionStack lm_stack;
  AttentionStack vision_stack;
};

using ParamMap = std::map<std::string, Parameter>;

class ToyVlm {
 public:
  ToyVlm(VlmConfig config, Tokenizer tokenizer, std::uint64_t seed);
  /// Rebuilds a model from stored tensors; every expected tensor must be
  /// present with the right shape (adapters are recognized by name).
  ToyVlm(VlmConfig config, Tokenizer tokenizer, ParamMap params, std::optional<LoraSpec> lora);

  const VlmConfig& config() const { return config_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  const ParamMap& params() const { return params_; }
  ParamMap& params() { return params_; }
  const Parameter& param(const std::string& name) const;
  Parameter& param(const std::string& name);

  /// Resamples (nearest neighbour) to the configured size and cuts P
  /// row-major patches of patch_dim pixels scaled to [0,1].
  Matrix patches_from_image(const GrayImage& image) const;

  /// Throws ShapeError when the patch matrix is not P × patch_dim.
  VisionOutput encode_image(const Matrix& patches) const;
  /// Exact affine map features · W + b.
  Matrix project(const Matrix& features) const;
  ForwardOutput forward(const Matrix& image_tokens, const SequenceLayout& layout) const;
  /// Throws ConfigError("bad_max_new_tokens") when max_new_tokens < 1.
  Generation generate(const Matrix& patches, const std::string& prompt, const GenerateOptions& options) const;

  // Graph builders shared by inference and training.
  Var vision_graph(Tape& t, const Matrix& patches, std::vector<std::vector<Matrix>>* attn = nullptr) const;
  Var project_graph(Tape& t, Var features) const;
  /// Logits for `rows` (all positions when null).
  Var lm_graph(Tape& t, Var image_tokens, const SequenceLayout& layout, const std::vector<Eigen::Index>* rows,
               std::vector<std::vector<Matrix>>* attn = nullptr) const;

  /// Adds zero-initialized adapters and makes them the only trainable
  /// tensors. Throws ConfigError when adapters already exist or a target is
  /// unknown.
  void apply_lora(const LoraSpec& spec, std::uint64_t seed);
  const std::optional<LoraSpec>& lora() const { return lora_; }
  /// Folds W += (α/r)·down·up into every adapted weight and drops adapters.
  void merge_lora();
  /// Base weight names an adapter spec touches.
  std::vector<std::string> lora_weight_names(const LoraSpec& spec) const;

  void set_trainable(const std::function<bool(const std::string&)>& predicate);
  std::size_t trainable_parameter_count() const;
  void zero_grad();

  static bool is_adapter(const std::string& name) { return name.rfind("lora.", 0) == 0; }
  static bool is_projection(const std::string& name) { return name.rfind("proj.", 0) == 0; }

 private:
  Var p(Tape& t, const std::string& name) const { return t.param(param(name)); }
  Var linear(Tape& t, const std::string& name, Var x) const;
  Var block(Tape& t, const std::string& prefix, Var x, int heads, const Mask& mask,
            std::vector<std::vector<Matrix>>* attn) const;
  void init_params(std::uint64_t seed);
  void check_params() const;

  VlmConfig config_;
  Tokenizer tokenizer_;
  ParamMap params_;
  std::optional<LoraSpec> lora_;
};

}  // namespace radvqa::toyvlm
