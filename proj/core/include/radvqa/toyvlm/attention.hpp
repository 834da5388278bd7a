#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace radvqa::toyvlm {

enum class Component { vision, lm };

std::string_view to_string(Component c);
Component parse_component(std::string_view s);

/// Softmax attention probabilities captured from one forward pass.
/// `weights[l][h]` is a seq × seq row-stochastic matrix (query rows, key columns).
struct AttentionStack {
  Component component = Component::lm;
  std::vector<std::vector<Eigen::MatrixXd>> weights;
  std::vector<int> token_ids;
  std::size_t image_token_count = 0;
  std::size_t sep_index = 0;
  /// First position holding a generated (response) token; equals seq_len
  /// when nothing was generated.
  std::size_t generated_start = 0;

  std::size_t n_layers() const { return weights.size(); }
  std::size_t n_heads() const { return weights.empty() ? 0 : weights.front().size(); }
  std::size_t seq_len() const { return weights.empty() || weights.front().empty() ? 0 : weights[0][0].rows(); }
  std::size_t response_length() const { return seq_len() - std::min(generated_start, seq_len()); }

  /// Throws ShapeError for ragged layers/heads or non-square matrices and
  /// DataError("non_stochastic") when a row is negative or does not sum to 1.
  void validate(double tol = 1e-5) const;

  /// Largest |w_ij| above the diagonal; zero for causal (LM text) support.
  double max_future_weight(std::size_t from_row = 0) const;
};

nlohmann::ordered_json to_json(const AttentionStack& s);
AttentionStack attention_from_json(const nlohmann::json& j);

}  // namespace radvqa::toyvlm
