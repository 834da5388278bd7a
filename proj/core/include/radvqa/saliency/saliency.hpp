#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "radvqa/common/image.hpp"
#include "radvqa/toyvlm/attention.hpp"

namespace radvqa::saliency {

enum class Direction { token_to_image, patch_to_tokens };
enum class Method { raw, rollout };
enum class HeadFusion { mean, max, min };

std::string_view to_string(Direction d);
std::string_view to_string(Method m);
std::string_view to_string(HeadFusion f);
Direction parse_direction(std::string_view s);
Method parse_method(std::string_view s);
HeadFusion parse_head_fusion(std::string_view s);

/// Layer or head choice: a single index, or nullopt for the mean over all.
using Selector = std::optional<std::size_t>;

struct SaliencyQuery {
  Direction direction = Direction::token_to_image;
  /// token_to_image: offset into the response (0 = first generated token).
  /// patch_to_tokens: patch index in [0, P).
  std::size_t index = 0;
  Method method = Method::raw;
  Selector layer;  // ignored by rollout
  Selector head;   // for rollout a single head replaces head fusion
  HeadFusion head_fusion = HeadFusion::mean;
};

struct SaliencyMap {
  Direction direction = Direction::token_to_image;
  Method method = Method::raw;
  std::vector<double> scores;  // nonnegative, sums to 1
  std::size_t argmax = 0;
  /// Sequence positions the scores refer to (patch slots or response tokens).
  std::vector<std::size_t> positions;
  std::vector<std::string> flags;  // degenerate_uniform
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();
};

nlohmann::ordered_json to_json(const SaliencyMap& m);

/// Per-layer head fusion, identity residual, row renormalization, then
/// R = Â_L ··· Â_1. Validates the stack first.
Eigen::MatrixXd rollout_matrix(const toyvlm::AttentionStack& stack, HeadFusion fusion = HeadFusion::mean,
                               Selector head = std::nullopt);

/// Errors: ConfigError("index_out_of_range") for a bad index or selector.
SaliencyMap raw_map(const toyvlm::AttentionStack& stack, const SaliencyQuery& query);
SaliencyMap rollout_map(const toyvlm::AttentionStack& stack, const SaliencyQuery& query);
/// Dispatches on query.method.
SaliencyMap compute(const toyvlm::AttentionStack& stack, const SaliencyQuery& query);

struct GridCell {
  std::size_t row = 0;
  std::size_t col = 0;
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
  double intensity = 0.0;
};

struct GridOverlay {
  std::size_t rows = 0;
  std::size_t cols = 0;
  int image_width = 0;
  int image_height = 0;
  std::vector<GridCell> cells;  // row-major
  std::size_t argmax_row = 0;
  std::size_t argmax_col = 0;
  std::vector<std::string> flags;  // flat_map
};

/// Min-max normalizes a token_to_image map onto a rows × cols grid. A flat
/// map renders every cell at 0.5 with the flat_map flag.
GridOverlay render_grid(const SaliencyMap& map, std::size_t rows, std::size_t cols, int image_width, int image_height);

nlohmann::ordered_json to_json(const GridOverlay& g);

/// Grayscale image with the overlay blended in a heat colormap.
RgbImage overlay_heatmap(const GrayImage& image, const GridOverlay& grid, double alpha = 0.5);

}  // namespace radvqa::saliency
