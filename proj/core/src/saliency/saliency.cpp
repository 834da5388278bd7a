#include "radvqa/saliency/saliency.hpp"

#include <algorithm>
#include <cmath>

#include "radvqa/common/error.hpp"

namespace radvqa::saliency {

std::string_view to_string(Direction d) { return d == Direction::token_to_image ? "token_to_image" : "patch_to_tokens"; }
std::string_view to_string(Method m) { return m == Method::raw ? "raw" : "rollout"; }
std::string_view to_string(HeadFusion f) {
  switch (f) {
    case HeadFusion::mean: return "mean";
    case HeadFusion::max: return "max";
    case HeadFusion::min: return "min";
  }
  return "?";
}

Direction parse_direction(std::string_view s) {
  if (s == "token_to_image") return Direction::token_to_image;
  if (s == "patch_to_tokens") return Direction::patch_to_tokens;
  throw ConfigError("bad_enum", "unknown direction '" + std::string(s) + "'");
}

Method parse_method(std::string_view s) {
  if (s == "raw") return Method::raw;
  if (s == "rollout") return Method::rollout;
  throw ConfigError("bad_enum", "unknown method '" + std::string(s) + "'");
}

HeadFusion parse_head_fusion(std::string_view s) {
  if (s == "mean") return HeadFusion::mean;
  if (s == "max") return HeadFusion::max;
  if (s == "min") return HeadFusion::min;
  throw ConfigError("bad_enum", "unknown head fusion '" + std::string(s) + "'");
}

nlohmann::ordered_json to_json(const SaliencyMap& m) {
  nlohmann::ordered_json j;
  j["direction"] = to_string(m.direction);
  j["method"] = to_string(m.method);
  j["scores"] = m.scores;
  j["argmax"] = m.argmax;
  j["positions"] = m.positions;
  j["flags"] = m.flags;
  j["provenance"] = m.provenance;
  return j;
}

namespace {

void check_selector(const Selector& s, std::size_t n, const char* what) {
  if (s && *s >= n) {
    throw ConfigError("index_out_of_range", std::string(what) + " " + std::to_string(*s) + " out of range [0, " +
                                                std::to_string(n) + ")");
  }
}

Eigen::MatrixXd fuse_heads(const std::vector<Eigen::MatrixXd>& heads, HeadFusion fusion, Selector head) {
  if (head) return heads[*head];
  Eigen::MatrixXd out = heads.front();
  for (std::size_t h = 1; h < heads.size(); ++h) {
    switch (fusion) {
      case HeadFusion::mean: out += heads[h]; break;
      case HeadFusion::max: out = out.cwiseMax(heads[h]); break;
      case HeadFusion::min: out = out.cwiseMin(heads[h]); break;
    }
  }
  if (fusion == HeadFusion::mean) out /= static_cast<double>(heads.size());
  return out;
}

// Slices the matrix per the query direction and renormalizes.
SaliencyMap slice(const Eigen::MatrixXd& m, const toyvlm::AttentionStack& stack, const SaliencyQuery& q) {
  const std::size_t P = stack.image_token_count;
  const std::size_t n = static_cast<std::size_t>(m.rows());
  const std::size_t start = std::min(stack.generated_start, n);
  SaliencyMap out;
  out.direction = q.direction;
  out.method = q.method;
  if (q.direction == Direction::token_to_image) {
    if (start + q.index >= n) {
      throw ConfigError("index_out_of_range", "response token " + std::to_string(q.index) + " out of range [0, " +
                                                  std::to_string(n - start) + ")");
    }
    const auto row = static_cast<Eigen::Index>(start + q.index);
    for (std::size_t p = 0; p < P; ++p) {
      out.scores.push_back(std::max(0.0, m(row, static_cast<Eigen::Index>(p))));
      out.positions.push_back(p);
    }
  } else {
    if (q.index >= P) {
      throw ConfigError("index_out_of_range",
                        "patch " + std::to_string(q.index) + " out of range [0, " + std::to_string(P) + ")");
    }
    if (start >= n) throw ConfigError("index_out_of_range", "stack has no response tokens");
    for (std::size_t r = start; r < n; ++r) {
      out.scores.push_back(std::max(0.0, m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q.index))));
      out.positions.push_back(r);
    }
  }
  if (out.scores.empty()) throw ConfigError("index_out_of_range", "empty saliency target");
  double sum = 0.0;
  for (double s : out.scores) sum += s;
  if (sum <= 0.0) {
    std::fill(out.scores.begin(), out.scores.end(), 1.0 / static_cast<double>(out.scores.size()));
    out.flags.push_back("degenerate_uniform");
  } else {
    for (double& s : out.scores) s /= sum;
  }
  out.argmax = static_cast<std::size_t>(std::max_element(out.scores.begin(), out.scores.end()) - out.scores.begin());
  out.provenance["component"] = toyvlm::to_string(stack.component);
  out.provenance["index"] = q.index;
  return out;
}

}  // namespace

Eigen::MatrixXd rollout_matrix(const toyvlm::AttentionStack& stack, HeadFusion fusion, Selector head) {
  stack.validate();
  check_selector(head, stack.n_heads(), "head");
  const auto n = static_cast<Eigen::Index>(stack.seq_len());
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(n, n);
  for (const auto& layer : stack.weights) {
    Eigen::MatrixXd a = fuse_heads(layer, fusion, head) + Eigen::MatrixXd::Identity(n, n);
    for (Eigen::Index i = 0; i < n; ++i) a.row(i) /= a.row(i).sum();
    R = a * R;
  }
  return R;
}

SaliencyMap raw_map(const toyvlm::AttentionStack& stack, const SaliencyQuery& q) {
  stack.validate();
  check_selector(q.layer, stack.n_layers(), "layer");
  check_selector(q.head, stack.n_heads(), "head");
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(stack.seq_len()),
                                              static_cast<Eigen::Index>(stack.seq_len()));
  std::size_t count = 0;
  for (std::size_t l = 0; l < stack.n_layers(); ++l) {
    if (q.layer && *q.layer != l) continue;
    for (std::size_t h = 0; h < stack.n_heads(); ++h) {
      if (q.head && *q.head != h) continue;
      acc += stack.weights[l][h];
      ++count;
    }
  }
  acc /= static_cast<double>(count);
  SaliencyQuery rq = q;
  rq.method = Method::raw;
  auto out = slice(acc, stack, rq);
  out.provenance["method"] = "raw";
  out.provenance["layer"] = q.layer ? nlohmann::ordered_json(*q.layer) : nlohmann::ordered_json("mean_all");
  out.provenance["head"] = q.head ? nlohmann::ordered_json(*q.head) : nlohmann::ordered_json("mean_all");
  return out;
}

SaliencyMap rollout_map(const toyvlm::AttentionStack& stack, const SaliencyQuery& q) {
  const auto R = rollout_matrix(stack, q.head_fusion, q.head);
  SaliencyQuery rq = q;
  rq.method = Method::rollout;
  auto out = slice(R, stack, rq);
  out.provenance["method"] = "rollout";
  out.provenance["layer"] = "all";
  out.provenance["head"] = q.head ? nlohmann::ordered_json(*q.head) : nlohmann::ordered_json("fused");
  out.provenance["head_fusion"] = to_string(q.head_fusion);
  return out;
}

SaliencyMap compute(const toyvlm::AttentionStack& stack, const SaliencyQuery& query) {
  return query.method == Method::raw ? raw_map(stack, query) : rollout_map(stack, query);
}

GridOverlay render_grid(const SaliencyMap& map, std::size_t rows, std::size_t cols, int image_width,
                        int image_height) {
  if (map.direction != Direction::token_to_image) {
    throw ConfigError("bad_direction", "grid rendering needs a token_to_image map");
  }
  if (rows * cols != map.scores.size()) {
    throw ShapeError("grid " + std::to_string(rows) + "x" + std::to_string(cols) + " does not cover " +
                     std::to_string(map.scores.size()) + " patches");
  }
  if (image_width <= 0 || image_height <= 0) throw ConfigError("bad_image_size", "image size must be positive");
  GridOverlay g;
  g.rows = rows;
  g.cols = cols;
  g.image_width = image_width;
  g.image_height = image_height;
  const auto [lo, hi] = std::minmax_element(map.scores.begin(), map.scores.end());
  const double range = *hi - *lo;
  const bool flat = range <= 1e-12;
  if (flat) g.flags.push_back("flat_map");
  for (std::size_t i = 0; i < map.scores.size(); ++i) {
    GridCell c;
    c.row = i / cols;
    c.col = i % cols;
    c.x = static_cast<int>(c.col * static_cast<std::size_t>(image_width) / cols);
    c.y = static_cast<int>(c.row * static_cast<std::size_t>(image_height) / rows);
    c.width = static_cast<int>((c.col + 1) * static_cast<std::size_t>(image_width) / cols) - c.x;
    c.height = static_cast<int>((c.row + 1) * static_cast<std::size_t>(image_height) / rows) - c.y;
    c.intensity = flat ? 0.5 : (map.scores[i] - *lo) / range;
    g.cells.push_back(c);
  }
  g.argmax_row = map.argmax / cols;
  g.argmax_col = map.argmax % cols;
  return g;
}

nlohmann::ordered_json to_json(const GridOverlay& g) {
  nlohmann::ordered_json j;
  j["rows"] = g.rows;
  j["cols"] = g.cols;
  j["image_width"] = g.image_width;
  j["image_height"] = g.image_height;
  auto& cells = j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : g.cells) {
    cells.push_back({{"row", c.row}, {"col", c.col}, {"x", c.x}, {"y", c.y}, {"width", c.width},
                     {"height", c.height}, {"intensity", c.intensity}});
  }
  j["argmax"] = {{"row", g.argmax_row}, {"col", g.argmax_col}};
  j["flags"] = g.flags;
  return j;
}

RgbImage overlay_heatmap(const GrayImage& image, const GridOverlay& grid, double alpha) {
  if (image.width != grid.image_width || image.height != grid.image_height) {
    throw ShapeError("overlay was rendered for a different image size");
  }
  RgbImage out{image.width, image.height, std::vector<std::uint8_t>(image.pixels.size() * 3)};
  for (const auto& c : grid.cells) {
    // Black-red-yellow-white ramp.
    const double t = c.intensity;
    const double heat[3] = {std::clamp(3.0 * t, 0.0, 1.0), std::clamp(3.0 * t - 1.0, 0.0, 1.0),
                            std::clamp(3.0 * t - 2.0, 0.0, 1.0)};
    for (int y = c.y; y < c.y + c.height; ++y) {
      for (int x = c.x; x < c.x + c.width; ++x) {
        const double g = image.at(x, y) / 255.0;
        const auto base = (static_cast<std::size_t>(y) * image.width + x) * 3;
        for (int k = 0; k < 3; ++k) {
          out.pixels[base + k] = static_cast<std::uint8_t>(std::lround(255.0 * ((1.0 - alpha) * g + alpha * heat[k])));
        }
      }
    }
  }
  return out;
}

}  // namespace radvqa::saliency
