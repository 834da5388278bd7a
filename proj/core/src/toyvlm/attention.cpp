#include "radvqa/toyvlm/attention.hpp"

#include <cmath>

#include "radvqa/common/error.hpp"

namespace radvqa::toyvlm {

std::string_view to_string(Component c) { return c == Component::vision ? "vision" : "lm"; }

Component parse_component(std::string_view s) {
  if (s == "vision") return Component::vision;
  if (s == "lm") return Component::lm;
  throw DataError("bad_enum", "unknown component '" + std::string(s) + "'");
}

void AttentionStack::validate(double tol) const {
  if (weights.empty()) throw ShapeError("attention stack has no layers");
  const auto heads = weights.front().size();
  if (heads == 0) throw ShapeError("attention stack has no heads");
  const auto n = weights[0][0].rows();
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].size() != heads) throw ShapeError("layer " + std::to_string(l) + " has a different head count");
    for (std::size_t h = 0; h < heads; ++h) {
      const auto& m = weights[l][h];
      if (m.rows() != n || m.cols() != n) {
        throw ShapeError("attention matrix at layer " + std::to_string(l) + " head " + std::to_string(h) +
                         " is not " + std::to_string(n) + "x" + std::to_string(n));
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        const double s = m.row(i).sum();
        if (m.row(i).minCoeff() < -tol || std::abs(s - 1.0) > tol) {
          throw DataError("non_stochastic", "row " + std::to_string(i) + " at layer " + std::to_string(l) + " head " +
                                                std::to_string(h) + " sums to " + std::to_string(s));
        }
      }
    }
  }
}

double AttentionStack::max_future_weight(std::size_t from_row) const {
  double worst = 0.0;
  for (const auto& layer : weights) {
    for (const auto& m : layer) {
      for (Eigen::Index i = static_cast<Eigen::Index>(from_row); i < m.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < m.cols(); ++j) worst = std::max(worst, std::abs(m(i, j)));
      }
    }
  }
  return worst;
}

nlohmann::ordered_json to_json(const AttentionStack& s) {
  nlohmann::ordered_json j;
  j["component"] = to_string(s.component);
  j["n_layers"] = s.n_layers();
  j["n_heads"] = s.n_heads();
  j["seq_len"] = s.seq_len();
  j["image_token_count"] = s.image_token_count;
  j["sep_index"] = s.sep_index;
  j["generated_start"] = s.generated_start;
  j["token_ids"] = s.token_ids;
  auto& w = j["weights"] = nlohmann::ordered_json::array();
  for (const auto& layer : s.weights) {
    auto lj = nlohmann::ordered_json::array();
    for (const auto& m : layer) {
      auto mj = nlohmann::ordered_json::array();
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(m.cols());
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[c] = m(r, c);
        mj.push_back(std::move(row));
      }
      lj.push_back(std::move(mj));
    }
    w.push_back(std::move(lj));
  }
  return j;
}

AttentionStack attention_from_json(const nlohmann::json& j) {
  try {
    AttentionStack s;
    s.component = parse_component(j.at("component").get<std::string>());
    s.token_ids = j.value("token_ids", std::vector<int>{});
    s.image_token_count = j.at("image_token_count").get<std::size_t>();
    s.sep_index = j.value("sep_index", s.image_token_count);
    for (const auto& lj : j.at("weights")) {
      std::vector<Eigen::MatrixXd> layer;
      for (const auto& mj : lj) {
        const auto rows = static_cast<Eigen::Index>(mj.size());
        Eigen::MatrixXd m(rows, rows);
        for (Eigen::Index r = 0; r < rows; ++r) {
          const auto& row = mj[static_cast<std::size_t>(r)];
          if (static_cast<Eigen::Index>(row.size()) != rows) throw ShapeError("attention matrix is not square");
          for (Eigen::Index c = 0; c < rows; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
        }
        layer.push_back(std::move(m));
      }
      s.weights.push_back(std::move(layer));
    }
    s.generated_start = j.value("generated_start", s.seq_len());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad_attention_dump", e.what());
  }
}

}  // namespace radvqa::toyvlm
