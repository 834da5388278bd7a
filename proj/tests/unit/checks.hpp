#pragma once

#include <cmath>
#include <map>
#include <string>

#include "radvqa/corpus/ingest.hpp"
#include "radvqa/toyvlm/checkpoint.hpp"
#include "radvqa/toyvlm/model.hpp"
#include "radvqa/toyvlm/train.hpp"
#include "support.hpp"

namespace testsupport {

/// d_model = 8 configuration for exact-arithmetic checks.
inline radvqa::toyvlm::VlmConfig tiny_config() {
  radvqa::toyvlm::VlmConfig c;
  c.grid_rows = 2;
  c.grid_cols = 2;
  c.patch_size = 4;
  c.d_vision = 8;
  c.vision_layers = 1;
  c.vision_heads = 2;
  c.d_model = 8;
  c.lm_layers = 2;
  c.lm_heads = 2;
  c.vocab_size = 300;
  c.max_seq_len = 64;
  c.init_std = 0.3;
  return c;
}

inline const radvqa::corpus::DatasetManifest& qa200() {
  static const auto m = radvqa::corpus::ingest(fixture("qa200"), radvqa::corpus::Adapter::qa_pairs).manifest;
  return m;
}

inline radvqa::corpus::DatasetManifest head(const radvqa::corpus::DatasetManifest& m, std::size_t n,
                                            std::size_t offset = 0) {
  auto out = m;
  out.records.assign(m.records.begin() + static_cast<long>(offset),
                     m.records.begin() + static_cast<long>(std::min(m.size(), offset + n)));
  return out;
}

inline radvqa::toyvlm::Tokenizer fixture_tokenizer(int vocab) {
  std::vector<std::string> texts;
  for (const auto& r : qa200().records) texts.push_back(r.question + " " + r.answer);
  return radvqa::toyvlm::Tokenizer::train(texts, vocab);
}

/// Hashes of every tensor for which `keep` is true.
template <typename Pred>
std::map<std::string, std::string> hashes_where(const radvqa::toyvlm::ToyVlm& m, Pred keep) {
  std::map<std::string, std::string> out;
  for (const auto& [name, p] : m.params()) {
    if (keep(name)) out[name] = radvqa::toyvlm::tensor_hash(p.value);
  }
  return out;
}

struct GradCheck {
  double norm_relative = 0.0;  // ||a - n|| / max(||a||, ||n||)
  double max_entry_relative = 0.0;
  std::size_t entries = 0;
};

/// Analytic projection gradients against central finite differences of the
/// same loss.
inline GradCheck projection_gradcheck(radvqa::toyvlm::ToyVlm& model, const radvqa::toyvlm::Dataset& data,
                                      const std::vector<std::size_t>& examples, double h = 1e-5) {
  using radvqa::toyvlm::accumulate_gradients;
  model.set_trainable(radvqa::toyvlm::ToyVlm::is_projection);
  model.zero_grad();
  accumulate_gradients(model, data, examples);
  GradCheck out;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (const char* name : {"proj.w", "proj.b"}) {
    auto& p = model.param(name);
    const radvqa::toyvlm::Matrix analytic = p.grad;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double orig = p.value.data()[i];
      p.value.data()[i] = orig + h;
      model.zero_grad();
      const double up = accumulate_gradients(model, data, examples);
      p.value.data()[i] = orig - h;
      model.zero_grad();
      const double down = accumulate_gradients(model, data, examples);
      p.value.data()[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.data()[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      out.max_entry_relative = std::max(out.max_entry_relative, std::abs(a - numeric) / denom);
      ++out.entries;
    }
  }
  model.zero_grad();
  out.norm_relative = std::sqrt(diff2) / std::max(std::sqrt(std::max(a2, n2)), 1e-300);
  return out;
}

}  // namespace testsupport
