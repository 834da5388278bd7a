#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "radvqa/common/random.hpp"
#include "radvqa/common/text.hpp"
#include "radvqa/corpus/types.hpp"
#include "radvqa/toyvlm/attention.hpp"

namespace testsupport {

inline std::string fixture(const std::string& rel) { return std::string(RADVQA_FIXTURE_DIR) + "/" + rel; }
inline std::string golden(const std::string& rel) { return std::string(RADVQA_GOLDEN_DIR) + "/" + rel; }
inline std::string source(const std::string& rel) { return std::string(RADVQA_SOURCE_DIR) + "/" + rel; }

/// Compares against a checked-in golden file. With RADVQA_UPDATE_GOLDEN set
/// the file is rewritten instead and the comparison reports false.
inline bool matches_golden(const std::string& rel, const std::string& actual) {
  const auto path = golden(rel);
  if (std::getenv("RADVQA_UPDATE_GOLDEN")) {
    radvqa::text::write_file(path, actual);
    return false;
  }
  return radvqa::text::read_file(path) == actual;
}

/// Fresh empty directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::path(RADVQA_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Runs a shell command, returning stdout and the exit status.
inline std::pair<std::string, int> run_command(const std::string& cmd) {
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {out, -1};
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
  const int status = pclose(pipe);
  return {out, WIFEXITED(status) ? WEXITSTATUS(status) : -1};
}

inline radvqa::corpus::QARecord make_record(const std::string& id, const std::string& question,
                                            const std::string& answer,
                                            radvqa::corpus::Organ organ = radvqa::corpus::Organ::chest) {
  radvqa::corpus::QARecord r;
  r.id = id;
  r.image.path = "img/" + id + ".pgm";
  r.image.width = 32;
  r.image.height = 32;
  r.image.modality = radvqa::corpus::Modality::xray;
  r.image.organ = organ;
  r.kind = radvqa::corpus::RecordKind::open;
  r.question = question;
  r.answer = answer;
  return r;
}

/// Row-stochastic matrix with positive entries.
inline Eigen::MatrixXd random_stochastic(std::size_t n, radvqa::Rng& rng) {
  Eigen::MatrixXd m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (m(i, j) = rng.uniform() + 1e-3);
    m.row(i) /= s;
  }
  return m;
}

/// Causal row-stochastic matrix (support on j ≤ i).
inline Eigen::MatrixXd random_causal(std::size_t n, radvqa::Rng& rng) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j <= i; ++j) s += (m(i, j) = rng.uniform() + 1e-3);
    m.row(i) /= s;
  }
  return m;
}

inline radvqa::toyvlm::AttentionStack stack_of(std::vector<std::vector<Eigen::MatrixXd>> layers,
                                               std::size_t image_tokens, std::size_t generated_start) {
  radvqa::toyvlm::AttentionStack s;
  s.component = radvqa::toyvlm::Component::lm;
  s.weights = std::move(layers);
  s.image_token_count = image_tokens;
  s.sep_index = image_tokens;
  s.generated_start = generated_start;
  s.token_ids.assign(s.seq_len(), -1);
  return s;
}

}  // namespace testsupport
