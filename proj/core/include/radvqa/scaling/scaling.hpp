#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace radvqa::scaling {

/// One observation of the fine-tuning loss surface.
struct LossPoint {
  double params = 0.0;  // trainable-parameter count of the fine-tuned subset
  double tokens = 0.0;  // fine-tuning (supervised label) tokens
  double loss = 0.0;    // eval loss, nats/token
};

/// L(X, D) = A * X^-alpha * D^-beta + E
struct ScalingFit {
  double A = 1.0;
  double alpha = 0.0;
  double beta = 0.0;
  double E = 0.0;

  // Diagnostics (filled by fit()).
  double residual_rms = 0.0;      // RMS of observed - predicted loss (nats)
  double log_residual_rms = 0.0;  // RMS in log-loss space, the fitted objective
  std::array<double, 4> std_error{};  // A, alpha, beta, E
  double condition_number = 0.0;
  int iterations = 0;
  bool converged = false;
  std::size_t points = 0;
};

struct FitBounds {
  double A_min = 1e-12, A_max = 1e12;
  double alpha_max = 5.0;
  double beta_max = 5.0;
  double E_max = 1e6;
};

struct FitInit {
  double A = 1.0;
  double alpha = 0.1;
  double beta = 0.1;
  double E = 0.0;
};

/// Exact formula evaluation; throws ConfigError for non-positive inputs.
double predict(const ScalingFit& fit, double params, double tokens);

/// Bounded Levenberg-Marquardt on log-loss residuals. With `init` the run
/// starts from it; without, a fixed grid of starts is tried and the lowest
/// objective kept. Deterministic either way. Errors: fewer than 6 points,
/// non-positive values, a single distinct X or D value (underdetermined).
ScalingFit fit(const std::vector<LossPoint>& points, std::optional<FitInit> init = std::nullopt,
               const FitBounds& bounds = {});

/// Expected loss of a uniform guess over k choices: -ln(1/k) = ln k.
double mcq_loss_floor(int num_choices);

/// CSV with a header naming X, D_f and L columns (in any order).
std::vector<LossPoint> read_points_csv(const std::string& csv_text);

nlohmann::ordered_json to_json(const ScalingFit& fit);

}  // namespace radvqa::scaling
