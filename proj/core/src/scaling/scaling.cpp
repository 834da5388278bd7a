#include "radvqa/scaling/scaling.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "radvqa/common/error.hpp"
#include "radvqa/common/text.hpp"

namespace radvqa::scaling {
namespace {

// Internal parametrization: theta = (c, alpha, beta, E) with
//   T(X, D) = exp(c) * (X/X0)^-alpha * (D/D0)^-beta,   L = T + E,
// where X0, D0 are geometric means of the design. Centering decorrelates
// the amplitude from the exponents; A = exp(c) * X0^alpha * D0^beta.
struct Problem {
  std::vector<double> log_x;  // ln(X/X0)
  std::vector<double> log_d;  // ln(D/D0)
  std::vector<double> log_l;  // ln L
  double log_x0 = 0.0;
  double log_d0 = 0.0;
};

using Vec4 = Eigen::Vector4d;

struct Box {
  Vec4 lo;
  Vec4 hi;
};

double amplitude_log(const Problem& p, const Vec4& th) { return th[0] + th[1] * p.log_x0 + th[2] * p.log_d0; }

// Residuals r_i = ln(L_pred) - ln(L_obs) and Jacobian J (n x 4).
void evaluate(const Problem& p, const Vec4& th, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
  const auto n = static_cast<Eigen::Index>(p.log_l.size());
  r.resize(n);
  if (J) J->resize(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double t = std::exp(th[0] - th[1] * p.log_x[k] - th[2] * p.log_d[k]);
    const double l = t + th[3];
    r[i] = std::log(l) - p.log_l[k];
    if (J) {
      (*J)(i, 0) = t / l;
      (*J)(i, 1) = -p.log_x[k] * t / l;
      (*J)(i, 2) = -p.log_d[k] * t / l;
      (*J)(i, 3) = 1.0 / l;
    }
  }
}

Vec4 clamp(const Vec4& th, const Box& box) { return th.cwiseMax(box.lo).cwiseMin(box.hi); }

struct Run {
  Vec4 theta;
  double cost;
  int iterations;
  bool converged;
};

Run levenberg_marquardt(const Problem& p, Vec4 th, const Box& box) {
  th = clamp(th, box);
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  evaluate(p, th, r, &J);
  double cost = 0.5 * r.squaredNorm();
  double lambda = 1e-3;
  bool converged = false;
  int it = 0;
  for (; it < 500; ++it) {
    const Eigen::Matrix4d JtJ = J.transpose() * J;
    const Vec4 g = J.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() < 1e-15) {
      converged = true;
      break;
    }
    bool accepted = false;
    while (lambda < 1e16) {
      Eigen::Matrix4d A = JtJ;
      for (int d = 0; d < 4; ++d) A(d, d) += lambda * std::max(JtJ(d, d), 1e-12);
      const Vec4 step = A.ldlt().solve(-g);
      const Vec4 cand = clamp(th + step, box);
      Eigen::VectorXd rc;
      evaluate(p, cand, rc, nullptr);
      const double cc = 0.5 * rc.squaredNorm();
      if (std::isfinite(cc) && cc < cost) {
        const double rel = (cost - cc) / std::max(cost, 1e-300);
        const double moved = (cand - th).lpNorm<Eigen::Infinity>();
        th = cand;
        cost = cc;
        evaluate(p, th, r, &J);
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        if (rel < 1e-15 || moved < 1e-14 || cost < 1e-30) converged = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      converged = true;  // no descent direction left inside the box
      break;
    }
    if (converged) break;
  }
  return {th, cost, it, converged};
}

Problem make_problem(const std::vector<LossPoint>& points) {
  if (points.size() < 6) {
    throw ConfigError("too_few_points", "fit needs at least 6 loss points, got " + std::to_string(points.size()));
  }
  std::set<double> xs;
  std::set<double> ds;
  for (const auto& pt : points) {
    if (!(pt.params > 0.0) || !(pt.tokens > 0.0) || !(pt.loss > 0.0)) {
      throw ConfigError("nonpositive_point", "loss points need X > 0, D_f > 0 and L > 0");
    }
    xs.insert(pt.params);
    ds.insert(pt.tokens);
  }
  if (xs.size() < 2) throw ConfigError("underdetermined", "underdetermined design: X has a single distinct value");
  if (ds.size() < 2) throw ConfigError("underdetermined", "underdetermined design: D_f has a single distinct value");

  Problem p;
  for (const auto& pt : points) {
    p.log_x0 += std::log(pt.params);
    p.log_d0 += std::log(pt.tokens);
  }
  p.log_x0 /= static_cast<double>(points.size());
  p.log_d0 /= static_cast<double>(points.size());
  for (const auto& pt : points) {
    p.log_x.push_back(std::log(pt.params) - p.log_x0);
    p.log_d.push_back(std::log(pt.tokens) - p.log_d0);
    p.log_l.push_back(std::log(pt.loss));
  }
  return p;
}

}  // namespace

double predict(const ScalingFit& fit, double params, double tokens) {
  if (!(params > 0.0) || !(tokens > 0.0)) {
    throw ConfigError("nonpositive_input", "predict needs X > 0 and D_f > 0");
  }
  return fit.A * std::pow(params, -fit.alpha) * std::pow(tokens, -fit.beta) + fit.E;
}

ScalingFit fit(const std::vector<LossPoint>& points, std::optional<FitInit> init, const FitBounds& bounds) {
  const Problem p = make_problem(points);
  const double min_loss = std::min_element(points.begin(), points.end(), [](auto& a, auto& b) {
                            return a.loss < b.loss;
                          })->loss;

  // Bounds in the internal parametrization. The amplitude bound applies to
  // A itself, so it is enforced after the fit via the clamp on c below.
  Box box;
  box.lo << -700.0, 0.0, 0.0, 0.0;
  box.hi << 700.0, bounds.alpha_max, bounds.beta_max, bounds.E_max;

  auto to_internal = [&](const FitInit& s) {
    const double c = std::log(std::max(s.A, 1e-300)) - s.alpha * p.log_x0 - s.beta * p.log_d0;
    return Vec4(c, s.alpha, s.beta, s.E);
  };

  std::vector<FitInit> starts;
  if (init) {
    starts.push_back(*init);
  } else {
    for (double a : {0.1, 0.3, 0.6, 1.0}) {
      for (double b : {0.1, 0.3, 0.6, 1.0}) {
        for (double e_frac : {0.0, 0.5, 0.9}) {
          const double e = e_frac * min_loss;
          // Choose A so the start passes through the smallest loss.
          const double amp = std::max(min_loss - e, 1e-6) * std::exp(a * p.log_x0 + b * p.log_d0);
          starts.push_back({amp, a, b, e});
        }
      }
    }
  }

  Run best{Vec4::Zero(), std::numeric_limits<double>::infinity(), 0, false};
  for (const auto& s : starts) {
    Run run = levenberg_marquardt(p, to_internal(s), box);
    if (run.cost < best.cost) best = run;
  }

  ScalingFit out;
  const Vec4& th = best.theta;
  const double log_a = std::clamp(amplitude_log(p, th), std::log(bounds.A_min), std::log(bounds.A_max));
  out.A = std::exp(log_a);
  out.alpha = th[1];
  out.beta = th[2];
  out.E = th[3];
  out.iterations = best.iterations;
  out.converged = best.converged;
  out.points = points.size();

  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  evaluate(p, th, r, &J);
  out.log_residual_rms = std::sqrt(r.squaredNorm() / static_cast<double>(r.size()));
  double ss = 0.0;
  for (const auto& pt : points) {
    const double d = pt.loss - predict(out, pt.params, pt.tokens);
    ss += d * d;
  }
  out.residual_rms = std::sqrt(ss / static_cast<double>(points.size()));

  // Covariance of internal parameters, mapped to (A, alpha, beta, E) via the
  // Jacobian of the reparametrization.
  const Eigen::Matrix4d JtJ = J.transpose() * J;
  Eigen::JacobiSVD<Eigen::Matrix4d> svd(JtJ);
  const auto& sv = svd.singularValues();
  out.condition_number = sv[3] > 0.0 ? sv[0] / sv[3] : std::numeric_limits<double>::infinity();
  const double dof = static_cast<double>(points.size()) - 4.0;
  if (dof > 0.0 && sv[3] > 0.0) {
    const double s2 = r.squaredNorm() / dof;
    const Eigen::Matrix4d cov = JtJ.inverse() * s2;
    Eigen::Matrix4d M = Eigen::Matrix4d::Identity();
    M(0, 0) = out.A;
    M(0, 1) = out.A * p.log_x0;
    M(0, 2) = out.A * p.log_d0;
    const Eigen::Matrix4d ext = M * cov * M.transpose();
    for (int k = 0; k < 4; ++k) out.std_error[static_cast<std::size_t>(k)] = std::sqrt(std::max(ext(k, k), 0.0));
  }
  return out;
}

double mcq_loss_floor(int num_choices) {
  if (num_choices < 2) throw ConfigError("bad_choice_count", "mcq_loss_floor needs at least 2 choices");
  return -std::log(1.0 / static_cast<double>(num_choices));
}

std::vector<LossPoint> read_points_csv(const std::string& csv_text) {
  std::istringstream in(csv_text);
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (!text::trim(line).empty()) break;
  }
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) header.push_back(text::to_lower_ascii(text::trim(cell)));
  }
  auto column = [&](std::initializer_list<const char*> names) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i) {
      for (const char* n : names) {
        if (header[i] == n) return i;
      }
    }
    throw DataError("bad_csv", "loss CSV header lacks one of the X, D_f, L columns");
  };
  const std::size_t cx = column({"x", "params"});
  const std::size_t cd = column({"d_f", "df", "tokens"});
  const std::size_t cl = column({"l", "loss"});

  std::vector<LossPoint> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(text::trim(cell));
    try {
      out.push_back({std::stod(cells.at(cx)), std::stod(cells.at(cd)), std::stod(cells.at(cl))});
    } catch (const std::exception&) {
      throw DataError("bad_csv", "loss CSV line " + std::to_string(line_no) + " is malformed");
    }
  }
  return out;
}

nlohmann::ordered_json to_json(const ScalingFit& f) {
  nlohmann::ordered_json j;
  j["model"] = "L = A * X^-alpha * D_f^-beta + E";
  j["A"] = f.A;
  j["alpha"] = f.alpha;
  j["beta"] = f.beta;
  j["E"] = f.E;
  j["residual_rms"] = f.residual_rms;
  j["log_residual_rms"] = f.log_residual_rms;
  j["std_error"] = {{"A", f.std_error[0]}, {"alpha", f.std_error[1]}, {"beta", f.std_error[2]}, {"E", f.std_error[3]}};
  j["condition_number"] = f.condition_number;
  j["iterations"] = f.iterations;
  j["converged"] = f.converged;
  j["points"] = f.points;
  j["x_definition"] = "trainable parameters of the fine-tuned subset";
  j["d_f_units"] = "supervised label tokens";
  return j;
}

}  // namespace radvqa::scaling
