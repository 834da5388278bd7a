#include <doctest.h>

#include <cmath>

#include "radvqa/common/error.hpp"
#include "radvqa/scaling/scaling.hpp"
#include "support.hpp"

using namespace radvqa;
using namespace radvqa::scaling;

namespace {

std::vector<LossPoint> grid(const ScalingFit& truth) {
  std::vector<LossPoint> pts;
  for (double x : {1e6, 1e7, 1e8})
    for (double d : {1e5, 1e6, 1e7}) pts.push_back({x, d, predict(truth, x, d)});
  return pts;
}

}  // namespace

TEST_SUITE("scaling") {

TEST_CASE("predict evaluates the formula exactly") {
  ScalingFit f;
  f.A = 2.0;
  f.alpha = 0.3;
  f.beta = 0.2;
  f.E = 0.5;
  CHECK(predict(f, 1e6, 1e5) == doctest::Approx(2.0 * std::pow(1e6, -0.3) * std::pow(1e5, -0.2) + 0.5).epsilon(1e-15));
  CHECK_THROWS_AS(predict(f, 0.0, 1.0), ConfigError);
  CHECK_THROWS_AS(predict(f, 1.0, -1.0), ConfigError);
}

TEST_CASE("predict is monotone non-increasing in X and D") {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    ScalingFit f;
    f.A = 0.1 + 10 * rng.uniform();
    f.alpha = 2 * rng.uniform();
    f.beta = 2 * rng.uniform();
    f.E = rng.uniform();
    const double x = std::exp(20 * rng.uniform()), d = std::exp(20 * rng.uniform());
    const double k = 1.0 + 10 * rng.uniform();
    CHECK(predict(f, x * k, d) <= predict(f, x, d));
    CHECK(predict(f, x, d * k) <= predict(f, x, d));
    CHECK(predict(f, x, d) >= f.E);
  }
}

TEST_CASE("noiseless grid recovers the generating parameters") {
  ScalingFit truth;
  truth.A = 2.0;
  truth.alpha = 0.3;
  truth.beta = 0.2;
  truth.E = 0.5;
  const auto f = fit(grid(truth));
  CHECK(f.converged);
  CHECK(std::abs(f.A / 2.0 - 1) < 1e-3);
  CHECK(std::abs(f.alpha / 0.3 - 1) < 1e-3);
  CHECK(std::abs(f.beta / 0.2 - 1) < 1e-3);
  CHECK(std::abs(f.E / 0.5 - 1) < 1e-3);
  CHECK(f.points == 9);
  CHECK(f.residual_rms < 1e-8);
  const auto again = fit(grid(truth));
  CHECK(again.A == f.A);
  CHECK(again.E == f.E);
}

TEST_CASE("fit rejects degenerate designs") {
  ScalingFit truth;
  truth.A = 2.0;
  truth.alpha = 0.3;
  truth.beta = 0.2;
  truth.E = 0.5;
  auto pts = grid(truth);
  CHECK_THROWS_AS(fit({pts.begin(), pts.begin() + 5}), ConfigError);
  std::vector<LossPoint> one_x;
  for (double d : {1e3, 1e4, 1e5, 1e6, 1e7, 1e8}) one_x.push_back({1e6, d, predict(truth, 1e6, d)});
  try {
    fit(one_x);
    FAIL("expected underdetermined");
  } catch (const ConfigError& e) {
    CHECK(e.code() == "underdetermined");
  }
  pts[0].loss = -1.0;
  CHECK_THROWS_AS(fit(pts), ConfigError);
}

TEST_CASE("mcq loss floor") {
  CHECK(std::abs(mcq_loss_floor(4) - 1.386294) <= 1e-6);
  CHECK(mcq_loss_floor(2) == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(mcq_loss_floor(1), ConfigError);
}

TEST_CASE("points csv accepts any column order") {
  const auto pts = read_points_csv("L,D_f,X\n1.5,100,2000\n1.25,200,4000\n");
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].params == 2000);
  CHECK(pts[0].tokens == 100);
  CHECK(pts[0].loss == 1.5);
  CHECK_THROWS_AS(read_points_csv("a,b,c\n1,2,3\n"), DataError);
  CHECK_THROWS_AS(read_points_csv("X,D_f,L\n1,2\n"), DataError);
}

}
