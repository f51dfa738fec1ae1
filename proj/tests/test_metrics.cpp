#include <catch_amalgamated.hpp>

#include <random>

#include "avfdae/metrics.hpp"
#include "oracles.hpp"

using namespace avfdae;
using testutil::auroc_oracle;
using testutil::metrics_oracle;

TEST_CASE("AUROC hand fixture", "[metrics]") {
  const std::vector<int> y{0, 0, 1, 1};
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  CHECK(auroc(y, s) == 0.75);
  CHECK(auroc(std::vector<int>{0, 1, 0, 1}, std::vector<double>{0.5, 0.5, 0.5, 0.5}) == 0.5);
  REQUIRE_THROWS_AS(auroc(std::vector<int>{1, 1}, std::vector<double>{0.1, 0.2}), DataError);
}

TEST_CASE("AUROC equals the concordant-pair oracle", "[metrics]") {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 199;
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng() % 2);
      s[i] = static_cast<double>(rng() % 7) / 7.0;  // coarse grid forces ties
    }
    y[0] = 0;
    y[1] = 1;
    CHECK(auroc(y, s) == auroc_oracle(y, s));
  }
}

TEST_CASE("Perfect predictions", "[metrics]") {
  const std::vector<int> y{0, 1, 2, 0, 1, 2};
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(6, 3);
  for (int i = 0; i < 6; ++i) s(i, y[static_cast<std::size_t>(i)]) = 1.0;
  const auto m = compute_metrics(y, y, s, 3, nullptr);
  CHECK(m.auroc == 1.0);
  CHECK(m.accuracy == 1.0);
  CHECK(m.sensitivity == 1.0);
  CHECK(m.specificity == 1.0);
  CHECK(m.precision == 1.0);
  CHECK(m.f1 == 1.0);
  CHECK(m.avg() == 1.0);
}

TEST_CASE("Single-class predictions on balanced three-class data", "[metrics]") {
  const std::vector<int> y{0, 0, 1, 1, 2, 2}, p(6, 0);
  const Eigen::MatrixXd s = Eigen::MatrixXd::Constant(6, 3, 1.0 / 3);
  const auto m = compute_metrics(y, p, s, 3, nullptr);
  // Class 0: tp 2, fp 4, tn 0. Classes 1 and 2: tp 0, fn 2, tn 4.
  CHECK(m.accuracy == Catch::Approx(1.0 / 3));
  CHECK(m.sensitivity == Catch::Approx(1.0 / 3));
  CHECK(m.specificity == Catch::Approx(2.0 / 3));
  CHECK(m.precision == Catch::Approx(1.0 / 9));
  CHECK(m.f1 == Catch::Approx(1.0 / 6));
  CHECK(m.auroc == 0.5);
}

TEST_CASE("Metrics equal the confusion-matrix oracle", "[metrics]") {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = trial % 2 ? 2 : 3;
    const std::size_t n = 3 + rng() % 198;
    std::vector<int> y(n), p(n);
    Eigen::MatrixXd s(static_cast<Eigen::Index>(n), classes);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(i < static_cast<std::size_t>(classes) ? i : rng() % static_cast<unsigned>(classes));
      p[i] = rng() % 4 ? y[i] : static_cast<int>(rng() % static_cast<unsigned>(classes));
      for (int c = 0; c < classes; ++c) s(static_cast<Eigen::Index>(i), c) = std::round(u(rng) * 20) / 20 + (c == p[i]);
    }
    const auto got = compute_metrics(y, p, s, classes, nullptr);
    const auto want = metrics_oracle(y, p, s, classes);
    CHECK(got.accuracy == want.accuracy);
    CHECK(got.sensitivity == Catch::Approx(want.sensitivity).epsilon(1e-15));
    CHECK(got.specificity == Catch::Approx(want.specificity).epsilon(1e-15));
    CHECK(got.precision == Catch::Approx(want.precision).epsilon(1e-15));
    CHECK(got.f1 == Catch::Approx(want.f1).epsilon(1e-15));
    CHECK(got.auroc == Catch::Approx(want.auroc).epsilon(1e-15));
    for (double v : {got.auroc, got.accuracy, got.sensitivity, got.specificity, got.precision, got.f1}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(got.avg() == (got.auroc + got.accuracy + got.sensitivity + got.specificity + got.precision + got.f1) / 6.0);
  }
}

TEST_CASE("Confusion matrix", "[metrics]") {
  const auto cm = confusion_matrix(std::vector<int>{0, 1, 2, 2}, std::vector<int>{0, 2, 2, 1}, 3);
  CHECK(cm == std::vector<std::vector<long>>{{1, 0, 0}, {0, 0, 1}, {0, 1, 1}});
  REQUIRE_THROWS_AS(confusion_matrix(std::vector<int>{3}, std::vector<int>{0}, 3), DataError);
}

TEST_CASE("Absent classes are skipped with a warning", "[metrics]") {
  const std::vector<int> y{0, 0, 1, 1}, p{0, 1, 1, 1};
  Eigen::MatrixXd s(4, 3);
  s << 0.8, 0.1, 0.1, 0.4, 0.5, 0.1, 0.2, 0.7, 0.1, 0.1, 0.8, 0.1;
  std::ostringstream warn;
  const auto m = compute_metrics(y, p, s, 3, &warn);
  CHECK(warn.str().find("class 2") != std::string::npos);
  CHECK(m.sensitivity == Catch::Approx(0.75));
  REQUIRE_THROWS_AS(compute_metrics(y, std::vector<int>{0, 1}, s, 3, nullptr), DataError);
}
