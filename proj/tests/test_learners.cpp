#include <cmath>

#include "ccmed/learners.hpp"
#include "ccmed/rng.hpp"
#include "doctest.h"

using namespace ccmed;

namespace {

struct Synth {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<int> groups;
};

Synth linear_data(int n, RngStream& s, double noise = 0.5) {
  Synth d;
  d.X.resize(n, 3);
  d.y.resize(n);
  d.groups.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) d.X(i, j) = s.next_normal();
    d.y(i) = 1.5 - 2.0 * d.X(i, 0) + 0.7 * d.X(i, 1) + noise * s.next_normal();
    d.groups[i] = i / 10;
  }
  return d;
}

}  // namespace

TEST_CASE("learner name parsing") {
  CHECK(parse_learner("linear") == LearnerKind::Linear);
  CHECK(parse_learner("logistic") == LearnerKind::Logistic);
  CHECK(parse_learner("poly2") == LearnerKind::Poly2Linear);
  CHECK(parse_learner("poly2-logistic") == LearnerKind::Poly2Logistic);
  CHECK(parse_learner("boosted-stumps") == LearnerKind::BoostedStumps);
  CHECK_THROWS(parse_learner("svm"));
}

TEST_CASE("OLS residuals are orthogonal to the design") {
  RngStream s(1);
  const auto d = linear_data(500, s);
  const Regressor r = Regressor::fit({LearnerKind::Linear}, d.X, d.y, d.groups);
  const Eigen::VectorXd resid = d.y - r.predict(d.X);
  CHECK(std::abs(resid.sum()) < 1e-8 * d.y.size());
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(resid.dot(d.X.col(j))) < 1e-8 * d.y.size());
  }
}

TEST_CASE("OLS recovers linear coefficients") {
  RngStream s(2);
  const auto d = linear_data(4000, s, 0.1);
  const Regressor r = Regressor::fit({LearnerKind::Linear}, d.X, d.y, d.groups);
  Eigen::VectorXd probe = Eigen::VectorXd::Zero(3);
  CHECK(r.predict(probe) == doctest::Approx(1.5).epsilon(0.02));
  probe(0) = 1.0;
  CHECK(r.predict(probe) == doctest::Approx(-0.5).epsilon(0.05));
}

TEST_CASE("duplicated column is a named rank-deficiency error") {
  RngStream s(3);
  auto d = linear_data(100, s);
  Eigen::MatrixXd X(100, 4);
  X << d.X, d.X.col(1);
  CHECK_THROWS_WITH_AS(
      Regressor::fit({LearnerKind::Linear}, X, d.y, d.groups,
                     {"a", "b", "c", "b_copy"}),
      doctest::Contains("b_copy"), std::runtime_error);
}

TEST_CASE("logistic recovers link coefficients") {
  RngStream s(4);
  const int n = 8000;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  std::vector<int> g(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = s.next_normal();
    X(i, 1) = s.next_normal();
    const double p = expit(0.4 + 1.2 * X(i, 0) - 0.8 * X(i, 1));
    y(i) = s.next_uniform() < p ? 1.0 : 0.0;
    g[i] = i / 20;
  }
  const Regressor r = Regressor::fit({LearnerKind::Logistic}, X, y, g);
  Eigen::VectorXd probe = Eigen::VectorXd::Zero(2);
  CHECK(r.predict(probe) == doctest::Approx(expit(0.4)).epsilon(0.05));
  probe << 1.0, 1.0;
  CHECK(r.predict(probe) == doctest::Approx(expit(0.4 + 1.2 - 0.8)).epsilon(0.05));
}

TEST_CASE("poly2 learner is exact on a quadratic surface") {
  RngStream s(5);
  const int n = 600;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  std::vector<int> g(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = s.next_normal();
    X(i, 1) = s.next_uniform() < 0.5 ? 1.0 : 0.0;  // binary column
    y(i) = 2.0 + X(i, 0) - 0.5 * X(i, 0) * X(i, 0) + 3.0 * X(i, 0) * X(i, 1);
    g[i] = i / 10;
  }
  const Regressor r = Regressor::fit({LearnerKind::Poly2Linear}, X, y, g);
  Eigen::VectorXd probe(2);
  probe << 0.7, 1.0;
  const double want = 2.0 + 0.7 - 0.5 * 0.49 + 3.0 * 0.7;
  CHECK(r.predict(probe) == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("boosted stumps beat the constant predictor on a nonlinear target") {
  RngStream s(6);
  const int n = 2000;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  std::vector<int> g(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 4.0 * (s.next_uniform() - 0.5);
    X(i, 1) = s.next_normal();
    y(i) = std::sin(2.0 * X(i, 0)) + 0.1 * s.next_normal();
    g[i] = i / 10;
  }
  LearnerSpec spec{LearnerKind::BoostedStumps};
  const Regressor r = Regressor::fit(spec, X, y, g);
  const Eigen::VectorXd pred = r.predict(X);
  const double mse_model = (y - pred).squaredNorm() / n;
  const double mse_const = (y.array() - y.mean()).square().sum() / n;
  CHECK(mse_model < 0.2 * mse_const);
}

TEST_CASE("serialization round-trips predictions") {
  RngStream s(7);
  const auto d = linear_data(300, s);
  for (LearnerKind kind : {LearnerKind::Linear, LearnerKind::Poly2Linear,
                           LearnerKind::BoostedStumps}) {
    LearnerSpec spec{kind};
    const Regressor r = Regressor::fit(spec, d.X, d.y, d.groups);
    const Regressor r2 = Regressor::deserialize(r.serialize());
    const Eigen::VectorXd p1 = r.predict(d.X);
    const Eigen::VectorXd p2 = r2.predict(d.X);
    CHECK((p1 - p2).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("exact regressors evaluate the supplied coefficients") {
  Eigen::VectorXd beta(3);
  beta << 1.0, 2.0, -3.0;
  const Regressor lin = Regressor::exact_linear(beta);
  Eigen::VectorXd x(2);
  x << 0.5, 0.25;
  CHECK(lin.predict(x) == doctest::Approx(1.0 + 1.0 - 0.75).epsilon(1e-14));
  const Regressor logi = Regressor::exact_logistic(beta);
  CHECK(logi.predict(x) == doctest::Approx(expit(1.25)).epsilon(1e-14));
}
