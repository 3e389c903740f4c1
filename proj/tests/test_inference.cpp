#include <cmath>
#include <stdexcept>

#include "ccmed/inference.hpp"
#include "ccmed/rng.hpp"
#include "doctest.h"

using namespace ccmed;

namespace {

Dataset weight_dataset(int I, std::uint64_t seed) {
  Dataset ds;
  ds.mediator_meta = {{"m1", MediatorKind::Continuous}};
  RngStream s(seed);
  for (int i = 0; i < I; ++i) {
    ClusterRecord rec;
    rec.id = "c" + std::to_string(i);
    rec.A = i % 2;
    rec.N = 1;
    rec.V = Eigen::VectorXd::Zero(1);
    rec.X = Eigen::MatrixXd::Zero(1, 1);
    rec.M = Eigen::MatrixXd::Zero(1, 1);
    rec.Y = Eigen::VectorXd::Constant(1, 3.0 + s.next_normal());
    ds.clusters.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace

TEST_CASE("eif_variance basics") {
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(8);
  CHECK(eif_variance(ones) == doctest::Approx(1.0).epsilon(1e-14));
  Eigen::VectorXd c = Eigen::VectorXd::Constant(10, -2.5);
  CHECK(eif_variance(c) == doctest::Approx(6.25).epsilon(1e-14));
  // SE = sqrt(V / I) = |c| / sqrt(I) for a constant influence value
  CHECK(std::sqrt(eif_variance(c) / c.size()) ==
        doctest::Approx(2.5 / std::sqrt(10.0)).epsilon(1e-14));
  Eigen::VectorXd one(1);
  one << 0.0;
  CHECK_THROWS_AS(eif_variance(one), std::invalid_argument);
}

TEST_CASE("wald_ci on the difference scale") {
  const CiReport r = wald_ci("TE", 0.3, 0.1, 0.05, false);
  CHECK(r.point == 0.3);
  CHECK(r.se == 0.1);
  CHECK(r.lower == doctest::Approx(0.3 - 1.959963985 * 0.1).epsilon(1e-9));
  CHECK(r.upper == doctest::Approx(0.3 + 1.959963985 * 0.1).epsilon(1e-9));
  CHECK(r.method == "wald");

  const CiReport d = wald_ci("NDE", 1.2, 0.0, 0.05, false);
  CHECK(d.lower == d.point);
  CHECK(d.upper == d.point);

  CHECK_THROWS_AS(wald_ci("x", 0.0, -1.0, 0.05, false), std::invalid_argument);
}

TEST_CASE("wald_ci on the log scale is multiplicatively symmetric") {
  const CiReport r = wald_ci("NIE", std::log(1.5), 0.2, 0.05, true);
  CHECK(r.point == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(r.lower * r.upper == doctest::Approx(r.point * r.point).epsilon(1e-10));
  CHECK(r.method == "wald-log");
  CHECK(r.lower > 0.0);
}

TEST_CASE("cluster bootstrap: constant estimator has zero spread") {
  Dataset ds = weight_dataset(12, 7);
  auto est = [](const Dataset&, std::uint64_t) {
    return Eigen::VectorXd::Constant(2, 4.0).eval();
  };
  const BootstrapResult br = cluster_bootstrap(ds, est, 50, 123);
  CHECK(br.used == 50);
  CHECK(br.se(0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(br.lower(1, 0) == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(br.upper(1, 0) == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("cluster bootstrap SE tracks the analytic SE of a cluster mean") {
  const int I = 60;
  Dataset ds = weight_dataset(I, 11);
  auto est = [](const Dataset& d, std::uint64_t) {
    double s = 0.0;
    for (const auto& rec : d.clusters) s += rec.Y(0);
    Eigen::VectorXd out(1);
    out << s / d.clusters.size();
    return out;
  };
  const BootstrapResult br = cluster_bootstrap(ds, est, 400, 321);

  double mean = 0.0, ss = 0.0;
  for (const auto& rec : ds.clusters) mean += rec.Y(0);
  mean /= I;
  for (const auto& rec : ds.clusters) ss += (rec.Y(0) - mean) * (rec.Y(0) - mean);
  const double analytic = std::sqrt(ss / I / I);
  CHECK(br.se(0) == doctest::Approx(analytic).epsilon(0.15));

  // percentile interval brackets the point estimate
  CHECK(br.lower(0, 0) < mean);
  CHECK(br.upper(0, 0) > mean);
}

TEST_CASE("cluster bootstrap is deterministic in the seed") {
  Dataset ds = weight_dataset(10, 5);
  auto est = [](const Dataset& d, std::uint64_t seed) {
    RngStream s(seed);
    Eigen::VectorXd out(1);
    out << d.clusters[0].Y(0) + 0.01 * s.next_normal();
    return out;
  };
  const BootstrapResult a = cluster_bootstrap(ds, est, 30, 777);
  const BootstrapResult b = cluster_bootstrap(ds, est, 30, 777);
  CHECK((a.draws - b.draws).cwiseAbs().maxCoeff() == 0.0);
  const BootstrapResult c = cluster_bootstrap(ds, est, 30, 778);
  CHECK((a.draws - c.draws).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("cluster bootstrap redraws single-arm resamples") {
  // two clusters: drawing both from one arm happens often, forcing redraws
  Dataset ds = weight_dataset(2, 3);
  auto est = [](const Dataset& d, std::uint64_t) {
    Eigen::VectorXd out(1);
    out << static_cast<double>(d.clusters[0].A + d.clusters[1].A);
    return out;
  };
  const BootstrapResult br = cluster_bootstrap(ds, est, 100, 9);
  CHECK(br.redraws > 0);
  // every used resample contains both arms, so the statistic is always 1
  CHECK(br.draws.minCoeff() == 1.0);
  CHECK(br.draws.maxCoeff() == 1.0);
}
