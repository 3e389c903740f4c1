#include <algorithm>

#include "ccmed/outcome.hpp"
#include "ccmed/rng.hpp"
#include "ccmed/sim.hpp"
#include "doctest.h"

using namespace ccmed;

namespace {

ClusterRecord tiny_record(int N, int K, RngStream& s) {
  ClusterRecord rec;
  rec.id = "t";
  rec.A = 1;
  rec.N = N;
  rec.V = Eigen::VectorXd::Constant(1, 0.3);
  rec.X.resize(N, 1);
  rec.M.resize(K, N);
  rec.Y.resize(N);
  for (int j = 0; j < N; ++j) {
    rec.X(j, 0) = s.next_normal();
    rec.Y(j) = s.next_normal();
    for (int k = 0; k < K; ++k) rec.M(k, j) = s.next_normal();
  }
  return rec;
}

}  // namespace

TEST_CASE("feature layout: own value and leave-one-out mean") {
  RngStream s(1);
  ClusterRecord rec = tiny_record(2, 1, s);
  rec.M(0, 0) = 3.0;
  rec.M(0, 1) = 5.0;
  FeatureMapConfig fm;
  fm.own_pairwise = false;
  fm.loo_pairwise = false;
  const Eigen::VectorXd f = outcome_features(1, rec.M, rec, 0, fm);
  // layout: A, N, A*N, V, X, M1, loo(M1), singleton
  REQUIRE(f.size() == 8);
  CHECK(f(0) == 1.0);
  CHECK(f(1) == 2.0);
  CHECK(f(2) == 2.0);
  CHECK(f(5) == 3.0);   // own mediator
  CHECK(f(6) == 5.0);   // neighbor mean
  CHECK(f(7) == 0.0);   // not a singleton
}

TEST_CASE("singleton clusters use the indicator convention") {
  RngStream s(2);
  ClusterRecord rec = tiny_record(1, 2, s);
  FeatureMapConfig fm;
  const Eigen::VectorXd f = outcome_features(0, rec.M, rec, 0, fm);
  // loo means and loo pairwise are zero, flag is one
  CHECK(f(f.size() - 1) == 1.0);
  CHECK(f(f.size() - 2) == 0.0);
  CHECK(f(f.size() - 3) == 0.0);
  CHECK(f(f.size() - 4) == 0.0);
}

TEST_CASE("features are invariant to permuting the other individuals") {
  RngStream s(3);
  ClusterRecord rec = tiny_record(5, 2, s);
  FeatureMapConfig fm;
  const Eigen::VectorXd f0 = outcome_features(1, rec.M, rec, 0, fm);
  // swap individuals 2 and 4 in the mediator matrix
  Eigen::MatrixXd M2 = rec.M;
  M2.col(2).swap(M2.col(4));
  const Eigen::VectorXd f1 = outcome_features(1, M2, rec, 0, fm);
  CHECK((f0 - f1).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("linear fit on the simulation DGP recovers the outcome coefficients") {
  Dataset ds = generate_dataset(400, RngStream(99).fork("outcome-test"));
  std::vector<std::size_t> idx(ds.clusters.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  FeatureMapConfig fm;
  const OutcomeModel m = OutcomeModel::fit(ds, idx, {LearnerKind::Linear}, fm);

  // probe coefficients by finite differences of eta in single mediator entries
  const auto& rec = ds.clusters[0];
  Eigen::MatrixXd M = rec.M;
  const double base = m.eta(1, M, rec, 0);
  Eigen::MatrixXd Mp = M;
  // continuous own-mediator effect at M2 = 0: d eta / d M1 = 0.6 + 0 * M2
  Mp(0, 0) = M(0, 0) + 1.0;
  Mp(1, 0) = 0.0;
  Eigen::MatrixXd M0 = M;
  M0(1, 0) = 0.0;
  const double slope1 = m.eta(1, Mp, rec, 0) - m.eta(1, M0, rec, 0);
  CHECK(slope1 == doctest::Approx(0.6).epsilon(0.15));
}

TEST_CASE("exact model: EtaBatch agrees with direct evaluation and overrides") {
  RngStream s(4);
  // exact linear outcome over the default K=2 feature map
  Eigen::VectorXd beta(13);
  beta << 0.3, 0.2, 0.01, 0.02, 0.5, 0.5, 0.6, 0.9, -0.8, -0.7, -1.4, -0.56, 0.0;
  FeatureMapConfig fm;
  const OutcomeModel m = OutcomeModel::exact(Regressor::exact_linear(beta), fm);

  ClusterRecord rec = tiny_record(6, 2, s);
  EtaBatch batch(m, 1, rec);
  batch.set_matrix(rec.M);
  for (int j = 0; j < rec.N; ++j) {
    CHECK(batch.eta(j) == doctest::Approx(m.eta(1, rec.M, rec, j)).epsilon(1e-12));
  }

  // overriding entry (k, j) must equal rebuilding the matrix
  for (int k = 0; k < 2; ++k) {
    for (int j = 0; j < rec.N; ++j) {
      const double val = 2.2 - k;
      Eigen::MatrixXd M2 = rec.M;
      M2(k, j) = val;
      CHECK(batch.eta_override(k, j, val) ==
            doctest::Approx(m.eta(1, M2, rec, j)).epsilon(1e-12));
    }
  }

  // a fresh set_matrix resets the cached summaries
  Eigen::MatrixXd M3 = rec.M.array() + 1.0;
  batch.set_matrix(M3);
  CHECK(batch.eta(2) == doctest::Approx(m.eta(1, M3, rec, 2)).epsilon(1e-12));
}

TEST_CASE("counterfactual evaluation equals the hand-computed linear form") {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(13);
  beta(0) = 1.0;   // intercept
  beta(6) = 2.0;   // M1
  beta(9) = -1.0;  // loo(M1)
  FeatureMapConfig fm;
  const OutcomeModel m = OutcomeModel::exact(Regressor::exact_linear(beta), fm);
  RngStream s(5);
  ClusterRecord rec = tiny_record(3, 2, s);
  Eigen::MatrixXd M(2, 3);
  M << 1.0, 2.0, 3.0, 0.0, 1.0, 0.0;
  // j = 1: eta = 1 + 2*2 - (1+3)/2 = 3
  CHECK(m.eta(0, M, rec, 1) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("distorted covariate transform") {
  Eigen::VectorXd V(1);
  V << 0.0;
  const Eigen::VectorXd Vt = transform_cluster_cov(V, CovTransform::Distorted);
  CHECK(Vt(0) == doctest::Approx(0.5).epsilon(1e-12));
  Eigen::VectorXd X(1);
  X << 0.0;
  const Eigen::VectorXd Xt = transform_indiv_cov(X, V, CovTransform::Distorted);
  CHECK(Xt(0) == doctest::Approx(0.25).epsilon(1e-12));  // Phi(0)*expit(0)
  CHECK(transform_indiv_cov(X, V, CovTransform::Identity)(0) == 0.0);
}
