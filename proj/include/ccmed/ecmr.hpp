#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ccmed/dataset.hpp"
#include "ccmed/elliptical.hpp"
#include "ccmed/learners.hpp"
#include "ccmed/outcome.hpp"

namespace ccmed {

enum class ResidualKind { Empirical, Normal };

struct MarginalConfig {
  LearnerSpec cont_learner{LearnerKind::Linear};
  LearnerSpec bin_learner{LearnerKind::Logistic};
  ResidualKind residual = ResidualKind::Empirical;
  bool add_cluster_means = false;  // append cluster means of X to the design
  CovTransform cov = CovTransform::Identity;
  double clip_delta = 1e-6;
};

// Design for the marginal mediator regressions: conditions on
// (A, N, A*N, V, own X), optionally adding cluster means of X.
Eigen::VectorXd marginal_features(int a, const ClusterRecord& rec, int j,
                                  const MarginalConfig& cfg);
std::vector<std::string> marginal_feature_names(const Dataset& data,
                                                const MarginalConfig& cfg);

// Per-mediator marginal law given (A, C, N).  Continuous mediators are
// location-scale around a fitted mean with an empirical or Normal standardized
// residual CDF; binary mediators carry a fitted success probability.
struct MarginalModel {
  int k = 0;
  MediatorKind kind = MediatorKind::Continuous;
  Regressor mean;  // conditional mean (continuous) or probability (binary)
  double sigma = 1.0;
  ResidualKind residual = ResidualKind::Empirical;
  std::vector<double> knots;  // sorted standardized residuals
  std::vector<double> probs;  // plotting positions at the knots
  MarginalConfig cfg;

  double cdf(double m, int a, const ClusterRecord& rec, int j) const;
  double quantile(double u, int a, const ClusterRecord& rec, int j) const;
  double log_pdf(double m, int a, const ClusterRecord& rec, int j) const;
  // binary success probability, clipped to (delta, 1-delta)
  double prob1(int a, const ClusterRecord& rec, int j) const;
};

struct IccMatrices {
  Eigen::MatrixXd Q0;  // within-individual, unit diagonal
  Eigen::MatrixXd Q1;  // between-individual

  static IccMatrices independence(int K);
};

// R(Q, N) = (Q0 - Q1) (x) I_N + Q1 (x) 1 1^T, coordinates ordered k*N + j.
Eigen::MatrixXd build_R(const IccMatrices& icc, int N);

// PD check for every cluster size up to N (reduces to Q0 - Q1 and
// Q0 + (N-1) Q1).
bool icc_valid(const IccMatrices& icc, int N_max, double eps = 0.0);

std::vector<MarginalModel> fit_marginals(const Dataset& data,
                                         const std::vector<std::size_t>& cluster_idx,
                                         const MarginalConfig& cfg);

// Latent interval for one observed mediator value: degenerate for continuous
// coordinates, a (possibly half-infinite) interval for binary ones.
std::pair<double, double> pit_bounds(const MarginalModel& marg, const Generator& g,
                                     double m, int a, const ClusterRecord& rec, int j);

struct EcmrFitOptions {
  int fit_mc = 256;      // rectangle draws inside the pseudo-likelihood
  double barrier = 1e-4;
  int max_iter = 150;
  double tol = 1e-6;
  uint64_t seed = 77;
  bool multistart = true;
  std::optional<IccMatrices> warm_start;
};

struct IccFit {
  IccMatrices icc;
  double loglik = 0.0;
  bool converged = false;
  bool boundary = false;  // barrier active at the optimum
  int iterations = 0;
};

IccFit fit_icc(const Dataset& data, const std::vector<std::size_t>& cluster_idx,
               const std::vector<MarginalModel>& marginals, const Generator& g,
               const EcmrFitOptions& opts = {});

class EcmrModel {
 public:
  EcmrModel() = default;
  EcmrModel(std::vector<MarginalModel> marginals, IccMatrices icc, Generator g);
  EcmrModel(const EcmrModel& o);
  EcmrModel& operator=(const EcmrModel& o);

  const std::vector<MarginalModel>& marginals() const { return marginals_; }
  const IccMatrices& icc() const { return icc_; }
  const Generator& generator() const { return g_; }
  int n_mediators() const { return static_cast<int>(marginals_.size()); }

  double f_min = 1e-12;

  // Conditional log density-mass of the coordinates S = {(k, j)} at values
  // m_S under arm a.  S = all K*N coordinates gives the joint mediator
  // density.  Deterministic for a fixed stream.
  double subset_log_density(const std::vector<std::pair<int, int>>& S,
                            const Eigen::VectorXd& m_S, int a,
                            const ClusterRecord& rec, int n_mc,
                            RngStream stream) const;

  // n_draws counterfactual mediator matrices (K x N) under arm a.
  std::vector<Eigen::MatrixXd> sample_mediators(int a, const ClusterRecord& rec,
                                                int n_draws, RngStream stream) const;

  // cached R(Q, N) and its Cholesky factor
  const Eigen::MatrixXd& R_for(int N) const;
  const Eigen::MatrixXd& chol_R_for(int N) const;

  long clip_count() const { return clip_count_.load(); }
  long floor_count() const { return floor_count_.load(); }

  std::string dump_json() const;
  static EcmrModel load_json(const std::string& text);

 private:
  std::vector<MarginalModel> marginals_;
  IccMatrices icc_;
  Generator g_;

  struct SizeCache {
    Eigen::MatrixXd R;
    Eigen::MatrixXd chol;
  };
  const SizeCache& cache_for(int N) const;
  mutable std::mutex cache_mu_;
  mutable std::vector<std::unique_ptr<SizeCache>> cache_;  // indexed by N
  mutable std::atomic<long> clip_count_{0};
  mutable std::atomic<long> floor_count_{0};
};

}  // namespace ccmed
