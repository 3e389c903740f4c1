#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ccmed/dataset.hpp"
#include "ccmed/learners.hpp"

namespace ccmed {

// Optional covariate distortion applied before any model sees (V, X): V is
// mapped through the standard normal CDF and X is shrunk toward zero by an
// amount driven by the first cluster covariate.  Used to study sensitivity to
// a systematically wrong working design.
enum class CovTransform { Identity, Distorted };

Eigen::VectorXd transform_cluster_cov(const Eigen::VectorXd& V, CovTransform t);
Eigen::VectorXd transform_indiv_cov(const Eigen::VectorXd& X,
                                    const Eigen::VectorXd& V, CovTransform t);

struct FeatureMapConfig {
  bool own_pairwise = true;       // products M_k M_l for k < l on the own row
  bool loo_means = true;          // leave-one-out cluster means of each mediator
  bool loo_pairwise = true;       // leave-one-out means of pairwise products
  bool cluster_size = true;       // N and A*N columns
  CovTransform cov = CovTransform::Identity;
};

// Feature vector for individual j of a cluster, with mediators M (K x N) and
// treatment a substituted.  Leave-one-out means in singleton clusters are set
// to zero and a singleton indicator column is appended instead.
Eigen::VectorXd outcome_features(int a, const Eigen::MatrixXd& M,
                                 const ClusterRecord& rec, int j,
                                 const FeatureMapConfig& fm);

std::vector<std::string> outcome_feature_names(const Dataset& data,
                                               const FeatureMapConfig& fm);

// Fitted outcome regression eta(a, M, C, j) = E[Y_j | A=a, M, C].
class OutcomeModel {
 public:
  OutcomeModel() = default;

  static OutcomeModel fit(const Dataset& data, const std::vector<std::size_t>& cluster_idx,
                          const LearnerSpec& spec, const FeatureMapConfig& fm);

  // wraps a caller-built regressor (e.g. an exactly known mean function)
  static OutcomeModel exact(Regressor reg, const FeatureMapConfig& fm);

  double eta(int a, const Eigen::MatrixXd& M, const ClusterRecord& rec, int j) const;
  bool empty() const { return reg_.empty(); }
  const FeatureMapConfig& feature_map() const { return fm_; }

 private:
  friend class EtaBatch;
  Regressor reg_;
  FeatureMapConfig fm_;
};

// Batched eta evaluation for one (a, cluster) context: covariate feature
// blocks are cached per individual and mediator summaries per matrix, making
// repeated evaluation across draws O(K + dX) per individual.
class EtaBatch {
 public:
  EtaBatch(const OutcomeModel& model, int a, const ClusterRecord& rec);

  void set_matrix(const Eigen::MatrixXd& M);  // O(K^2 N)
  double eta(int j) const;
  // eta at j with entry (k, j) replaced by val; leave-one-out summaries at j
  // are unaffected by construction (they exclude individual j).
  double eta_override(int k, int j, double val) const;

 private:
  double eval(int j, int ok, double oval, bool override_own) const;

  const OutcomeModel* model_;
  const ClusterRecord* rec_;
  int K_ = 0;
  Eigen::MatrixXd prefix_;   // per-j covariate feature block
  Eigen::MatrixXd M_;        // owned copy; callers may pass temporaries
  Eigen::VectorXd row_sum_;
  Eigen::MatrixXd pair_sum_;  // upper-triangle sums of M_k .* M_l
  mutable Eigen::VectorXd scratch_;
};

}  // namespace ccmed
