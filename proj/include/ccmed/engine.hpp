#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccmed/dataset.hpp"
#include "ccmed/ecmr.hpp"
#include "ccmed/effects.hpp"
#include "ccmed/outcome.hpp"

namespace ccmed {

enum class Variant { G, EifPar, EifParS, EifDml, EifDmlS };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);
inline bool is_dml(Variant v) { return v == Variant::EifDml || v == Variant::EifDmlS; }
inline bool is_stabilized(Variant v) {
  return v == Variant::EifParS || v == Variant::EifDmlS;
}

struct NuisanceSet {
  OutcomeModel outcome;
  EcmrModel mediators;
};

struct EngineConfig {
  int n_mc = 4096;        // mediator draws per cluster-arm law
  int density_mc = 512;   // rectangle draws inside density evaluations
  int folds = 5;          // DML cross-fitting folds
  int max_refolds = 10;
  double ratio_cap = 50.0;
  WeightKind weight = WeightKind::ClusterAverage;
  bool use_empirical_pi = false;
  std::uint64_t seed = 20260826;
  // exact enumeration kicks in for all-binary clusters with 2^(N*K) states
  // at or below this cap
  int enum_cap = 4096;

  LearnerSpec outcome_learner{LearnerKind::Linear};
  FeatureMapConfig feature_map;
  MarginalConfig marginal;
  Generator generator = Generator::normal();
  EcmrFitOptions icc_opts;
};

NuisanceSet fit_nuisances(const Dataset& data, const std::vector<std::size_t>& cluster_idx,
                          const EngineConfig& cfg);

// Canonical per-cluster random stream used by the engine; exposed so that
// independent re-computations can reproduce the engine's draws exactly.
RngStream cluster_stream(const EngineConfig& cfg, std::string_view cluster_id);

// Conditional subset log density-mass evaluated with the engine's canonical
// (arm, coordinate-set)-keyed stream fork of the cluster stream.
double subset_logf(const NuisanceSet& nuis, const ClusterRecord& rec, int arm,
                   const std::vector<std::pair<int, int>>& S, const Eigen::VectorXd& m,
                   const EngineConfig& cfg, const RngStream& cs);

// Per-cluster pieces of one functional: the g-computation contribution
// (w_i/N) sum_j of the integral, the uncentered EIF contribution, and the
// stabilization ingredients.
struct ClusterPieces {
  double g = 0.0;            // plug-in contribution (weight included)
  double phi = 0.0;          // uncentered EIF contribution (weight included)
  double resid_sum = 0.0;    // (w/N) * I(A=1) * sum_j r_j (Y_j - eta_j)
  double rw_sum = 0.0;       // (w/N) * I(A=1) * sum_j r_j
  double stab_coef = 0.0;    // d phi / d beta for the stabilization shift
  bool stabilizable = false;
  long truncations = 0;
};

// Evaluates every requested functional on one cluster with common random
// numbers shared across functionals.  pi1 = Pr(A=1).
// need_eif = false computes only the g-computation pieces (no observed-data
// residual, correction, or density-ratio work).
std::vector<ClusterPieces> evaluate_cluster(const ClusterRecord& rec,
                                            const std::vector<FunctionalRef>& refs,
                                            const NuisanceSet& nuis,
                                            const EngineConfig& cfg, double pi1,
                                            RngStream stream, bool need_eif = true);

struct ThetaEstimates {
  std::vector<FunctionalRef> refs;
  Eigen::VectorXd theta;      // final per-functional estimates
  Eigen::VectorXd plugin;     // g-computation component under the same draws
  // centered per-cluster influence values, (clusters x refs); zero for G
  Eigen::MatrixXd influence;
  std::vector<int> fold_of;   // cluster -> fold index (all 0 unless DML)
  std::map<std::string, double> beta;  // stabilization intercepts, keyed "fold:ref"
  long truncations = 0;
  int refolds = 0;
  double stab_residual = 0.0;  // post-stabilization weighted residual sum
  int mc_draws = 0;
  // ICC estimate of the first nuisance fit; used to warm-start bootstrap
  // refits
  std::optional<IccMatrices> icc0;
};

ThetaEstimates estimate_thetas(const Dataset& data, const std::vector<FunctionalRef>& refs,
                               Variant variant, const EngineConfig& cfg);

// Several variants from one nuisance fit and one evaluation pass.  All
// variants must agree on cross-fitting (all DML or none): the fold split
// and the fitted nuisances are shared, only the aggregation differs.
std::vector<ThetaEstimates> estimate_thetas_multi(const Dataset& data,
                                                  const std::vector<FunctionalRef>& refs,
                                                  const std::vector<Variant>& variants,
                                                  const EngineConfig& cfg);

struct EffectEstimate {
  std::string name;
  Scale scale = Scale::Difference;
  double value = 0.0;
  double se = 0.0;       // on the estimation scale (log scale for ratios)
  double lower = 0.0;
  double upper = 0.0;
  std::string ci_method;
};

struct EstimateReport {
  Variant variant = Variant::G;
  ThetaEstimates thetas;
  std::vector<EffectEstimate> effects;
  int bootstrap_replicates = 0;
  int bootstrap_redraws = 0;
};

struct InferenceConfig {
  double alpha = 0.05;
  int bootstrap_B = 100;
  bool percentile = false;  // else Wald on the bootstrap SE
  int bootstrap_n_mc = 0;   // 0 = same as EngineConfig.n_mc
};

// Full pipeline for one variant: shared functional estimates, effect
// combination, and variance (EIF for DML variants, cluster bootstrap
// otherwise).
EstimateReport estimate(const Dataset& data, const std::vector<EffectSpec>& specs,
                        Variant variant, const EngineConfig& cfg,
                        const InferenceConfig& inf);

// Same pipeline for several variants sharing one nuisance fit, one
// evaluation pass, and (for non-DML variants) one set of bootstrap
// resamples.  Variants must all be DML or all non-DML.
std::vector<EstimateReport> estimate_multi(const Dataset& data,
                                           const std::vector<EffectSpec>& specs,
                                           const std::vector<Variant>& variants,
                                           const EngineConfig& cfg,
                                           const InferenceConfig& inf);

}  // namespace ccmed
