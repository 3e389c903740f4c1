#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ccmed/dataset.hpp"
#include "ccmed/engine.hpp"
#include "ccmed/rng.hpp"

namespace ccmed {

// One replicated simulation study: a cluster-randomized trial with K = 2
// mediators (one continuous, one binary), spillover in the outcome, and five
// working-model specification scenarios:
//   (a) everything correctly specified
//   (b) mediator mean designs distorted
//   (c) outcome mean design distorted
//   (d) working copula generator replaced by t(2)
//   (e) all three at once
struct ScenarioSpec {
  char scenario = 'a';
  int I = 100;
  int replications = 200;
  std::uint64_t seed = 20260826;
  std::vector<Variant> variants = {Variant::G, Variant::EifPar, Variant::EifParS,
                                   Variant::EifDml, Variant::EifDmlS};
  std::vector<EffectSpec> effects;  // empty -> default set

  int n_mc = 2048;
  int density_mc = 256;
  int bootstrap_B = 100;
  int bootstrap_n_mc = 256;  // cheaper draws inside bootstrap replicates
  int folds = 5;
  int icc_fit_mc = 64;        // rectangle draws in the copula pseudo-likelihood
  bool icc_multistart = true;

  // truth superpopulation controls
  int truth_clusters = 50000;
  int truth_n_mc = 64;
  bool full_scale = false;  // restores publication-scale settings (slow)

  // machine-learning specs used by the DML variants
  LearnerSpec dml_outcome{LearnerKind::BoostedStumps};
  LearnerSpec dml_cont{LearnerKind::Poly2Linear};
  LearnerSpec dml_bin{LearnerKind::Poly2Logistic};
};

std::vector<EffectSpec> default_sim_effects();

// Data-generating process (identical across scenarios; misspecification
// affects only working models).
ClusterRecord generate_cluster(RngStream stream, const std::string& id);
Dataset generate_dataset(int I, RngStream stream);

// The exactly-specified nuisance models of the generating process.
NuisanceSet true_nuisances();

// Working-model configuration for one scenario on top of a base config.
EngineConfig apply_misspecification(char scenario, EngineConfig cfg);

struct TruthTable {
  std::vector<std::string> effects;
  Eigen::VectorXd value;
  Eigen::VectorXd mc_se;  // superpopulation MC standard error
  int clusters = 0;
};

TruthTable compute_truths(const ScenarioSpec& spec);

struct MetricRow {
  std::string effect;
  std::string variant;
  double truth = 0.0;
  double bias = 0.0;
  double mcse_bias = 0.0;  // MC-SE of the bias estimate
  double aese = 0.0;       // average empirical (estimated) SE
  double esd = 0.0;        // empirical SD of the point estimates
  double coverage = 0.0;   // 95% CI empirical coverage
  double mcse_coverage = 0.0;
  int replications = 0;
  int failures = 0;
};

struct MetricsTable {
  std::vector<MetricRow> rows;
  TruthTable truth;
  int replications = 0;

  std::string to_csv() const;
  std::string to_text() const;
};

// Optional per-replication sink: (replication, variant, effect, estimate, se,
// lower, upper).
struct RawRecord {
  int rep = 0;
  std::string variant;
  std::string effect;
  double estimate = 0.0;
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

// progress(done, total) is invoked after each completed replication.
MetricsTable run_study(const ScenarioSpec& spec, std::vector<RawRecord>* raw = nullptr,
                       const std::function<void(int, int)>& progress = nullptr);

}  // namespace ccmed
