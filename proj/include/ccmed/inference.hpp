#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ccmed/dataset.hpp"

namespace ccmed {

// V-hat = mean of squared centered per-cluster influence values (already
// fold-centered by the caller); the SE of the estimate is sqrt(V / I).
double eif_variance(const Eigen::VectorXd& centered_influence);

struct CiReport {
  std::string name;
  double point = 0.0;
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::string method;
  int replicates = 0;
};

// point/SE on the estimation scale; for ratio scales the caller passes the
// log-point and log-SE and results are exponentiated.
CiReport wald_ci(const std::string& name, double point, double se, double alpha,
                 bool log_scale);

struct BootstrapResult {
  Eigen::VectorXd se;       // per estimand
  Eigen::MatrixXd lower;    // percentile bounds, one row per estimand
  Eigen::MatrixXd upper;
  Eigen::MatrixXd draws;    // B x n_estimands
  int redraws = 0;
  int used = 0;
};

// Nonparametric cluster bootstrap: resamples clusters with replacement,
// re-invokes the estimator (nuisance refit included).  Resamples missing an
// arm are redrawn, at most 100 times each.
BootstrapResult cluster_bootstrap(
    const Dataset& data,
    const std::function<Eigen::VectorXd(const Dataset&, std::uint64_t)>& estimator,
    int B, std::uint64_t seed, double alpha = 0.05);

}  // namespace ccmed
