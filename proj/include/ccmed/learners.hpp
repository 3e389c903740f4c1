#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace ccmed {

enum class LearnerKind { Linear, Logistic, Poly2Linear, Poly2Logistic, BoostedStumps };

LearnerKind parse_learner(const std::string& name);
std::string learner_name(LearnerKind k);

struct LearnerSpec {
  LearnerKind kind = LearnerKind::Linear;
  // Boosting hyperparameters; rounds is selected by cluster-level CV when
  // cv_folds >= 2, using the candidates below.
  int boost_rounds = 200;
  double boost_rate = 0.1;
  int boost_cuts = 16;
  int cv_folds = 0;
  std::vector<int> cv_round_grid = {25, 50, 100, 200, 400};
  uint64_t cv_seed = 1;
};

// A fitted regression function x -> E[y | x] (or a probability for logistic
// variants).  Value-semantic via shared immutable state.
class Regressor {
 public:
  Regressor() = default;

  // rows of X are observations; `groups` gives a cluster label per row, used
  // only for cluster-level cross-validation.  `names` are column labels for
  // error messages; pass {} to use positional labels.
  static Regressor fit(const LearnerSpec& spec, const Eigen::MatrixXd& X,
                       const Eigen::VectorXd& y, const std::vector<int>& groups,
                       const std::vector<std::string>& names = {},
                       const Eigen::VectorXd& weights = Eigen::VectorXd());

  double predict(const Eigen::VectorXd& x) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
  bool empty() const { return impl_ == nullptr; }

  // JSON round-trip for model persistence
  std::string serialize() const;
  static Regressor deserialize(const std::string& text);

  // Regressors with caller-supplied coefficients, beta(0) the intercept;
  // used to encode exactly known mean functions.
  static Regressor exact_linear(const Eigen::VectorXd& beta);
  static Regressor exact_logistic(const Eigen::VectorXd& beta);

  struct Impl;

 private:
  std::shared_ptr<const Impl> impl_;
};

// Weighted ordinary least squares with an intercept prepended; throws
// std::runtime_error naming the offending column when the design is rank
// deficient.
Eigen::VectorXd ols_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& w,
                        const std::vector<std::string>& names);

// Logistic regression by IRLS (intercept prepended).  A tiny ridge keeps the
// solve stable under separation.
Eigen::VectorXd logistic_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& w,
                             const std::vector<std::string>& names);

inline double expit(double z) {
  if (z >= 0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace ccmed
