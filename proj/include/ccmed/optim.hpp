#pragma once

#include <Eigen/Dense>
#include <functional>

namespace ccmed {

struct OptimResult {
  Eigen::VectorXd x;
  double f = 0.0;
  bool converged = false;
  int iterations = 0;
};

// BFGS with numeric central-difference gradients and Armijo backtracking.
// The objective may return +infinity to reject a point (barrier region).
OptimResult minimize_bfgs(const std::function<double(const Eigen::VectorXd&)>& f,
                          const Eigen::VectorXd& x0, int max_iter = 200,
                          double grad_tol = 1e-6, double step_h = 1e-5);

}  // namespace ccmed
