#include "ccmed/optim.hpp"

#include <cmath>
#include <limits>

namespace ccmed {

namespace {

Eigen::VectorXd numeric_grad(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x, double h0) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = h0 * std::max(1.0, std::abs(x(i)));
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      // One-sided fallback near a barrier.
      const double f0 = f(x);
      if (std::isfinite(fp)) {
        g(i) = (fp - f0) / h;
      } else if (std::isfinite(fm)) {
        g(i) = (f0 - fm) / h;
      } else {
        g(i) = 0.0;
      }
    } else {
      g(i) = (fp - fm) / (2.0 * h);
    }
  }
  return g;
}

}  // namespace

OptimResult minimize_bfgs(const std::function<double(const Eigen::VectorXd&)>& f,
                          const Eigen::VectorXd& x0, int max_iter, double grad_tol,
                          double step_h) {
  const Eigen::Index n = x0.size();
  OptimResult res;
  res.x = x0;
  res.f = f(x0);
  if (!std::isfinite(res.f)) return res;  // infeasible start

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);  // inverse-Hessian approx
  Eigen::VectorXd g = numeric_grad(f, res.x, step_h);

  for (int iter = 1; iter <= max_iter; ++iter) {
    res.iterations = iter;
    if (g.lpNorm<Eigen::Infinity>() < grad_tol) {
      res.converged = true;
      return res;
    }
    Eigen::VectorXd d = -(H * g);
    double slope = g.dot(d);
    if (!(slope < 0)) {  // reset on a non-descent direction
      H.setIdentity();
      d = -g;
      slope = g.dot(d);
      if (!(slope < 0)) {
        res.converged = true;
        return res;
      }
    }
    double step = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      x_new = res.x + step * d;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new <= res.f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      res.converged = g.lpNorm<Eigen::Infinity>() < 10 * grad_tol;
      return res;
    }
    Eigen::VectorXd g_new = numeric_grad(f, x_new, step_h);
    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const Eigen::VectorXd Hy = H * y;
      const double yHy = y.dot(Hy);
      H += ((sy + yHy) / (sy * sy)) * (s * s.transpose()) -
           (Hy * s.transpose() + s * Hy.transpose()) / sy;
    }
    const double df = res.f - f_new;
    res.x = x_new;
    res.f = f_new;
    g = g_new;
    if (df < 1e-11 * (1.0 + std::abs(res.f))) {
      res.converged = true;
      return res;
    }
  }
  return res;
}

}  // namespace ccmed
