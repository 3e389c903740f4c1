#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccmed/qmc.hpp"
#include "ccmed/rng.hpp"

namespace ccmed {

enum class GeneratorKind { Normal, StudentT, Cauchy, Laplace };

// Radial generator of an elliptical family.  The Cauchy kind is stored as
// StudentT with nu=1 semantics but kept distinct for config round-trips.
struct Generator {
  GeneratorKind kind = GeneratorKind::Normal;
  double nu = 0.0;  // StudentT degrees of freedom

  static Generator normal() { return {GeneratorKind::Normal, 0.0}; }
  static Generator student_t(double nu);
  static Generator cauchy() { return {GeneratorKind::Cauchy, 1.0}; }
  static Generator laplace() { return {GeneratorKind::Laplace, 0.0}; }

  // effective degrees of freedom for t-type kernels
  double t_dof() const { return kind == GeneratorKind::Cauchy ? 1.0 : nu; }
  bool is_normal() const { return kind == GeneratorKind::Normal; }

  // parse "normal" | "t(nu)" | "cauchy" | "laplace"
  static Generator parse(const std::string& text);
  std::string to_string() const;
};

// log g(u) at dimension d
double log_radial_kernel(const Generator& g, double u, int d);

// 1-d CDF and quantile of the standardized margin of E(g)
double cdf_1d(const Generator& g, double x);
double quantile_1d(const Generator& g, double p);
double log_density_1d(const Generator& g, double x);

// Scale-mixture representation: eps = sqrt(W) * L z with z standard normal.
// Maps a uniform to W.  Normal has no mixing (W == 1).
bool has_scale_mixing(const Generator& g);
double mixing_variance_from_uniform(const Generator& g, double u);

struct EllipticalMV {
  Eigen::VectorXd mu;
  Eigen::MatrixXd omega;
  Generator g;
};

// log f(x) for E_d(mu, Omega, g); throws on non-PD Omega
double log_density(const EllipticalMV& dist, const Eigen::VectorXd& x);

// n draws from E_d(0, R, g) given the lower-triangular Cholesky factor of R;
// one row per draw.
Eigen::MatrixXd sample_standard(const Eigen::MatrixXd& chol_R, const Generator& g,
                                int n, RngStream stream);

struct RectEstimate {
  double value = 0.0;
  double se = 0.0;
};

// P(lower <= eps <= upper) for eps ~ E_d(0, R, g), via GHK sequential
// conditioning on quasi-random points (scale-mixture reduction for
// non-normal generators).
RectEstimate rectangle_prob(const Eigen::MatrixXd& R, const Generator& g,
                            const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                            int n_mc, RngStream stream);

// Factorized pieces of a mixed continuous/discrete evaluation, reusable
// across many (bounds, point) evaluations sharing one correlation matrix.
class MixedEvaluator {
 public:
  // cont_idx/disc_idx partition {0..d-1} (either may be empty)
  MixedEvaluator(const Eigen::MatrixXd& R, std::vector<int> cont_idx,
                 std::vector<int> disc_idx, Generator g);

  // log of  f_{E_nc}(eps_c) * P(lo_d <= eps_d <= hi_d | eps_c),
  // the joint density-mass of the mixed coordinates.
  double log_value(const Eigen::VectorXd& eps_c, const Eigen::VectorXd& lo_d,
                   const Eigen::VectorXd& hi_d, int n_mc, const QmcSampler& qmc) const;

  int n_cont() const { return static_cast<int>(cont_idx_.size()); }
  int n_disc() const { return static_cast<int>(disc_idx_.size()); }
  // QMC dimension required by log_value
  int qmc_dim() const { return n_disc() + (has_scale_mixing(g_) ? 1 : 0); }

 private:
  std::vector<int> cont_idx_, disc_idx_;
  Generator g_;
  Eigen::MatrixXd chol_cc_;     // lower Cholesky of R_cc
  Eigen::MatrixXd cond_coef_;   // R_dc R_cc^{-1}
  Eigen::MatrixXd chol_cond_;   // lower Cholesky of R_dd - R_dc R_cc^{-1} R_cd
  double logdet_cc_ = 0.0;
};

// submatrix R[S,S]; S nonempty
Eigen::MatrixXd submatrix(const Eigen::MatrixXd& R, const std::vector<int>& S);

}  // namespace ccmed
