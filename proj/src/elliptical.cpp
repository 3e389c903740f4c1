#include "ccmed/elliptical.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/bessel.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>

namespace ccmed {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454836;

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// log K_v(x) with an asymptotic branch for large x where cyl_bessel_k
// underflows (x beyond ~700).
double log_bessel_k(double v, double x) {
  if (x < 650.0) {
    const double k = boost::math::cyl_bessel_k(v, x);
    if (k > 0.0 && std::isfinite(k)) return std::log(k);
  }
  // K_v(x) ~ sqrt(pi/(2x)) e^{-x} [1 + (4v^2-1)/(8x) + ...]
  const double mu = 4.0 * v * v;
  double series = 1.0 + (mu - 1.0) / (8.0 * x) +
                  (mu - 1.0) * (mu - 9.0) / (2.0 * 64.0 * x * x) +
                  (mu - 1.0) * (mu - 9.0) * (mu - 25.0) / (6.0 * 512.0 * x * x * x);
  return 0.5 * std::log(M_PI / (2.0 * x)) - x + std::log(series);
}
}  // namespace

Generator Generator::student_t(double nu) {
  if (!(nu > 0.0)) throw std::invalid_argument("student_t generator requires nu > 0");
  return {GeneratorKind::StudentT, nu};
}

Generator Generator::parse(const std::string& text) {
  if (text == "normal" || text == "gaussian") return normal();
  if (text == "cauchy") return cauchy();
  if (text == "laplace") return laplace();
  if (text.size() > 2 && text.substr(0, 2) == "t(" && text.back() == ')') {
    const double nu = std::stod(text.substr(2, text.size() - 3));
    return student_t(nu);
  }
  throw std::invalid_argument("unknown generator: " + text);
}

std::string Generator::to_string() const {
  switch (kind) {
    case GeneratorKind::Normal: return "normal";
    case GeneratorKind::Cauchy: return "cauchy";
    case GeneratorKind::Laplace: return "laplace";
    case GeneratorKind::StudentT: {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "t(%g)", nu);
      return buf;
    }
  }
  return "?";
}

double log_radial_kernel(const Generator& g, double u, int d) {
  switch (g.kind) {
    case GeneratorKind::Normal:
      return -0.5 * d * kLog2Pi - 0.5 * u;
    case GeneratorKind::StudentT:
    case GeneratorKind::Cauchy: {
      const double nu = g.t_dof();
      return std::lgamma(0.5 * (d + nu)) - std::lgamma(0.5 * nu) -
             0.5 * d * std::log(nu * M_PI) -
             0.5 * (nu + d) * std::log1p(u / nu);
    }
    case GeneratorKind::Laplace: {
      if (u <= 0.0) u = 1e-300;
      const double v = 1.0 - 0.5 * d;
      return std::log(2.0) - 0.5 * d * kLog2Pi + 0.5 * v * std::log(0.5 * u) +
             log_bessel_k(v, std::sqrt(2.0 * u));
    }
  }
  return -kInf;
}

double cdf_1d(const Generator& g, double x) {
  switch (g.kind) {
    case GeneratorKind::Normal:
      return normal_cdf(x);
    case GeneratorKind::StudentT:
    case GeneratorKind::Cauchy: {
      boost::math::students_t dist(g.t_dof());
      return boost::math::cdf(dist, x);
    }
    case GeneratorKind::Laplace: {
      // standardized margin is Laplace(0, 1/sqrt(2))
      const double s = std::sqrt(2.0);
      return x < 0.0 ? 0.5 * std::exp(s * x) : 1.0 - 0.5 * std::exp(-s * x);
    }
  }
  return 0.0;
}

double quantile_1d(const Generator& g, double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -kInf;
    if (p == 1.0) return kInf;
    throw std::domain_error("quantile_1d: p outside (0,1)");
  }
  switch (g.kind) {
    case GeneratorKind::Normal:
      return inv_normal_cdf(p);
    case GeneratorKind::StudentT:
    case GeneratorKind::Cauchy: {
      boost::math::students_t dist(g.t_dof());
      return boost::math::quantile(dist, p);
    }
    case GeneratorKind::Laplace: {
      const double s = std::sqrt(2.0);
      return p < 0.5 ? std::log(2.0 * p) / s : -std::log(2.0 * (1.0 - p)) / s;
    }
  }
  return 0.0;
}

double log_density_1d(const Generator& g, double x) {
  return log_radial_kernel(g, x * x, 1);
}

bool has_scale_mixing(const Generator& g) { return !g.is_normal(); }

double mixing_variance_from_uniform(const Generator& g, double u) {
  switch (g.kind) {
    case GeneratorKind::Normal:
      return 1.0;
    case GeneratorKind::StudentT:
    case GeneratorKind::Cauchy: {
      const double nu = g.t_dof();
      boost::math::chi_squared chi(nu);
      // W = nu / chi2; map u so W is increasing in u
      return nu / boost::math::quantile(chi, 1.0 - u);
    }
    case GeneratorKind::Laplace:
      return -std::log1p(-u);  // Exp(1) quantile
  }
  return 1.0;
}

double log_density(const EllipticalMV& dist, const Eigen::VectorXd& x) {
  const int d = static_cast<int>(x.size());
  if (dist.mu.size() != d) throw std::invalid_argument("log_density: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(dist.omega);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("log_density: Omega is not positive definite");
  const Eigen::VectorXd z = llt.matrixL().solve(x - dist.mu);
  const double quad = z.squaredNorm();
  double logdet = 0.0;
  for (int i = 0; i < d; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * logdet + log_radial_kernel(dist.g, quad, d);
}

Eigen::MatrixXd sample_standard(const Eigen::MatrixXd& chol_R, const Generator& g,
                                int n, RngStream stream) {
  const int d = static_cast<int>(chol_R.rows());
  Eigen::MatrixXd out(n, d);
  Eigen::VectorXd z(d);
  for (int t = 0; t < n; ++t) {
    for (int i = 0; i < d; ++i) z[i] = stream.next_normal();
    double scale = 1.0;
    if (has_scale_mixing(g))
      scale = std::sqrt(mixing_variance_from_uniform(g, stream.next_uniform()));
    out.row(t) = (scale * (chol_R * z)).transpose();
  }
  return out;
}

namespace {

// One GHK path through the rectangle; returns the path weight and advances
// through dim uniforms.  chol is lower-triangular; scale multiplies it.
double ghk_path(const Eigen::MatrixXd& chol, double scale, const Eigen::VectorXd& lo,
                const Eigen::VectorXd& hi, const double* u, Eigen::VectorXd& z) {
  const int d = static_cast<int>(lo.size());
  double weight = 1.0;
  for (int i = 0; i < d; ++i) {
    double shift = 0.0;
    for (int j = 0; j < i; ++j) shift += chol(i, j) * z[j];
    shift *= scale;
    const double denom = scale * chol(i, i);
    const double a = (lo[i] - shift) / denom;
    const double b = (hi[i] - shift) / denom;
    const double pa = std::isinf(a) ? (a < 0 ? 0.0 : 1.0) : normal_cdf(a);
    const double pb = std::isinf(b) ? (b < 0 ? 0.0 : 1.0) : normal_cdf(b);
    const double p = pb - pa;
    if (p <= 0.0) return 0.0;
    weight *= p;
    double q = pa + u[i] * p;
    if (q < 1e-15) q = 1e-15;
    if (q > 1.0 - 1e-15) q = 1.0 - 1e-15;
    z[i] = inv_normal_cdf(q);
  }
  return weight;
}

}  // namespace

RectEstimate rectangle_prob(const Eigen::MatrixXd& R, const Generator& g,
                            const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                            int n_mc, RngStream stream) {
  const int d = static_cast<int>(lower.size());
  if (upper.size() != d || R.rows() != d)
    throw std::invalid_argument("rectangle_prob: dimension mismatch");
  for (int i = 0; i < d; ++i) {
    if (lower[i] > upper[i]) throw std::invalid_argument("rectangle_prob: lower > upper");
    if (lower[i] == upper[i]) return {0.0, 0.0};
  }
  Eigen::LLT<Eigen::MatrixXd> llt(R);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("rectangle_prob: R is not positive definite");
  const Eigen::MatrixXd L = llt.matrixL();

  const bool mix = has_scale_mixing(g);
  const int qdim = d + (mix ? 1 : 0);
  QmcSampler qmc(qdim, stream);
  std::vector<double> u(qdim);
  Eigen::VectorXd z(d);
  double sum = 0.0, sumsq = 0.0;
  for (int t = 0; t < n_mc; ++t) {
    qmc.point(t, u.data());
    double scale = 1.0;
    const double* uv = u.data();
    if (mix) {
      scale = std::sqrt(mixing_variance_from_uniform(g, u[0]));
      uv = u.data() + 1;
    }
    const double w = ghk_path(L, scale, lower, upper, uv, z);
    sum += w;
    sumsq += w * w;
  }
  const double mean = sum / n_mc;
  const double var = std::max(0.0, sumsq / n_mc - mean * mean);
  return {mean, std::sqrt(var / n_mc)};
}

Eigen::MatrixXd submatrix(const Eigen::MatrixXd& R, const std::vector<int>& S) {
  if (S.empty()) throw std::invalid_argument("submatrix: empty index set");
  const int n = static_cast<int>(S.size());
  Eigen::MatrixXd out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out(i, j) = R(S[i], S[j]);
  return out;
}

MixedEvaluator::MixedEvaluator(const Eigen::MatrixXd& R, std::vector<int> cont_idx,
                               std::vector<int> disc_idx, Generator g)
    : cont_idx_(std::move(cont_idx)), disc_idx_(std::move(disc_idx)), g_(g) {
  const int nc = n_cont(), nd = n_disc();
  if (nc + nd == 0) throw std::invalid_argument("MixedEvaluator: empty index sets");
  if (nc > 0) {
    const Eigen::MatrixXd Rcc = submatrix(R, cont_idx_);
    Eigen::LLT<Eigen::MatrixXd> llt(Rcc);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("MixedEvaluator: R_cc not positive definite");
    chol_cc_ = llt.matrixL();
    logdet_cc_ = 0.0;
    for (int i = 0; i < nc; ++i) logdet_cc_ += 2.0 * std::log(chol_cc_(i, i));
    if (nd > 0) {
      Eigen::MatrixXd Rdc(nd, nc), Rdd = submatrix(R, disc_idx_);
      for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nc; ++j) Rdc(i, j) = R(disc_idx_[i], cont_idx_[j]);
      cond_coef_ = llt.solve(Rdc.transpose()).transpose();  // R_dc R_cc^{-1}
      Eigen::MatrixXd cond_cov = Rdd - cond_coef_ * Rdc.transpose();
      // guard against round-off on near-singular conditionals
      cond_cov.diagonal().array() += 1e-12;
      Eigen::LLT<Eigen::MatrixXd> lltc(cond_cov);
      if (lltc.info() != Eigen::Success)
        throw std::runtime_error("MixedEvaluator: conditional covariance not PD");
      chol_cond_ = lltc.matrixL();
    }
  } else {
    const Eigen::MatrixXd Rdd = submatrix(R, disc_idx_);
    Eigen::LLT<Eigen::MatrixXd> llt(Rdd);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("MixedEvaluator: R_dd not positive definite");
    chol_cond_ = llt.matrixL();
  }
}

double MixedEvaluator::log_value(const Eigen::VectorXd& eps_c, const Eigen::VectorXd& lo_d,
                                 const Eigen::VectorXd& hi_d, int n_mc,
                                 const QmcSampler& qmc) const {
  const int nc = n_cont(), nd = n_disc();
  double quad_c = 0.0;
  Eigen::VectorXd cond_mean;
  if (nc > 0) {
    const Eigen::VectorXd zc = chol_cc_.triangularView<Eigen::Lower>().solve(eps_c);
    quad_c = zc.squaredNorm();
    if (nd > 0) cond_mean = cond_coef_ * eps_c;
  } else {
    cond_mean = Eigen::VectorXd::Zero(nd);
  }

  if (nd == 0) {
    return -0.5 * logdet_cc_ + log_radial_kernel(g_, quad_c, nc);
  }
  for (int i = 0; i < nd; ++i)
    if (lo_d[i] >= hi_d[i]) return -kInf;

  const bool mix = has_scale_mixing(g_);
  const Eigen::VectorXd lo = lo_d - cond_mean;
  const Eigen::VectorXd hi = hi_d - cond_mean;

  if (!mix) {
    // exact normal factorization: f_N(eps_c) * Phi_rect(conditional)
    // point() fills qmc.dim() entries, which may exceed what we consume
    std::vector<double> u(std::max(nd, qmc.dim()));
    Eigen::VectorXd z(nd);
    double sum = 0.0;
    for (int t = 0; t < n_mc; ++t) {
      qmc.point(t, u.data());
      sum += ghk_path(chol_cond_, 1.0, lo, hi, u.data(), z);
    }
    const double p = sum / n_mc;
    double log_fc = nc > 0 ? -0.5 * logdet_cc_ + log_radial_kernel(g_, quad_c, nc) : 0.0;
    return log_fc + (p > 0.0 ? std::log(p) : -kInf);
  }

  // scale mixture: average over W of N(eps_c; W R_cc) * Phi_rect(.; W)
  std::vector<double> u(std::max(nd + 1, qmc.dim()));
  Eigen::VectorXd z(nd);
  double sum = 0.0;
  double max_log = -kInf;
  std::vector<double> log_terms(n_mc);
  std::vector<double> probs(n_mc);
  for (int t = 0; t < n_mc; ++t) {
    qmc.point(t, u.data());
    const double W = mixing_variance_from_uniform(g_, u[0]);
    const double s = std::sqrt(W);
    double log_fc = 0.0;
    if (nc > 0)
      log_fc = -0.5 * nc * (kLog2Pi + std::log(W)) - 0.5 * logdet_cc_ - quad_c / (2.0 * W);
    const double p = ghk_path(chol_cond_, s, lo, hi, u.data() + 1, z);
    log_terms[t] = log_fc;
    probs[t] = p;
    if (p > 0.0 && log_fc > max_log) max_log = log_fc;
  }
  if (max_log == -kInf) return -kInf;
  for (int t = 0; t < n_mc; ++t)
    if (probs[t] > 0.0) sum += std::exp(log_terms[t] - max_log) * probs[t];
  if (sum <= 0.0) return -kInf;
  return max_log + std::log(sum / n_mc);
}

}  // namespace ccmed
