#include "ccmed/ecmr.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "ccmed/optim.hpp"
#include "ccmed/threading.hpp"

namespace ccmed {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double clip(double u, double delta) { return std::min(std::max(u, delta), 1.0 - delta); }

double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}
double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Piecewise-linear CDF through (knots, probs); boundary segments are extended
// linearly and values clipped away from {0,1} by the caller.
double interp_cdf(const std::vector<double>& k, const std::vector<double>& p, double x) {
  const std::size_t n = k.size();
  if (n == 1) return p[0];
  if (x <= k.front()) {
    const double slope = (p[1] - p[0]) / (k[1] - k[0]);
    return p[0] + slope * (x - k[0]);
  }
  if (x >= k.back()) {
    const double slope = (p[n - 1] - p[n - 2]) / (k[n - 1] - k[n - 2]);
    return p[n - 1] + slope * (x - k[n - 1]);
  }
  const auto it = std::upper_bound(k.begin(), k.end(), x);
  const std::size_t hi = static_cast<std::size_t>(it - k.begin());
  const double t = (x - k[hi - 1]) / (k[hi] - k[hi - 1]);
  return p[hi - 1] + t * (p[hi] - p[hi - 1]);
}

double interp_quantile(const std::vector<double>& k, const std::vector<double>& p, double u) {
  const std::size_t n = k.size();
  if (n == 1) return k[0];
  if (u <= p.front()) {
    const double slope = (k[1] - k[0]) / (p[1] - p[0]);
    return k[0] + slope * (u - p[0]);
  }
  if (u >= p.back()) {
    const double slope = (k[n - 1] - k[n - 2]) / (p[n - 1] - p[n - 2]);
    return k[n - 1] + slope * (u - p[n - 1]);
  }
  const auto it = std::upper_bound(p.begin(), p.end(), u);
  const std::size_t hi = static_cast<std::size_t>(it - p.begin());
  const double t = (u - p[hi - 1]) / (p[hi] - p[hi - 1]);
  return k[hi - 1] + t * (k[hi] - k[hi - 1]);
}

double interp_pdf(const std::vector<double>& k, const std::vector<double>& p, double x) {
  const std::size_t n = k.size();
  if (n == 1) return 1.0;
  std::size_t hi;
  if (x <= k.front()) {
    hi = 1;
  } else if (x >= k.back()) {
    hi = n - 1;
  } else {
    hi = static_cast<std::size_t>(std::upper_bound(k.begin(), k.end(), x) - k.begin());
  }
  return (p[hi] - p[hi - 1]) / (k[hi] - k[hi - 1]);
}

}  // namespace

Eigen::VectorXd marginal_features(int a, const ClusterRecord& rec, int j,
                                  const MarginalConfig& cfg) {
  std::vector<double> f;
  f.push_back(static_cast<double>(a));
  f.push_back(static_cast<double>(rec.N));
  f.push_back(static_cast<double>(a * rec.N));
  const Eigen::VectorXd V = transform_cluster_cov(rec.V, cfg.cov);
  for (Eigen::Index l = 0; l < V.size(); ++l) f.push_back(V(l));
  const Eigen::VectorXd X = transform_indiv_cov(rec.X.row(j).transpose(), rec.V, cfg.cov);
  for (Eigen::Index l = 0; l < X.size(); ++l) f.push_back(X(l));
  if (cfg.add_cluster_means) {
    for (Eigen::Index l = 0; l < rec.X.cols(); ++l) {
      double s = 0.0;
      for (int i = 0; i < rec.N; ++i) {
        s += transform_indiv_cov(rec.X.row(i).transpose(), rec.V, cfg.cov)(l);
      }
      f.push_back(s / rec.N);
    }
  }
  return Eigen::Map<Eigen::VectorXd>(f.data(), f.size());
}

std::vector<std::string> marginal_feature_names(const Dataset& data,
                                                const MarginalConfig& cfg) {
  const auto& c0 = data.clusters.at(0);
  std::vector<std::string> names = {"A", "N", "A*N"};
  for (Eigen::Index l = 0; l < c0.V.size(); ++l) names.push_back("V" + std::to_string(l + 1));
  for (Eigen::Index l = 0; l < c0.X.cols(); ++l) names.push_back("X" + std::to_string(l + 1));
  if (cfg.add_cluster_means) {
    for (Eigen::Index l = 0; l < c0.X.cols(); ++l) {
      names.push_back("mean(X" + std::to_string(l + 1) + ")");
    }
  }
  return names;
}

double MarginalModel::cdf(double m, int a, const ClusterRecord& rec, int j) const {
  if (kind == MediatorKind::Binary) {
    const double p = prob1(a, rec, j);
    return m < 1.0 ? 1.0 - p : 1.0;
  }
  const double mu = mean.predict(marginal_features(a, rec, j, cfg));
  const double z = (m - mu) / sigma;
  const double u = residual == ResidualKind::Normal ? norm_cdf(z) : interp_cdf(knots, probs, z);
  return clip(u, cfg.clip_delta);
}

double MarginalModel::quantile(double u, int a, const ClusterRecord& rec, int j) const {
  u = clip(u, cfg.clip_delta);
  if (kind == MediatorKind::Binary) {
    return u > 1.0 - prob1(a, rec, j) ? 1.0 : 0.0;
  }
  const double mu = mean.predict(marginal_features(a, rec, j, cfg));
  const double z = residual == ResidualKind::Normal ? inv_normal_cdf(u)
                                                    : interp_quantile(knots, probs, u);
  return mu + sigma * z;
}

double MarginalModel::log_pdf(double m, int a, const ClusterRecord& rec, int j) const {
  if (kind == MediatorKind::Binary) {
    const double p = prob1(a, rec, j);
    return std::log(m >= 0.5 ? p : 1.0 - p);
  }
  const double mu = mean.predict(marginal_features(a, rec, j, cfg));
  const double z = (m - mu) / sigma;
  const double f = residual == ResidualKind::Normal ? norm_pdf(z) : interp_pdf(knots, probs, z);
  return std::log(std::max(f, 1e-300)) - std::log(sigma);
}

double MarginalModel::prob1(int a, const ClusterRecord& rec, int j) const {
  const double p = mean.predict(marginal_features(a, rec, j, cfg));
  return clip(p, cfg.clip_delta);
}

IccMatrices IccMatrices::independence(int K) {
  return {Eigen::MatrixXd::Identity(K, K), Eigen::MatrixXd::Zero(K, K)};
}

Eigen::MatrixXd build_R(const IccMatrices& icc, int N) {
  const int K = static_cast<int>(icc.Q0.rows());
  Eigen::MatrixXd R(N * K, N * K);
  for (int k = 0; k < K; ++k) {
    for (int l = 0; l < K; ++l) {
      for (int j = 0; j < N; ++j) {
        for (int jp = 0; jp < N; ++jp) {
          R(k * N + j, l * N + jp) = (j == jp) ? icc.Q0(k, l) : icc.Q1(k, l);
        }
      }
    }
  }
  return R;
}

bool icc_valid(const IccMatrices& icc, int N_max, double eps) {
  const int K = static_cast<int>(icc.Q0.rows());
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(K, K);
  auto pd = [&](const Eigen::MatrixXd& S) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    return es.eigenvalues().minCoeff() > eps;
  };
  if ((icc.Q0.diagonal().array() - 1.0).abs().maxCoeff() > 1e-8) return false;
  return pd(icc.Q0 - icc.Q1) && pd(icc.Q0 + (N_max - 1) * icc.Q1) && pd(icc.Q0);
}

std::vector<MarginalModel> fit_marginals(const Dataset& data,
                                         const std::vector<std::size_t>& cluster_idx,
                                         const MarginalConfig& cfg) {
  const int K = static_cast<int>(data.mediator_meta.size());
  Eigen::Index n_rows = 0;
  for (std::size_t i : cluster_idx) n_rows += data.clusters.at(i).N;
  const auto names = marginal_feature_names(data, cfg);

  std::vector<MarginalModel> out;
  out.reserve(K);
  for (int k = 0; k < K; ++k) {
    MarginalModel m;
    m.k = k;
    m.kind = data.mediator_meta[k].kind;
    m.cfg = cfg;
    m.residual = cfg.residual;

    Eigen::MatrixXd X;
    Eigen::VectorXd y(n_rows);
    std::vector<int> groups(n_rows);
    Eigen::Index row = 0;
    for (std::size_t i : cluster_idx) {
      const auto& rec = data.clusters[i];
      for (int j = 0; j < rec.N; ++j) {
        const Eigen::VectorXd f = marginal_features(rec.A, rec, j, cfg);
        if (X.size() == 0) X.resize(n_rows, f.size());
        X.row(row) = f.transpose();
        y(row) = rec.M(k, j);
        groups[row] = static_cast<int>(i);
        ++row;
      }
    }
    if ((y.array() - y(0)).abs().maxCoeff() < 1e-12) {
      throw std::runtime_error("degenerate mediator: M" + std::to_string(k + 1) +
                               " is constant");
    }
    if (m.kind == MediatorKind::Binary) {
      m.mean = Regressor::fit(cfg.bin_learner, X, y, groups, names);
    } else {
      m.mean = Regressor::fit(cfg.cont_learner, X, y, groups, names);
      const Eigen::VectorXd resid = y - m.mean.predict(X);
      m.sigma = std::sqrt(resid.squaredNorm() / resid.size());
      if (!(m.sigma > 0)) throw std::runtime_error("degenerate mediator: zero residual scale");
      if (cfg.residual == ResidualKind::Empirical) {
        std::vector<double> z(resid.data(), resid.data() + resid.size());
        for (double& v : z) v /= m.sigma;
        std::sort(z.begin(), z.end());
        // Collapse ties to midrank plotting positions.
        const std::size_t n = z.size();
        std::size_t i = 0;
        while (i < n) {
          std::size_t jdx = i;
          while (jdx + 1 < n && z[jdx + 1] == z[i]) ++jdx;
          m.knots.push_back(z[i]);
          m.probs.push_back(((i + jdx) / 2.0 + 0.5) / n);
          i = jdx + 1;
        }
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::pair<double, double> pit_bounds(const MarginalModel& marg, const Generator& g,
                                     double m, int a, const ClusterRecord& rec, int j) {
  if (marg.kind == MediatorKind::Continuous) {
    const double eps = quantile_1d(g, marg.cdf(m, a, rec, j));
    return {eps, eps};
  }
  const double p = marg.prob1(a, rec, j);
  const double cut = quantile_1d(g, 1.0 - p);
  if (m < 0.5) return {-kInf, cut};
  return {cut, kInf};
}

// ---------------------------------------------------------------------------
// ICC pseudo-likelihood
// ---------------------------------------------------------------------------

namespace {

struct IccParam {
  int K;
  int n0;  // strict lower-triangle count
  int n1;  // lower-triangle count

  explicit IccParam(int K_) : K(K_), n0(K_ * (K_ - 1) / 2), n1(K_ * (K_ + 1) / 2) {}

  IccMatrices unpack(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd B0 = Eigen::MatrixXd::Identity(K, K);
    int pos = 0;
    for (int i = 1; i < K; ++i) {
      for (int j = 0; j < i; ++j) B0(i, j) = x(pos++);
    }
    Eigen::MatrixXd S0 = B0 * B0.transpose();
    Eigen::VectorXd d = S0.diagonal().array().sqrt().inverse();
    Eigen::MatrixXd Q0 = d.asDiagonal() * S0 * d.asDiagonal();
    Eigen::MatrixXd B1 = Eigen::MatrixXd::Zero(K, K);
    for (int i = 0; i < K; ++i) {
      for (int j = 0; j < i; ++j) B1(i, j) = x(pos++);
      B1(i, i) = std::exp(x(pos++));
    }
    return {Q0, Q0 - B1 * B1.transpose()};
  }

  Eigen::VectorXd pack(const IccMatrices& icc) const {
    Eigen::VectorXd x(n0 + n1);
    Eigen::LLT<Eigen::MatrixXd> llt0(icc.Q0);
    if (llt0.info() != Eigen::Success) throw std::runtime_error("pack: Q0 not PD");
    Eigen::MatrixXd L = llt0.matrixL();
    int pos = 0;
    for (int i = 1; i < K; ++i) {
      for (int j = 0; j < i; ++j) x(pos++) = L(i, j) / L(i, i);
    }
    Eigen::LLT<Eigen::MatrixXd> llt1(icc.Q0 - icc.Q1);
    if (llt1.info() != Eigen::Success) throw std::runtime_error("pack: Q0 - Q1 not PD");
    Eigen::MatrixXd B1 = llt1.matrixL();
    for (int i = 0; i < K; ++i) {
      for (int j = 0; j < i; ++j) x(pos++) = B1(i, j);
      x(pos++) = std::log(B1(i, i));
    }
    return x;
  }
};

struct ClusterLatents {
  int N = 0;
  Eigen::VectorXd eps_c;        // continuous latent coordinates
  Eigen::VectorXd lo_d, hi_d;   // binary rectangle bounds
};

struct SizePattern {
  std::vector<int> cont_idx, disc_idx;
};

SizePattern pattern_for(const std::vector<MarginalModel>& marginals, int N) {
  SizePattern p;
  const int K = static_cast<int>(marginals.size());
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < N; ++j) {
      if (marginals[k].kind == MediatorKind::Continuous) {
        p.cont_idx.push_back(k * N + j);
      } else {
        p.disc_idx.push_back(k * N + j);
      }
    }
  }
  return p;
}

}  // namespace

IccFit fit_icc(const Dataset& data, const std::vector<std::size_t>& cluster_idx,
               const std::vector<MarginalModel>& marginals, const Generator& g,
               const EcmrFitOptions& opts) {
  const int K = static_cast<int>(marginals.size());
  const IccParam par(K);

  int N_max = 1;
  for (std::size_t i : cluster_idx) N_max = std::max(N_max, data.clusters.at(i).N);

  // Latent coordinates do not depend on Q: precompute once.
  std::vector<ClusterLatents> lat(cluster_idx.size());
  for (std::size_t c = 0; c < cluster_idx.size(); ++c) {
    const auto& rec = data.clusters[cluster_idx[c]];
    const auto pat = pattern_for(marginals, rec.N);
    ClusterLatents& L = lat[c];
    L.N = rec.N;
    L.eps_c.resize(pat.cont_idx.size());
    L.lo_d.resize(pat.disc_idx.size());
    L.hi_d.resize(pat.disc_idx.size());
    Eigen::Index pc = 0, pd = 0;
    for (int k = 0; k < K; ++k) {
      for (int j = 0; j < rec.N; ++j) {
        const auto [lo, hi] = pit_bounds(marginals[k], g, rec.M(k, j), rec.A, rec, j);
        if (marginals[k].kind == MediatorKind::Continuous) {
          L.eps_c(pc++) = lo;
        } else {
          L.lo_d(pd) = lo;
          L.hi_d(pd) = hi;
          ++pd;
        }
      }
    }
  }

  // Fixed QMC point sets, one per cluster, so the objective is deterministic.
  RngStream base(opts.seed);
  std::vector<QmcSampler> qmc;
  qmc.reserve(cluster_idx.size());
  const int qmc_dim = K * N_max + 1;
  for (std::size_t c = 0; c < cluster_idx.size(); ++c) {
    qmc.emplace_back(qmc_dim, base.fork(data.clusters[cluster_idx[c]].id).fork("icc"));
  }

  // Group by cluster size so one MixedEvaluator serves all clusters of that N.
  std::vector<std::vector<std::size_t>> by_N(N_max + 1);
  for (std::size_t c = 0; c < cluster_idx.size(); ++c) by_N[lat[c].N].push_back(c);

  auto loglik = [&](const IccMatrices& icc) {
    double total = 0.0;
    std::vector<double> parts(cluster_idx.size(), 0.0);
    for (int N = 1; N <= N_max; ++N) {
      if (by_N[N].empty()) continue;
      const Eigen::MatrixXd R = build_R(icc, N);
      const auto pat = pattern_for(marginals, N);
      MixedEvaluator ev(R, pat.cont_idx, pat.disc_idx, g);
      const auto& members = by_N[N];
      parallel_for(members.size(), [&](std::size_t t) {
        const std::size_t c = members[t];
        parts[c] = ev.log_value(lat[c].eps_c, lat[c].lo_d, lat[c].hi_d, opts.fit_mc, qmc[c]);
      });
    }
    for (double v : parts) total += v;
    return total;
  };

  auto objective = [&](const Eigen::VectorXd& x) -> double {
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 50.0) return kInf;
    IccMatrices icc = par.unpack(x);
    if (!icc.Q0.allFinite() || !icc.Q1.allFinite()) return kInf;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es1(icc.Q0 + (N_max - 1) * icc.Q1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2(icc.Q0 - icc.Q1);
    // written so that NaN eigenvalues also reject the candidate
    if (!(es1.eigenvalues().minCoeff() > 1e-8) ||
        !(es2.eigenvalues().minCoeff() > 1e-8)) {
      return kInf;
    }
    double barrier = 0.0;
    barrier -= es1.eigenvalues().array().log().sum();
    barrier -= es2.eigenvalues().array().log().sum();
    return -loglik(icc) + opts.barrier * barrier;
  };

  std::vector<Eigen::VectorXd> starts;
  if (opts.warm_start) {
    starts.push_back(par.pack(*opts.warm_start));
  }
  {
    starts.push_back(par.pack(IccMatrices::independence(K)));
    if (opts.multistart && !opts.warm_start) {
      const Eigen::MatrixXd J = Eigen::MatrixXd::Ones(K, K);
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(K, K);
      IccMatrices pos{0.8 * I + 0.2 * J, 0.1 * J};
      IccMatrices neg{0.8 * I + 0.2 * J, -0.02 * I};
      if (icc_valid(pos, N_max, 1e-6)) starts.push_back(par.pack(pos));
      if (icc_valid(neg, N_max, 1e-6)) starts.push_back(par.pack(neg));
    }
  }

  OptimResult best;
  best.f = kInf;
  for (const auto& x0 : starts) {
    OptimResult r = minimize_bfgs(objective, x0, opts.max_iter, opts.tol);
    if (r.f < best.f) best = r;
  }
  if (!std::isfinite(best.f)) throw std::runtime_error("fit_icc: no feasible start");

  IccFit fit;
  fit.icc = par.unpack(best.x);
  fit.converged = best.converged;
  fit.iterations = best.iterations;
  fit.loglik = loglik(fit.icc);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.icc.Q0 + (N_max - 1) * fit.icc.Q1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2(fit.icc.Q0 - fit.icc.Q1);
  fit.boundary = es.eigenvalues().minCoeff() < 1e-3 || es2.eigenvalues().minCoeff() < 1e-3;
  return fit;
}

// ---------------------------------------------------------------------------
// EcmrModel
// ---------------------------------------------------------------------------

EcmrModel::EcmrModel(std::vector<MarginalModel> marginals, IccMatrices icc, Generator g)
    : marginals_(std::move(marginals)), icc_(std::move(icc)), g_(g) {}

EcmrModel::EcmrModel(const EcmrModel& o)
    : f_min(o.f_min), marginals_(o.marginals_), icc_(o.icc_), g_(o.g_) {}

EcmrModel& EcmrModel::operator=(const EcmrModel& o) {
  if (this != &o) {
    marginals_ = o.marginals_;
    icc_ = o.icc_;
    g_ = o.g_;
    f_min = o.f_min;
    std::lock_guard<std::mutex> lock(cache_mu_);
    cache_.clear();
  }
  return *this;
}

const EcmrModel::SizeCache& EcmrModel::cache_for(int N) const {
  std::lock_guard<std::mutex> lock(cache_mu_);
  if (static_cast<int>(cache_.size()) <= N) cache_.resize(N + 1);
  if (!cache_[N]) {
    auto sc = std::make_unique<SizeCache>();
    sc->R = build_R(icc_, N);
    Eigen::LLT<Eigen::MatrixXd> llt(sc->R);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error("R(Q," + std::to_string(N) + ") is not positive definite");
    }
    sc->chol = llt.matrixL();
    cache_[N] = std::move(sc);
  }
  return *cache_[N];
}

const Eigen::MatrixXd& EcmrModel::R_for(int N) const { return cache_for(N).R; }
const Eigen::MatrixXd& EcmrModel::chol_R_for(int N) const { return cache_for(N).chol; }

double EcmrModel::subset_log_density(const std::vector<std::pair<int, int>>& S,
                                     const Eigen::VectorXd& m_S, int a,
                                     const ClusterRecord& rec, int n_mc,
                                     RngStream stream) const {
  if (S.empty()) throw std::invalid_argument("subset_log_density: empty index set");
  if (static_cast<Eigen::Index>(S.size()) != m_S.size()) {
    throw std::invalid_argument("subset_log_density: S / m_S size mismatch");
  }
  const int N = rec.N;
  std::vector<int> flat(S.size());
  std::vector<int> cont_pos, disc_pos;
  for (std::size_t t = 0; t < S.size(); ++t) {
    const auto [k, j] = S[t];
    flat[t] = k * N + j;
    if (marginals_[k].kind == MediatorKind::Continuous) {
      cont_pos.push_back(static_cast<int>(t));
    } else {
      disc_pos.push_back(static_cast<int>(t));
    }
  }
  const Eigen::MatrixXd R_S = submatrix(R_for(N), flat);

  Eigen::VectorXd eps_c(cont_pos.size()), lo_d(disc_pos.size()), hi_d(disc_pos.size());
  double cont_factor = 0.0;
  for (std::size_t t = 0; t < cont_pos.size(); ++t) {
    const auto [k, j] = S[cont_pos[t]];
    const double m = m_S(cont_pos[t]);
    const double u = marginals_[k].cdf(m, a, rec, j);
    if (u <= marginals_[k].cfg.clip_delta || u >= 1.0 - marginals_[k].cfg.clip_delta) {
      clip_count_.fetch_add(1);
    }
    const double eps = quantile_1d(g_, u);
    eps_c(t) = eps;
    cont_factor += marginals_[k].log_pdf(m, a, rec, j) - log_density_1d(g_, eps);
  }
  for (std::size_t t = 0; t < disc_pos.size(); ++t) {
    const auto [k, j] = S[disc_pos[t]];
    const auto [lo, hi] = pit_bounds(marginals_[k], g_, m_S(disc_pos[t]), a, rec, j);
    lo_d(t) = lo;
    hi_d(t) = hi;
  }

  std::vector<int> cont_local(cont_pos.size()), disc_local(disc_pos.size());
  {
    // local coordinate order inside R_S follows S's order
    for (std::size_t t = 0; t < cont_pos.size(); ++t) cont_local[t] = cont_pos[t];
    for (std::size_t t = 0; t < disc_pos.size(); ++t) disc_local[t] = disc_pos[t];
  }
  MixedEvaluator ev(R_S, cont_local, disc_local, g_);
  QmcSampler qmc(std::max(ev.qmc_dim(), 1), stream);
  double logv = cont_factor + ev.log_value(eps_c, lo_d, hi_d, n_mc, qmc);
  const double floor = std::log(f_min);
  if (logv < floor) {
    floor_count_.fetch_add(1);
    logv = floor;
  }
  return logv;
}

std::vector<Eigen::MatrixXd> EcmrModel::sample_mediators(int a, const ClusterRecord& rec,
                                                         int n_draws,
                                                         RngStream stream) const {
  const int K = n_mediators();
  const int N = rec.N;
  const Eigen::MatrixXd& chol = chol_R_for(N);
  const Eigen::MatrixXd eps = sample_standard(chol, g_, n_draws, stream);

  // Binary thresholds and continuous means don't depend on the draw.
  Eigen::MatrixXd cut(K, N);
  for (int k = 0; k < K; ++k) {
    if (marginals_[k].kind != MediatorKind::Binary) continue;
    for (int j = 0; j < N; ++j) {
      cut(k, j) = quantile_1d(g_, 1.0 - marginals_[k].prob1(a, rec, j));
    }
  }

  std::vector<Eigen::MatrixXd> out(n_draws, Eigen::MatrixXd(K, N));
  for (int t = 0; t < n_draws; ++t) {
    for (int k = 0; k < K; ++k) {
      for (int j = 0; j < N; ++j) {
        const double e = eps(t, k * N + j);
        if (marginals_[k].kind == MediatorKind::Binary) {
          out[t](k, j) = e >= cut(k, j) ? 1.0 : 0.0;
        } else {
          out[t](k, j) = marginals_[k].quantile(cdf_1d(g_, e), a, rec, j);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    nlohmann::json r = nlohmann::json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) r.push_back(M(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const std::size_t r = j.size(), c = r ? j[0].size() : 0;
  Eigen::MatrixXd M(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t l = 0; l < c; ++l) M(i, l) = j[i][l].get<double>();
  }
  return M;
}

}  // namespace

std::string EcmrModel::dump_json() const {
  nlohmann::json j;
  j["generator"] = g_.to_string();
  j["Q0"] = matrix_to_json(icc_.Q0);
  j["Q1"] = matrix_to_json(icc_.Q1);
  j["f_min"] = f_min;
  j["clip_count"] = clip_count_.load();
  nlohmann::json margs = nlohmann::json::array();
  for (const auto& m : marginals_) {
    nlohmann::json mj;
    mj["k"] = m.k;
    mj["kind"] = m.kind == MediatorKind::Binary ? "binary" : "continuous";
    mj["mean"] = m.mean.serialize();
    mj["sigma"] = m.sigma;
    mj["residual"] = m.residual == ResidualKind::Normal ? "normal" : "empirical";
    mj["knots"] = m.knots;
    mj["probs"] = m.probs;
    mj["clip_delta"] = m.cfg.clip_delta;
    mj["add_cluster_means"] = m.cfg.add_cluster_means;
    mj["distorted_cov"] = m.cfg.cov == CovTransform::Distorted;
    margs.push_back(std::move(mj));
  }
  j["marginals"] = std::move(margs);
  return j.dump(2);
}

EcmrModel EcmrModel::load_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  std::vector<MarginalModel> margs;
  for (const auto& mj : j.at("marginals")) {
    MarginalModel m;
    m.k = mj.at("k").get<int>();
    m.kind = mj.at("kind").get<std::string>() == "binary" ? MediatorKind::Binary
                                                          : MediatorKind::Continuous;
    m.mean = Regressor::deserialize(mj.at("mean").get<std::string>());
    m.sigma = mj.at("sigma").get<double>();
    m.residual = mj.at("residual").get<std::string>() == "normal" ? ResidualKind::Normal
                                                                  : ResidualKind::Empirical;
    m.knots = mj.at("knots").get<std::vector<double>>();
    m.probs = mj.at("probs").get<std::vector<double>>();
    m.cfg.clip_delta = mj.at("clip_delta").get<double>();
    m.cfg.add_cluster_means = mj.at("add_cluster_means").get<bool>();
    m.cfg.cov = mj.at("distorted_cov").get<bool>() ? CovTransform::Distorted
                                                   : CovTransform::Identity;
    margs.push_back(std::move(m));
  }
  IccMatrices icc{matrix_from_json(j.at("Q0")), matrix_from_json(j.at("Q1"))};
  EcmrModel model(std::move(margs), std::move(icc), Generator::parse(j.at("generator")));
  model.f_min = j.at("f_min").get<double>();
  return model;
}

}  // namespace ccmed
