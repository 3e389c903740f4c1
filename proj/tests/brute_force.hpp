#pragma once

// Independent re-computation of the per-cluster functional values and
// influence contributions for small all-binary mediator problems.  Every
// integral is evaluated by direct enumeration of the 2^(K*N) mediator
// configurations, every counterfactual mean by OutcomeModel::eta on an
// explicitly assembled matrix, and the influence displays are transcribed
// term by term.  Shares only the canonical density/stream plumbing with the
// engine so both sides see identical density values.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "ccmed/engine.hpp"

namespace ccmed::oracle {

struct Law {
  std::vector<Eigen::MatrixXd> M;
  std::vector<double> w;
};

inline std::vector<std::pair<int, int>> all_coords(int K, int N) {
  std::vector<std::pair<int, int>> S;
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < N; ++j) S.emplace_back(k, j);
  }
  return S;
}

inline Eigen::VectorXd pick(const Eigen::MatrixXd& M,
                            const std::vector<std::pair<int, int>>& S) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(S.size()));
  for (std::size_t t = 0; t < S.size(); ++t) v(t) = M(S[t].first, S[t].second);
  return v;
}

inline Law enumerate_law(const NuisanceSet& nuis, const ClusterRecord& rec, int arm,
                         const EngineConfig& cfg, const RngStream& cs) {
  const int K = nuis.mediators.n_mediators();
  const int N = rec.N;
  const auto S = all_coords(K, N);
  const std::size_t n_states = std::size_t{1} << (K * N);
  Law law;
  double total = 0.0;
  for (std::size_t c = 0; c < n_states; ++c) {
    Eigen::MatrixXd M(K, N);
    for (int b = 0; b < K * N; ++b) M(b / N, b % N) = (c >> b) & 1 ? 1.0 : 0.0;
    const double p = std::exp(subset_logf(nuis, rec, arm, S, pick(M, S), cfg, cs));
    law.M.push_back(std::move(M));
    law.w.push_back(p);
    total += p;
  }
  for (double& w : law.w) w /= total;
  return law;
}

struct Pieces {
  double g = 0.0;
  double phi = 0.0;
};

// Direct evaluation of one functional on one all-binary cluster.
inline Pieces evaluate(const ClusterRecord& rec, const FunctionalRef& ref,
                       const NuisanceSet& nuis, const EngineConfig& cfg, double pi1) {
  const int K = nuis.mediators.n_mediators();
  const int N = rec.N;
  const RngStream cs = cluster_stream(cfg, rec.id);
  const Law d0 = enumerate_law(nuis, rec, 0, cfg, cs);
  const Law d1 = enumerate_law(nuis, rec, 1, cfg, cs);

  const double w_i = cluster_weight(cfg.weight, rec);
  const double i1 = rec.A == 1 ? 1.0 / pi1 : 0.0;
  const double i0 = rec.A == 0 ? 1.0 / (1.0 - pi1) : 0.0;
  const double center = 1.0 - i0 - i1;

  auto eta = [&](int a, const Eigen::MatrixXd& M, int j) {
    return nuis.outcome.eta(a, M, rec, j);
  };
  const auto S_all = all_coords(K, N);
  auto logf_obs = [&](int arm) {
    return subset_logf(nuis, rec, arm, S_all, pick(rec.M, S_all), cfg, cs);
  };
  auto cap = [&](double log_r) { return std::min(std::exp(log_r), cfg.ratio_cap); };
  auto splice = [&](const Eigen::MatrixXd& from0, const Eigen::MatrixXd& from1,
                    const std::vector<int>& rows0) {
    Eigen::MatrixXd out = from1;
    for (int k : rows0) out.row(k) = from0.row(k);
    return out;
  };

  Pieces pc;

  if (ref.kind == FunctionalRef::Kind::Theta1 && ref.t1.constant_arm()) {
    const int a_star = ref.t1.a_star;
    const int arm = ref.t1.arm.empty() ? 1 : ref.t1.arm[0];
    const Law& d = arm == 1 ? d1 : d0;
    Eigen::VectorXd integral = Eigen::VectorXd::Zero(N);
    for (std::size_t t = 0; t < d.M.size(); ++t) {
      for (int j = 0; j < N; ++j) integral(j) += d.w[t] * eta(a_star, d.M[t], j);
    }
    pc.g = (w_i / N) * integral.sum();
    const double ratio = arm == a_star ? 1.0 : cap(logf_obs(arm) - logf_obs(a_star));
    const double istar = a_star == 1 ? i1 : i0;
    const double iarm = arm == 1 ? i1 : i0;
    double phi = 0.0;
    for (int j = 0; j < N; ++j) {
      const double eta_obs = eta(a_star, rec.M, j);
      phi += istar * ratio * (rec.Y(j) - eta_obs) + iarm * (eta_obs - integral(j)) +
             integral(j);
    }
    pc.phi = (w_i / N) * phi;
    return pc;
  }

  if (ref.kind == FunctionalRef::Kind::Theta1) {
    std::vector<int> rows0;
    for (int k = 0; k < K; ++k) {
      if (ref.t1.arm[k] == 0) rows0.push_back(k);
    }
    Eigen::VectorXd integral = Eigen::VectorXd::Zero(N);
    Eigen::VectorXd tau_tilde = Eigen::VectorXd::Zero(N);
    Eigen::VectorXd tau_check = Eigen::VectorXd::Zero(N);
    for (std::size_t t = 0; t < d0.M.size(); ++t) {
      for (std::size_t u = 0; u < d1.M.size(); ++u) {
        const Eigen::MatrixXd M = splice(d0.M[t], d1.M[u], rows0);
        const double wt = d0.w[t] * d1.w[u];
        for (int j = 0; j < N; ++j) integral(j) += wt * eta(1, M, j);
      }
    }
    for (std::size_t u = 0; u < d1.M.size(); ++u) {
      const Eigen::MatrixXd M = splice(rec.M, d1.M[u], rows0);
      for (int j = 0; j < N; ++j) tau_tilde(j) += d1.w[u] * eta(1, M, j);
    }
    for (std::size_t t = 0; t < d0.M.size(); ++t) {
      const Eigen::MatrixXd M = splice(d0.M[t], rec.M, rows0);
      for (int j = 0; j < N; ++j) tau_check(j) += d0.w[t] * eta(1, M, j);
    }
    std::vector<std::pair<int, int>> S0, S1;
    for (int k = 0; k < K; ++k) {
      const bool in0 = std::find(rows0.begin(), rows0.end(), k) != rows0.end();
      for (int j = 0; j < N; ++j) (in0 ? S0 : S1).emplace_back(k, j);
    }
    const double r =
        cap(subset_logf(nuis, rec, 0, S0, pick(rec.M, S0), cfg, cs) +
            subset_logf(nuis, rec, 1, S1, pick(rec.M, S1), cfg, cs) - logf_obs(1));
    double g = 0.0, phi = 0.0;
    for (int j = 0; j < N; ++j) {
      g += integral(j);
      phi += i0 * tau_tilde(j) + center * integral(j) +
             i1 * (r * (rec.Y(j) - eta(1, rec.M, j)) + tau_check(j));
    }
    pc.g = (w_i / N) * g;
    pc.phi = (w_i / N) * phi;
    return pc;
  }

  // theta_2(k, J*)
  const int k2 = ref.t2.k - 1;
  std::vector<int> rows0k;
  for (int k : ref.t2.jstar) rows0k.push_back(k - 1);
  rows0k.push_back(k2);
  std::sort(rows0k.begin(), rows0k.end());

  auto eta_with = [&](Eigen::MatrixXd M, int j, double own) {
    M(k2, j) = own;
    return eta(1, M, j);
  };

  Eigen::VectorXd integral = Eigen::VectorXd::Zero(N);
  Eigen::VectorXd kap_tilde = Eigen::VectorXd::Zero(N);
  Eigen::VectorXd kap_check = Eigen::VectorXd::Zero(N);
  for (std::size_t t = 0; t < d0.M.size(); ++t) {
    for (std::size_t u = 0; u < d1.M.size(); ++u) {
      const Eigen::MatrixXd M = splice(d0.M[t], d1.M[u], rows0k);
      const double wt = d0.w[t] * d1.w[u];
      for (int j = 0; j < N; ++j) integral(j) += wt * eta_with(M, j, d1.M[u](k2, j));
    }
  }
  for (std::size_t u = 0; u < d1.M.size(); ++u) {
    const Eigen::MatrixXd M = splice(rec.M, d1.M[u], rows0k);
    for (int j = 0; j < N; ++j) kap_tilde(j) += d1.w[u] * eta_with(M, j, d1.M[u](k2, j));
  }
  for (std::size_t t = 0; t < d0.M.size(); ++t) {
    const Eigen::MatrixXd M = splice(d0.M[t], rec.M, rows0k);
    for (int j = 0; j < N; ++j) kap_check(j) += d0.w[t] * eta_with(M, j, rec.M(k2, j));
  }

  double g = 0.0, phi = 0.0;
  for (int j = 0; j < N; ++j) {
    std::vector<std::pair<int, int>> S0, S1;
    for (int k = 0; k < K; ++k) {
      const bool in0 = std::find(rows0k.begin(), rows0k.end(), k) != rows0k.end();
      for (int jp = 0; jp < N; ++jp) {
        if (k == k2) {
          (jp == j ? S1 : S0).emplace_back(k, jp);
        } else {
          (in0 ? S0 : S1).emplace_back(k, jp);
        }
      }
    }
    double log_r = -logf_obs(1);
    if (!S0.empty()) log_r += subset_logf(nuis, rec, 0, S0, pick(rec.M, S0), cfg, cs);
    log_r += subset_logf(nuis, rec, 1, S1, pick(rec.M, S1), cfg, cs);
    const double r_j = cap(log_r);
    g += integral(j);
    phi += i0 * kap_tilde(j) + center * integral(j) +
           i1 * (r_j * (rec.Y(j) - eta(1, rec.M, j)) + kap_check(j));
  }
  pc.g = (w_i / N) * g;
  pc.phi = (w_i / N) * phi;
  return pc;
}

}  // namespace ccmed::oracle
