#include "ccmed/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ccmed/inference.hpp"
#include "ccmed/threading.hpp"

namespace ccmed {

Variant parse_variant(const std::string& name) {
  if (name == "G") return Variant::G;
  if (name == "EIF.PAR") return Variant::EifPar;
  if (name == "EIF.PAR.S") return Variant::EifParS;
  if (name == "EIF.DML") return Variant::EifDml;
  if (name == "EIF.DML.S") return Variant::EifDmlS;
  throw std::invalid_argument("unknown estimator variant: " + name);
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::G: return "G";
    case Variant::EifPar: return "EIF.PAR";
    case Variant::EifParS: return "EIF.PAR.S";
    case Variant::EifDml: return "EIF.DML";
    case Variant::EifDmlS: return "EIF.DML.S";
  }
  return "?";
}

NuisanceSet fit_nuisances(const Dataset& data, const std::vector<std::size_t>& cluster_idx,
                          const EngineConfig& cfg) {
  NuisanceSet nuis;
  nuis.outcome = OutcomeModel::fit(data, cluster_idx, cfg.outcome_learner, cfg.feature_map);
  auto marginals = fit_marginals(data, cluster_idx, cfg.marginal);
  IccFit icc = fit_icc(data, cluster_idx, marginals, cfg.generator, cfg.icc_opts);
  nuis.mediators = EcmrModel(std::move(marginals), icc.icc, cfg.generator);
  return nuis;
}

RngStream cluster_stream(const EngineConfig& cfg, std::string_view cluster_id) {
  return RngStream(cfg.seed).fork("cluster").fork(cluster_id);
}

double subset_logf(const NuisanceSet& nuis, const ClusterRecord& rec, int arm,
                   const std::vector<std::pair<int, int>>& S, const Eigen::VectorXd& m,
                   const EngineConfig& cfg, const RngStream& cs) {
  std::uint64_t h = static_cast<std::uint64_t>(arm + 1);
  for (const auto& [k, j] : S) {
    h = mix64(h ^ (static_cast<std::uint64_t>(k) * 131071ULL +
                   static_cast<std::uint64_t>(j) + 1ULL));
  }
  return nuis.mediators.subset_log_density(S, m, arm, rec, cfg.density_mc,
                                           cs.fork("dens").fork(h));
}

namespace {

struct LawDraws {
  std::vector<Eigen::MatrixXd> M;
  std::vector<double> w;  // weights summing to 1
};

std::vector<std::pair<int, int>> full_index_set(int K, int N) {
  std::vector<std::pair<int, int>> S;
  S.reserve(static_cast<std::size_t>(K) * N);
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < N; ++j) S.emplace_back(k, j);
  }
  return S;
}

Eigen::VectorXd values_at(const Eigen::MatrixXd& M,
                          const std::vector<std::pair<int, int>>& S) {
  Eigen::VectorXd v(S.size());
  for (std::size_t t = 0; t < S.size(); ++t) v(t) = M(S[t].first, S[t].second);
  return v;
}

// Exact enumeration of all binary mediator configurations with normalized
// model probabilities; replaces MC draws in small all-binary problems.
LawDraws enumerate_binary(const NuisanceSet& nuis, const ClusterRecord& rec, int arm,
                          const EngineConfig& cfg, const RngStream& cs) {
  const int K = nuis.mediators.n_mediators();
  const int N = rec.N;
  const int bits = K * N;
  const std::size_t n_states = std::size_t{1} << bits;
  const auto S = full_index_set(K, N);
  LawDraws out;
  out.M.reserve(n_states);
  out.w.reserve(n_states);
  double total = 0.0;
  for (std::size_t c = 0; c < n_states; ++c) {
    Eigen::MatrixXd M(K, N);
    for (int b = 0; b < bits; ++b) {
      M(b / N, b % N) = (c >> b) & 1 ? 1.0 : 0.0;
    }
    const double p = std::exp(subset_logf(nuis, rec, arm, S, values_at(M, S), cfg, cs));
    out.M.push_back(std::move(M));
    out.w.push_back(p);
    total += p;
  }
  for (double& w : out.w) w /= total;
  return out;
}

LawDraws mc_draws(const NuisanceSet& nuis, const ClusterRecord& rec, int arm,
                  const EngineConfig& cfg, RngStream stream) {
  LawDraws out;
  out.M = nuis.mediators.sample_mediators(arm, rec, cfg.n_mc, stream);
  out.w.assign(out.M.size(), 1.0 / static_cast<double>(out.M.size()));
  return out;
}

struct RefShape {
  enum class Kind { SetI, SetII, Theta2 } kind = Kind::SetI;
  int a_star = 1;
  int arm = 1;                // Set-I sampling arm
  std::vector<int> rows0;     // 0-based mediator rows drawn from arm 0
  int k = 0;                  // 0-based Theta2 mediator
};

RefShape classify(const FunctionalRef& ref, int K) {
  RefShape s;
  if (ref.kind == FunctionalRef::Kind::Theta2) {
    s.kind = RefShape::Kind::Theta2;
    s.a_star = 1;
    s.k = ref.t2.k - 1;
    for (int k : ref.t2.jstar) s.rows0.push_back(k - 1);
    return s;
  }
  if (ref.t1.constant_arm()) {
    s.kind = RefShape::Kind::SetI;
    s.a_star = ref.t1.a_star;
    s.arm = ref.t1.arm.empty() ? 1 : ref.t1.arm[0];
    return s;
  }
  if (ref.t1.a_star != 1) {
    throw std::invalid_argument("mixed-arm theta1 requires a*=1: " + ref.to_string());
  }
  s.kind = RefShape::Kind::SetII;
  s.a_star = 1;
  for (int k = 0; k < K; ++k) {
    if (ref.t1.arm[k] == 0) s.rows0.push_back(k);
  }
  return s;
}

Eigen::MatrixXd splice(const Eigen::MatrixXd& from0, const Eigen::MatrixXd& from1,
                       const std::vector<int>& rows0) {
  Eigen::MatrixXd out = from1;
  for (int k : rows0) out.row(k) = from0.row(k);
  return out;
}

double capped_ratio(double log_r, double cap, long& truncations) {
  const double r = std::exp(log_r);
  if (r > cap) {
    ++truncations;
    return cap;
  }
  return r;
}

}  // namespace

static std::vector<ClusterPieces> evaluate_cluster_impl(
    const ClusterRecord& rec, const std::vector<FunctionalRef>& refs,
    const NuisanceSet& nuis, const EngineConfig& cfg, double pi1, RngStream stream,
    bool need_eif) {
  const int K = nuis.mediators.n_mediators();
  const int N = rec.N;
  const double w_i = cluster_weight(cfg.weight, rec);
  const double pi0 = 1.0 - pi1;
  const double i1 = rec.A == 1 ? 1.0 / pi1 : 0.0;
  const double i0 = rec.A == 0 ? 1.0 / pi0 : 0.0;
  const double center = 1.0 - i0 - i1;  // (1 - sum_a I(A=a)/Pr(A=a))

  // Shared draw sets (common random numbers across all functionals).
  const bool binary_only = std::all_of(
      nuis.mediators.marginals().begin(), nuis.mediators.marginals().end(),
      [](const MarginalModel& m) { return m.kind == MediatorKind::Binary; });
  const bool enumerate = binary_only && K * N <= 30 &&
                         (std::size_t{1} << (K * N)) <=
                             static_cast<std::size_t>(cfg.enum_cap);
  LawDraws d0, d1;
  if (enumerate) {
    d0 = enumerate_binary(nuis, rec, 0, cfg, stream);
    d1 = enumerate_binary(nuis, rec, 1, cfg, stream);
  } else {
    d0 = mc_draws(nuis, rec, 0, cfg, stream.fork("m0"));
    d1 = mc_draws(nuis, rec, 1, cfg, stream.fork("m1"));
  }
  const bool paired = !enumerate;

  EtaBatch eta0(nuis.outcome, 0, rec);
  EtaBatch eta1(nuis.outcome, 1, rec);

  // Observed-matrix eta values per arm (needed for EIF residual/correction
  // terms).
  Eigen::VectorXd eta_obs0(N), eta_obs1(N);
  if (need_eif) {
    eta0.set_matrix(rec.M);
    eta1.set_matrix(rec.M);
    for (int j = 0; j < N; ++j) {
      eta_obs0(j) = eta0.eta(j);
      eta_obs1(j) = eta1.eta(j);
    }
  }

  const auto S_full = full_index_set(K, N);
  double logf_obs0 = 0.0, logf_obs1 = 0.0;
  bool have_logf0 = false, have_logf1 = false;
  auto logf_full = [&](int arm) {
    double& cachev = arm == 0 ? logf_obs0 : logf_obs1;
    bool& have = arm == 0 ? have_logf0 : have_logf1;
    if (!have) {
      cachev = subset_logf(nuis, rec, arm, S_full, values_at(rec.M, S_full), cfg, stream);
      have = true;
    }
    return cachev;
  };

  // Mean over the product law f0 x f1 of a matrix-pair functional.
  auto product_mean = [&](auto&& body /* (m0, m1, weight) */) {
    if (paired) {
      for (std::size_t t = 0; t < d0.M.size(); ++t) body(d0.M[t], d1.M[t], d0.w[t]);
    } else {
      for (std::size_t t = 0; t < d0.M.size(); ++t) {
        for (std::size_t u = 0; u < d1.M.size(); ++u) {
          body(d0.M[t], d1.M[u], d0.w[t] * d1.w[u]);
        }
      }
    }
  };

  std::vector<ClusterPieces> out(refs.size());
  for (std::size_t r = 0; r < refs.size(); ++r) {
    const RefShape shape = classify(refs[r], K);
    ClusterPieces& pc = out[r];
    Eigen::VectorXd integral = Eigen::VectorXd::Zero(N);

    if (shape.kind == RefShape::Kind::SetI) {
      EtaBatch& eb = shape.a_star == 1 ? eta1 : eta0;
      const LawDraws& d = shape.arm == 1 ? d1 : d0;
      for (std::size_t t = 0; t < d.M.size(); ++t) {
        eb.set_matrix(d.M[t]);
        for (int j = 0; j < N; ++j) integral(j) += d.w[t] * eb.eta(j);
      }
      pc.g = (w_i / N) * integral.sum();
      if (need_eif) {
        double ratio = 1.0;
        if (shape.arm != shape.a_star) {
          ratio = capped_ratio(logf_full(shape.arm) - logf_full(shape.a_star),
                               cfg.ratio_cap, pc.truncations);
        }
        const double istar = shape.a_star == 1 ? i1 : i0;
        const double iarm = shape.arm == 1 ? i1 : i0;
        const Eigen::VectorXd& eta_obs = shape.a_star == 1 ? eta_obs1 : eta_obs0;
        double phi = 0.0;
        for (int j = 0; j < N; ++j) {
          phi += istar * ratio * (rec.Y(j) - eta_obs(j)) +
                 iarm * (eta_obs(j) - integral(j)) + integral(j);
        }
        pc.phi = (w_i / N) * phi;
      }
      continue;
    }

    if (shape.kind == RefShape::Kind::SetII) {
      // theta (tau): both blocks integrated
      product_mean([&](const Eigen::MatrixXd& m0, const Eigen::MatrixXd& m1, double wt) {
        eta1.set_matrix(splice(m0, m1, shape.rows0));
        for (int j = 0; j < N; ++j) integral(j) += wt * eta1.eta(j);
      });
      pc.g = (w_i / N) * integral.sum();
      if (!need_eif) continue;

      Eigen::VectorXd tau_tilde = Eigen::VectorXd::Zero(N);  // J* block observed
      Eigen::VectorXd tau_check = Eigen::VectorXd::Zero(N);  // complement observed
      for (std::size_t t = 0; t < d1.M.size(); ++t) {
        eta1.set_matrix(splice(rec.M, d1.M[t], shape.rows0));
        for (int j = 0; j < N; ++j) tau_tilde(j) += d1.w[t] * eta1.eta(j);
      }
      for (std::size_t t = 0; t < d0.M.size(); ++t) {
        eta1.set_matrix(splice(d0.M[t], rec.M, shape.rows0));
        for (int j = 0; j < N; ++j) tau_check(j) += d0.w[t] * eta1.eta(j);
      }

      std::vector<std::pair<int, int>> S0, S1;
      for (int k = 0; k < K; ++k) {
        const bool in0 =
            std::find(shape.rows0.begin(), shape.rows0.end(), k) != shape.rows0.end();
        for (int j = 0; j < N; ++j) (in0 ? S0 : S1).emplace_back(k, j);
      }
      const double log_r = subset_logf(nuis, rec, 0, S0, values_at(rec.M, S0), cfg, stream) +
                           subset_logf(nuis, rec, 1, S1, values_at(rec.M, S1), cfg, stream) -
                           logf_full(1);
      const double r_t = capped_ratio(log_r, cfg.ratio_cap, pc.truncations);

      double phi = 0.0, resid = 0.0;
      for (int j = 0; j < N; ++j) {
        const double res_j = rec.Y(j) - eta_obs1(j);
        phi += i0 * tau_tilde(j) + center * integral(j) +
               i1 * (r_t * res_j + tau_check(j));
        resid += r_t * res_j;
      }
      pc.phi = (w_i / N) * phi;
      pc.stabilizable = true;
      pc.resid_sum = (w_i / N) * (rec.A == 1 ? resid : 0.0);
      pc.rw_sum = (rec.A == 1 ? w_i * r_t : 0.0);
      pc.stab_coef = w_i * (1.0 - i1 * r_t);
      continue;
    }

    // Theta2(k, J*)
    const int k2 = shape.k;
    std::vector<int> rows0k = shape.rows0;
    rows0k.push_back(k2);
    std::sort(rows0k.begin(), rows0k.end());

    product_mean([&](const Eigen::MatrixXd& m0, const Eigen::MatrixXd& m1, double wt) {
      eta1.set_matrix(splice(m0, m1, rows0k));
      for (int j = 0; j < N; ++j) {
        integral(j) += wt * eta1.eta_override(k2, j, m1(k2, j));
      }
    });
    pc.g = (w_i / N) * integral.sum();
    if (!need_eif) continue;

    Eigen::VectorXd kap_tilde = Eigen::VectorXd::Zero(N);
    Eigen::VectorXd kap_check = Eigen::VectorXd::Zero(N);
    for (std::size_t t = 0; t < d1.M.size(); ++t) {
      // observed (J*, k) rows; arm-1 block and own (k, j) entry integrated
      eta1.set_matrix(splice(rec.M, d1.M[t], rows0k));
      for (int j = 0; j < N; ++j) {
        kap_tilde(j) += d1.w[t] * eta1.eta_override(k2, j, d1.M[t](k2, j));
      }
    }
    for (std::size_t t = 0; t < d0.M.size(); ++t) {
      // arm-0 block integrated; observed complement and observed (k, j)
      eta1.set_matrix(splice(d0.M[t], rec.M, rows0k));
      for (int j = 0; j < N; ++j) {
        kap_check(j) += d0.w[t] * eta1.eta_override(k2, j, rec.M(k2, j));
      }
    }

    // per-j density ratios r_j
    Eigen::VectorXd r_j(N);
    for (int j = 0; j < N; ++j) {
      std::vector<std::pair<int, int>> S0, S1;
      for (int k = 0; k < K; ++k) {
        const bool in0k = std::find(rows0k.begin(), rows0k.end(), k) != rows0k.end();
        for (int jp = 0; jp < N; ++jp) {
          if (k == k2) {
            (jp == j ? S1 : S0).emplace_back(k, jp);
          } else {
            (in0k ? S0 : S1).emplace_back(k, jp);
          }
        }
      }
      double log_r = -logf_full(1);
      if (!S0.empty()) {
        log_r += subset_logf(nuis, rec, 0, S0, values_at(rec.M, S0), cfg, stream);
      }
      log_r += subset_logf(nuis, rec, 1, S1, values_at(rec.M, S1), cfg, stream);
      r_j(j) = capped_ratio(log_r, cfg.ratio_cap, pc.truncations);
    }

    double phi = 0.0, resid = 0.0, rsum = 0.0;
    for (int j = 0; j < N; ++j) {
      const double res_j = rec.Y(j) - eta_obs1(j);
      phi += i0 * kap_tilde(j) + center * integral(j) + i1 * (r_j(j) * res_j + kap_check(j));
      resid += r_j(j) * res_j;
      rsum += r_j(j);
    }
    pc.phi = (w_i / N) * phi;
    pc.stabilizable = true;
    pc.resid_sum = (w_i / N) * (rec.A == 1 ? resid : 0.0);
    pc.rw_sum = (rec.A == 1 ? (w_i / N) * rsum : 0.0);
    pc.stab_coef = w_i * (1.0 - i1 * rsum / N);
  }
  return out;
}

std::vector<ClusterPieces> evaluate_cluster(const ClusterRecord& rec,
                                            const std::vector<FunctionalRef>& refs,
                                            const NuisanceSet& nuis,
                                            const EngineConfig& cfg, double pi1,
                                            RngStream stream, bool need_eif) {
  return evaluate_cluster_impl(rec, refs, nuis, cfg, pi1, stream, need_eif);
}

namespace {

std::vector<int> assign_folds(const Dataset& data, int S, std::uint64_t seed,
                              int max_refolds, int& refolds) {
  const std::size_t I = data.clusters.size();
  for (int attempt = 0; attempt <= max_refolds; ++attempt) {
    RngStream s = RngStream(seed).fork("folds").fork(static_cast<std::uint64_t>(attempt));
    std::vector<std::size_t> order(I);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = I - 1; i > 0; --i) {
      std::swap(order[i], order[s.next_below(i + 1)]);
    }
    std::vector<int> fold_of(I);
    for (std::size_t pos = 0; pos < I; ++pos) {
      fold_of[order[pos]] = static_cast<int>(pos % S);
    }
    // every fold must contain both arms
    std::vector<int> n0(S, 0), n1(S, 0);
    for (std::size_t i = 0; i < I; ++i) {
      (data.clusters[i].A ? n1 : n0)[fold_of[i]]++;
    }
    bool ok = true;
    for (int f = 0; f < S; ++f) ok = ok && n0[f] > 0 && n1[f] > 0;
    if (ok) {
      refolds = attempt;
      return fold_of;
    }
  }
  throw std::runtime_error("cross-fitting: could not build folds with both arms (" +
                           std::to_string(max_refolds) + " attempts)");
}

}  // namespace

std::vector<ThetaEstimates> estimate_thetas_multi(const Dataset& data,
                                                  const std::vector<FunctionalRef>& refs,
                                                  const std::vector<Variant>& variants,
                                                  const EngineConfig& cfg) {
  const std::size_t I = data.clusters.size();
  const std::size_t R = refs.size();
  if (I < 2) throw std::invalid_argument("estimate: need at least 2 clusters");
  if (variants.empty()) return {};
  const bool dml = is_dml(variants.front());
  bool need_eif = false;
  for (Variant v : variants) {
    if (is_dml(v) != dml) {
      throw std::invalid_argument(
          "estimate_thetas_multi: variants must all be DML or all non-DML");
    }
    need_eif = need_eif || v != Variant::G;
  }

  double pi1 = data.pi;
  if (cfg.use_empirical_pi) {
    double s = 0;
    for (const auto& c : data.clusters) s += c.A;
    pi1 = s / static_cast<double>(I);
  }

  // Shared across variants: fold split, nuisance fits, cluster pieces.
  const int S = dml ? cfg.folds : 1;
  std::vector<int> fold_of(I, 0);
  int refolds = 0;
  if (dml) {
    if (cfg.folds < 2) throw std::invalid_argument("DML variants need folds >= 2");
    fold_of = assign_folds(data, S, cfg.seed, cfg.max_refolds, refolds);
  }

  // Nuisance fits: one per fold (complement-trained) or one on the full data.
  std::vector<NuisanceSet> nuisances(S);
  std::vector<std::vector<std::size_t>> fold_members(S);
  for (std::size_t i = 0; i < I; ++i) fold_members[fold_of[i]].push_back(i);
  for (int f = 0; f < S; ++f) {
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < I; ++i) {
      if (S == 1 || fold_of[i] != f) train.push_back(i);
    }
    nuisances[f] = fit_nuisances(data, train, cfg);
  }
  const std::optional<IccMatrices> icc0 = nuisances[0].mediators.icc();

  // Per-cluster functional pieces, concurrently.
  std::vector<std::vector<ClusterPieces>> pieces(I);
  parallel_for(I, [&](std::size_t i) {
    const auto& rec = data.clusters[i];
    pieces[i] = evaluate_cluster_impl(rec, refs, nuisances[fold_of[i]], cfg, pi1,
                                      cluster_stream(cfg, rec.id), need_eif);
  });

  long truncations = 0;
  for (const auto& pv : pieces) {
    for (const auto& p : pv) truncations += p.truncations;
  }

  Eigen::VectorXd weights(I);
  for (std::size_t i = 0; i < I; ++i) {
    weights(i) = cluster_weight(cfg.weight, data.clusters[i]);
  }
  const double w_bar = weights.mean();

  Eigen::MatrixXd phi(I, R), gmat(I, R);
  for (std::size_t i = 0; i < I; ++i) {
    for (std::size_t r = 0; r < R; ++r) {
      gmat(i, r) = pieces[i][r].g;
      phi(i, r) = pieces[i][r].phi;
    }
  }

  std::vector<ThetaEstimates> out;
  out.reserve(variants.size());
  for (Variant variant : variants) {
    ThetaEstimates est;
    est.refs = refs;
    est.theta.resize(R);
    est.plugin.resize(R);
    est.influence = Eigen::MatrixXd::Zero(I, R);
    est.fold_of = fold_of;
    est.mc_draws = cfg.n_mc;
    est.refolds = refolds;
    est.truncations = truncations;
    est.icc0 = icc0;

    // Stabilization: per fold and per stabilizable functional, the WLS
    // intercept on treated residuals; contributions shift by beta * stab_coef.
    Eigen::MatrixXd phi_v = phi;
    if (is_stabilized(variant)) {
      double resid_after = 0.0;
      for (int f = 0; f < S; ++f) {
        for (std::size_t r = 0; r < R; ++r) {
          if (!pieces[fold_members[f][0]][r].stabilizable) continue;
          double num = 0.0, den = 0.0;
          for (std::size_t i : fold_members[f]) {
            num += pieces[i][r].resid_sum;
            den += pieces[i][r].rw_sum;
          }
          if (den <= 0.0) {
            throw std::runtime_error("stabilize: zero total ratio weight for " +
                                     refs[r].to_string());
          }
          const double beta = num / den;
          est.beta[std::to_string(f) + ":" + refs[r].to_string()] = beta;
          for (std::size_t i : fold_members[f]) {
            phi_v(i, r) += beta * pieces[i][r].stab_coef;
          }
          resid_after += num - beta * den;
        }
      }
      est.stab_residual = resid_after;
    }

    // Aggregate per fold, then I_s-weighted.
    const Eigen::MatrixXd& basis = variant != Variant::G ? phi_v : gmat;
    for (std::size_t r = 0; r < R; ++r) {
      double theta = 0.0;
      for (int f = 0; f < S; ++f) {
        double num = 0.0, den = 0.0;
        for (std::size_t i : fold_members[f]) {
          num += basis(i, r);
          den += weights(i);
        }
        const double theta_s = num / den;
        theta += theta_s * static_cast<double>(fold_members[f].size()) / I;
        for (std::size_t i : fold_members[f]) {
          est.influence(i, r) = (basis(i, r) - theta_s * weights(i)) / w_bar;
        }
      }
      est.theta(r) = theta;
      double gnum = 0.0;
      for (std::size_t i = 0; i < I; ++i) gnum += gmat(i, r);
      est.plugin(r) = gnum / weights.sum();
    }
    out.push_back(std::move(est));
  }
  return out;
}

ThetaEstimates estimate_thetas(const Dataset& data, const std::vector<FunctionalRef>& refs,
                               Variant variant, const EngineConfig& cfg) {
  return std::move(estimate_thetas_multi(data, refs, {variant}, cfg).front());
}

namespace {

// d log h(theta) / d theta with h the per-scale link (identity for RR,
// odds for OR)
double ratio_grad(Scale scale, double x) {
  if (scale == Scale::RiskRatio) return 1.0 / x;
  return 1.0 / (x * (1.0 - x));
}

}  // namespace

std::vector<EstimateReport> estimate_multi(const Dataset& data,
                                           const std::vector<EffectSpec>& specs,
                                           const std::vector<Variant>& variants,
                                           const EngineConfig& cfg,
                                           const InferenceConfig& inf) {
  if (variants.empty()) return {};
  const std::vector<FunctionalRef> refs = collect_refs(specs);
  const std::size_t I = data.clusters.size();
  const std::size_t V = variants.size();
  const std::size_t E = specs.size();

  std::vector<ThetaEstimates> thetas = estimate_thetas_multi(data, refs, variants, cfg);

  std::map<FunctionalRef, std::size_t> ref_pos;
  for (std::size_t r = 0; r < refs.size(); ++r) ref_pos[refs[r]] = r;

  const bool use_eif_var = is_dml(variants.front());

  // One set of bootstrap resamples for all non-DML variants: each resample
  // refits the nuisances once and aggregates per variant.
  BootstrapResult boot;
  bool have_boot = false;
  if (!use_eif_var && inf.bootstrap_B >= 2) {
    EngineConfig bcfg = cfg;
    if (inf.bootstrap_n_mc > 0) bcfg.n_mc = inf.bootstrap_n_mc;
    if (!bcfg.icc_opts.warm_start && thetas.front().icc0) {
      // Bootstrap ICC refits start from the full-data optimum.
      bcfg.icc_opts.warm_start = thetas.front().icc0;
      bcfg.icc_opts.multistart = false;
    }
    auto closure = [&](const Dataset& boot_data, std::uint64_t seed) {
      EngineConfig c = bcfg;
      c.seed = seed;
      std::vector<ThetaEstimates> ths = estimate_thetas_multi(boot_data, refs, variants, c);
      Eigen::VectorXd vals(static_cast<Eigen::Index>(V * E));
      for (std::size_t v = 0; v < V; ++v) {
        ValueMap vm;
        for (std::size_t r = 0; r < refs.size(); ++r) vm[refs[r]] = ths[v].theta(r);
        for (std::size_t s = 0; s < E; ++s) {
          try {
            const double val = combine(specs[s], vm);
            vals(static_cast<Eigen::Index>(v * E + s)) =
                specs[s].scale == Scale::Difference ? val : std::log(val);
          } catch (const std::exception&) {
            vals(static_cast<Eigen::Index>(v * E + s)) =
                std::numeric_limits<double>::quiet_NaN();
          }
        }
      }
      return vals;
    };
    boot = cluster_bootstrap(data, closure, inf.bootstrap_B, cfg.seed, inf.alpha);
    have_boot = true;
  }

  std::vector<EstimateReport> reports(V);
  for (std::size_t v = 0; v < V; ++v) {
    EstimateReport& rep = reports[v];
    rep.variant = variants[v];
    rep.thetas = std::move(thetas[v]);
    if (have_boot) {
      rep.bootstrap_replicates = boot.used;
      rep.bootstrap_redraws = boot.redraws;
    }

    ValueMap vmap;
    for (std::size_t r = 0; r < refs.size(); ++r) vmap[refs[r]] = rep.thetas.theta(r);

    for (std::size_t s = 0; s < E; ++s) {
      const EffectSpec& spec = specs[s];
      EffectEstimate ee;
      ee.name = spec.name;
      ee.scale = spec.scale;
      ee.value = combine(spec, vmap);

      if (use_eif_var) {
        Eigen::VectorXd combined = Eigen::VectorXd::Zero(I);
        for (const auto& [ref, expo] : spec.terms) {
          const std::size_t r = ref_pos.at(ref);
          double grad = static_cast<double>(expo);
          if (spec.scale != Scale::Difference) {
            grad *= ratio_grad(spec.scale, rep.thetas.theta(r));
          }
          combined += grad * rep.thetas.influence.col(r);
        }
        const double Var = eif_variance(combined);
        ee.se = std::sqrt(Var / static_cast<double>(I));
        const bool log_scale = spec.scale != Scale::Difference;
        const double point = log_scale ? std::log(ee.value) : ee.value;
        CiReport ci = wald_ci(spec.name, point, ee.se, inf.alpha, log_scale);
        ee.lower = ci.lower;
        ee.upper = ci.upper;
        ee.ci_method = "eif-" + ci.method;
      } else if (have_boot) {
        // Drop failed replicates (ratio-scale domain errors).
        std::vector<double> vals;
        const Eigen::Index col = static_cast<Eigen::Index>(v * E + s);
        for (int b = 0; b < boot.used; ++b) {
          if (std::isfinite(boot.draws(b, col))) vals.push_back(boot.draws(b, col));
        }
        if (vals.size() < 2) throw std::runtime_error("bootstrap failed for " + spec.name);
        double mean = 0.0;
        for (double val : vals) mean += val;
        mean /= vals.size();
        double var = 0.0;
        for (double val : vals) var += (val - mean) * (val - mean);
        ee.se = std::sqrt(var / (vals.size() - 1));
        const bool log_scale = spec.scale != Scale::Difference;
        if (inf.percentile) {
          std::sort(vals.begin(), vals.end());
          auto quant = [&](double q) {
            const double pos = q * (vals.size() - 1);
            const std::size_t lo = static_cast<std::size_t>(pos);
            const std::size_t hi = std::min(lo + 1, vals.size() - 1);
            return vals[lo] + (pos - lo) * (vals[hi] - vals[lo]);
          };
          ee.lower = log_scale ? std::exp(quant(inf.alpha / 2)) : quant(inf.alpha / 2);
          ee.upper = log_scale ? std::exp(quant(1 - inf.alpha / 2)) : quant(1 - inf.alpha / 2);
          ee.ci_method = "bootstrap-percentile";
        } else {
          const double point = log_scale ? std::log(ee.value) : ee.value;
          CiReport ci = wald_ci(spec.name, point, ee.se, inf.alpha, log_scale);
          ee.lower = ci.lower;
          ee.upper = ci.upper;
          ee.ci_method = "bootstrap-" + ci.method;
        }
      } else {
        ee.ci_method = "none";
      }
      rep.effects.push_back(std::move(ee));
    }
  }
  return reports;
}

EstimateReport estimate(const Dataset& data, const std::vector<EffectSpec>& specs,
                        Variant variant, const EngineConfig& cfg,
                        const InferenceConfig& inf) {
  return std::move(estimate_multi(data, specs, {variant}, cfg, inf).front());
}

}  // namespace ccmed
