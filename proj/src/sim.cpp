#include "ccmed/sim.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <atomic>
#include <mutex>
#include <sstream>
#include <stdexcept>

#include "ccmed/threading.hpp"

namespace ccmed {

namespace {

constexpr int kNmin = 10;
constexpr int kNmax = 30;

IccMatrices true_icc() {
  IccMatrices icc;
  icc.Q0 = Eigen::MatrixXd::Identity(2, 2);
  icc.Q0(0, 1) = icc.Q0(1, 0) = 0.1;
  icc.Q1 = Eigen::MatrixXd::Constant(2, 2, 0.05);
  return icc;
}

// conditional mean coefficients, intercept first, over [A, N, A*N, V, X]
Eigen::VectorXd m1_beta() {
  Eigen::VectorXd b(6);
  b << -1.0, 0.2, 1.0 / (2.0 * kNmax), 1.0 / (2.0 * kNmax), 0.5, 0.5;
  return b;
}

Eigen::VectorXd m2_beta() {
  Eigen::VectorXd b(6);
  b << 0.0, 0.1, 1.0 / (5.0 * kNmax), 1.0 / (5.0 * kNmax), 0.3, -0.3;
  return b;
}

// outcome coefficients over
// [A, N, A*N, V, X, M1, M2, M1*M2, loo(M1), loo(M2), loo(M1*M2), singleton]
Eigen::VectorXd y_beta() {
  Eigen::VectorXd b(13);
  b << 0.0, 0.2, 1.0 / (2.0 * kNmax), 1.0 / (2.0 * kNmax), 0.5, 0.5, 0.6, 0.9,
      -0.8, -0.7, -1.4, -0.56, 0.0;
  return b;
}

}  // namespace

std::vector<EffectSpec> default_sim_effects() {
  const int K = 2;
  const Scale s = Scale::Difference;
  return {make_te(K, s),          make_nde(K, s),        make_nie(K, s),
          make_int({1}, K, s),    make_int({2}, K, s),   make_int({1, 2}, K, s),
          make_sime({1}, 1, K, s), make_iime({1}, 1, K, s)};
}

ClusterRecord generate_cluster(RngStream stream, const std::string& id) {
  ClusterRecord rec;
  rec.id = id;
  rec.N = kNmin + static_cast<int>(stream.next_below(kNmax - kNmin + 1));
  const int N = rec.N;
  rec.V = Eigen::VectorXd::Constant(1, 2.0 * N / kNmax + stream.next_normal());
  const double v = rec.V(0);

  rec.X.resize(N, 1);
  {
    const double shared = std::sqrt(0.05) * stream.next_normal();
    for (int j = 0; j < N; ++j) {
      rec.X(j, 0) = 2.0 * v + shared + std::sqrt(0.95) * stream.next_normal();
    }
  }
  rec.A = stream.next_uniform() < 0.5 ? 1 : 0;

  // mediator residuals from the Normal-generator elliptical law
  Eigen::MatrixXd R = build_R(true_icc(), N);
  Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(R).matrixL();
  Eigen::VectorXd z(2 * N);
  for (int t = 0; t < 2 * N; ++t) z(t) = stream.next_normal();
  Eigen::VectorXd eps = L * z;

  rec.M.resize(2, N);
  for (int j = 0; j < N; ++j) {
    const double mu1 = -1.0 + 0.2 * rec.A + (1.0 + rec.A) * N / (2.0 * kNmax) +
                       0.5 * v + 0.5 * rec.X(j, 0);
    rec.M(0, j) = mu1 + 2.5 * eps(j);
    const double p2 = expit(0.1 * rec.A + (1.0 + rec.A) * N / (5.0 * kNmax) +
                            0.3 * v - 0.3 * rec.X(j, 0));
    rec.M(1, j) = eps(N + j) >= inv_normal_cdf(1.0 - p2) ? 1.0 : 0.0;
  }

  rec.Y.resize(N);
  const double y_shared = std::sqrt(0.1) * stream.next_normal();
  Eigen::VectorXd combo(N);
  for (int j = 0; j < N; ++j) {
    combo(j) = rec.M(0, j) + 2.0 * rec.M(1, j) + 0.8 * rec.M(0, j) * rec.M(1, j);
  }
  const double combo_sum = combo.sum();
  for (int j = 0; j < N; ++j) {
    const double mean =
        0.2 * rec.A + (1.0 + rec.A) * N / (2.0 * kNmax) + 0.5 * v +
        0.5 * rec.X(j, 0) + 0.6 * rec.M(0, j) + 0.9 * rec.M(1, j) -
        0.8 * rec.M(0, j) * rec.M(1, j) - 0.7 * (combo_sum - combo(j)) / (N - 1);
    rec.Y(j) = mean + y_shared + std::sqrt(0.9) * stream.next_normal();
  }
  return rec;
}

Dataset generate_dataset(int I, RngStream stream) {
  Dataset ds;
  ds.pi = 0.5;
  ds.mediator_meta = {{"M1", MediatorKind::Continuous}, {"M2", MediatorKind::Binary}};
  ds.clusters.reserve(I);
  for (int i = 0; i < I; ++i) {
    ds.clusters.push_back(
        generate_cluster(stream.fork(static_cast<std::uint64_t>(i)),
                         "c" + std::to_string(i + 1)));
  }
  return ds;
}

NuisanceSet true_nuisances() {
  NuisanceSet nuis;
  FeatureMapConfig fm;  // defaults nest the generating outcome mean
  nuis.outcome = OutcomeModel::exact(Regressor::exact_linear(y_beta()), fm);

  MarginalConfig mc;
  mc.residual = ResidualKind::Normal;
  MarginalModel m1;
  m1.k = 0;
  m1.kind = MediatorKind::Continuous;
  m1.mean = Regressor::exact_linear(m1_beta());
  m1.sigma = 2.5;
  m1.residual = ResidualKind::Normal;
  m1.cfg = mc;
  MarginalModel m2;
  m2.k = 1;
  m2.kind = MediatorKind::Binary;
  m2.mean = Regressor::exact_logistic(m2_beta());
  m2.cfg = mc;
  nuis.mediators = EcmrModel({m1, m2}, true_icc(), Generator::normal());
  return nuis;
}

EngineConfig apply_misspecification(char scenario, EngineConfig cfg) {
  switch (scenario) {
    case 'a':
      break;
    case 'b':
      cfg.marginal.cov = CovTransform::Distorted;
      break;
    case 'c':
      cfg.feature_map.cov = CovTransform::Distorted;
      break;
    case 'd':
      cfg.generator = Generator::student_t(2.0);
      break;
    case 'e':
      cfg.marginal.cov = CovTransform::Distorted;
      cfg.feature_map.cov = CovTransform::Distorted;
      cfg.generator = Generator::student_t(2.0);
      break;
    default:
      throw std::invalid_argument(std::string("unknown scenario: ") + scenario);
  }
  return cfg;
}

namespace {

EngineConfig base_config(const ScenarioSpec& spec) {
  EngineConfig cfg;
  cfg.n_mc = spec.n_mc;
  cfg.density_mc = spec.density_mc;
  cfg.folds = spec.folds;
  cfg.icc_opts.fit_mc = spec.icc_fit_mc;
  cfg.icc_opts.multistart = spec.icc_multistart;
  return apply_misspecification(spec.scenario, cfg);
}

EngineConfig variant_config(const ScenarioSpec& spec, Variant v, std::uint64_t seed) {
  EngineConfig cfg = base_config(spec);
  cfg.seed = seed;
  if (is_dml(v)) {
    cfg.outcome_learner = spec.dml_outcome;
    cfg.marginal.cont_learner = spec.dml_cont;
    cfg.marginal.bin_learner = spec.dml_bin;
  }
  return cfg;
}

std::vector<EffectSpec> study_effects(const ScenarioSpec& spec) {
  return spec.effects.empty() ? default_sim_effects() : spec.effects;
}

}  // namespace

TruthTable compute_truths(const ScenarioSpec& spec) {
  const auto effects = study_effects(spec);
  const auto refs = collect_refs(effects);
  const int n = spec.full_scale ? 500000 : spec.truth_clusters;
  const NuisanceSet truth = true_nuisances();

  EngineConfig cfg;  // correctly specified by construction
  cfg.n_mc = spec.truth_n_mc;
  cfg.seed = mix64(spec.seed ^ 0x7121ULL);
  RngStream gen = RngStream(spec.seed).fork("truth-pop");

  // Per-cluster signed effect contributions; difference-scale effects are
  // linear in the per-cluster plug-in means, so their MC-SE is the SD of the
  // per-cluster combination.
  Eigen::MatrixXd contrib(n, static_cast<Eigen::Index>(effects.size()));
  std::vector<RngStream> streams;
  streams.reserve(n);
  for (int i = 0; i < n; ++i) streams.push_back(gen.fork(static_cast<std::uint64_t>(i)));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const ClusterRecord rec =
        generate_cluster(streams[i], "t" + std::to_string(i + 1));
    const auto pieces = evaluate_cluster(rec, refs, truth, cfg, 0.5,
                                         cluster_stream(cfg, rec.id), false);
    ValueMap vm;
    for (std::size_t r = 0; r < refs.size(); ++r) vm[refs[r]] = pieces[r].g;
    for (std::size_t s = 0; s < effects.size(); ++s) {
      double v = 0.0;
      for (const auto& [ref, expo] : effects[s].terms) v += expo * vm.at(ref);
      contrib(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) = v;
    }
  });

  TruthTable tt;
  tt.clusters = n;
  tt.value.resize(effects.size());
  tt.mc_se.resize(effects.size());
  for (std::size_t s = 0; s < effects.size(); ++s) {
    tt.effects.push_back(effects[s].name);
    const auto col = contrib.col(static_cast<Eigen::Index>(s));
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / (n - 1);
    if (effects[s].scale == Scale::Difference) {
      tt.value(s) = mean;
      tt.mc_se(s) = std::sqrt(var / n);
    } else {
      // ratio scales: combine the per-functional means; MC-SE not tracked
      tt.value(s) = std::numeric_limits<double>::quiet_NaN();
      tt.mc_se(s) = std::numeric_limits<double>::quiet_NaN();
    }
  }
  // ratio-scale truths from the pooled functional means
  bool any_ratio = false;
  for (const auto& e : effects) any_ratio = any_ratio || e.scale != Scale::Difference;
  if (any_ratio) {
    // recompute functional means directly
    throw std::invalid_argument("simulation truths support difference-scale effects");
  }
  return tt;
}

MetricsTable run_study(const ScenarioSpec& spec, std::vector<RawRecord>* raw,
                       const std::function<void(int, int)>& progress) {
  const auto effects = study_effects(spec);
  MetricsTable table;
  table.truth = compute_truths(spec);
  table.replications = spec.replications;
  const int R = spec.full_scale ? std::max(spec.replications, 1000) : spec.replications;
  if (R == 0) return table;

  struct Cell {
    std::vector<double> est, se;
    int covered = 0, failures = 0;
  };
  std::vector<std::vector<Cell>> cells(
      spec.variants.size(), std::vector<Cell>(effects.size()));
  std::mutex mu;

  InferenceConfig inf;
  inf.bootstrap_B = spec.bootstrap_B;
  inf.bootstrap_n_mc = spec.bootstrap_n_mc;

  std::atomic<int> done{0};
  parallel_for(static_cast<std::size_t>(R), [&](std::size_t r) {
    const Dataset ds = generate_dataset(
        spec.I, RngStream(spec.seed).fork("rep").fork(static_cast<std::uint64_t>(r)));
    // Variants sharing a nuisance configuration run together: non-DML
    // variants reuse one fit and one set of bootstrap resamples, DML
    // variants reuse one cross-fitted fit.
    std::vector<std::size_t> plain_idx, dml_idx;
    for (std::size_t v = 0; v < spec.variants.size(); ++v) {
      (is_dml(spec.variants[v]) ? dml_idx : plain_idx).push_back(v);
    }
    for (const auto& group : {plain_idx, dml_idx}) {
      if (group.empty()) continue;
      std::vector<Variant> vars;
      for (std::size_t v : group) vars.push_back(spec.variants[v]);
      const std::uint64_t vseed =
          mix64(spec.seed ^ (0x51D5ULL + 1000003ULL * r + group.front()));
      try {
        const std::vector<EstimateReport> reps = estimate_multi(
            ds, effects, vars, variant_config(spec, vars.front(), vseed), inf);
        std::scoped_lock lk(mu);
        for (std::size_t gi = 0; gi < group.size(); ++gi) {
          const std::size_t v = group[gi];
          for (std::size_t s = 0; s < effects.size(); ++s) {
            const auto& ee = reps[gi].effects[s];
            Cell& c = cells[v][s];
            c.est.push_back(ee.value);
            c.se.push_back(ee.se);
            const double truth = table.truth.value(static_cast<Eigen::Index>(s));
            if (ee.lower <= truth && truth <= ee.upper) c.covered++;
            if (raw != nullptr) {
              raw->push_back({static_cast<int>(r), variant_name(vars[gi]),
                              effects[s].name, ee.value, ee.se, ee.lower, ee.upper});
            }
          }
        }
      } catch (const std::exception&) {
        std::scoped_lock lk(mu);
        for (std::size_t v : group) {
          for (std::size_t s = 0; s < effects.size(); ++s) cells[v][s].failures++;
        }
      }
    }
    if (progress) progress(++done, R);
  });

  for (std::size_t v = 0; v < spec.variants.size(); ++v) {
    for (std::size_t s = 0; s < effects.size(); ++s) {
      const Cell& c = cells[v][s];
      MetricRow row;
      row.effect = effects[s].name;
      row.variant = variant_name(spec.variants[v]);
      row.truth = table.truth.value(static_cast<Eigen::Index>(s));
      row.replications = static_cast<int>(c.est.size());
      row.failures = c.failures;
      if (!c.est.empty()) {
        double mean = 0.0;
        for (double e : c.est) mean += e;
        mean /= c.est.size();
        row.bias = mean - row.truth;
        double var = 0.0;
        for (double e : c.est) var += (e - mean) * (e - mean);
        row.esd = c.est.size() > 1 ? std::sqrt(var / (c.est.size() - 1)) : 0.0;
        row.mcse_bias = row.esd / std::sqrt(static_cast<double>(c.est.size()));
        double ase = 0.0;
        for (double se : c.se) ase += se;
        row.aese = ase / c.se.size();
        row.coverage = static_cast<double>(c.covered) / c.est.size();
        row.mcse_coverage =
            std::sqrt(row.coverage * (1.0 - row.coverage) / c.est.size());
      }
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

std::string MetricsTable::to_csv() const {
  std::ostringstream os;
  os << "effect,variant,truth,bias,mcse_bias,aese,esd,coverage,mcse_coverage,"
        "replications,failures\n";
  os << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.effect << ',' << r.variant << ',' << r.truth << ',' << r.bias << ','
       << r.mcse_bias << ',' << r.aese << ',' << r.esd << ',' << r.coverage << ','
       << r.mcse_coverage << ',' << r.replications << ',' << r.failures << '\n';
  }
  return os.str();
}

std::string MetricsTable::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "truths (superpopulation of " << truth.clusters << " clusters):\n";
  for (std::size_t s = 0; s < truth.effects.size(); ++s) {
    os << "  " << std::setw(12) << truth.effects[s] << "  "
       << truth.value(static_cast<Eigen::Index>(s)) << "  (mc-se "
       << truth.mc_se(static_cast<Eigen::Index>(s)) << ")\n";
  }
  if (rows.empty()) return os.str();
  os << '\n'
     << std::setw(12) << "effect" << std::setw(12) << "variant" << std::setw(10)
     << "bias" << std::setw(10) << "aese" << std::setw(10) << "esd" << std::setw(10)
     << "cover" << std::setw(7) << "reps" << std::setw(6) << "fail" << '\n';
  for (const auto& r : rows) {
    os << std::setw(12) << r.effect << std::setw(12) << r.variant << std::setw(10)
       << r.bias << std::setw(10) << r.aese << std::setw(10) << r.esd
       << std::setw(10) << r.coverage << std::setw(7) << r.replications
       << std::setw(6) << r.failures << '\n';
  }
  return os.str();
}

}  // namespace ccmed
