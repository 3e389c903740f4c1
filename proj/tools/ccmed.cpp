// Command-line front end: analyze a dataset, fit/inspect the copula, run
// simulation studies, validate input files.
//
// Exit codes: 0 success, 1 estimator failure, 2 config/data error.
// Progress goes to standard error; data only to files and standard output.

#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "ccmed/ecmr.hpp"
#include "ccmed/engine.hpp"
#include "ccmed/report.hpp"
#include "ccmed/sim.hpp"
#include "ccmed/threading.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace ccmed;

namespace {

constexpr const char* kVersion = "1.0.0";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EstimatorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// config plumbing

ordered_json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  try {
    return ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
}

template <typename T>
T get_or(const ordered_json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Resolved-config manifest; reruns from the manifest alone reproduce every
// output byte for byte.
void write_manifest(const fs::path& dir, const std::string& prefix,
                    const std::string& subcommand, const ordered_json& resolved,
                    const std::vector<std::string>& outputs) {
  ordered_json man;
  man["tool"] = "ccmed";
  man["version"] = kVersion;
  man["subcommand"] = subcommand;
  man["config_hash"] = hex64(fnv1a(resolved.dump()));
  man["resolved_config"] = resolved;
  man["outputs"] = outputs;
  const fs::path path = dir / (prefix + "_manifest.json");
  std::ofstream out(path);
  out << man.dump(2) << "\n";
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------
// section parsers

CsvSchema schema_from(const ordered_json& ds) {
  CsvSchema schema;
  schema.cluster_id = get_or<std::string>(ds, "cluster_id", "cluster");
  schema.treatment = get_or<std::string>(ds, "treatment", "A");
  schema.outcome = get_or<std::string>(ds, "outcome", "Y");
  if (!ds.contains("mediators") || !ds.at("mediators").is_array() ||
      ds.at("mediators").empty()) {
    throw ConfigError("dataset.mediators must be a nonempty array");
  }
  for (const auto& m : ds.at("mediators")) {
    MediatorMeta meta;
    meta.name = get_or<std::string>(m, "name", "");
    if (meta.name.empty()) throw ConfigError("each mediator needs a name");
    const std::string kind = get_or<std::string>(m, "kind", "continuous");
    if (kind == "continuous") {
      meta.kind = MediatorKind::Continuous;
    } else if (kind == "binary") {
      meta.kind = MediatorKind::Binary;
    } else {
      throw ConfigError("mediator kind must be continuous|binary, got " + kind);
    }
    schema.mediators.push_back(std::move(meta));
  }
  schema.individual_covariates =
      get_or<std::vector<std::string>>(ds, "individual_covariates", {});
  schema.cluster_covariates =
      get_or<std::vector<std::string>>(ds, "cluster_covariates", {});
  return schema;
}

Dataset dataset_from(const ordered_json& cfg) {
  if (!cfg.contains("dataset")) throw ConfigError("config needs a 'dataset' section");
  const ordered_json& ds = cfg.at("dataset");
  const std::string path = get_or<std::string>(ds, "path", "");
  if (path.empty()) throw ConfigError("dataset.path is required");
  const double pi = get_or<double>(ds, "pi", 0.5);
  try {
    Dataset data = load_dataset(path, schema_from(ds), pi);
    data.validate();
    return data;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

EngineConfig engine_from(const ordered_json& cfg, std::uint64_t seed) {
  const ordered_json eng = cfg.contains("engine") ? cfg.at("engine") : ordered_json::object();
  EngineConfig e;
  e.seed = seed;
  e.n_mc = get_or<int>(eng, "n_mc", e.n_mc);
  e.density_mc = get_or<int>(eng, "density_mc", e.density_mc);
  e.folds = get_or<int>(eng, "folds", e.folds);
  e.ratio_cap = get_or<double>(eng, "ratio_cap", e.ratio_cap);
  e.enum_cap = get_or<int>(eng, "enum_cap", e.enum_cap);
  e.use_empirical_pi = get_or<bool>(eng, "empirical_pi", false);
  const std::string weight = get_or<std::string>(cfg, "weight", "cluster");
  if (weight == "cluster") {
    e.weight = WeightKind::ClusterAverage;
  } else if (weight == "individual") {
    e.weight = WeightKind::IndividualAverage;
  } else {
    throw ConfigError("weight must be cluster|individual, got " + weight);
  }
  try {
    e.generator = Generator::parse(get_or<std::string>(cfg, "generator", "normal"));
    e.outcome_learner.kind =
        parse_learner(get_or<std::string>(eng, "outcome_learner", "linear"));
    e.marginal.cont_learner.kind =
        parse_learner(get_or<std::string>(eng, "cont_learner", "linear"));
    e.marginal.bin_learner.kind =
        parse_learner(get_or<std::string>(eng, "bin_learner", "logistic"));
  } catch (const std::exception& err) {
    throw ConfigError(err.what());
  }
  e.icc_opts.fit_mc = get_or<int>(eng, "icc_fit_mc", e.icc_opts.fit_mc);
  e.icc_opts.multistart = get_or<bool>(eng, "icc_multistart", e.icc_opts.multistart);
  return e;
}

InferenceConfig inference_from(const ordered_json& cfg) {
  const ordered_json inf =
      cfg.contains("inference") ? cfg.at("inference") : ordered_json::object();
  InferenceConfig i;
  i.alpha = get_or<double>(inf, "alpha", i.alpha);
  i.bootstrap_B = get_or<int>(inf, "bootstrap_B", i.bootstrap_B);
  i.percentile = get_or<bool>(inf, "percentile", i.percentile);
  i.bootstrap_n_mc = get_or<int>(inf, "bootstrap_n_mc", i.bootstrap_n_mc);
  return i;
}

std::vector<EffectSpec> effects_from(const ordered_json& cfg, int K) {
  const Scale scale = [&] {
    try {
      return parse_scale(get_or<std::string>(cfg, "scale", "difference"));
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }();
  std::vector<std::string> names = get_or<std::vector<std::string>>(
      cfg, "effects", {"TE", "NDE", "NIE"});
  std::vector<EffectSpec> specs;
  for (const auto& n : names) {
    try {
      specs.push_back(parse_effect(n, K, scale));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("bad effect '") + n + "': " + e.what());
    }
  }
  return specs;
}

std::vector<Variant> estimators_from(const ordered_json& cfg) {
  std::vector<std::string> names =
      get_or<std::vector<std::string>>(cfg, "estimators", {"EIF.PAR.S"});
  std::vector<Variant> variants;
  for (const auto& n : names) {
    try {
      variants.push_back(parse_variant(n));
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  if (variants.empty()) throw ConfigError("estimators list is empty");
  return variants;
}

std::uint64_t seed_from(const ordered_json& cfg) {
  // seeds are mandatory: no wall-clock entropy anywhere
  if (!cfg.contains("seed")) throw ConfigError("config needs an explicit 'seed'");
  return cfg.at("seed").get<std::uint64_t>();
}

struct OutputSpec {
  fs::path dir;
  std::string prefix;
};

OutputSpec output_from(const ordered_json& cfg) {
  const ordered_json out =
      cfg.contains("output") ? cfg.at("output") : ordered_json::object();
  OutputSpec o;
  o.dir = get_or<std::string>(out, "dir", ".");
  o.prefix = get_or<std::string>(out, "prefix", "ccmed");
  std::error_code ec;
  fs::create_directories(o.dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + o.dir.string());
  return o;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_analyze(const ordered_json& cfg) {
  const Dataset data = dataset_from(cfg);
  const std::uint64_t seed = seed_from(cfg);
  const EngineConfig eng = engine_from(cfg, seed);
  const InferenceConfig inf = inference_from(cfg);
  const auto specs = effects_from(cfg, data.n_mediators());
  const auto variants = estimators_from(cfg);
  const OutputSpec out = output_from(cfg);

  std::string csv;
  ordered_json reports = ordered_json::array();
  for (std::size_t v = 0; v < variants.size(); ++v) {
    std::fprintf(stderr, "[analyze] estimator %s (%zu/%zu)\n",
                 variant_name(variants[v]).c_str(), v + 1, variants.size());
    EstimateReport rep;
    try {
      EngineConfig e = eng;
      e.seed = seed + v;  // distinct but reproducible stream per estimator
      rep = estimate(data, specs, variants[v], e, inf);
    } catch (const std::exception& err) {
      throw EstimatorError(err.what());
    }
    const std::string table = effects_csv(rep);
    csv += (v == 0) ? table : table.substr(table.find('\n') + 1);
    reports.push_back(ordered_json::parse(report_json(rep)));
  }

  const fs::path csv_path = out.dir / (out.prefix + "_effects.csv");
  const fs::path json_path = out.dir / (out.prefix + "_report.json");
  write_file(csv_path, csv);
  write_file(json_path, reports.dump(2) + "\n");
  write_manifest(out.dir, out.prefix, "analyze", cfg,
                 {csv_path.string(), json_path.string()});
  std::fprintf(stderr, "[analyze] wrote %s\n", csv_path.string().c_str());
  return 0;
}

int cmd_fit_copula(const ordered_json& cfg) {
  const Dataset data = dataset_from(cfg);
  const std::uint64_t seed = seed_from(cfg);
  const EngineConfig eng = engine_from(cfg, seed);
  const OutputSpec out = output_from(cfg);

  std::vector<std::size_t> idx(data.clusters.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  std::fprintf(stderr, "[fit-copula] fitting %d marginals + ICC on %d clusters\n",
               data.n_mediators(), data.n_clusters());
  EcmrModel model;
  IccFit fit;
  try {
    const auto marginals = fit_marginals(data, idx, eng.marginal);
    EcmrFitOptions opts = eng.icc_opts;
    opts.seed = seed;
    fit = fit_icc(data, idx, marginals, eng.generator, opts);
    model = EcmrModel(marginals, fit.icc, eng.generator);
  } catch (const std::exception& err) {
    throw EstimatorError(err.what());
  }

  const fs::path model_path = out.dir / (out.prefix + "_copula.json");
  write_file(model_path, model.dump_json());

  ordered_json summary;
  summary["generator"] = eng.generator.to_string();
  summary["loglik"] = fit.loglik;
  summary["converged"] = fit.converged;
  summary["boundary"] = fit.boundary;
  const auto& icc = model.icc();
  auto mat = [](const Eigen::MatrixXd& m) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      ordered_json row = ordered_json::array();
      for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  summary["Q0"] = mat(icc.Q0);
  summary["Q1"] = mat(icc.Q1);
  const fs::path sum_path = out.dir / (out.prefix + "_copula_summary.json");
  write_file(sum_path, summary.dump(2) + "\n");
  write_manifest(out.dir, out.prefix, "fit-copula", cfg,
                 {model_path.string(), sum_path.string()});
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_simulate(const ordered_json& cfg) {
  const std::uint64_t seed = seed_from(cfg);
  const ordered_json sim =
      cfg.contains("simulate") ? cfg.at("simulate") : ordered_json::object();
  const OutputSpec out = output_from(cfg);

  ScenarioSpec sp;
  const std::string scen = get_or<std::string>(sim, "scenario", "a");
  if (scen.size() != 1 || scen[0] < 'a' || scen[0] > 'e') {
    throw ConfigError("simulate.scenario must be one of a|b|c|d|e, got " + scen);
  }
  sp.scenario = scen[0];
  sp.seed = seed;
  sp.I = get_or<int>(sim, "I", sp.I);
  sp.replications = get_or<int>(sim, "replications", sp.replications);
  sp.n_mc = get_or<int>(sim, "n_mc", sp.n_mc);
  sp.density_mc = get_or<int>(sim, "density_mc", sp.density_mc);
  sp.bootstrap_B = get_or<int>(sim, "bootstrap_B", sp.bootstrap_B);
  sp.bootstrap_n_mc = get_or<int>(sim, "bootstrap_n_mc", sp.bootstrap_n_mc);
  sp.folds = get_or<int>(sim, "folds", sp.folds);
  sp.icc_fit_mc = get_or<int>(sim, "icc_fit_mc", sp.icc_fit_mc);
  sp.icc_multistart = get_or<bool>(sim, "icc_multistart", sp.icc_multistart);
  sp.truth_clusters = get_or<int>(sim, "truth_clusters", sp.truth_clusters);
  sp.truth_n_mc = get_or<int>(sim, "truth_n_mc", sp.truth_n_mc);
  sp.full_scale = get_or<bool>(sim, "full_scale", false);
  if (sp.full_scale) {
    std::fprintf(stderr,
                 "[simulate] full_scale restores publication-scale settings; "
                 "expect a very long runtime\n");
  }
  if (sim.contains("estimators")) {
    sp.variants.clear();
    for (const auto& n : sim.at("estimators")) {
      try {
        sp.variants.push_back(parse_variant(n.get<std::string>()));
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
    }
  }
  if (cfg.contains("effects")) sp.effects = effects_from(cfg, 2);
  const bool dump_raw = get_or<bool>(sim, "raw", false);

  std::vector<RawRecord> raw;
  MetricsTable table;
  try {
    table = run_study(sp, dump_raw ? &raw : nullptr, [](int done, int total) {
      if (done % 10 == 0 || done == total) {
        std::fprintf(stderr, "[simulate] %d/%d replications\n", done, total);
      }
    });
  } catch (const std::exception& err) {
    throw EstimatorError(err.what());
  }

  const fs::path csv_path = out.dir / (out.prefix + "_metrics.csv");
  const fs::path txt_path = out.dir / (out.prefix + "_summary.txt");
  write_file(csv_path, table.to_csv());
  write_file(txt_path, table.to_text());
  std::vector<std::string> outputs = {csv_path.string(), txt_path.string()};
  if (dump_raw) {
    std::string rc = "rep,estimator,effect,estimate,se,lower,upper\n";
    char buf[256];
    for (const auto& r : raw) {
      std::snprintf(buf, sizeof(buf), "%d,%s,%s,%.17g,%.17g,%.17g,%.17g\n", r.rep,
                    r.variant.c_str(), r.effect.c_str(), r.estimate, r.se, r.lower,
                    r.upper);
      rc += buf;
    }
    const fs::path raw_path = out.dir / (out.prefix + "_raw.csv");
    write_file(raw_path, rc);
    outputs.push_back(raw_path.string());
  }
  write_manifest(out.dir, out.prefix, "simulate", cfg, outputs);
  std::cout << table.to_text();
  return 0;
}

int cmd_validate(const ordered_json& cfg) {
  const Dataset data = dataset_from(cfg);  // loads + validates, throws ConfigError
  ordered_json ok;
  ok["valid"] = true;
  ok["clusters"] = data.n_clusters();
  ok["mediators"] = data.n_mediators();
  ok["max_cluster_size"] = data.max_cluster_size();
  ok["treated_share"] = data.arm_proportion();
  std::cout << ok.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "ccmed: spillover-aware causal mediation for cluster-randomized trials"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_flag;
  std::optional<int> threads_flag;
  std::optional<std::string> dataset_flag, out_dir_flag, prefix_flag, scale_flag,
      generator_flag, weight_flag, scenario_flag;
  std::optional<int> n_mc_flag, folds_flag, bootstrap_flag, reps_flag, clusters_flag;
  std::optional<double> alpha_flag, pi_flag;
  std::vector<std::string> estimator_flags, effect_flags;

  app.add_option("-c,--config", config_path, "JSON config file");
  app.add_option("--seed", seed_flag, "RNG seed (overrides config; mandatory overall)");
  app.add_option("--threads", threads_flag, "worker thread cap (default: logical cores)");
  app.add_option("--dataset", dataset_flag, "dataset CSV path (overrides dataset.path)");
  app.add_option("--pi", pi_flag, "randomization probability (overrides dataset.pi)");
  app.add_option("--out-dir", out_dir_flag, "output directory (overrides output.dir)");
  app.add_option("--prefix", prefix_flag, "output file prefix (overrides output.prefix)");
  app.add_option("--estimator", estimator_flags,
                 "estimator variant, repeatable: G|EIF.PAR|EIF.PAR.S|EIF.DML|EIF.DML.S");
  app.add_option("--effect", effect_flags,
                 "effect, repeatable: TE|NDE|NIE|EIE{k}|INT{...}|SIME{...}|k=..|"
                 "IIME{...}|k=..|ESME{k}|EIME{k}");
  app.add_option("--scale", scale_flag, "difference|rr|or (overrides config scale)");
  app.add_option("--generator", generator_flag,
                 "copula generator: normal|t(nu)|cauchy|laplace");
  app.add_option("--weight", weight_flag, "cluster|individual effect weighting");
  app.add_option("--n-mc", n_mc_flag, "mediator Monte Carlo draws (engine.n_mc)");
  app.add_option("--folds", folds_flag, "cross-fitting folds (engine.folds)");
  app.add_option("--bootstrap-B", bootstrap_flag,
                 "bootstrap replicates (inference.bootstrap_B)");
  app.add_option("--alpha", alpha_flag, "CI level alpha (inference.alpha)");
  app.add_option("--scenario", scenario_flag, "simulation scenario a|b|c|d|e");
  app.add_option("--replications", reps_flag, "simulation replications");
  app.add_option("--clusters", clusters_flag, "simulated clusters per replication (I)");

  auto* analyze = app.add_subcommand("analyze", "estimate mediation effects from a CSV");
  auto* fitcop = app.add_subcommand("fit-copula", "fit and report the mediator copula");
  auto* simulate = app.add_subcommand("simulate", "run a replicated simulation study");
  auto* validate = app.add_subcommand("validate", "check a dataset against its schema");
  for (auto* sub : {analyze, fitcop, simulate, validate}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    ordered_json cfg =
        config_path.empty() ? ordered_json::object() : load_config_file(config_path);

    // flags override the config file
    if (seed_flag) cfg["seed"] = *seed_flag;
    if (threads_flag) cfg["threads"] = *threads_flag;
    if (dataset_flag) cfg["dataset"]["path"] = *dataset_flag;
    if (pi_flag) cfg["dataset"]["pi"] = *pi_flag;
    if (out_dir_flag) cfg["output"]["dir"] = *out_dir_flag;
    if (prefix_flag) cfg["output"]["prefix"] = *prefix_flag;
    if (!estimator_flags.empty()) cfg["estimators"] = estimator_flags;
    if (!effect_flags.empty()) cfg["effects"] = effect_flags;
    if (scale_flag) cfg["scale"] = *scale_flag;
    if (generator_flag) cfg["generator"] = *generator_flag;
    if (weight_flag) cfg["weight"] = *weight_flag;
    if (n_mc_flag) cfg["engine"]["n_mc"] = *n_mc_flag;
    if (folds_flag) cfg["engine"]["folds"] = *folds_flag;
    if (bootstrap_flag) cfg["inference"]["bootstrap_B"] = *bootstrap_flag;
    if (alpha_flag) cfg["inference"]["alpha"] = *alpha_flag;
    if (scenario_flag) cfg["simulate"]["scenario"] = *scenario_flag;
    if (reps_flag) cfg["simulate"]["replications"] = *reps_flag;
    if (clusters_flag) cfg["simulate"]["I"] = *clusters_flag;

    max_threads() = get_or<int>(cfg, "threads", 0);
    if (max_threads() <= 0) {
      max_threads() = static_cast<int>(std::thread::hardware_concurrency());
    }

    if (analyze->parsed()) return cmd_analyze(cfg);
    if (fitcop->parsed()) return cmd_fit_copula(cfg);
    if (simulate->parsed()) return cmd_simulate(cfg);
    if (validate->parsed()) return cmd_validate(cfg);
    return 2;
  } catch (const EstimatorError& e) {
    ordered_json err;
    err["error"] = e.what();
    err["kind"] = "estimator";
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    ordered_json err;
    err["error"] = e.what();
    err["kind"] = "config";
    std::cerr << err.dump() << "\n";
    return 2;
  }
}
