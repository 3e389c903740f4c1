#include "ccmed/report.hpp"

#include <json.hpp>
#include <sstream>

namespace ccmed {

namespace {

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

}  // namespace

std::string effects_csv(const EstimateReport& rep) {
  std::ostringstream os;
  os << "effect,scale,estimator,estimate,se,lower,upper,ci_method\n";
  for (const auto& e : rep.effects) {
    os << e.name << ',' << scale_name(e.scale) << ',' << variant_name(rep.variant)
       << ',' << fmt(e.value) << ',' << fmt(e.se) << ',' << fmt(e.lower) << ','
       << fmt(e.upper) << ',' << e.ci_method << '\n';
  }
  return os.str();
}

std::string report_json(const EstimateReport& rep) {
  nlohmann::ordered_json doc;
  doc["estimator"] = variant_name(rep.variant);

  nlohmann::ordered_json thetas = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < rep.thetas.refs.size(); ++r) {
    nlohmann::ordered_json row;
    row["functional"] = rep.thetas.refs[r].to_string();
    row["estimate"] = rep.thetas.theta(static_cast<Eigen::Index>(r));
    row["plugin"] = rep.thetas.plugin(static_cast<Eigen::Index>(r));
    thetas.push_back(std::move(row));
  }
  doc["functionals"] = std::move(thetas);

  nlohmann::ordered_json effects = nlohmann::ordered_json::array();
  for (const auto& e : rep.effects) {
    nlohmann::ordered_json row;
    row["effect"] = e.name;
    row["scale"] = scale_name(e.scale);
    row["estimate"] = e.value;
    row["se"] = e.se;
    row["lower"] = e.lower;
    row["upper"] = e.upper;
    row["ci_method"] = e.ci_method;
    effects.push_back(std::move(row));
  }
  doc["effects"] = std::move(effects);

  nlohmann::ordered_json diag;
  diag["mc_draws"] = rep.thetas.mc_draws;
  diag["truncations"] = rep.thetas.truncations;
  diag["refolds"] = rep.thetas.refolds;
  diag["stabilization_residual"] = rep.thetas.stab_residual;
  diag["bootstrap_replicates"] = rep.bootstrap_replicates;
  diag["bootstrap_redraws"] = rep.bootstrap_redraws;
  doc["diagnostics"] = std::move(diag);

  return doc.dump(2) + "\n";
}

}  // namespace ccmed
