#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace ccmed {

enum class MediatorKind { Continuous, Binary };

struct MediatorMeta {
  std::string name;
  MediatorKind kind = MediatorKind::Continuous;
};

// One cluster's observed data.  M is K x N (one row per mediator), X is
// N x d_X, Y has length N.
struct ClusterRecord {
  std::string id;
  int A = 0;
  int N = 0;
  Eigen::VectorXd V;
  Eigen::MatrixXd X;
  Eigen::MatrixXd M;
  Eigen::VectorXd Y;
};

struct Dataset {
  std::vector<ClusterRecord> clusters;
  std::vector<MediatorMeta> mediator_meta;
  double pi = 0.5;          // randomization probability, known by design
  bool pi_empirical = false;  // set when pi was replaced by the arm proportion

  int n_clusters() const { return static_cast<int>(clusters.size()); }
  int n_mediators() const { return static_cast<int>(mediator_meta.size()); }
  int max_cluster_size() const;
  double arm_proportion() const;

  // dimension checks, arms present, binary columns in {0,1}
  void validate() const;
};

enum class WeightKind { ClusterAverage, IndividualAverage };

inline double cluster_weight(WeightKind kind, const ClusterRecord& rec) {
  return kind == WeightKind::ClusterAverage ? 1.0 : static_cast<double>(rec.N);
}

// Column mapping for the long-format CSV (one row per individual).
struct CsvSchema {
  std::string cluster_id;
  std::string treatment;
  std::string outcome;
  std::vector<MediatorMeta> mediators;        // column name == mediator name
  std::vector<std::string> individual_covariates;
  std::vector<std::string> cluster_covariates;
};

Dataset load_dataset(const std::string& path, const CsvSchema& schema, double pi);
void save_dataset(const std::string& path, const Dataset& data, const CsvSchema& schema);

}  // namespace ccmed
