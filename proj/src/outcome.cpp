#include "ccmed/outcome.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ccmed {

namespace {

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

Eigen::VectorXd transform_cluster_cov(const Eigen::VectorXd& V, CovTransform t) {
  if (t == CovTransform::Identity) return V;
  Eigen::VectorXd out(V.size());
  for (Eigen::Index l = 0; l < V.size(); ++l) out(l) = norm_cdf(V(l));
  return out;
}

Eigen::VectorXd transform_indiv_cov(const Eigen::VectorXd& X,
                                    const Eigen::VectorXd& V, CovTransform t) {
  if (t == CovTransform::Identity) return X;
  const double v1 = V.size() ? norm_cdf(V(0)) : 1.0;
  Eigen::VectorXd out(X.size());
  for (Eigen::Index l = 0; l < X.size(); ++l) out(l) = v1 * expit(-X(l) / 2.0);
  return out;
}

Eigen::VectorXd outcome_features(int a, const Eigen::MatrixXd& M,
                                 const ClusterRecord& rec, int j,
                                 const FeatureMapConfig& fm) {
  const int K = static_cast<int>(M.rows());
  const int N = rec.N;
  std::vector<double> f;
  f.reserve(8 + 3 * K + K * (K - 1));
  f.push_back(static_cast<double>(a));
  if (fm.cluster_size) {
    f.push_back(static_cast<double>(N));
    f.push_back(static_cast<double>(a * N));
  }
  const Eigen::VectorXd V = transform_cluster_cov(rec.V, fm.cov);
  for (Eigen::Index l = 0; l < V.size(); ++l) f.push_back(V(l));
  const Eigen::VectorXd X = transform_indiv_cov(rec.X.row(j).transpose(), rec.V, fm.cov);
  for (Eigen::Index l = 0; l < X.size(); ++l) f.push_back(X(l));
  for (int k = 0; k < K; ++k) f.push_back(M(k, j));
  if (fm.own_pairwise) {
    for (int k = 0; k < K; ++k) {
      for (int l = k + 1; l < K; ++l) f.push_back(M(k, j) * M(l, j));
    }
  }
  const bool singleton = (N == 1);
  if (fm.loo_means) {
    for (int k = 0; k < K; ++k) {
      f.push_back(singleton ? 0.0 : (M.row(k).sum() - M(k, j)) / (N - 1));
    }
  }
  if (fm.loo_pairwise) {
    for (int k = 0; k < K; ++k) {
      for (int l = k + 1; l < K; ++l) {
        if (singleton) {
          f.push_back(0.0);
        } else {
          const double s = M.row(k).cwiseProduct(M.row(l)).sum() - M(k, j) * M(l, j);
          f.push_back(s / (N - 1));
        }
      }
    }
  }
  if (fm.loo_means || fm.loo_pairwise) f.push_back(singleton ? 1.0 : 0.0);
  return Eigen::Map<Eigen::VectorXd>(f.data(), f.size());
}

std::vector<std::string> outcome_feature_names(const Dataset& data,
                                               const FeatureMapConfig& fm) {
  const int K = static_cast<int>(data.mediator_meta.size());
  const auto& c0 = data.clusters.at(0);
  std::vector<std::string> names = {"A"};
  if (fm.cluster_size) {
    names.push_back("N");
    names.push_back("A*N");
  }
  for (Eigen::Index l = 0; l < c0.V.size(); ++l) names.push_back("V" + std::to_string(l + 1));
  for (Eigen::Index l = 0; l < c0.X.cols(); ++l) names.push_back("X" + std::to_string(l + 1));
  for (int k = 0; k < K; ++k) names.push_back("M" + std::to_string(k + 1));
  if (fm.own_pairwise) {
    for (int k = 0; k < K; ++k) {
      for (int l = k + 1; l < K; ++l) {
        names.push_back("M" + std::to_string(k + 1) + "*M" + std::to_string(l + 1));
      }
    }
  }
  if (fm.loo_means) {
    for (int k = 0; k < K; ++k) names.push_back("loo(M" + std::to_string(k + 1) + ")");
  }
  if (fm.loo_pairwise) {
    for (int k = 0; k < K; ++k) {
      for (int l = k + 1; l < K; ++l) {
        names.push_back("loo(M" + std::to_string(k + 1) + "*M" + std::to_string(l + 1) + ")");
      }
    }
  }
  if (fm.loo_means || fm.loo_pairwise) names.push_back("singleton");
  return names;
}

OutcomeModel OutcomeModel::exact(Regressor reg, const FeatureMapConfig& fm) {
  OutcomeModel m;
  m.reg_ = std::move(reg);
  m.fm_ = fm;
  return m;
}

OutcomeModel OutcomeModel::fit(const Dataset& data,
                               const std::vector<std::size_t>& cluster_idx,
                               const LearnerSpec& spec, const FeatureMapConfig& fm) {
  Eigen::Index n_rows = 0;
  for (std::size_t i : cluster_idx) n_rows += data.clusters.at(i).N;
  if (n_rows == 0) throw std::invalid_argument("outcome fit: no individuals");
  Eigen::MatrixXd X;
  Eigen::VectorXd y(n_rows);
  std::vector<int> groups(n_rows);
  Eigen::Index row = 0;
  for (std::size_t i : cluster_idx) {
    const auto& rec = data.clusters[i];
    for (int j = 0; j < rec.N; ++j) {
      Eigen::VectorXd f = outcome_features(rec.A, rec.M, rec, j, fm);
      if (X.size() == 0) X.resize(n_rows, f.size());
      X.row(row) = f.transpose();
      y(row) = rec.Y(j);
      groups[row] = static_cast<int>(i);
      ++row;
    }
  }
  OutcomeModel m;
  m.fm_ = fm;
  m.reg_ = Regressor::fit(spec, X, y, groups, outcome_feature_names(data, fm));
  return m;
}

double OutcomeModel::eta(int a, const Eigen::MatrixXd& M, const ClusterRecord& rec,
                         int j) const {
  return reg_.predict(outcome_features(a, M, rec, j, fm_));
}

EtaBatch::EtaBatch(const OutcomeModel& model, int a, const ClusterRecord& rec)
    : model_(&model), rec_(&rec) {
  const auto& fm = model.fm_;
  // Build the covariate-only feature prefix once per individual by rendering
  // full features at a zero mediator matrix and slicing off the prefix.
  K_ = static_cast<int>(rec.M.rows());
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(K_, rec.N);
  const Eigen::VectorXd probe = outcome_features(a, zero, rec, 0, fm);
  int prefix_len = 1 + (fm.cluster_size ? 2 : 0) + static_cast<int>(rec.V.size()) +
                   static_cast<int>(rec.X.cols());
  prefix_.resize(rec.N, prefix_len);
  scratch_.resize(probe.size());
  for (int j = 0; j < rec.N; ++j) {
    prefix_.row(j) = outcome_features(a, zero, rec, j, fm).head(prefix_len).transpose();
  }
}

void EtaBatch::set_matrix(const Eigen::MatrixXd& M) {
  M_ = M;
  row_sum_ = M.rowwise().sum();
  pair_sum_.resize(K_, K_);
  for (int k = 0; k < K_; ++k) {
    for (int l = k + 1; l < K_; ++l) {
      pair_sum_(k, l) = M.row(k).cwiseProduct(M.row(l)).sum();
    }
  }
}

double EtaBatch::eval(int j, int ok, double oval, bool override_own) const {
  const auto& fm = model_->fm_;
  const Eigen::MatrixXd& M = M_;
  const int N = rec_->N;
  int pos = static_cast<int>(prefix_.cols());
  scratch_.head(pos) = prefix_.row(j).transpose();
  auto own = [&](int k) {
    return (override_own && k == ok) ? oval : M(k, j);
  };
  for (int k = 0; k < K_; ++k) scratch_(pos++) = own(k);
  if (fm.own_pairwise) {
    for (int k = 0; k < K_; ++k) {
      for (int l = k + 1; l < K_; ++l) scratch_(pos++) = own(k) * own(l);
    }
  }
  const bool singleton = (N == 1);
  if (fm.loo_means) {
    for (int k = 0; k < K_; ++k) {
      scratch_(pos++) = singleton ? 0.0 : (row_sum_(k) - M(k, j)) / (N - 1);
    }
  }
  if (fm.loo_pairwise) {
    for (int k = 0; k < K_; ++k) {
      for (int l = k + 1; l < K_; ++l) {
        scratch_(pos++) =
            singleton ? 0.0 : (pair_sum_(k, l) - M(k, j) * M(l, j)) / (N - 1);
      }
    }
  }
  if (fm.loo_means || fm.loo_pairwise) scratch_(pos++) = singleton ? 1.0 : 0.0;
  return model_->reg_.predict(scratch_);
}

double EtaBatch::eta(int j) const { return eval(j, 0, 0.0, false); }

double EtaBatch::eta_override(int k, int j, double val) const {
  return eval(j, k, val, true);
}

}  // namespace ccmed
