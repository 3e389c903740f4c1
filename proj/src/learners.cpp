#include "ccmed/learners.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include "ccmed/rng.hpp"

namespace ccmed {

namespace {

std::string column_label(const std::vector<std::string>& names, int j) {
  if (j == 0) return "(intercept)";
  const int idx = j - 1;
  if (idx < static_cast<int>(names.size())) return names[idx];
  return "column " + std::to_string(idx);
}

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& X) {
  Eigen::MatrixXd Z(X.rows(), X.cols() + 1);
  Z.col(0).setOnes();
  Z.rightCols(X.cols()) = X;
  return Z;
}

}  // namespace

LearnerKind parse_learner(const std::string& name) {
  if (name == "linear") return LearnerKind::Linear;
  if (name == "logistic") return LearnerKind::Logistic;
  if (name == "poly2") return LearnerKind::Poly2Linear;
  if (name == "poly2-logistic") return LearnerKind::Poly2Logistic;
  if (name == "boosted-stumps") return LearnerKind::BoostedStumps;
  throw std::invalid_argument("unknown learner: " + name);
}

std::string learner_name(LearnerKind k) {
  switch (k) {
    case LearnerKind::Linear: return "linear";
    case LearnerKind::Logistic: return "logistic";
    case LearnerKind::Poly2Linear: return "poly2";
    case LearnerKind::Poly2Logistic: return "poly2-logistic";
    case LearnerKind::BoostedStumps: return "boosted-stumps";
  }
  return "?";
}

Eigen::VectorXd ols_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& w,
                        const std::vector<std::string>& names) {
  Eigen::MatrixXd Z = with_intercept(X);
  // Structurally zero columns (e.g. indicators never triggered in this data)
  // get a zero coefficient rather than a rank complaint.
  std::vector<Eigen::Index> keep;
  for (Eigen::Index c = 0; c < Z.cols(); ++c) {
    if (Z.col(c).cwiseAbs().maxCoeff() > 0.0) keep.push_back(c);
  }
  Eigen::MatrixXd Zk(Z.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) Zk.col(c) = Z.col(keep[c]);
  Eigen::VectorXd sw = w.size() ? Eigen::VectorXd(w.cwiseSqrt()) : Eigen::VectorXd(Eigen::VectorXd::Ones(Z.rows()));
  Eigen::MatrixXd Zw = sw.asDiagonal() * Zk;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Zw);
  qr.setThreshold(1e-10);
  if (qr.rank() < Zk.cols()) {
    // The first permuted column beyond the rank is (one of) the dependent ones.
    const int bad =
        static_cast<int>(keep[qr.colsPermutation().indices()(qr.rank())]);
    throw std::runtime_error("design matrix is rank deficient; redundant column: " +
                             column_label(names, bad));
  }
  const Eigen::VectorXd beta_k = qr.solve(sw.asDiagonal() * y);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(Z.cols());
  for (std::size_t c = 0; c < keep.size(); ++c) beta(keep[c]) = beta_k(c);
  return beta;
}

Eigen::VectorXd logistic_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& w,
                             const std::vector<std::string>& names) {
  Eigen::MatrixXd Z = with_intercept(X);
  const Eigen::Index n = Z.rows(), p = Z.cols();
  Eigen::VectorXd wt = w.size() ? w : Eigen::VectorXd::Ones(n);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  const double ridge = 1e-8;
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::VectorXd eta = Z * beta;
    Eigen::VectorXd mu(n), s(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = expit(eta(i));
      s(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-10) * wt(i);
    }
    Eigen::MatrixXd H = Z.transpose() * s.asDiagonal() * Z;
    H.diagonal().array() += ridge;
    Eigen::VectorXd grad = Z.transpose() * (wt.asDiagonal() * (y - mu)) - ridge * beta;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success) {
      throw std::runtime_error("logistic fit failed: singular information matrix (" +
                               column_label(names, 0) + " model)");
    }
    Eigen::VectorXd step = ldlt.solve(grad);
    // Dampen huge steps under separation.
    const double norm = step.norm();
    if (norm > 10.0) step *= 10.0 / norm;
    beta += step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-10) break;
  }
  if (!beta.allFinite()) throw std::runtime_error("logistic fit diverged");
  return beta;
}

namespace {

// Degree-2 polynomial expansion; squares of binary columns are dropped since
// they duplicate the linear term.
Eigen::VectorXd poly2_row(const Eigen::VectorXd& x, const std::vector<bool>& binary) {
  const int p = static_cast<int>(x.size());
  std::vector<double> out(x.data(), x.data() + p);
  for (int i = 0; i < p; ++i) {
    for (int j = i; j < p; ++j) {
      if (i == j && binary[i]) continue;
      out.push_back(x(i) * x(j));
    }
  }
  return Eigen::Map<Eigen::VectorXd>(out.data(), out.size());
}

std::vector<bool> binary_columns(const Eigen::MatrixXd& X) {
  std::vector<bool> binary(X.cols(), true);
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double v = X(i, j);
      if (v != 0.0 && v != 1.0) { binary[j] = false; break; }
    }
  }
  return binary;
}

Eigen::VectorXd ridge_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& w, double lambda) {
  Eigen::MatrixXd Z = with_intercept(X);
  Eigen::VectorXd wt = w.size() ? w : Eigen::VectorXd::Ones(Z.rows());
  Eigen::MatrixXd H = Z.transpose() * wt.asDiagonal() * Z;
  H.diagonal().array() += lambda;
  H(0, 0) -= lambda;  // leave the intercept unpenalized
  H(0, 0) += 1e-12;
  return Eigen::LDLT<Eigen::MatrixXd>(H).solve(Z.transpose() * (wt.asDiagonal() * y));
}

struct Stump {
  int feature = 0;
  double threshold = 0.0;
  double left = 0.0;
  double right = 0.0;
};

struct BoostModel {
  double base = 0.0;
  std::vector<Stump> stumps;

  double predict(const Eigen::VectorXd& x) const {
    double v = base;
    for (const auto& s : stumps) v += (x(s.feature) <= s.threshold) ? s.left : s.right;
    return v;
  }
};

std::vector<std::vector<double>> candidate_cuts(const Eigen::MatrixXd& X, int max_cuts) {
  std::vector<std::vector<double>> cuts(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    std::vector<double> v(X.col(j).data(), X.col(j).data() + X.rows());
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    std::vector<double> mids;
    for (std::size_t i = 0; i + 1 < v.size(); ++i) mids.push_back(0.5 * (v[i] + v[i + 1]));
    if (static_cast<int>(mids.size()) > max_cuts) {
      std::vector<double> sel;
      for (int c = 0; c < max_cuts; ++c) {
        sel.push_back(mids[(c + 1) * mids.size() / (max_cuts + 1)]);
      }
      mids = std::move(sel);
    }
    cuts[j] = std::move(mids);
  }
  return cuts;
}

// One round of L2 boosting: pick the stump minimising weighted SSE on the
// current residuals.
Stump best_stump(const Eigen::MatrixXd& X, const Eigen::VectorXd& resid,
                 const Eigen::VectorXd& wt,
                 const std::vector<std::vector<double>>& cuts) {
  Stump best;
  double best_gain = -1.0;
  const Eigen::Index n = X.rows();
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    for (double c : cuts[j]) {
      double swl = 0, swr = 0, syl = 0, syr = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (X(i, j) <= c) { swl += wt(i); syl += wt(i) * resid(i); }
        else { swr += wt(i); syr += wt(i) * resid(i); }
      }
      if (swl <= 0 || swr <= 0) continue;
      const double gain = syl * syl / swl + syr * syr / swr;
      if (gain > best_gain) {
        best_gain = gain;
        best = {static_cast<int>(j), c, syl / swl, syr / swr};
      }
    }
  }
  if (best_gain < 0) best = {0, std::numeric_limits<double>::infinity(), 0.0, 0.0};
  return best;
}

BoostModel boost_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                     const Eigen::VectorXd& w, int rounds, double rate, int max_cuts,
                     const Eigen::MatrixXd* Xval, Eigen::VectorXd* val_pred,
                     const std::set<int>* checkpoints,
                     std::map<int, double>* val_sse, const Eigen::VectorXd* yval) {
  BoostModel model;
  Eigen::VectorXd wt = w.size() ? w : Eigen::VectorXd::Ones(X.rows());
  model.base = (wt.array() * y.array()).sum() / wt.sum();
  Eigen::VectorXd resid = y.array() - model.base;
  const auto cuts = candidate_cuts(X, max_cuts);
  if (val_pred) val_pred->setConstant(model.base);
  for (int r = 1; r <= rounds; ++r) {
    Stump s = best_stump(X, resid, wt, cuts);
    s.left *= rate;
    s.right *= rate;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      resid(i) -= (X(i, s.feature) <= s.threshold) ? s.left : s.right;
    }
    model.stumps.push_back(s);
    if (val_pred) {
      for (Eigen::Index i = 0; i < Xval->rows(); ++i) {
        (*val_pred)(i) += ((*Xval)(i, s.feature) <= s.threshold) ? s.left : s.right;
      }
      if (checkpoints->count(r)) {
        (*val_sse)[r] += (*val_pred - *yval).squaredNorm();
      }
    }
  }
  return model;
}

}  // namespace

struct Regressor::Impl {
  LearnerKind kind;
  Eigen::VectorXd beta;       // linear/logistic variants
  std::vector<bool> binary;   // poly2 expansion plan
  BoostModel boost;
};

Regressor Regressor::exact_linear(const Eigen::VectorXd& beta) {
  auto impl = std::make_shared<Impl>();
  impl->kind = LearnerKind::Linear;
  impl->beta = beta;
  Regressor r;
  r.impl_ = std::move(impl);
  return r;
}

Regressor Regressor::exact_logistic(const Eigen::VectorXd& beta) {
  auto impl = std::make_shared<Impl>();
  impl->kind = LearnerKind::Logistic;
  impl->beta = beta;
  Regressor r;
  r.impl_ = std::move(impl);
  return r;
}

Regressor Regressor::fit(const LearnerSpec& spec, const Eigen::MatrixXd& X,
                         const Eigen::VectorXd& y, const std::vector<int>& groups,
                         const std::vector<std::string>& names,
                         const Eigen::VectorXd& weights) {
  if (X.rows() != y.size()) throw std::invalid_argument("learner: X/y size mismatch");
  if (X.rows() == 0) throw std::invalid_argument("learner: empty training set");
  auto impl = std::make_shared<Impl>();
  impl->kind = spec.kind;
  switch (spec.kind) {
    case LearnerKind::Linear:
      impl->beta = ols_fit(X, y, weights, names);
      break;
    case LearnerKind::Logistic:
      impl->beta = logistic_fit(X, y, weights, names);
      break;
    case LearnerKind::Poly2Linear:
    case LearnerKind::Poly2Logistic: {
      impl->binary = binary_columns(X);
      Eigen::MatrixXd Z(X.rows(), poly2_row(X.row(0).transpose(), impl->binary).size());
      for (Eigen::Index i = 0; i < X.rows(); ++i) Z.row(i) = poly2_row(X.row(i).transpose(), impl->binary).transpose();
      if (spec.kind == LearnerKind::Poly2Linear) {
        impl->beta = ridge_fit(Z, y, weights, 1e-6);
      } else {
        // Deduplicate expanded columns before IRLS: interactions of binary
        // indicators often repeat the originals.
        impl->beta = logistic_fit(Z, y, weights, {});
      }
      break;
    }
    case LearnerKind::BoostedStumps: {
      int rounds = spec.boost_rounds;
      if (spec.cv_folds >= 2) {
        std::vector<int> ids;
        for (int g : groups) {
          if (std::find(ids.begin(), ids.end(), g) == ids.end()) ids.push_back(g);
        }
        // Deterministic shuffle of cluster ids into folds.
        std::sort(ids.begin(), ids.end(), [&](int a, int b) {
          return mix64(spec.cv_seed ^ static_cast<uint64_t>(a) * 0x9e3779b97f4a7c15ULL) <
                 mix64(spec.cv_seed ^ static_cast<uint64_t>(b) * 0x9e3779b97f4a7c15ULL);
        });
        std::map<int, int> fold_of;
        for (std::size_t i = 0; i < ids.size(); ++i) {
          fold_of[ids[i]] = static_cast<int>(i % spec.cv_folds);
        }
        std::set<int> grid(spec.cv_round_grid.begin(), spec.cv_round_grid.end());
        const int max_rounds = *grid.rbegin();
        std::map<int, double> sse;
        for (int r : grid) sse[r] = 0.0;
        for (int f = 0; f < spec.cv_folds; ++f) {
          std::vector<Eigen::Index> tr, va;
          for (Eigen::Index i = 0; i < X.rows(); ++i) {
            (fold_of[groups[i]] == f ? va : tr).push_back(i);
          }
          if (tr.empty() || va.empty()) continue;
          Eigen::MatrixXd Xtr(tr.size(), X.cols()), Xva(va.size(), X.cols());
          Eigen::VectorXd ytr(tr.size()), yva(va.size()), wtr(tr.size());
          for (std::size_t i = 0; i < tr.size(); ++i) {
            Xtr.row(i) = X.row(tr[i]);
            ytr(i) = y(tr[i]);
            wtr(i) = weights.size() ? weights(tr[i]) : 1.0;
          }
          for (std::size_t i = 0; i < va.size(); ++i) {
            Xva.row(i) = X.row(va[i]);
            yva(i) = y(va[i]);
          }
          Eigen::VectorXd val_pred(va.size());
          boost_fit(Xtr, ytr, wtr, max_rounds, spec.boost_rate, spec.boost_cuts,
                    &Xva, &val_pred, &grid, &sse, &yva);
        }
        rounds = sse.begin()->first;
        for (const auto& [r, v] : sse) {
          if (v < sse[rounds]) rounds = r;
        }
      }
      impl->boost = boost_fit(X, y, weights, rounds, spec.boost_rate, spec.boost_cuts,
                              nullptr, nullptr, nullptr, nullptr, nullptr);
      break;
    }
  }
  Regressor r;
  r.impl_ = std::move(impl);
  return r;
}

double Regressor::predict(const Eigen::VectorXd& x) const {
  if (!impl_) throw std::logic_error("predict on unfitted Regressor");
  switch (impl_->kind) {
    case LearnerKind::Linear:
      return impl_->beta(0) + impl_->beta.tail(impl_->beta.size() - 1).dot(x);
    case LearnerKind::Logistic:
      return expit(impl_->beta(0) + impl_->beta.tail(impl_->beta.size() - 1).dot(x));
    case LearnerKind::Poly2Linear: {
      const Eigen::VectorXd z = poly2_row(x, impl_->binary);
      return impl_->beta(0) + impl_->beta.tail(z.size()).dot(z);
    }
    case LearnerKind::Poly2Logistic: {
      const Eigen::VectorXd z = poly2_row(x, impl_->binary);
      return expit(impl_->beta(0) + impl_->beta.tail(z.size()).dot(z));
    }
    case LearnerKind::BoostedStumps:
      return impl_->boost.predict(x);
  }
  return 0.0;
}

Eigen::VectorXd Regressor::predict(const Eigen::MatrixXd& X) const {
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = predict(Eigen::VectorXd(X.row(i).transpose()));
  return out;
}

}  // namespace ccmed

#include <json.hpp>

namespace ccmed {

std::string Regressor::serialize() const {
  if (!impl_) throw std::logic_error("serialize on unfitted Regressor");
  nlohmann::json j;
  j["kind"] = learner_name(impl_->kind);
  if (impl_->beta.size()) {
    j["beta"] = std::vector<double>(impl_->beta.data(), impl_->beta.data() + impl_->beta.size());
  }
  if (!impl_->binary.empty()) j["binary"] = impl_->binary;
  if (impl_->kind == LearnerKind::BoostedStumps) {
    j["base"] = impl_->boost.base;
    nlohmann::json stumps = nlohmann::json::array();
    for (const auto& s : impl_->boost.stumps) {
      const double thr = std::isfinite(s.threshold) ? s.threshold : 1e308;
      stumps.push_back({s.feature, thr, s.left, s.right});
    }
    j["stumps"] = std::move(stumps);
  }
  return j.dump();
}

Regressor Regressor::deserialize(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  auto impl = std::make_shared<Impl>();
  impl->kind = parse_learner(j.at("kind").get<std::string>());
  if (j.contains("beta")) {
    const auto v = j["beta"].get<std::vector<double>>();
    impl->beta = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
  }
  if (j.contains("binary")) impl->binary = j["binary"].get<std::vector<bool>>();
  if (impl->kind == LearnerKind::BoostedStumps) {
    impl->boost.base = j.at("base").get<double>();
    for (const auto& s : j.at("stumps")) {
      impl->boost.stumps.push_back(
          {s.at(0).get<int>(), s.at(1).get<double>(), s.at(2).get<double>(), s.at(3).get<double>()});
    }
  }
  Regressor r;
  r.impl_ = std::move(impl);
  return r;
}

}  // namespace ccmed
