#include "ccmed/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ccmed/rng.hpp"
#include "ccmed/threading.hpp"

namespace ccmed {

double eif_variance(const Eigen::VectorXd& centered_influence) {
  if (centered_influence.size() < 2) {
    throw std::invalid_argument("eif_variance: need at least 2 clusters");
  }
  return centered_influence.squaredNorm() / centered_influence.size();
}

CiReport wald_ci(const std::string& name, double point, double se, double alpha,
                 bool log_scale) {
  if (se < 0) throw std::invalid_argument("wald_ci: negative SE");
  const double z = -inv_normal_cdf(alpha / 2.0);
  CiReport r;
  r.name = name;
  r.se = se;
  if (log_scale) {
    r.point = std::exp(point);
    r.lower = std::exp(point - z * se);
    r.upper = std::exp(point + z * se);
    r.method = "wald-log";
  } else {
    r.point = point;
    r.lower = point - z * se;
    r.upper = point + z * se;
    r.method = "wald";
  }
  return r;
}

BootstrapResult cluster_bootstrap(
    const Dataset& data,
    const std::function<Eigen::VectorXd(const Dataset&, std::uint64_t)>& estimator,
    int B, std::uint64_t seed, double alpha) {
  if (B < 2) throw std::invalid_argument("cluster_bootstrap: B must be >= 2");
  const std::size_t I = data.clusters.size();

  // Draw all resample index sets up front (sequential, deterministic), then
  // evaluate replicates concurrently.
  RngStream stream(seed);
  std::vector<std::vector<std::size_t>> picks(B);
  int redraws = 0;
  for (int b = 0; b < B; ++b) {
    RngStream s = stream.fork("bootstrap").fork(static_cast<std::uint64_t>(b));
    for (int attempt = 0;; ++attempt) {
      std::vector<std::size_t> idx(I);
      bool has0 = false, has1 = false;
      for (std::size_t i = 0; i < I; ++i) {
        idx[i] = static_cast<std::size_t>(s.next_below(I));
        (data.clusters[idx[i]].A ? has1 : has0) = true;
      }
      if (has0 && has1) {
        picks[b] = std::move(idx);
        break;
      }
      ++redraws;
      if (attempt >= 100) {
        throw std::runtime_error("cluster_bootstrap: persistent single-arm resamples");
      }
    }
  }

  std::vector<Eigen::VectorXd> results(B);
  parallel_for(B, [&](std::size_t b) {
    Dataset boot;
    boot.mediator_meta = data.mediator_meta;
    boot.pi = data.pi;
    boot.clusters.reserve(I);
    for (std::size_t i : picks[b]) boot.clusters.push_back(data.clusters[i]);
    results[b] = estimator(boot, mix64(seed ^ (0xb007 + b)));
  });

  const Eigen::Index R = results[0].size();
  BootstrapResult out;
  out.draws.resize(B, R);
  for (int b = 0; b < B; ++b) out.draws.row(b) = results[b].transpose();
  out.used = B;
  out.redraws = redraws;
  out.se.resize(R);
  out.lower.resize(R, 1);
  out.upper.resize(R, 1);
  for (Eigen::Index r = 0; r < R; ++r) {
    Eigen::VectorXd col = out.draws.col(r);
    const double mean = col.mean();
    out.se(r) = std::sqrt((col.array() - mean).square().sum() / (B - 1));
    std::vector<double> sorted(col.data(), col.data() + B);
    std::sort(sorted.begin(), sorted.end());
    auto quant = [&](double q) {
      const double pos = q * (B - 1);
      const int lo = static_cast<int>(pos);
      const int hi = std::min(lo + 1, B - 1);
      return sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
    };
    out.lower(r, 0) = quant(alpha / 2.0);
    out.upper(r, 0) = quant(1.0 - alpha / 2.0);
  }
  return out;
}

}  // namespace ccmed
