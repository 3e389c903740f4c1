#include "ccmed/qmc.hpp"

#include <cmath>

namespace ccmed {

std::vector<int> first_primes(int n) {
  std::vector<int> primes;
  primes.reserve(n);
  int candidate = 2;
  while (static_cast<int>(primes.size()) < n) {
    bool is_prime = true;
    for (int p : primes) {
      if (p * p > candidate) break;
      if (candidate % p == 0) {
        is_prime = false;
        break;
      }
    }
    if (is_prime) primes.push_back(candidate);
    ++candidate;
  }
  return primes;
}

QmcSampler::QmcSampler(int dim, RngStream stream) : dim_(dim) {
  bases_ = first_primes(dim);
  shift_.resize(dim);
  for (int d = 0; d < dim; ++d) shift_[d] = stream.next_uniform();
}

namespace {
double halton(std::uint64_t index, int base) {
  double f = 1.0, r = 0.0;
  while (index > 0) {
    f /= base;
    r += f * static_cast<double>(index % base);
    index /= base;
  }
  return r;
}
}  // namespace

void QmcSampler::point(std::size_t index, double* out) const {
  const std::uint64_t t = index / 2 + 1;  // skip the origin
  const bool antithetic = (index % 2) == 1;
  for (int d = 0; d < dim_; ++d) {
    double u = halton(t, bases_[d]) + shift_[d];
    if (u >= 1.0) u -= 1.0;
    if (antithetic) u = 1.0 - u;
    // keep away from the endpoints; these feed quantile functions
    if (u < 1e-12) u = 1e-12;
    if (u > 1.0 - 1e-12) u = 1.0 - 1e-12;
    out[d] = u;
  }
}

}  // namespace ccmed
