#pragma once

#include <cstdint>
#include <vector>

#include "ccmed/rng.hpp"

namespace ccmed {

// Randomly shifted Halton sequence with antithetic pairing.  The shift is
// derived from the stream key, so each (cluster, purpose) substream sees a
// fixed, reproducible point set.
class QmcSampler {
 public:
  QmcSampler(int dim, RngStream stream);

  // Points are generated in antithetic pairs: point 2t is the shifted Halton
  // point, point 2t+1 its reflection 1-u.
  void point(std::size_t index, double* out) const;
  int dim() const { return dim_; }

 private:
  int dim_;
  std::vector<double> shift_;
  std::vector<int> bases_;
};

// first n primes, for Halton bases
std::vector<int> first_primes(int n);

}  // namespace ccmed
