#include <cmath>
#include <map>
#include <stdexcept>

#include "ccmed/effects.hpp"
#include "ccmed/rng.hpp"
#include "doctest.h"

using namespace ccmed;

namespace {

// random value map over every theta1/theta2 reference for K mediators,
// values in (lo, hi)
ValueMap random_values(int K, RngStream& s, double lo = 0.05, double hi = 0.95) {
  ValueMap vm;
  for (int mask = 0; mask < (1 << K); ++mask) {
    std::vector<int> J;
    for (int k = 1; k <= K; ++k) {
      if (mask & (1 << (k - 1))) J.push_back(k);
    }
    for (int a_star : {0, 1}) {
      vm[FunctionalRef::theta1(a_star, assignment_tuple(J, K))] =
          lo + (hi - lo) * s.next_uniform();
    }
    for (int k = 1; k <= K; ++k) {
      if (mask & (1 << (k - 1))) continue;
      vm[FunctionalRef::theta2(k, J, K)] = lo + (hi - lo) * s.next_uniform();
    }
  }
  return vm;
}

// coefficient of each theta1 ref after expanding a signed term list
std::map<FunctionalRef, int> coefficients(
    const std::vector<std::pair<FunctionalRef, int>>& terms) {
  std::map<FunctionalRef, int> c;
  for (const auto& [ref, sign] : terms) c[ref] += sign;
  return c;
}

}  // namespace

TEST_CASE("assignment tuples") {
  CHECK(assignment_tuple({2, 4}, 4) == std::vector<int>{1, 0, 1, 0});
  CHECK(assignment_tuple({}, 3) == std::vector<int>{1, 1, 1});
  CHECK(assignment_tuple({1, 2, 3}, 3) == std::vector<int>{0, 0, 0});
  CHECK_THROWS(assignment_tuple({5}, 3));
}

TEST_CASE("INT term expansion") {
  // singleton set: EIE_k form
  auto t1 = int_terms({2}, 3);
  REQUIRE(t1.size() == 2);
  CHECK(t1[0].first == FunctionalRef::theta1(1, {1, 1, 1}));
  CHECK(t1[0].second == 1);
  CHECK(t1[1].first == FunctionalRef::theta1(1, {1, 0, 1}));
  CHECK(t1[1].second == -1);

  // K = 2 full interaction
  auto t2 = int_terms({1, 2}, 2);
  auto c2 = coefficients(t2);
  REQUIRE(t2.size() == 4);
  CHECK(c2[FunctionalRef::theta1(1, {1, 1})] == 1);
  CHECK(c2[FunctionalRef::theta1(1, {0, 1})] == -1);
  CHECK(c2[FunctionalRef::theta1(1, {1, 0})] == -1);
  CHECK(c2[FunctionalRef::theta1(1, {0, 0})] == 1);

  // 3-way: 8 terms, sign by subset parity
  auto t3 = int_terms({1, 2, 3}, 3);
  CHECK(t3.size() == 8);
  for (const auto& [ref, sign] : t3) {
    int zeros = 0;
    for (int a : ref.t1.arm) zeros += a == 0;
    CHECK(sign == (zeros % 2 == 0 ? 1 : -1));
  }
}

TEST_CASE("NIE decomposition collapses to the two extreme tuples") {
  for (int K = 1; K <= 4; ++K) {
    std::map<FunctionalRef, int> total;
    int entries = 0;
    for (const auto& [J, sign] : nie_decomposition(K)) {
      entries++;
      for (const auto& [ref, s2] : int_terms(J, K)) total[ref] += sign * s2;
    }
    CHECK(entries == (1 << K) - 1);
    for (const auto& [ref, coef] : total) {
      const auto all_ones = assignment_tuple({}, K);
      std::vector<int> all_zeros(K, 0);
      if (ref.t1.arm == all_ones) {
        CHECK(coef == 1);
      } else if (ref.t1.arm == all_zeros) {
        CHECK(coef == -1);
      } else {
        CHECK(coef == 0);
      }
    }
  }
}

TEST_CASE("SIME/IIME structure and symbolic sum") {
  auto t = sime_iime_terms({2}, 2, 2);
  REQUIRE(t.sime.size() == 2);
  CHECK(t.sime[0].first == FunctionalRef::theta1(1, {1, 1}));
  CHECK(t.sime[1].first == FunctionalRef::theta2(2, {}, 2));
  CHECK(t.sime[1].second == -1);
  CHECK(t.iime[0].first == FunctionalRef::theta2(2, {}, 2));
  CHECK(t.iime[1].first == FunctionalRef::theta1(1, {1, 0}));

  // term counts: 2 * 2^{|J|-1}
  auto t2 = sime_iime_terms({1, 2, 3}, 2, 3);
  CHECK(t2.sime.size() == 8);
  CHECK(t2.iime.size() == 8);

  // SIME + IIME collapses to INT symbolically for every pivot
  RngStream s(314);
  const auto vm = random_values(3, s);
  for (int k : {1, 2, 3}) {
    auto tk = sime_iime_terms({1, 2, 3}, k, 3);
    double sum = 0.0;
    for (const auto& [ref, sign] : tk.sime) sum += sign * vm.at(ref);
    for (const auto& [ref, sign] : tk.iime) sum += sign * vm.at(ref);
    double int_sum = 0.0;
    for (const auto& [ref, sign] : int_terms({1, 2, 3}, 3)) {
      int_sum += sign * vm.at(ref);
    }
    CHECK(sum == doctest::Approx(int_sum).epsilon(1e-12));
  }
}

TEST_CASE("combine on each scale") {
  const int K = 2;
  ValueMap vm;
  vm[FunctionalRef::theta1(1, {0, 0})] = 0.4;
  vm[FunctionalRef::theta1(0, {0, 0})] = 0.1;
  CHECK(combine(make_nde(K, Scale::Difference), vm) == doctest::Approx(0.3));

  vm[FunctionalRef::theta1(1, {1, 1})] = 0.3;
  vm[FunctionalRef::theta1(1, {0, 0})] = 0.2;
  CHECK(combine(make_nie(K, Scale::RiskRatio), vm) == doctest::Approx(1.5));

  RngStream s(21);
  auto vm2 = random_values(K, s);
  for (auto& [ref, v] : vm2) v = 0.37;  // all thetas equal -> OR cancels
  CHECK(combine(make_int({1, 2}, K, Scale::OddsRatio), vm2) ==
        doctest::Approx(1.0).epsilon(1e-12));

  // domain errors
  vm[FunctionalRef::theta1(1, {1, 1})] = -0.2;
  CHECK_THROWS_AS(combine(make_nie(K, Scale::RiskRatio), vm), std::domain_error);
  vm[FunctionalRef::theta1(1, {1, 1})] = 1.4;
  CHECK_THROWS_AS(combine(make_nie(K, Scale::OddsRatio), vm), std::domain_error);
}

TEST_CASE("decomposition identities hold for arbitrary value maps") {
  RngStream s(2718);
  for (int K = 1; K <= 3; ++K) {
    for (int rep = 0; rep < 20; ++rep) {
      const auto vm = random_values(K, s);

      // TE = NDE + NIE (difference), TE = NDE * NIE (ratio)
      const double te = combine(make_te(K, Scale::Difference), vm);
      const double nde = combine(make_nde(K, Scale::Difference), vm);
      const double nie = combine(make_nie(K, Scale::Difference), vm);
      CHECK(te == doctest::Approx(nde + nie).epsilon(1e-12));
      for (Scale sc : {Scale::RiskRatio, Scale::OddsRatio}) {
        CHECK(combine(make_te(K, sc), vm) ==
              doctest::Approx(combine(make_nde(K, sc), vm) *
                              combine(make_nie(K, sc), vm))
                  .epsilon(1e-12));
      }

      // NIE = sum of signed INT_J over nonempty J
      double nie_sum = 0.0;
      double nie_prod = 1.0;
      for (const auto& [J, sign] : nie_decomposition(K)) {
        nie_sum += sign * combine(make_int(J, K, Scale::Difference), vm);
        const double v = combine(make_int(J, K, Scale::RiskRatio), vm);
        nie_prod *= sign > 0 ? v : 1.0 / v;
      }
      CHECK(nie_sum == doctest::Approx(nie).epsilon(1e-10));
      CHECK(nie_prod ==
            doctest::Approx(combine(make_nie(K, Scale::RiskRatio), vm)).epsilon(1e-10));

      // INT_J = SIME_J(k) + IIME_J(k) for every k in J
      for (int mask = 1; mask < (1 << K); ++mask) {
        std::vector<int> J;
        for (int k = 1; k <= K; ++k) {
          if (mask & (1 << (k - 1))) J.push_back(k);
        }
        const double int_v = combine(make_int(J, K, Scale::Difference), vm);
        for (int k : J) {
          const double sime = combine(make_sime(J, k, K, Scale::Difference), vm);
          const double iime = combine(make_iime(J, k, K, Scale::Difference), vm);
          CHECK(sime + iime == doctest::Approx(int_v).epsilon(1e-10));
          const double prod = combine(make_sime(J, k, K, Scale::RiskRatio), vm) *
                              combine(make_iime(J, k, K, Scale::RiskRatio), vm);
          CHECK(prod ==
                doctest::Approx(combine(make_int(J, K, Scale::RiskRatio), vm))
                    .epsilon(1e-10));
        }
      }
    }
  }
}

TEST_CASE("permutation equivariance of combined values") {
  RngStream s(55);
  const int K = 3;
  const auto vm = random_values(K, s);
  // permutation sigma: 1->2, 2->3, 3->1 applied to refs builds a permuted map
  auto perm = [](int k) { return k % 3 + 1; };
  ValueMap vm_perm;
  for (const auto& [ref, v] : vm) {
    if (ref.kind == FunctionalRef::Kind::Theta1) {
      std::vector<int> arm(K);
      for (int k = 1; k <= K; ++k) arm[perm(k) - 1] = ref.t1.arm[k - 1];
      vm_perm[FunctionalRef::theta1(ref.t1.a_star, arm)] = v;
    } else {
      std::vector<int> jstar;
      for (int k : ref.t2.jstar) jstar.push_back(perm(k));
      std::sort(jstar.begin(), jstar.end());
      vm_perm[FunctionalRef::theta2(perm(ref.t2.k), jstar, K)] = v;
    }
  }
  // INT{1,2} under vm equals INT{perm(1),perm(2)} = INT{2,3} under vm_perm
  CHECK(combine(make_int({1, 2}, K, Scale::Difference), vm) ==
        doctest::Approx(combine(make_int({2, 3}, K, Scale::Difference), vm_perm))
            .epsilon(1e-12));
  CHECK(combine(make_sime({1, 2}, 1, K, Scale::Difference), vm) ==
        doctest::Approx(combine(make_sime({2, 3}, 2, K, Scale::Difference), vm_perm))
            .epsilon(1e-12));
}

TEST_CASE("effect parser") {
  const int K = 3;
  CHECK(parse_effect("TE", K, Scale::Difference).name == "TE");
  CHECK(parse_effect("INT{1,3}", K, Scale::Difference).terms.size() == 4);
  CHECK(parse_effect("EIE{2}", K, Scale::Difference).terms ==
        make_int({2}, K, Scale::Difference).terms);
  CHECK(parse_effect("SIME{1,2}|k=1", K, Scale::Difference).terms ==
        make_sime({1, 2}, 1, K, Scale::Difference).terms);
  CHECK(parse_effect("ESME{2}", K, Scale::Difference).terms ==
        make_sime({2}, 2, K, Scale::Difference).terms);
  CHECK(parse_effect("EIME{2}", K, Scale::Difference).terms ==
        make_iime({2}, 2, K, Scale::Difference).terms);
  CHECK_THROWS(parse_effect("FOO{1}", K, Scale::Difference));
}

TEST_CASE("collect_refs deduplicates shared functionals") {
  const int K = 2;
  std::vector<EffectSpec> specs = {make_te(K, Scale::Difference),
                                   make_nde(K, Scale::Difference),
                                   make_nie(K, Scale::Difference)};
  // TE, NDE, NIE share theta1(1,a_empty), theta1(0,a_K), theta1(1,a_K): 3 refs
  CHECK(collect_refs(specs).size() == 3);
}
