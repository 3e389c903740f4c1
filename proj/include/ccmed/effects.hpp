#pragma once

#include <map>
#include <string>
#include <vector>

namespace ccmed {

// theta_1(a*, a): counterfactual mean with mediators drawn under the arm
// tuple `arm` (arm[k] = 0 iff mediator k+1 is set to its control law).
struct Theta1Ref {
  int a_star = 1;
  std::vector<int> arm;  // length K, entries in {0,1}

  bool constant_arm() const;  // all entries equal -> Set-I functional
  auto operator<=>(const Theta1Ref&) const = default;
};

// theta_2(k, J*): theta_1(1, a_{J*}) with the neighbors' k-th mediator
// switched to its control law.  Indices are 1-based mediator labels.
struct Theta2Ref {
  int k = 1;
  std::vector<int> jstar;  // sorted, excludes k
  int n_mediators = 1;

  auto operator<=>(const Theta2Ref&) const = default;
};

struct FunctionalRef {
  enum class Kind { Theta1, Theta2 } kind = Kind::Theta1;
  Theta1Ref t1;
  Theta2Ref t2;

  static FunctionalRef theta1(int a_star, std::vector<int> arm);
  static FunctionalRef theta2(int k, std::vector<int> jstar, int K);
  auto operator<=>(const FunctionalRef&) const = default;
  std::string to_string() const;
};

using ValueMap = std::map<FunctionalRef, double>;

enum class Scale { Difference, RiskRatio, OddsRatio };
Scale parse_scale(const std::string& s);
std::string scale_name(Scale s);

struct EffectSpec {
  std::string name;
  std::vector<std::pair<FunctionalRef, int>> terms;  // (ref, exponent in {+1,-1})
  Scale scale = Scale::Difference;
};

// a_J: entry k is 0 iff k in J (1-based indices)
std::vector<int> assignment_tuple(const std::vector<int>& J, int K);

// INT_J expansion: one theta_1(1, a_{J*}) term per J* subseteq J, signed by
// subset parity
std::vector<std::pair<FunctionalRef, int>> int_terms(const std::vector<int>& J, int K);

// NIE = sum over nonempty J of (-1)^{|J|+1} INT_J
std::vector<std::pair<std::vector<int>, int>> nie_decomposition(int K);

// SIME_J(k) / IIME_J(k) term lists
struct SimeIimeTerms {
  std::vector<std::pair<FunctionalRef, int>> sime;
  std::vector<std::pair<FunctionalRef, int>> iime;
};
SimeIimeTerms sime_iime_terms(const std::vector<int>& J, int k, int K);

// Named estimand builders
EffectSpec make_te(int K, Scale s);
EffectSpec make_nde(int K, Scale s);
EffectSpec make_nie(int K, Scale s);
EffectSpec make_int(const std::vector<int>& J, int K, Scale s);
EffectSpec make_sime(const std::vector<int>& J, int k, int K, Scale s);
EffectSpec make_iime(const std::vector<int>& J, int k, int K, Scale s);

// Parse estimand syntax: TE | NDE | NIE | EIE{k} | INT{1,3} | SIME{1,2}|k=1 |
// IIME{1,2}|k=2 | ESME{k} | EIME{k}
EffectSpec parse_effect(const std::string& text, int K, Scale s);

// Evaluate a spec against a shared value map.  Difference scale: signed sum;
// ratio scales: product of h(theta)^exponent.  Ratio-scale domain violations
// throw.
double combine(const EffectSpec& spec, const ValueMap& values);

// all FunctionalRefs appearing in a set of specs, deduplicated
std::vector<FunctionalRef> collect_refs(const std::vector<EffectSpec>& specs);

}  // namespace ccmed
