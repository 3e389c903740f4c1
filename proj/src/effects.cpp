#include "ccmed/effects.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ccmed {

bool Theta1Ref::constant_arm() const {
  for (int a : arm)
    if (a != arm[0]) return false;
  return true;
}

FunctionalRef FunctionalRef::theta1(int a_star, std::vector<int> arm) {
  FunctionalRef r;
  r.kind = Kind::Theta1;
  r.t1 = {a_star, std::move(arm)};
  return r;
}

FunctionalRef FunctionalRef::theta2(int k, std::vector<int> jstar, int K) {
  std::sort(jstar.begin(), jstar.end());
  for (int j : jstar) {
    if (j == k) throw std::invalid_argument("theta2: pivot k must not be in J*");
    if (j < 1 || j > K) throw std::invalid_argument("theta2: mediator index out of range");
  }
  if (k < 1 || k > K) throw std::invalid_argument("theta2: pivot out of range");
  FunctionalRef r;
  r.kind = Kind::Theta2;
  r.t2 = {k, std::move(jstar), K};
  return r;
}

std::string FunctionalRef::to_string() const {
  std::ostringstream os;
  if (kind == Kind::Theta1) {
    os << "theta1(" << t1.a_star << ",(";
    for (std::size_t i = 0; i < t1.arm.size(); ++i) os << (i ? "," : "") << t1.arm[i];
    os << "))";
  } else {
    os << "theta2(" << t2.k << ",{";
    for (std::size_t i = 0; i < t2.jstar.size(); ++i) os << (i ? "," : "") << t2.jstar[i];
    os << "})";
  }
  return os.str();
}

Scale parse_scale(const std::string& s) {
  if (s == "difference" || s == "diff") return Scale::Difference;
  if (s == "risk-ratio" || s == "rr") return Scale::RiskRatio;
  if (s == "odds-ratio" || s == "or") return Scale::OddsRatio;
  throw std::invalid_argument("unknown scale: " + s);
}

std::string scale_name(Scale s) {
  switch (s) {
    case Scale::Difference: return "difference";
    case Scale::RiskRatio: return "risk-ratio";
    case Scale::OddsRatio: return "odds-ratio";
  }
  return "?";
}

std::vector<int> assignment_tuple(const std::vector<int>& J, int K) {
  std::vector<int> a(K, 1);
  for (int k : J) {
    if (k < 1 || k > K) throw std::invalid_argument("assignment_tuple: index out of range");
    a[k - 1] = 0;
  }
  return a;
}

namespace {
// enumerate subsets of a sorted index list
void for_each_subset(const std::vector<int>& items,
                     const std::function<void(const std::vector<int>&)>& fn) {
  const std::size_t n = items.size();
  std::vector<int> subset;
  for (std::size_t mask = 0; mask < (1ULL << n); ++mask) {
    subset.clear();
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1ULL << i)) subset.push_back(items[i]);
    fn(subset);
  }
}
}  // namespace

std::vector<std::pair<FunctionalRef, int>> int_terms(const std::vector<int>& J, int K) {
  if (J.empty()) throw std::invalid_argument("int_terms: J must be nonempty");
  std::vector<std::pair<FunctionalRef, int>> terms;
  for_each_subset(J, [&](const std::vector<int>& jstar) {
    const int sign = (jstar.size() % 2 == 0) ? 1 : -1;
    terms.emplace_back(FunctionalRef::theta1(1, assignment_tuple(jstar, K)), sign);
  });
  return terms;
}

std::vector<std::pair<std::vector<int>, int>> nie_decomposition(int K) {
  if (K < 1) throw std::invalid_argument("nie_decomposition: K must be >= 1");
  std::vector<int> all(K);
  for (int k = 0; k < K; ++k) all[k] = k + 1;
  std::vector<std::pair<std::vector<int>, int>> out;
  for_each_subset(all, [&](const std::vector<int>& J) {
    if (J.empty()) return;
    const int sign = (J.size() % 2 == 1) ? 1 : -1;
    out.emplace_back(J, sign);
  });
  return out;
}

SimeIimeTerms sime_iime_terms(const std::vector<int>& J, int k, int K) {
  if (std::find(J.begin(), J.end(), k) == J.end())
    throw std::invalid_argument("sime_iime_terms: pivot k must belong to J");
  std::vector<int> rest;
  for (int j : J)
    if (j != k) rest.push_back(j);
  SimeIimeTerms out;
  for_each_subset(rest, [&](const std::vector<int>& jstar) {
    const int sign = (jstar.size() % 2 == 0) ? 1 : -1;
    auto with_k = jstar;
    with_k.push_back(k);
    std::sort(with_k.begin(), with_k.end());
    const auto th1 = FunctionalRef::theta1(1, assignment_tuple(jstar, K));
    const auto th1k = FunctionalRef::theta1(1, assignment_tuple(with_k, K));
    const auto th2 = FunctionalRef::theta2(k, jstar, K);
    out.sime.emplace_back(th1, sign);
    out.sime.emplace_back(th2, -sign);
    out.iime.emplace_back(th2, sign);
    out.iime.emplace_back(th1k, -sign);
  });
  return out;
}

namespace {
EffectSpec spec_with(std::string name, std::vector<std::pair<FunctionalRef, int>> terms,
                     Scale s) {
  EffectSpec spec;
  spec.name = std::move(name);
  spec.terms = std::move(terms);
  spec.scale = s;
  return spec;
}
std::vector<int> full_set(int K) {
  std::vector<int> all(K);
  for (int k = 0; k < K; ++k) all[k] = k + 1;
  return all;
}
std::string subset_label(const std::vector<int>& J) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < J.size(); ++i) os << (i ? "," : "") << J[i];
  os << '}';
  return os.str();
}
}  // namespace

EffectSpec make_te(int K, Scale s) {
  return spec_with("TE",
                   {{FunctionalRef::theta1(1, assignment_tuple({}, K)), +1},
                    {FunctionalRef::theta1(0, assignment_tuple(full_set(K), K)), -1}},
                   s);
}

EffectSpec make_nde(int K, Scale s) {
  return spec_with("NDE",
                   {{FunctionalRef::theta1(1, assignment_tuple(full_set(K), K)), +1},
                    {FunctionalRef::theta1(0, assignment_tuple(full_set(K), K)), -1}},
                   s);
}

EffectSpec make_nie(int K, Scale s) {
  return spec_with("NIE",
                   {{FunctionalRef::theta1(1, assignment_tuple({}, K)), +1},
                    {FunctionalRef::theta1(1, assignment_tuple(full_set(K), K)), -1}},
                   s);
}

EffectSpec make_int(const std::vector<int>& J, int K, Scale s) {
  auto name = (J.size() == 1 ? "EIE" : "INT") + subset_label(J);
  return spec_with(std::move(name), int_terms(J, K), s);
}

EffectSpec make_sime(const std::vector<int>& J, int k, int K, Scale s) {
  auto t = sime_iime_terms(J, k, K);
  auto name = (J.size() == 1 ? "ESME" : "SIME") + subset_label(J) +
              (J.size() == 1 ? "" : "|k=" + std::to_string(k));
  return spec_with(std::move(name), std::move(t.sime), s);
}

EffectSpec make_iime(const std::vector<int>& J, int k, int K, Scale s) {
  auto t = sime_iime_terms(J, k, K);
  auto name = (J.size() == 1 ? "EIME" : "IIME") + subset_label(J) +
              (J.size() == 1 ? "" : "|k=" + std::to_string(k));
  return spec_with(std::move(name), std::move(t.iime), s);
}

namespace {
std::vector<int> parse_subset(const std::string& text) {
  std::vector<int> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      out.push_back(std::stoi(cur));
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::stoi(cur));
  std::sort(out.begin(), out.end());
  return out;
}
}  // namespace

EffectSpec parse_effect(const std::string& text, int K, Scale s) {
  if (text == "TE") return make_te(K, s);
  if (text == "NDE") return make_nde(K, s);
  if (text == "NIE") return make_nie(K, s);

  const auto brace = text.find('{');
  const auto close = text.find('}');
  if (brace == std::string::npos || close == std::string::npos || close < brace)
    throw std::invalid_argument("cannot parse estimand: " + text);
  const std::string head = text.substr(0, brace);
  const auto J = parse_subset(text.substr(brace + 1, close - brace - 1));
  int k = J.empty() ? 0 : J[0];
  const auto pipe = text.find("|k=", close);
  if (pipe != std::string::npos) k = std::stoi(text.substr(pipe + 3));

  if (head == "INT" || head == "EIE") return make_int(J, K, s);
  if (head == "SIME") return make_sime(J, k, K, s);
  if (head == "IIME") return make_iime(J, k, K, s);
  if (head == "ESME") return make_sime(J, J[0], K, s);
  if (head == "EIME") return make_iime(J, J[0], K, s);
  throw std::invalid_argument("unknown estimand: " + text);
}

double combine(const EffectSpec& spec, const ValueMap& values) {
  auto lookup = [&](const FunctionalRef& ref) {
    const auto it = values.find(ref);
    if (it == values.end())
      throw std::runtime_error("combine: missing value for " + ref.to_string());
    return it->second;
  };
  if (spec.scale == Scale::Difference) {
    double sum = 0.0;
    for (const auto& [ref, sign] : spec.terms) sum += sign * lookup(ref);
    return sum;
  }
  double log_prod = 0.0;
  for (const auto& [ref, sign] : spec.terms) {
    const double theta = lookup(ref);
    double h;
    if (spec.scale == Scale::RiskRatio) {
      if (theta <= 0.0)
        throw std::domain_error("risk-ratio scale requires theta > 0 (" +
                                ref.to_string() + ")");
      h = theta;
    } else {
      if (theta <= 0.0 || theta >= 1.0)
        throw std::domain_error("odds-ratio scale requires theta in (0,1) (" +
                                ref.to_string() + ")");
      h = theta / (1.0 - theta);
    }
    log_prod += sign * std::log(h);
  }
  return std::exp(log_prod);
}

std::vector<FunctionalRef> collect_refs(const std::vector<EffectSpec>& specs) {
  std::set<FunctionalRef> seen;
  std::vector<FunctionalRef> out;
  for (const auto& spec : specs)
    for (const auto& [ref, sign] : spec.terms)
      if (seen.insert(ref).second) out.push_back(ref);
  return out;
}

}  // namespace ccmed
