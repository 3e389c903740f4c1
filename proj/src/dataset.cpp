#include "ccmed/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace ccmed {

int Dataset::max_cluster_size() const {
  int m = 0;
  for (const auto& c : clusters) m = std::max(m, c.N);
  return m;
}

double Dataset::arm_proportion() const {
  if (clusters.empty()) return 0.0;
  int treated = 0;
  for (const auto& c : clusters) treated += c.A;
  return static_cast<double>(treated) / clusters.size();
}

void Dataset::validate() const {
  if (clusters.size() < 2) throw std::runtime_error("dataset needs at least 2 clusters");
  if (!(pi > 0.0 && pi < 1.0)) throw std::runtime_error("pi must lie in (0,1)");
  const int K = n_mediators();
  int n0 = 0, n1 = 0;
  for (const auto& c : clusters) {
    if (c.N < 1) throw std::runtime_error("cluster " + c.id + ": empty cluster");
    if (c.A != 0 && c.A != 1)
      throw std::runtime_error("cluster " + c.id + ": treatment not in {0,1}");
    (c.A == 1 ? n1 : n0)++;
    if (c.M.rows() != K || c.M.cols() != c.N)
      throw std::runtime_error("cluster " + c.id + ": mediator matrix shape mismatch");
    if (c.Y.size() != c.N)
      throw std::runtime_error("cluster " + c.id + ": outcome length mismatch");
    if (c.X.rows() != c.N)
      throw std::runtime_error("cluster " + c.id + ": covariate row mismatch");
    if (!c.M.allFinite() || !c.Y.allFinite() || !c.X.allFinite() || !c.V.allFinite())
      throw std::runtime_error("cluster " + c.id + ": missing or non-finite entries");
    for (int k = 0; k < K; ++k) {
      if (mediator_meta[k].kind != MediatorKind::Binary) continue;
      for (int j = 0; j < c.N; ++j) {
        const double v = c.M(k, j);
        if (v != 0.0 && v != 1.0)
          throw std::runtime_error("cluster " + c.id + ": binary mediator '" +
                                   mediator_meta[k].name + "' has value outside {0,1}");
      }
    }
  }
  if (n0 == 0 || n1 == 0) throw std::runtime_error("one treatment arm is empty");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_number(const std::string& s, const std::string& col, std::size_t row) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (...) {
    throw std::runtime_error("row " + std::to_string(row) + ": column '" + col +
                             "' is not numeric: '" + s + "'");
  }
}

}  // namespace

Dataset load_dataset(const std::string& path, const CsvSchema& schema, double pi) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);

  auto col_index = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw std::runtime_error("missing column '" + name + "' in " + path);
    return static_cast<int>(it - header.begin());
  };

  const int ci_id = col_index(schema.cluster_id);
  const int ci_a = col_index(schema.treatment);
  const int ci_y = col_index(schema.outcome);
  std::vector<int> ci_m, ci_x, ci_v;
  for (const auto& m : schema.mediators) ci_m.push_back(col_index(m.name));
  for (const auto& x : schema.individual_covariates) ci_x.push_back(col_index(x));
  for (const auto& v : schema.cluster_covariates) ci_v.push_back(col_index(v));

  struct Row {
    double a, y;
    std::vector<double> m, x, v;
  };
  // preserve first-appearance order of cluster ids
  std::vector<std::string> order;
  std::map<std::string, std::vector<Row>> groups;
  std::size_t rowno = 1;
  while (std::getline(in, line)) {
    ++rowno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw std::runtime_error("row " + std::to_string(rowno) + ": field count mismatch");
    Row r;
    const std::string id = fields[ci_id];
    r.a = parse_number(fields[ci_a], schema.treatment, rowno);
    r.y = parse_number(fields[ci_y], schema.outcome, rowno);
    for (std::size_t k = 0; k < ci_m.size(); ++k)
      r.m.push_back(parse_number(fields[ci_m[k]], schema.mediators[k].name, rowno));
    for (std::size_t k = 0; k < ci_x.size(); ++k)
      r.x.push_back(parse_number(fields[ci_x[k]], schema.individual_covariates[k], rowno));
    for (std::size_t k = 0; k < ci_v.size(); ++k)
      r.v.push_back(parse_number(fields[ci_v[k]], schema.cluster_covariates[k], rowno));
    if (groups.find(id) == groups.end()) order.push_back(id);
    groups[id].push_back(std::move(r));
  }

  Dataset data;
  data.mediator_meta = schema.mediators;
  data.pi = pi;
  const int K = static_cast<int>(schema.mediators.size());
  for (const auto& id : order) {
    const auto& rows = groups[id];
    ClusterRecord rec;
    rec.id = id;
    rec.N = static_cast<int>(rows.size());
    const double a0 = rows[0].a;
    if (a0 != 0.0 && a0 != 1.0)
      throw std::runtime_error("cluster " + id + ": treatment not in {0,1}");
    rec.A = static_cast<int>(a0);
    rec.V.resize(static_cast<int>(rows[0].v.size()));
    for (int k = 0; k < rec.V.size(); ++k) rec.V[k] = rows[0].v[k];
    rec.X.resize(rec.N, static_cast<int>(rows[0].x.size()));
    rec.M.resize(K, rec.N);
    rec.Y.resize(rec.N);
    for (int j = 0; j < rec.N; ++j) {
      const auto& r = rows[j];
      if (r.a != a0)
        throw std::runtime_error("cluster " + id + ": treatment varies within cluster");
      for (int k = 0; k < rec.V.size(); ++k)
        if (r.v[k] != rows[0].v[k])
          throw std::runtime_error("cluster " + id +
                                   ": cluster-level covariate varies within cluster");
      rec.Y[j] = r.y;
      for (int k = 0; k < static_cast<int>(r.x.size()); ++k) rec.X(j, k) = r.x[k];
      for (int k = 0; k < K; ++k) rec.M(k, j) = r.m[k];
    }
    data.clusters.push_back(std::move(rec));
  }
  data.validate();
  return data;
}

void save_dataset(const std::string& path, const Dataset& data, const CsvSchema& schema) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.precision(17);
  out << schema.cluster_id << ',' << schema.treatment << ',' << schema.outcome;
  for (const auto& m : schema.mediators) out << ',' << m.name;
  for (const auto& x : schema.individual_covariates) out << ',' << x;
  for (const auto& v : schema.cluster_covariates) out << ',' << v;
  out << '\n';
  for (const auto& c : data.clusters) {
    for (int j = 0; j < c.N; ++j) {
      out << c.id << ',' << c.A << ',' << c.Y[j];
      for (int k = 0; k < c.M.rows(); ++k) out << ',' << c.M(k, j);
      for (int k = 0; k < c.X.cols(); ++k) out << ',' << c.X(j, k);
      for (int k = 0; k < c.V.size(); ++k) out << ',' << c.V[k];
      out << '\n';
    }
  }
}

}  // namespace ccmed
