#include "crl/scm.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <queue>
#include <stdexcept>

namespace crl {

namespace {

// Kahn's algorithm; empty result means the support has a cycle.
std::vector<int> topological_sort(int d, const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::vector<int>> children(d);
  std::vector<int> indeg(d, 0);
  for (const auto& [p, c] : edges) {
    children[p].push_back(c);
    ++indeg[c];
  }
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int v = 0; v < d; ++v)
    if (indeg[v] == 0) ready.push(v);
  std::vector<int> order;
  order.reserve(d);
  while (!ready.empty()) {
    const int v = ready.top();
    ready.pop();
    order.push_back(v);
    for (int c : children[v])
      if (--indeg[c] == 0) ready.push(c);
  }
  if (static_cast<int>(order.size()) != d) order.clear();
  return order;
}

}  // namespace

bool Dag::has_edge(int parent, int child) const {
  return std::binary_search(edges.begin(), edges.end(), std::make_pair(parent, child));
}

std::vector<int> Dag::parents(int node) const {
  std::vector<int> out;
  for (const auto& [p, c] : edges)
    if (c == node) out.push_back(p);
  return out;
}

Dag Dag::from_edges(int d, std::vector<std::pair<int, int>> edges) {
  if (d < 1) throw std::invalid_argument("Dag: node count must be >= 1");
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  for (const auto& [p, c] : edges) {
    if (p < 0 || p >= d || c < 0 || c >= d || p == c)
      throw std::invalid_argument("Dag: edge endpoints out of range");
  }
  Dag dag;
  dag.d = d;
  dag.edges = std::move(edges);
  dag.topo_order = topological_sort(d, dag.edges);
  if (dag.topo_order.empty()) throw std::invalid_argument("Dag: edge set has a cycle");
  return dag;
}

std::string to_string(InterventionKind kind) {
  switch (kind) {
    case InterventionKind::observational: return "observational";
    case InterventionKind::perfect: return "perfect";
    case InterventionKind::imperfect: return "imperfect";
    case InterventionKind::pure_shift: return "pure_shift";
  }
  throw std::logic_error("unknown intervention kind");
}

InterventionKind intervention_kind_from_string(const std::string& s) {
  if (s == "observational") return InterventionKind::observational;
  if (s == "perfect") return InterventionKind::perfect;
  if (s == "imperfect") return InterventionKind::imperfect;
  if (s == "pure_shift") return InterventionKind::pure_shift;
  throw std::invalid_argument("unknown intervention kind: " + s);
}

Eigen::MatrixXd ScmFamily::observational_b() const {
  const int n = d();
  Eigen::MatrixXd b = Eigen::MatrixXd::Identity(n, n) - A;
  for (int j = 0; j < n; ++j) b.row(j) /= std::sqrt(D(j));
  return b;
}

Dag sample_er_dag(int d, double k, Rng& rng) {
  if (d < 1) throw std::invalid_argument("sample_er_dag: d must be >= 1");
  if (k < 0) throw std::invalid_argument("sample_er_dag: k must be >= 0");
  const double n_pairs = static_cast<double>(d) * (d - 1) / 2.0;
  const double p = n_pairs > 0 ? std::clamp(k * d / n_pairs, 0.0, 1.0) : 0.0;

  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<int> position(d);
  for (int i = 0; i < d; ++i) position[order[i]] = i;

  std::vector<std::pair<int, int>> edges;
  for (int a = 0; a < d; ++a) {
    for (int b = a + 1; b < d; ++b) {
      if (rng.uniform() < p) {
        if (position[a] < position[b])
          edges.emplace_back(a, b);
        else
          edges.emplace_back(b, a);
      }
    }
  }
  std::sort(edges.begin(), edges.end());
  Dag dag;
  dag.d = d;
  dag.edges = std::move(edges);
  dag.topo_order = std::move(order);
  return dag;
}

void sample_weights(const Dag& dag, const WeightConfig& cfg, Rng& rng,
                    Eigen::MatrixXd& A, Eigen::VectorXd& D) {
  if (cfg.var_lo <= 0 || cfg.var_hi < cfg.var_lo)
    throw std::invalid_argument("sample_weights: invalid variance band");
  A = Eigen::MatrixXd::Zero(dag.d, dag.d);
  for (const auto& [p, c] : dag.edges) A(c, p) = rng.uniform_signed_band(cfg.weight_lo, cfg.weight_hi);
  D.resize(dag.d);
  for (int j = 0; j < dag.d; ++j) D(j) = rng.uniform(cfg.var_lo, cfg.var_hi);
}

ScmEnvironment apply_intervention(const ScmFamily& family, const InterventionSpec& spec, Rng& rng) {
  const int d = family.d();
  if (spec.target < 0 || spec.target >= d)
    throw std::invalid_argument("apply_intervention: target out of range");
  const Eigen::MatrixXd b_obs = family.observational().B;

  ScmEnvironment env;
  env.B = b_obs;
  env.eta = spec.eta;
  env.target = spec.target;
  env.kind = spec.kind;

  switch (spec.kind) {
    case InterventionKind::observational:
      throw std::invalid_argument("apply_intervention: kind must be interventional");
    case InterventionKind::perfect: {
      if (spec.lambda <= 0) throw std::invalid_argument("apply_intervention: lambda must be > 0");
      if (spec.lambda * spec.lambda == family.D(spec.target))
        throw std::invalid_argument("apply_intervention: lambda^2 must differ from D_tt");
      env.B.row(spec.target).setZero();
      env.B(spec.target, spec.target) = spec.lambda;
      break;
    }
    case InterventionKind::imperfect: {
      Eigen::VectorXd row;
      if (spec.row) {
        row = *spec.row;
        if (row.size() != d) throw std::invalid_argument("apply_intervention: row size mismatch");
        for (int j = 0; j < d; ++j) {
          if (j != spec.target && row(j) != 0.0 && !family.dag.has_edge(j, spec.target))
            throw std::invalid_argument("apply_intervention: imperfect row adds a parent");
        }
        if (row(spec.target) <= 0)
          throw std::invalid_argument("apply_intervention: diagonal entry must stay positive");
      } else {
        // Default mechanism: fresh parent weights and a fresh noise scale.
        const double var = rng.uniform(spec.resample.var_lo, spec.resample.var_hi);
        const double inv_sd = 1.0 / std::sqrt(var);
        row = Eigen::VectorXd::Zero(d);
        row(spec.target) = inv_sd;
        for (int p : family.dag.parents(spec.target))
          row(p) = -inv_sd * rng.uniform_signed_band(spec.resample.weight_lo, spec.resample.weight_hi);
      }
      env.B.row(spec.target) = row.transpose();
      break;
    }
    case InterventionKind::pure_shift: {
      if (spec.eta == 0.0) throw std::invalid_argument("apply_intervention: pure shift needs eta != 0");
      break;
    }
  }

  const double row_change = (env.B - b_obs).cwiseAbs().maxCoeff();
  if (row_change < 1e-9 && env.eta == 0.0)
    throw std::invalid_argument("apply_intervention: trivial intervention");
  return env;
}

Eigen::MatrixXd sample_latents(const ScmEnvironment& env, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_latents: n must be >= 1");
  const int d = static_cast<int>(env.B.rows());
  Eigen::MatrixXd eps(d, n);
  for (int col = 0; col < n; ++col)
    for (int row = 0; row < d; ++row) eps(row, col) = rng.normal();
  if (env.eta != 0.0) eps.row(env.target).array() += env.eta;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(env.B);
  if (std::abs(lu.determinant()) < 1e-300)
    throw std::runtime_error("sample_latents: singular B");
  return lu.solve(eps).transpose();
}

namespace {

// B matrices of this model are triangular under some node order, in which
// case |det B| is the product of the (positive) diagonal. Falls back to a
// dense factorization when the off-diagonal support is cyclic.
double log_abs_det(const Eigen::MatrixXd& B) {
  const int d = static_cast<int>(B.rows());
  std::vector<std::pair<int, int>> support;
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < d; ++i)
      if (i != j && B(j, i) != 0.0) support.emplace_back(i, j);
  bool diag_positive = true;
  for (int j = 0; j < d; ++j) diag_positive = diag_positive && B(j, j) > 0;
  if (diag_positive) {
    std::vector<std::vector<int>> children(d);
    std::vector<int> indeg(d, 0);
    for (const auto& [p, c] : support) {
      children[p].push_back(c);
      ++indeg[c];
    }
    std::vector<int> stack;
    for (int v = 0; v < d; ++v)
      if (indeg[v] == 0) stack.push_back(v);
    int seen = 0;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      ++seen;
      for (int c : children[v])
        if (--indeg[c] == 0) stack.push_back(c);
    }
    if (seen == d) return B.diagonal().array().log().sum();
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
  if (!lu.isInvertible()) throw std::runtime_error("gaussian_stats: singular B");
  double acc = 0.0;
  for (int j = 0; j < d; ++j) acc += std::log(std::abs(lu.matrixLU()(j, j)));
  return acc;
}

}  // namespace

GaussianStats gaussian_stats(const ScmEnvironment& env) {
  const int d = static_cast<int>(env.B.rows());
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(env.B);
  if (std::abs(lu.determinant()) < 1e-300) throw std::runtime_error("gaussian_stats: singular B");

  GaussianStats stats;
  stats.theta = env.B.transpose() * env.B;
  const Eigen::MatrixXd b_inv = lu.inverse();
  stats.sigma = b_inv * b_inv.transpose();
  if (env.target >= 0 && env.eta != 0.0)
    stats.mu = env.eta * b_inv.col(env.target);
  else
    stats.mu = Eigen::VectorXd::Zero(d);
  stats.logdet_sigma = -2.0 * log_abs_det(env.B);
  return stats;
}

PrecisionDifference precision_difference(const ScmEnvironment& env_i, const ScmEnvironment& env_0) {
  if (env_i.B.rows() != env_0.B.rows())
    throw std::invalid_argument("precision_difference: dimension mismatch");
  if (env_i.target < 0)
    throw std::invalid_argument("precision_difference: env_i must be interventional");
  PrecisionDifference out;
  out.delta = env_i.B.transpose() * env_i.B - env_0.B.transpose() * env_0.B;
  out.s = env_0.B.row(env_i.target).transpose();
  out.s_tilde = env_i.B.row(env_i.target).transpose();
  return out;
}

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const int rows = static_cast<int>(j.size());
  const int cols = rows > 0 ? static_cast<int>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
  return m;
}

}  // namespace

nlohmann::json family_to_json(const ScmFamily& family) {
  nlohmann::json j;
  j["d"] = family.d();
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [p, c] : family.dag.edges) edges.push_back({p, c});
  j["edges"] = std::move(edges);
  j["topo_order"] = family.dag.topo_order;
  j["A"] = matrix_to_json(family.A);
  j["D"] = std::vector<double>(family.D.data(), family.D.data() + family.D.size());
  j["seed_chain"] = {{"root", family.seeds.root},
                     {"dag", family.seeds.dag},
                     {"weights", family.seeds.weights},
                     {"interventions", family.seeds.interventions},
                     {"data", family.seeds.data}};
  nlohmann::json envs = nlohmann::json::array();
  const Eigen::MatrixXd b_obs = family.observational().B;
  for (std::size_t i = 0; i < family.environments.size(); ++i) {
    const ScmEnvironment& env = family.environments[i];
    nlohmann::json je;
    je["index"] = i;
    je["kind"] = to_string(env.kind);
    je["eta"] = env.eta;
    if (env.target >= 0) {
      je["target"] = env.target;
      const Eigen::VectorXd row = env.B.row(env.target).transpose();
      je["b_row"] = std::vector<double>(row.data(), row.data() + row.size());
    } else {
      je["target"] = nullptr;
      je["b_row"] = nullptr;
    }
    envs.push_back(std::move(je));
  }
  j["environments"] = std::move(envs);
  return j;
}

ScmFamily family_from_json(const nlohmann::json& j) {
  const int d = j.at("d").get<int>();
  std::vector<std::pair<int, int>> edges;
  for (const auto& e : j.at("edges")) edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  ScmFamily family;
  family.dag = Dag::from_edges(d, std::move(edges));
  if (j.contains("topo_order")) family.dag.topo_order = j.at("topo_order").get<std::vector<int>>();
  family.A = matrix_from_json(j.at("A"));
  const auto dvec = j.at("D").get<std::vector<double>>();
  family.D = Eigen::Map<const Eigen::VectorXd>(dvec.data(), static_cast<int>(dvec.size()));
  if (j.contains("seed_chain")) {
    const auto& sc = j.at("seed_chain");
    family.seeds = {sc.at("root").get<std::uint64_t>(), sc.at("dag").get<std::uint64_t>(),
                    sc.at("weights").get<std::uint64_t>(), sc.at("interventions").get<std::uint64_t>(),
                    sc.at("data").get<std::uint64_t>()};
  }
  const Eigen::MatrixXd b_obs = family.observational_b();
  for (const auto& je : j.at("environments")) {
    ScmEnvironment env;
    env.B = b_obs;
    env.kind = intervention_kind_from_string(je.at("kind").get<std::string>());
    env.eta = je.at("eta").get<double>();
    if (!je.at("target").is_null()) {
      env.target = je.at("target").get<int>();
      const auto row = je.at("b_row").get<std::vector<double>>();
      env.B.row(env.target) = Eigen::Map<const Eigen::VectorXd>(row.data(), static_cast<int>(row.size())).transpose();
    }
    family.environments.push_back(std::move(env));
  }
  return family;
}

}  // namespace crl
