#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crl/rng.hpp"

#include <nlohmann/json_fwd.hpp>

namespace crl {

// Directed acyclic graph on nodes 0..d-1. An edge (i, j) means i -> j,
// i.e. column i feeds row j of the weight matrix A.
struct Dag {
  int d = 0;
  std::vector<std::pair<int, int>> edges;  // (parent, child), sorted
  std::vector<int> topo_order;             // topo_order[k] = node in position k

  bool has_edge(int parent, int child) const;
  std::vector<int> parents(int node) const;
  bool is_source(int node) const { return parents(node).empty(); }

  // Validates acyclicity and derives a consistent topological order.
  static Dag from_edges(int d, std::vector<std::pair<int, int>> edges);
};

enum class InterventionKind { observational, perfect, imperfect, pure_shift };

std::string to_string(InterventionKind kind);
InterventionKind intervention_kind_from_string(const std::string& s);

// One environment of the family: its B matrix, shift magnitude and target.
// The observational environment has target == -1 and eta == 0.
struct ScmEnvironment {
  Eigen::MatrixXd B;
  double eta = 0.0;
  int target = -1;
  InterventionKind kind = InterventionKind::observational;
};

struct SeedChain {
  std::uint64_t root = 0, dag = 0, weights = 0, interventions = 0, data = 0;
};

// Linear Gaussian SCM plus its interventional environments. A holds edge
// weights (A(j, i) != 0 iff i -> j), D the noise variances, and
// B = D^{-1/2}(Id - A) for the observational environment.
struct ScmFamily {
  Dag dag;
  Eigen::MatrixXd A;
  Eigen::VectorXd D;
  std::vector<ScmEnvironment> environments;
  SeedChain seeds;

  int d() const { return dag.d; }
  const ScmEnvironment& observational() const { return environments.at(0); }
  Eigen::MatrixXd observational_b() const;
};

// Exact second-order description of one environment: Theta = B^T B,
// Sigma = Theta^{-1}, mu = eta * B^{-1} e_target.
struct GaussianStats {
  Eigen::MatrixXd theta;
  Eigen::MatrixXd sigma;
  Eigen::VectorXd mu;
  double logdet_sigma = 0.0;
};

// Erdos-Renyi DAG: each unordered pair is kept with probability
// p = k*d / (d(d-1)/2), clamped to [0,1], and oriented along a uniformly
// random node order.
Dag sample_er_dag(int d, double k, Rng& rng);

struct WeightConfig {
  double weight_lo = 0.25, weight_hi = 1.0;  // |A_ji| band, sign uniform
  double var_lo = 1.0, var_hi = 2.0;         // noise variance band
};

void sample_weights(const Dag& dag, const WeightConfig& cfg, Rng& rng,
                    Eigen::MatrixXd& A, Eigen::VectorXd& D);

struct InterventionSpec {
  InterventionKind kind = InterventionKind::perfect;
  int target = 0;
  double eta = 0.0;
  double lambda = 0.0;                  // perfect: new row is lambda * e_target
  std::optional<Eigen::VectorXd> row;   // imperfect: explicit new row of B
  WeightConfig resample;                // imperfect default: resample row
};

// Returns the environment obtained by replacing row `target` of B. Rejects
// lambda <= 0, imperfect rows that add parents, and trivial interventions
// (unchanged B with eta == 0).
ScmEnvironment apply_intervention(const ScmFamily& family, const InterventionSpec& spec, Rng& rng);

// n x d matrix of i.i.d. draws Z = B^{-1}(eps + eta * e_target), eps ~ N(0, Id).
Eigen::MatrixXd sample_latents(const ScmEnvironment& env, int n, Rng& rng);

GaussianStats gaussian_stats(const ScmEnvironment& env);

struct PrecisionDifference {
  Eigen::MatrixXd delta;    // Theta_i - Theta_0
  Eigen::VectorXd s;        // row `target` of the observational B
  Eigen::VectorXd s_tilde;  // row `target` of the interventional B
};

PrecisionDifference precision_difference(const ScmEnvironment& env_i, const ScmEnvironment& env_0);

// JSON form per docs/schemas/family.schema.json.
nlohmann::json family_to_json(const ScmFamily& family);
ScmFamily family_from_json(const nlohmann::json& j);

}  // namespace crl
