#pragma once

#include <cstdint>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "crl/rng.hpp"
#include "crl/scm.hpp"

namespace crl {

// Draws a family with an ER graph and one intervention per node. Kinds are
// picked per node from `kinds`; shifts from +-[0.5, 1.5] when with_shifts.
ScmFamily random_family(int d, double k, const std::vector<InterventionKind>& kinds,
                        bool with_shifts, Rng& rng);

struct VerifyCheck {
  std::string name;
  double value = 0.0;      // residual, p-value or statistic, per `metric`
  std::string metric;      // "max_abs_residual", "p_value", ...
  double threshold = 0.0;
  bool pass = false;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;
  bool pass = true;
  void add(const std::string& name, const std::string& metric, double value, double threshold,
           bool ok);
  nlohmann::json to_json() const;
};

struct OracleVerifyConfig {
  int families = 50;
  int points = 1000;
  int d_max = 10;
  int lemma2_families = 100;
  std::uint64_t seed = 1;
  double tol_log_odds = 1e-10;
  double tol_lemma2 = 1e-12;
  double tol_complete_square = 1e-9;
};

// Closed-form log-odds against exact density differences, the rank-2
// precision identity, and the complete-the-squares relation, on random
// families with mixed intervention kinds.
VerifyReport verify_oracle(const OracleVerifyConfig& cfg);

struct CounterexampleVerifyConfig {
  std::uint64_t seed = 1;
  int n_samples = 100000;
  int permutations = 200;
  int test_max_points = 2000;
  double p_threshold = 0.01;
  int shift_draws = 10000;
};

// which: one of {rotation, pair-flow, do-flow, shift, uniform, all}.
VerifyReport verify_counterexamples(const CounterexampleVerifyConfig& cfg, const std::string& which);

}  // namespace crl
