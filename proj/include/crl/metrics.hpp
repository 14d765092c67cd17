#pragma once

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace crl {

// Pearson correlation; 0 when either column has zero variance.
double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Minimum-cost perfect matching on a square cost matrix (Hungarian method
// with potentials, O(d^3)). Returns perm with perm[row] = col.
std::vector<int> linear_sum_assignment(const Eigen::MatrixXd& cost);

struct MccResult {
  double value = 0.0;
  std::vector<int> permutation;  // matched true column per learned column
};

// Mean correlation coefficient with a split-half protocol: the matching is
// computed on the first half of the rows and the matched |pearson| values
// are averaged on the second half.
MccResult mcc_detailed(const Eigen::MatrixXd& z_true, const Eigen::MatrixXd& z_hat);
double mcc(const Eigen::MatrixXd& z_true, const Eigen::MatrixXd& z_hat);

// Directed-edge set difference; a reversed edge costs 2.
int shd(const std::vector<std::pair<int, int>>& g_true, const std::vector<std::pair<int, int>>& g_hat);

// Midrank AUROC of scores(child, parent) against the adjacency over all
// d(d-1) ordered pairs; nullopt when the truth is degenerate.
std::optional<double> auroc(const Eigen::MatrixXd& scores,
                            const std::vector<std::pair<int, int>>& truth, int d);

// Split-half affine-fit R^2: the map Zhat -> Z is fit by least squares on
// the first half and 1 - SSE/SST is averaged per column on the second half.
// Rank-deficient designs fall back to ridge with lambda = 1e-8.
double r2_score(const Eigen::MatrixXd& z_true, const Eigen::MatrixXd& z_hat);

struct MetricsReport {
  double mcc = 0.0;
  int shd = 0;
  std::optional<double> auroc;
  double r2 = 0.0;
  std::vector<int> permutation;
  std::vector<std::pair<int, int>> selected_edges;
  std::uint64_t seed = 0;
  std::string config_echo;

  nlohmann::json to_json() const;
};

}  // namespace crl
