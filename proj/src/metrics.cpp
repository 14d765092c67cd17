#include "crl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace crl {

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: size mismatch");
  const Eigen::VectorXd ac = a.array() - a.mean();
  const Eigen::VectorXd bc = b.array() - b.mean();
  const double va = ac.squaredNorm(), vb = bc.squaredNorm();
  if (va <= 0 || vb <= 0) return 0.0;
  return ac.dot(bc) / std::sqrt(va * vb);
}

std::vector<int> linear_sum_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw std::invalid_argument("linear_sum_assignment: non-square input");
  if (!cost.allFinite()) throw std::invalid_argument("linear_sum_assignment: non-finite costs");
  if (n == 0) return {};

  // Hungarian method with potentials, shortest augmenting paths.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> perm(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) perm[p[j] - 1] = j - 1;
  return perm;
}

MccResult mcc_detailed(const Eigen::MatrixXd& z_true, const Eigen::MatrixXd& z_hat) {
  if (z_true.rows() != z_hat.rows() || z_true.cols() != z_hat.cols())
    throw std::invalid_argument("mcc: shape mismatch");
  const int n = static_cast<int>(z_true.rows());
  if (n < 4) throw std::invalid_argument("mcc: need at least 4 rows");
  if (!z_true.allFinite() || !z_hat.allFinite()) throw std::invalid_argument("mcc: non-finite input");
  const int d = static_cast<int>(z_true.cols());
  const int half = n / 2;

  Eigen::MatrixXd abs_corr(d, d);
  for (int l = 0; l < d; ++l)
    for (int t = 0; t < d; ++t)
      abs_corr(l, t) = std::abs(pearson(z_hat.col(l).head(half), z_true.col(t).head(half)));

  MccResult res;
  res.permutation = linear_sum_assignment(-abs_corr);
  double acc = 0.0;
  for (int l = 0; l < d; ++l) {
    acc += std::abs(pearson(z_hat.col(l).tail(n - half), z_true.col(res.permutation[l]).tail(n - half)));
  }
  res.value = acc / d;
  return res;
}

double mcc(const Eigen::MatrixXd& z_true, const Eigen::MatrixXd& z_hat) {
  return mcc_detailed(z_true, z_hat).value;
}

int shd(const std::vector<std::pair<int, int>>& g_true, const std::vector<std::pair<int, int>>& g_hat) {
  std::vector<std::pair<int, int>> a = g_true, b = g_hat;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::pair<int, int>> diff;
  std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(diff));
  return static_cast<int>(diff.size());
}

std::optional<double> auroc(const Eigen::MatrixXd& scores,
                            const std::vector<std::pair<int, int>>& truth, int d) {
  if (scores.rows() != d || scores.cols() != d)
    throw std::invalid_argument("auroc: score matrix must be d x d");
  std::vector<std::pair<int, int>> pos = truth;
  std::sort(pos.begin(), pos.end());

  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  for (int parent = 0; parent < d; ++parent) {
    for (int child = 0; child < d; ++child) {
      if (parent == child) continue;
      const bool is_edge = std::binary_search(pos.begin(), pos.end(), std::make_pair(parent, child));
      items.push_back({scores(child, parent), is_edge});
    }
  }
  const std::ptrdiff_t n_pos = std::count_if(items.begin(), items.end(), [](const Item& it) {
    return it.positive;
  });
  const std::ptrdiff_t n_neg = static_cast<std::ptrdiff_t>(items.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    while (j < items.size() && items[j].score == items[i].score) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));  // 1-based
    for (std::size_t k = i; k < j; ++k)
      if (items[k].positive) rank_sum_pos += midrank;
    i = j;
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double r2_score(const Eigen::MatrixXd& z_true, const Eigen::MatrixXd& z_hat) {
  if (z_true.rows() != z_hat.rows()) throw std::invalid_argument("r2_score: row mismatch");
  const int n = static_cast<int>(z_true.rows());
  const int d_hat = static_cast<int>(z_hat.cols());
  if (n <= d_hat + 1) throw std::invalid_argument("r2_score: need n > d");
  const int half = n / 2;

  auto design = [&](int start, int count) {
    Eigen::MatrixXd x(count, d_hat + 1);
    x.leftCols(d_hat) = z_hat.middleRows(start, count);
    x.col(d_hat).setOnes();
    return x;
  };
  const Eigen::MatrixXd x_fit = design(0, half);
  const Eigen::MatrixXd y_fit = z_true.topRows(half);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x_fit);
  Eigen::MatrixXd coef;
  if (qr.rank() < d_hat + 1) {
    const Eigen::MatrixXd gram =
        x_fit.transpose() * x_fit + 1e-8 * Eigen::MatrixXd::Identity(d_hat + 1, d_hat + 1);
    coef = gram.ldlt().solve(x_fit.transpose() * y_fit);
  } else {
    coef = qr.solve(y_fit);
  }

  const Eigen::MatrixXd x_eval = design(half, n - half);
  const Eigen::MatrixXd y_eval = z_true.bottomRows(n - half);
  const Eigen::MatrixXd pred = x_eval * coef;

  double acc = 0.0;
  const int d_true = static_cast<int>(z_true.cols());
  for (int j = 0; j < d_true; ++j) {
    const double sse = (pred.col(j) - y_eval.col(j)).squaredNorm();
    const Eigen::VectorXd centered = y_eval.col(j).array() - y_eval.col(j).mean();
    const double sst = centered.squaredNorm();
    acc += sst > 0 ? 1.0 - sse / sst : (sse <= 0 ? 1.0 : 0.0);
  }
  return acc / d_true;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["mcc"] = mcc;
  j["shd"] = shd;
  if (auroc)
    j["auroc"] = *auroc;
  else
    j["auroc"] = nullptr;
  j["r2"] = r2;
  j["permutation"] = permutation;
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [p, c] : selected_edges) edges.push_back({p, c});
  j["selected_edges"] = std::move(edges);
  j["seed"] = seed;
  if (!config_echo.empty()) j["config"] = nlohmann::json::parse(config_echo);
  return j;
}

}  // namespace crl
