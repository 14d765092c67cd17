#pragma once

#include <Eigen/Dense>
#include <memory>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "crl/contrastive.hpp"
#include "crl/metrics.hpp"
#include "crl/mixing.hpp"
#include "crl/scm.hpp"

namespace crl {

std::string git_describe();

struct ExperimentConfig {
  int d = 5;
  int d_prime = 20;
  double k = 2.0;
  int n = 10000;
  MixingKind mixing = MixingKind::mlp;
  double var_obs_lo = 1.0, var_obs_hi = 2.0;
  double var_int_lo = 1.0, var_int_hi = 2.0;
  double shift_lo = 1.0, shift_hi = 2.0;  // magnitudes, sign uniform; 0/0 disables
  InterventionKind kind = InterventionKind::perfect;
  int runs = 5;
  std::uint64_t seed = 1;
  TrainConfig train;
  ImageConfig image;
  std::string out_dir;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  std::string config_hash() const;  // FNV-1a over the canonical dump
};

// Family + mixing + per-environment data for one seed.
struct GeneratedData {
  ScmFamily family;
  std::shared_ptr<MixingFunction> mixing;
  std::shared_ptr<DataSource> data;
  Eigen::MatrixXd z_obs;  // ground-truth latents of the observational rows
  std::uint64_t train_seed = 0;
  int rejected_rows = 0;  // image variant only
};

GeneratedData generate_data(const ExperimentConfig& cfg, std::uint64_t seed);

struct RunResult {
  std::uint64_t seed = 0;
  MetricsReport report;
  EtaZeroDiagnostic diagnostic;
  std::vector<EpochStats> curve;
  int best_epoch = -1;
  std::string error;    // non-empty when the run failed
  std::string warning;  // e.g. degenerate sample sizes
  bool ok() const { return error.empty(); }
};

RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed);

// One pipeline per seed (cfg.seed + r for r < runs); failures are recorded
// per seed and the remaining seeds still run.
std::vector<RunResult> run_experiment(const ExperimentConfig& cfg, int threads = 1);

struct Aggregate {
  double mcc_mean = 0, mcc_se = 0;
  double shd_mean = 0, shd_se = 0;
  double auroc_mean = 0, auroc_se = 0;
  double r2_mean = 0, r2_se = 0;
  int runs_ok = 0;
};
Aggregate aggregate(const std::vector<RunResult>& results);

void evaluate_model(const ExperimentConfig& cfg, const GeneratedData& gen,
                    const ContrastiveModel& model, RunResult& out);

struct ReplicateRow {
  std::string setting, method;
  ExperimentConfig cfg;
};
std::vector<ReplicateRow> replicate_rows(const std::string& table_id, const std::string& scale,
                                         std::uint64_t seed);
// Writes the table CSV (mean +- standard error per metric, one row per
// setting/method) and returns the per-row results.
std::vector<std::vector<RunResult>> replicate(const std::string& table_id, const std::string& scale,
                                              std::uint64_t seed, const std::string& out_csv,
                                              int threads = 1);

// One run_experiment per eta value; CSV rows carry the eta they belong to.
void sweep_shift(const ExperimentConfig& cfg, const std::vector<double>& etas,
                 const std::string& out_csv, int threads = 1);

nlohmann::json run_result_json(const ExperimentConfig& cfg, const RunResult& result);

}  // namespace crl
