#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>

#include "crl/contrastive.hpp"

namespace crl {

struct DatasetHeader {
  std::int64_t n = 0;
  int dim = 0;
  std::string dtype = "f64";
  int env_index = 0;
  std::uint64_t seed = 0;
};

// One JSON header line followed by raw little-endian float64 values,
// row-major.
void write_dataset(const std::filesystem::path& path, const Eigen::MatrixXd& x, int env_index,
                   std::uint64_t seed);
Eigen::MatrixXd read_dataset(const std::filesystem::path& path, DatasetHeader* header = nullptr);

// Checkpoint: JSON manifest line (architecture, tensor shapes, seed, epoch)
// followed by the concatenated float64 parameter blob, little-endian.
void save_checkpoint(const std::filesystem::path& path, const ContrastiveModel& model,
                     const TrainConfig& cfg);

struct Checkpoint {
  ContrastiveModel model;
  TrainConfig cfg;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace crl
