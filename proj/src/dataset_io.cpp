#include "crl/dataset_io.hpp"

#include <bit>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian; byte swapping is not implemented");

namespace crl {

namespace {

void write_doubles(std::ofstream& out, const double* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
}

void read_doubles(std::ifstream& in, double* data, std::size_t count) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("dataset_io: truncated payload");
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const Eigen::MatrixXd& x, int env_index,
                   std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_dataset: cannot open " + path.string());
  nlohmann::json header = {{"n", x.rows()}, {"dim", x.cols()}, {"dtype", "f64"},
                           {"env_index", env_index}, {"seed", seed}};
  out << header.dump() << "\n";
  std::vector<double> row(x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    for (int c = 0; c < x.cols(); ++c) row[static_cast<std::size_t>(c)] = x(r, c);
    write_doubles(out, row.data(), row.size());
  }
  if (!out) throw std::runtime_error("write_dataset: write failed for " + path.string());
}

Eigen::MatrixXd read_dataset(const std::filesystem::path& path, DatasetHeader* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_dataset: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_dataset: missing header");
  const nlohmann::json j = nlohmann::json::parse(line);
  DatasetHeader h;
  h.n = j.at("n").get<std::int64_t>();
  h.dim = j.at("dim").get<int>();
  h.dtype = j.at("dtype").get<std::string>();
  h.env_index = j.at("env_index").get<int>();
  h.seed = j.at("seed").get<std::uint64_t>();
  if (h.dtype != "f64") throw std::runtime_error("read_dataset: unsupported dtype " + h.dtype);
  if (header) *header = h;

  Eigen::MatrixXd x(h.n, h.dim);
  std::vector<double> row(static_cast<std::size_t>(h.dim));
  for (std::int64_t r = 0; r < h.n; ++r) {
    read_doubles(in, row.data(), row.size());
    for (int c = 0; c < h.dim; ++c) x(r, c) = row[static_cast<std::size_t>(c)];
  }
  return x;
}

namespace {

std::string encoder_kind_name(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::linear: return "linear";
    case EncoderKind::mlp: return "mlp";
    case EncoderKind::conv: return "conv";
  }
  throw std::logic_error("unknown encoder kind");
}

EncoderKind encoder_kind_from_name(const std::string& s) {
  if (s == "linear") return EncoderKind::linear;
  if (s == "mlp") return EncoderKind::mlp;
  if (s == "conv") return EncoderKind::conv;
  throw std::runtime_error("unknown encoder kind: " + s);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ContrastiveModel& model,
                     const TrainConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());

  const int d = model.head.d();
  nlohmann::json manifest;
  manifest["architecture"] = {{"encoder", encoder_kind_name(model.encoder.kind())},
                              {"in_dim", model.encoder.input_dim()},
                              {"out_dim", d},
                              {"hidden", cfg.hidden},
                              {"slope", cfg.encoder_slope},
                              {"image_side", cfg.image_side},
                              {"image_channels", cfg.image_channels}};
  manifest["seed"] = cfg.seed;
  manifest["epoch"] = model.best_epoch;
  nlohmann::json shapes = nlohmann::json::array();
  auto add_shape = [&shapes](const std::string& name, std::int64_t rows, std::int64_t cols) {
    shapes.push_back({name, rows, cols});
  };
  for (const NamedTensor& p : model.encoder.params()) add_shape(p.name, p.value.rows(), p.value.cols());
  add_shape("head.alpha", d, 1);
  add_shape("head.beta", d, 1);
  add_shape("head.gamma", d, 1);
  add_shape("head.dw_log", d, 1);
  add_shape("head.aw", d, d);
  add_shape("center", d, 1);
  manifest["shapes"] = std::move(shapes);
  out << manifest.dump() << "\n";

  auto blob = [&out](const Eigen::MatrixXd& m) {
    write_doubles(out, m.data(), static_cast<std::size_t>(m.size()));
  };
  for (const NamedTensor& p : model.encoder.params()) blob(p.value);
  blob(model.head.alpha);
  blob(model.head.beta);
  blob(model.head.gamma);
  blob(model.head.dw_log);
  blob(model.head.aw);
  blob(model.center);
  if (!out) throw std::runtime_error("save_checkpoint: write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_checkpoint: missing manifest");
  const nlohmann::json manifest = nlohmann::json::parse(line);
  const auto& arch = manifest.at("architecture");

  Checkpoint ck;
  ck.cfg.encoder = encoder_kind_from_name(arch.at("encoder").get<std::string>());
  ck.cfg.hidden = arch.at("hidden").get<int>();
  ck.cfg.encoder_slope = arch.at("slope").get<double>();
  ck.cfg.image_side = arch.at("image_side").get<int>();
  ck.cfg.image_channels = arch.at("image_channels").get<int>();
  ck.cfg.seed = manifest.at("seed").get<std::uint64_t>();
  const int in_dim = arch.at("in_dim").get<int>();
  const int d = arch.at("out_dim").get<int>();

  Rng scratch(0);
  switch (ck.cfg.encoder) {
    case EncoderKind::linear: ck.model.encoder = EncoderNet::linear(in_dim, d, scratch); break;
    case EncoderKind::mlp:
      ck.model.encoder = EncoderNet::mlp(in_dim, d, ck.cfg.hidden, ck.cfg.encoder_slope, scratch);
      break;
    case EncoderKind::conv:
      ck.model.encoder = EncoderNet::conv(ck.cfg.image_side, ck.cfg.image_channels, d,
                                          ck.cfg.encoder_slope, scratch);
      break;
  }
  ck.model.best_epoch = manifest.at("epoch").get<int>();

  auto read_matrix = [&in](Eigen::MatrixXd& m) {
    read_doubles(in, m.data(), static_cast<std::size_t>(m.size()));
  };
  const auto& shapes = manifest.at("shapes");
  std::size_t idx = 0;
  for (NamedTensor& p : ck.model.encoder.params()) {
    const auto& s = shapes.at(idx++);
    if (s.at(0).get<std::string>() != p.name || s.at(1).get<std::int64_t>() != p.value.rows() ||
        s.at(2).get<std::int64_t>() != p.value.cols())
      throw std::runtime_error("load_checkpoint: architecture/shape mismatch");
    read_matrix(p.value);
  }
  ck.model.head = HeadParams::init(d);
  Eigen::MatrixXd tmp(d, 1);
  read_matrix(tmp);
  ck.model.head.alpha = tmp.col(0);
  read_matrix(tmp);
  ck.model.head.beta = tmp.col(0);
  read_matrix(tmp);
  ck.model.head.gamma = tmp.col(0);
  read_matrix(tmp);
  ck.model.head.dw_log = tmp.col(0);
  Eigen::MatrixXd aw(d, d);
  read_matrix(aw);
  ck.model.head.aw = aw;
  read_matrix(tmp);
  ck.model.center = tmp.col(0);
  return ck;
}

}  // namespace crl
