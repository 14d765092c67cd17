#include <CLI11.hpp>
#include <Eigen/Dense>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "crl/dataset_io.hpp"
#include "crl/harness.hpp"
#include "crl/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

crl::ExperimentConfig load_config(const std::string& path, std::uint64_t seed_override,
                                  bool has_seed) {
  crl::ExperimentConfig cfg =
      path.empty() ? crl::ExperimentConfig{} : crl::ExperimentConfig::from_json(load_json_file(path));
  if (has_seed) cfg.seed = seed_override;
  return cfg;
}

void write_dataset_source(const fs::path& path, const crl::DataSource& source, int env,
                          std::uint64_t seed) {
  crl::write_dataset(path, source.all(env), env, seed);
}

int cmd_generate(const std::string& config_path, const std::string& out_dir,
                 std::uint64_t seed_override, bool has_seed) {
  const crl::ExperimentConfig cfg = load_config(config_path, seed_override, has_seed);
  fs::create_directories(out_dir);
  const crl::GeneratedData gen = crl::generate_data(cfg, cfg.seed);

  json family = crl::family_to_json(gen.family);
  family["config"] = cfg.to_json();
  family["config_hash"] = cfg.config_hash();
  family["git"] = crl::git_describe();
  std::ofstream fam(fs::path(out_dir) / "family.json");
  fam << family.dump(2) << "\n";

  for (int e = 0; e < gen.data->env_count(); ++e) {
    std::ostringstream name;
    name << "data_env" << e << ".bin";
    write_dataset_source(fs::path(out_dir) / name.str(), *gen.data, e, cfg.seed);
  }
  crl::write_dataset(fs::path(out_dir) / "latents_obs.bin", gen.z_obs, 0, cfg.seed);
  std::printf("generated %d environments (n=%d, rejected=%d) in %s\n", gen.data->env_count(),
              cfg.n, gen.rejected_rows, out_dir.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, std::uint64_t seed_override, bool has_seed) {
  const crl::ExperimentConfig cfg = load_config(config_path, seed_override, has_seed);
  fs::create_directories(out_dir);

  const json family_json = load_json_file((fs::path(data_dir) / "family.json").string());
  const int d = family_json.at("d").get<int>();
  std::vector<Eigen::MatrixXd> envs;
  for (int e = 0; e <= d; ++e) {
    std::ostringstream name;
    name << "data_env" << e << ".bin";
    envs.push_back(crl::read_dataset(fs::path(data_dir) / name.str()));
  }

  crl::TrainConfig tcfg = cfg.train;
  tcfg.seed = cfg.seed;
  if (cfg.mixing == crl::MixingKind::image) {
    tcfg.encoder = crl::EncoderKind::conv;
    tcfg.image_side = cfg.image.side;
  }
  const crl::ContrastiveModel model = crl::train(envs, tcfg);

  crl::save_checkpoint(fs::path(out_dir) / "checkpoint.ckpt", model, tcfg);
  std::ofstream csv(fs::path(out_dir) / "curves.csv");
  csv << "# config_hash=" << cfg.config_hash() << " git=" << crl::git_describe()
      << " seed=" << cfg.seed << "\n";
  csv << "epoch,train_ce,val_ce,notears,lr\n";
  char buf[64];
  for (const crl::EpochStats& s : model.curve) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g\n", s.epoch, s.train_ce, s.val_ce,
                  s.notears, s.lr);
    csv << buf;
  }
  std::printf("trained %d epochs (best=%d, val_ce=%.6f); checkpoint in %s\n",
              static_cast<int>(model.curve.size()), model.best_epoch, model.best_val_ce,
              out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& model_path,
             const std::string& out_dir) {
  const json family_json = load_json_file((fs::path(data_dir) / "family.json").string());
  const crl::ScmFamily family = crl::family_from_json(family_json);
  const crl::ExperimentConfig cfg = crl::ExperimentConfig::from_json(family_json.at("config"));

  const crl::Checkpoint ck = crl::load_checkpoint(model_path);
  std::vector<Eigen::MatrixXd> envs;
  for (int e = 0; e <= family.d(); ++e) {
    std::ostringstream name;
    name << "data_env" << e << ".bin";
    envs.push_back(crl::read_dataset(fs::path(data_dir) / name.str()));
  }
  crl::GeneratedData gen;
  gen.family = family;
  gen.data = std::make_shared<crl::MatrixDataSource>(envs);
  gen.z_obs = crl::read_dataset(fs::path(data_dir) / "latents_obs.bin");

  crl::RunResult result;
  result.seed = cfg.seed;
  crl::evaluate_model(cfg, gen, ck.model, result);
  result.report.seed = cfg.seed;
  result.report.config_echo = cfg.to_json().dump();

  fs::create_directories(out_dir);
  std::ofstream rep(fs::path(out_dir) / "report.json");
  rep << crl::run_result_json(cfg, result).dump(2) << "\n";
  std::ofstream csv(fs::path(out_dir) / "report.csv");
  csv << "Setting,Method,Seed,SHD,AUROC,MCC,R2\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "\"d=%d d'=%d k=%g\",%s,%llu,%d,%.4f,%.4f,%.4f\n", cfg.d,
                cfg.d_prime, cfg.k, cfg.train.encoder == crl::EncoderKind::linear ? "Contrastive Linear"
                                                                                  : "Contrastive",
                static_cast<unsigned long long>(cfg.seed), result.report.shd,
                result.report.auroc.value_or(std::nan("")), result.report.mcc, result.report.r2);
  csv << buf;
  std::printf("eval: mcc=%.4f shd=%d auroc=%.4f r2=%.4f\n", result.report.mcc, result.report.shd,
              result.report.auroc.value_or(std::nan("")), result.report.r2);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive causal representation learning on linear Gaussian SCMs"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_dir, model_path, table_id, scale = "desk", which = "all",
              etas_arg;
  std::uint64_t seed = 0;
  int threads = 1;

  auto* gen = app.add_subcommand("generate", "Sample a family and write per-environment datasets");
  gen->add_option("--config", config_path, "experiment config JSON");
  gen->add_option("--out", out_path, "output directory")->required();
  auto* gen_seed = gen->add_option("--seed", seed, "seed override");

  auto* tr = app.add_subcommand("train", "Train the contrastive model on generated datasets");
  tr->add_option("--config", config_path, "experiment config JSON");
  tr->add_option("--data", data_dir, "directory from `generate`")->required();
  tr->add_option("--out", out_path, "output directory")->required();
  auto* tr_seed = tr->add_option("--seed", seed, "seed override");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint against ground truth");
  ev->add_option("--data", data_dir, "directory from `generate`")->required();
  ev->add_option("--model", model_path, "checkpoint file")->required();
  ev->add_option("--out", out_path, "output directory")->required();

  auto* rep = app.add_subcommand("replicate", "Reproduce a results table");
  rep->add_option("table", table_id, "table1 | table2 | table3")->required();
  rep->add_option("--scale", scale, "full | desk");
  rep->add_option("--seed", seed, "base seed")->default_val(1);
  rep->add_option("--out", out_path, "output CSV (stdout if omitted)");
  rep->add_option("--threads", threads, "parallel runs");

  auto* sw = app.add_subcommand("sweep-shift", "Metric curves against the shift magnitude");
  sw->add_option("--config", config_path, "experiment config JSON");
  sw->add_option("--etas", etas_arg, "comma-separated shift magnitudes")->required();
  sw->add_option("--out", out_path, "output CSV (stdout if omitted)");
  sw->add_option("--threads", threads, "parallel runs");
  auto* sw_seed = sw->add_option("--seed", seed, "seed override");

  auto* vo = app.add_subcommand("verify-oracle", "Check closed-form identities on random families");
  vo->add_option("--config", config_path, "verification config JSON");
  auto* vo_seed = vo->add_option("--seed", seed, "seed override");

  auto* vc = app.add_subcommand("verify-counterexamples", "Certify the non-identifiability maps");
  vc->add_option("--which", which, "rotation | pair-flow | do-flow | shift | uniform | all");
  auto* vc_seed = vc->add_option("--seed", seed, "seed override");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(config_path, out_path, seed, gen_seed->count() > 0);
    if (tr->parsed()) return cmd_train(config_path, data_dir, out_path, seed, tr_seed->count() > 0);
    if (ev->parsed()) return cmd_eval(data_dir, model_path, out_path);
    if (rep->parsed()) {
      crl::replicate(table_id, scale, seed, out_path, threads);
      return 0;
    }
    if (sw->parsed()) {
      crl::ExperimentConfig cfg = load_config(config_path, seed, sw_seed->count() > 0);
      std::vector<double> etas;
      std::stringstream ss(etas_arg);
      std::string tok;
      while (std::getline(ss, tok, ',')) etas.push_back(std::stod(tok));
      crl::sweep_shift(cfg, etas, out_path, threads);
      return 0;
    }
    if (vo->parsed()) {
      crl::OracleVerifyConfig cfg;
      if (!config_path.empty()) {
        const json j = load_json_file(config_path);
        cfg.families = j.value("families", cfg.families);
        cfg.points = j.value("points", cfg.points);
        cfg.d_max = j.value("d_max", cfg.d_max);
        cfg.lemma2_families = j.value("lemma2_families", cfg.lemma2_families);
        cfg.seed = j.value("seed", cfg.seed);
      }
      if (vo_seed->count() > 0) cfg.seed = seed;
      const crl::VerifyReport report = crl::verify_oracle(cfg);
      std::cout << report.to_json().dump(2) << "\n";
      return report.pass ? 0 : 2;
    }
    if (vc->parsed()) {
      crl::CounterexampleVerifyConfig cfg;
      if (vc_seed->count() > 0) cfg.seed = seed;
      const crl::VerifyReport report = crl::verify_counterexamples(cfg, which);
      std::cout << report.to_json().dump(2) << "\n";
      return report.pass ? 0 : 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
