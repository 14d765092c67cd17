#include "crl/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace crl {

#ifndef CRL_GIT_DESCRIBE
#define CRL_GIT_DESCRIBE "unknown"
#endif

std::string git_describe() { return CRL_GIT_DESCRIBE; }

namespace {

std::string mixing_kind_name(MixingKind kind) {
  switch (kind) {
    case MixingKind::linear: return "linear";
    case MixingKind::mlp: return "mlp";
    case MixingKind::image: return "image";
  }
  throw std::logic_error("unknown mixing kind");
}

MixingKind mixing_kind_from_name(const std::string& s) {
  if (s == "linear") return MixingKind::linear;
  if (s == "mlp") return MixingKind::mlp;
  if (s == "image") return MixingKind::image;
  throw std::invalid_argument("unknown mixing kind: " + s);
}

std::string encoder_name(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::linear: return "linear";
    case EncoderKind::mlp: return "mlp";
    case EncoderKind::conv: return "conv";
  }
  throw std::logic_error("unknown encoder kind");
}

EncoderKind encoder_from_name(const std::string& s) {
  if (s == "linear") return EncoderKind::linear;
  if (s == "mlp") return EncoderKind::mlp;
  if (s == "conv") return EncoderKind::conv;
  throw std::invalid_argument("unknown encoder kind: " + s);
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["d"] = d;
  j["d_prime"] = d_prime;
  j["k"] = k;
  j["n"] = n;
  j["mixing"] = mixing_kind_name(mixing);
  j["var_obs"] = {var_obs_lo, var_obs_hi};
  j["var_int"] = {var_int_lo, var_int_hi};
  j["shift"] = {shift_lo, shift_hi};
  j["intervention_kind"] = to_string(kind);
  j["runs"] = runs;
  j["seed"] = seed;
  j["train"] = {{"tau1", train.tau1},     {"tau2", train.tau2},
                {"lr", train.lr},         {"batch", train.batch},
                {"epochs", train.epochs}, {"val_fraction", train.val_fraction},
                {"encoder", encoder_name(train.encoder)},
                {"hidden", train.hidden}, {"encoder_slope", train.encoder_slope}};
  j["image"] = {{"side", image.side}, {"radius", image.radius}};
  j["out_dir"] = out_dir;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  cfg.d = j.value("d", cfg.d);
  cfg.d_prime = j.value("d_prime", cfg.d_prime);
  cfg.k = j.value("k", cfg.k);
  cfg.n = j.value("n", cfg.n);
  if (j.contains("mixing")) cfg.mixing = mixing_kind_from_name(j.at("mixing").get<std::string>());
  auto band = [&j](const char* key, double& lo, double& hi) {
    if (j.contains(key)) {
      lo = j.at(key).at(0).get<double>();
      hi = j.at(key).at(1).get<double>();
    }
  };
  band("var_obs", cfg.var_obs_lo, cfg.var_obs_hi);
  band("var_int", cfg.var_int_lo, cfg.var_int_hi);
  band("shift", cfg.shift_lo, cfg.shift_hi);
  if (j.contains("intervention_kind"))
    cfg.kind = intervention_kind_from_string(j.at("intervention_kind").get<std::string>());
  cfg.runs = j.value("runs", cfg.runs);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("train")) {
    const auto& t = j.at("train");
    cfg.train.tau1 = t.value("tau1", cfg.train.tau1);
    cfg.train.tau2 = t.value("tau2", cfg.train.tau2);
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.batch = t.value("batch", cfg.train.batch);
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.val_fraction = t.value("val_fraction", cfg.train.val_fraction);
    if (t.contains("encoder")) cfg.train.encoder = encoder_from_name(t.at("encoder").get<std::string>());
    cfg.train.hidden = t.value("hidden", cfg.train.hidden);
    cfg.train.encoder_slope = t.value("encoder_slope", cfg.train.encoder_slope);
  }
  if (j.contains("image")) {
    cfg.image.side = j.at("image").value("side", cfg.image.side);
    cfg.image.radius = j.at("image").value("radius", cfg.image.radius);
  }
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  if (cfg.runs < 1) throw std::invalid_argument("ExperimentConfig: runs must be >= 1");
  if (cfg.var_obs_hi < cfg.var_obs_lo || cfg.var_int_hi < cfg.var_int_lo ||
      cfg.shift_hi < cfg.shift_lo)
    throw std::invalid_argument("ExperimentConfig: band upper bound below lower bound");
  return cfg;
}

std::string ExperimentConfig::config_hash() const {
  const std::string dump = to_json().dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

GeneratedData generate_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  Rng root(seed);
  SeedChain seeds;
  seeds.root = seed;
  seeds.dag = root.next_u64();
  seeds.weights = root.next_u64();
  seeds.interventions = root.next_u64();
  const std::uint64_t mix_seed = root.next_u64();
  seeds.data = root.next_u64();
  const std::uint64_t train_seed = root.next_u64();

  GeneratedData gen;
  gen.train_seed = train_seed;

  Rng rng_dag(seeds.dag);
  gen.family.dag = sample_er_dag(cfg.d, cfg.k, rng_dag);
  Rng rng_weights(seeds.weights);
  sample_weights(gen.family.dag, {0.25, 1.0, cfg.var_obs_lo, cfg.var_obs_hi}, rng_weights,
                 gen.family.A, gen.family.D);
  gen.family.seeds = seeds;

  ScmEnvironment obs;
  obs.B = gen.family.observational_b();
  gen.family.environments.push_back(obs);

  Rng rng_int(seeds.interventions);
  for (int t = 0; t < cfg.d; ++t) {
    InterventionSpec spec;
    spec.kind = cfg.kind;
    spec.target = t;
    spec.eta = cfg.shift_hi > 0 ? rng_int.uniform_signed_band(cfg.shift_lo, cfg.shift_hi) : 0.0;
    if (cfg.kind == InterventionKind::perfect)
      spec.lambda = 1.0 / std::sqrt(rng_int.uniform(cfg.var_int_lo, cfg.var_int_hi));
    spec.resample = {0.25, 1.0, cfg.var_int_lo, cfg.var_int_hi};
    gen.family.environments.push_back(apply_intervention(gen.family, spec, rng_int));
  }

  Rng rng_mix(mix_seed);
  switch (cfg.mixing) {
    case MixingKind::linear:
      gen.mixing = std::make_shared<MixingFunction>(MixingFunction::linear(cfg.d, cfg.d_prime, rng_mix));
      break;
    case MixingKind::mlp:
      gen.mixing = std::make_shared<MixingFunction>(MixingFunction::mlp(cfg.d, cfg.d_prime, rng_mix));
      break;
    case MixingKind::image:
      gen.mixing = std::make_shared<MixingFunction>(MixingFunction::image(cfg.d, cfg.image));
      break;
  }

  Rng rng_data(seeds.data);
  const int n_envs = static_cast<int>(gen.family.environments.size());
  if (cfg.mixing != MixingKind::image) {
    std::vector<Eigen::MatrixXd> xs;
    for (int e = 0; e < n_envs; ++e) {
      const Eigen::MatrixXd z = sample_latents(gen.family.environments[e], cfg.n, rng_data);
      if (e == 0) gen.z_obs = z;
      xs.push_back(gen.mixing->apply(z));
    }
    gen.data = std::make_shared<MatrixDataSource>(std::move(xs));
  } else {
    auto source = std::make_shared<ByteImageDataSource>(gen.mixing->output_dim(), n_envs);
    int rejected = 0;
    std::vector<Eigen::VectorXd> z_rows;
    for (int e = 0; e < n_envs; ++e) {
      int accepted = 0;
      while (accepted < cfg.n) {
        const int want = cfg.n - accepted;
        const int try_n = want + want / 4 + 16;
        const Eigen::MatrixXd z = sample_latents(gen.family.environments[e], try_n, rng_data);
        for (int r = 0; r < try_n && accepted < cfg.n; ++r) {
          const auto img = render_balls(z.row(r).transpose(), gen.mixing->image_config());
          if (img) {
            source->append(e, *img);
            if (e == 0) z_rows.push_back(z.row(r).transpose());
            ++accepted;
          } else {
            ++rejected;
          }
        }
      }
    }
    gen.z_obs.resize(static_cast<int>(z_rows.size()), cfg.d);
    for (std::size_t r = 0; r < z_rows.size(); ++r) gen.z_obs.row(static_cast<int>(r)) = z_rows[r].transpose();
    gen.rejected_rows = rejected;
    gen.data = source;
  }
  return gen;
}

void evaluate_model(const ExperimentConfig& cfg, const GeneratedData& gen,
                    const ContrastiveModel& model, RunResult& out) {
  const Eigen::MatrixXd z_hat = embed_all(model, *gen.data, 0);

  try {
    const MccResult mcc_res = mcc_detailed(gen.z_obs, z_hat);
    out.report.mcc = mcc_res.value;
    out.report.permutation = mcc_res.permutation;
  } catch (const std::exception& e) {
    out.report.mcc = std::nan("");
    out.warning += std::string("mcc skipped: ") + e.what() + "; ";
  }
  try {
    out.report.r2 = r2_score(gen.z_obs, z_hat);
  } catch (const std::exception& e) {
    out.report.r2 = std::nan("");
    out.warning += std::string("r2 skipped: ") + e.what() + "; ";
  }
  const int expected_edges = static_cast<int>(std::lround(cfg.k * cfg.d));
  out.report.selected_edges = model.extract_graph(expected_edges);
  out.report.shd = shd(gen.family.dag.edges, out.report.selected_edges);
  out.report.auroc = auroc(model.edge_scores(), gen.family.dag.edges, cfg.d);
  try {
    out.diagnostic = eta_zero_diagnostic(z_hat, gen.z_obs);
  } catch (const std::exception& e) {
    out.warning += std::string("diagnostic skipped: ") + e.what() + "; ";
  }
  if (cfg.n <= 10 * (cfg.d + 1))
    out.warning += "metrics unreliable: n too small relative to d; ";
}

RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed) {
  RunResult out;
  out.seed = seed;
  try {
    const GeneratedData gen = generate_data(cfg, seed);
    TrainConfig tcfg = cfg.train;
    tcfg.seed = gen.train_seed;
    if (cfg.mixing == MixingKind::image) {
      tcfg.encoder = EncoderKind::conv;
      tcfg.image_side = cfg.image.side;
      tcfg.image_channels = 3;
    }
    const ContrastiveModel model = train(*gen.data, tcfg);
    out.curve = model.curve;
    out.best_epoch = model.best_epoch;
    evaluate_model(cfg, gen, model, out);
    out.report.seed = seed;
    out.report.config_echo = cfg.to_json().dump();
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

std::vector<RunResult> run_experiment(const ExperimentConfig& cfg, int threads) {
  std::vector<RunResult> results(cfg.runs);
  const int workers = std::max(1, std::min(threads, cfg.runs));
  if (workers == 1) {
    for (int r = 0; r < cfg.runs; ++r) results[r] = run_single(cfg, cfg.seed + r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const int r = next.fetch_add(1);
          if (r >= cfg.runs) break;
          results[r] = run_single(cfg, cfg.seed + r);
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  return results;
}

Aggregate aggregate(const std::vector<RunResult>& results) {
  Aggregate agg;
  std::vector<double> mcc, shd_v, auc, r2;
  for (const RunResult& r : results) {
    if (!r.ok()) continue;
    ++agg.runs_ok;
    if (std::isfinite(r.report.mcc)) mcc.push_back(r.report.mcc);
    shd_v.push_back(static_cast<double>(r.report.shd));
    if (r.report.auroc) auc.push_back(*r.report.auroc);
    if (std::isfinite(r.report.r2)) r2.push_back(r.report.r2);
  }
  auto mean_se = [](const std::vector<double>& v, double& mean, double& se) {
    if (v.empty()) {
      mean = std::nan("");
      se = std::nan("");
      return;
    }
    mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2) {
      se = 0;
      return;
    }
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    se = std::sqrt(ss / (static_cast<double>(v.size()) - 1.0) / static_cast<double>(v.size()));
  };
  mean_se(mcc, agg.mcc_mean, agg.mcc_se);
  mean_se(shd_v, agg.shd_mean, agg.shd_se);
  mean_se(auc, agg.auroc_mean, agg.auroc_se);
  mean_se(r2, agg.r2_mean, agg.r2_se);
  return agg;
}

std::vector<ReplicateRow> replicate_rows(const std::string& table_id, const std::string& scale,
                                         std::uint64_t seed) {
  if (scale != "full" && scale != "desk") throw std::invalid_argument("replicate: scale must be full or desk");
  const bool desk = scale == "desk";
  std::vector<ReplicateRow> rows;

  auto setting_name = [](int d, double k, int d_prime) {
    std::ostringstream s;
    s << "ER(" << d << ", " << k << "), d'=" << d_prime;
    return s.str();
  };

  if (table_id == "table1") {
    ExperimentConfig base;
    base.d = 5;
    base.d_prime = 10;
    base.k = 1.5;
    base.n = 50000;
    base.mixing = MixingKind::linear;
    base.var_obs_lo = 2, base.var_obs_hi = 4;
    base.var_int_lo = 6, base.var_int_hi = 8;
    base.shift_lo = 0, base.shift_hi = 0;
    base.runs = desk ? 3 : 5;
    base.seed = seed;
    base.train.epochs = 200;
    ExperimentConfig nonlinear = base;
    nonlinear.train.encoder = EncoderKind::mlp;
    rows.push_back({"linear f, d=5, d'=10, k=1.5", "Contrastive", nonlinear});
    ExperimentConfig lin = base;
    lin.train.encoder = EncoderKind::linear;
    rows.push_back({"linear f, d=5, d'=10, k=1.5", "Contrastive Linear", lin});
  } else if (table_id == "table2") {
    const int dims[4][2] = {{5, 20}, {5, 100}, {10, 20}, {10, 100}};
    for (const auto& dd : dims) {
      ExperimentConfig cfg;
      cfg.d = dd[0];
      cfg.d_prime = dd[1];
      cfg.k = 2.0;
      cfg.n = 10000;
      cfg.mixing = MixingKind::mlp;
      cfg.var_obs_lo = 1, cfg.var_obs_hi = 2;
      cfg.var_int_lo = 1, cfg.var_int_hi = 2;
      cfg.shift_lo = 1, cfg.shift_hi = 2;
      cfg.runs = desk ? 3 : 5;
      cfg.seed = seed;
      cfg.train.epochs = desk ? 100 : 200;
      rows.push_back({setting_name(cfg.d, cfg.k, cfg.d_prime), "Contrastive", cfg});
    }
  } else if (table_id == "table3") {
    const double kd[4][2] = {{4, 2}, {4, 4}, {6, 2}, {6, 4}};
    for (const auto& row : kd) {
      ExperimentConfig cfg;
      cfg.d = static_cast<int>(row[0]);
      cfg.k = row[1];
      cfg.d_prime = 64 * 64 * 3;
      cfg.n = desk ? 10000 : 25000;
      cfg.mixing = MixingKind::image;
      cfg.var_obs_lo = 0.01, cfg.var_obs_hi = 0.01;
      cfg.var_int_lo = 0.01, cfg.var_int_hi = 0.02;
      cfg.shift_lo = 0.1, cfg.shift_hi = 0.2;
      cfg.runs = desk ? 2 : 5;
      cfg.seed = seed;
      cfg.train.epochs = desk ? 50 : 100;
      cfg.train.encoder = EncoderKind::conv;
      std::ostringstream s;
      s << "ER(" << cfg.d << ", " << cfg.k << ")";
      rows.push_back({s.str(), "Contrastive", cfg});
    }
  } else {
    throw std::invalid_argument("replicate: unknown table id " + table_id);
  }
  return rows;
}

namespace {

std::string format_pm(double mean, double se) {
  char buf[64];
  if (!std::isfinite(mean)) return "nan";
  std::snprintf(buf, sizeof(buf), "%.4f ± %.4f", mean, se);
  return buf;
}

}  // namespace

std::vector<std::vector<RunResult>> replicate(const std::string& table_id, const std::string& scale,
                                              std::uint64_t seed, const std::string& out_csv,
                                              int threads) {
  const std::vector<ReplicateRow> rows = replicate_rows(table_id, scale, seed);
  std::vector<std::vector<RunResult>> all;
  all.reserve(rows.size());
  for (const ReplicateRow& row : rows) all.push_back(run_experiment(row.cfg, threads));

  std::ostringstream csv;
  csv << "# table=" << table_id << " scale=" << scale << " seed=" << seed << "\n";
  csv << "# git=" << git_describe() << "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    csv << "# row=" << i << " setting=\"" << rows[i].setting << "\" method=\"" << rows[i].method
        << "\" config_hash=" << rows[i].cfg.config_hash() << " seeds=";
    for (int r = 0; r < rows[i].cfg.runs; ++r) csv << (r ? "," : "") << rows[i].cfg.seed + r;
    csv << "\n";
  }
  csv << "Setting,Method,SHD,AUROC,MCC,R2\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Aggregate agg = aggregate(all[i]);
    csv << "\"" << rows[i].setting << "\"," << rows[i].method << "," << format_pm(agg.shd_mean, agg.shd_se)
        << "," << format_pm(agg.auroc_mean, agg.auroc_se) << "," << format_pm(agg.mcc_mean, agg.mcc_se)
        << "," << format_pm(agg.r2_mean, agg.r2_se) << "\n";
  }
  if (!out_csv.empty()) {
    std::ofstream out(out_csv, std::ios::binary);
    if (!out) throw std::runtime_error("replicate: cannot open " + out_csv);
    out << csv.str();
  } else {
    std::fputs(csv.str().c_str(), stdout);
  }
  return all;
}

void sweep_shift(const ExperimentConfig& cfg, const std::vector<double>& etas,
                 const std::string& out_csv, int threads) {
  if (etas.empty()) throw std::invalid_argument("sweep_shift: eta list must be nonempty");
  std::ostringstream csv;
  csv << "# sweep-shift base_config_hash=" << cfg.config_hash() << " git=" << git_describe()
      << " seed=" << cfg.seed << "\n";
  csv << "eta,seed,mcc,shd,auroc,r2,error\n";
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  for (double eta : etas) {
    ExperimentConfig point = cfg;
    point.shift_lo = eta;
    point.shift_hi = eta;
    const std::vector<RunResult> results = run_experiment(point, threads);
    for (const RunResult& r : results) {
      csv << num(eta) << "," << r.seed << ",";
      if (r.ok()) {
        csv << num(r.report.mcc) << "," << r.report.shd << ","
            << (r.report.auroc ? num(*r.report.auroc) : "nan") << "," << num(r.report.r2) << ",";
      } else {
        csv << "nan,nan,nan,nan,\"" << r.error << "\"";
      }
      csv << "\n";
    }
    const Aggregate agg = aggregate(results);
    csv << num(eta) << ",mean," << num(agg.mcc_mean) << "," << num(agg.shd_mean) << ","
        << num(agg.auroc_mean) << "," << num(agg.r2_mean) << ",\n";
  }
  if (!out_csv.empty()) {
    std::ofstream out(out_csv, std::ios::binary);
    if (!out) throw std::runtime_error("sweep_shift: cannot open " + out_csv);
    out << csv.str();
  } else {
    std::fputs(csv.str().c_str(), stdout);
  }
}

nlohmann::json run_result_json(const ExperimentConfig& cfg, const RunResult& result) {
  nlohmann::json j;
  j["seed"] = result.seed;
  j["config"] = cfg.to_json();
  j["config_hash"] = cfg.config_hash();
  j["git"] = git_describe();
  if (!result.ok()) {
    j["error"] = result.error;
    return j;
  }
  j["metrics"] = result.report.to_json();
  if (!result.warning.empty()) j["warning"] = result.warning;
  j["best_epoch"] = result.best_epoch;
  if (result.diagnostic.corr_z.size() > 0) {
    j["eta_zero_diagnostic"] = {
        {"corr_z", std::vector<double>(result.diagnostic.corr_z.data(),
                                       result.diagnostic.corr_z.data() + result.diagnostic.corr_z.size())},
        {"corr_abs_z",
         std::vector<double>(result.diagnostic.corr_abs_z.data(),
                             result.diagnostic.corr_abs_z.data() + result.diagnostic.corr_abs_z.size())}};
  }
  nlohmann::json curve = nlohmann::json::array();
  for (const EpochStats& s : result.curve)
    curve.push_back({{"epoch", s.epoch}, {"train_ce", s.train_ce}, {"val_ce", s.val_ce},
                     {"notears", s.notears}, {"lr", s.lr}});
  j["curve"] = std::move(curve);
  return j;
}

}  // namespace crl
