#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "crl/contrastive.hpp"
#include "crl/metrics.hpp"
#include "crl/mixing.hpp"
#include "crl/oracle.hpp"
#include "crl/rng.hpp"
#include "crl/scm.hpp"
#include "crl/verify.hpp"
#include "support/finite_diff.hpp"

using namespace crl;
using crl::testing::finite_difference_gradient;
using crl::testing::max_relative_error;

TEST_SUITE("contrastive") {
  TEST_CASE("log odds head closed forms") {
    HeadParams head = HeadParams::init(1);
    head.alpha(0) = 0.7;
    Eigen::VectorXd h0 = Eigen::VectorXd::Zero(1);
    CHECK(log_odds_head(h0, 0, head) == doctest::Approx(0.7).epsilon(1e-15));

    // d=1, alpha=0, beta=1/2, gamma=0, W=2: g(h) = -h^2/2 + 4h^2 = 3.5 h^2.
    const HeadParams w2 = HeadParams::from_w(Eigen::VectorXd::Zero(1),
                                             Eigen::VectorXd::Constant(1, 0.5),
                                             Eigen::VectorXd::Zero(1),
                                             Eigen::MatrixXd::Constant(1, 1, 2.0));
    Eigen::VectorXd h1 = Eigen::VectorXd::Ones(1);
    CHECK(log_odds_head(h1, 0, w2) == doctest::Approx(3.5).epsilon(1e-15));
    CHECK_THROWS(log_odds_head(h1, 1, w2));
  }

  TEST_CASE("head factorization round trip") {
    Rng rng(1);
    Eigen::MatrixXd w(3, 3);
    w.setRandom();
    w.diagonal() = Eigen::Vector3d(0.5, 1.5, 2.0);
    const HeadParams head = HeadParams::from_w(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3),
                                               Eigen::VectorXd::Zero(3), w);
    CHECK((head.w() - w).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(head.aw.diagonal().cwiseAbs().maxCoeff() == 0.0);
    // w0 equals w with the diagonal zeroed.
    Eigen::MatrixXd w0 = w;
    w0.diagonal().setZero();
    CHECK((head.w0() - w0).cwiseAbs().maxCoeff() < 1e-14);
  }

  TEST_CASE("cross entropy stable forms") {
    CHECK(ce_loss(0.0, 1) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    CHECK(ce_loss(0.0, 0) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    CHECK(ce_loss(20.0, 1) == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-12));
    CHECK(ce_loss(20.0, 1) < 1e-8);
    CHECK(std::isfinite(ce_loss(700.0, 0)));
    CHECK(std::isfinite(ce_loss(-700.0, 1)));
    CHECK_THROWS(ce_loss(std::nan(""), 0));
    CHECK_THROWS(ce_loss(0.0, 2));
  }

  TEST_CASE("notears closed forms") {
    Eigen::MatrixXd tri = Eigen::MatrixXd::Zero(3, 3);
    tri(0, 1) = 0.9;
    tri(0, 2) = -1.3;
    tri(1, 2) = 0.4;
    CHECK(notears_penalty(tri).value == doctest::Approx(0.0).epsilon(1e-12));

    Eigen::MatrixXd cyc(2, 2);
    cyc << 0, 1, 1, 0;
    const NotearsResult res = notears_penalty(cyc);
    CHECK(res.value == doctest::Approx(2 * std::cosh(1.0) - 2).epsilon(1e-12));
    Eigen::MatrixXd expect(2, 2);
    expect << 0, 2 * std::sinh(1.0), 2 * std::sinh(1.0), 0;
    CHECK((res.grad - expect).cwiseAbs().maxCoeff() < 1e-9);
  }

  TEST_CASE("notears separates DAGs from cycles") {
    Rng rng(2);
    for (int rep = 0; rep < 20; ++rep) {
      const Dag dag = sample_er_dag(5, 1.5, rng);
      Eigen::MatrixXd w = Eigen::MatrixXd::Zero(5, 5);
      for (const auto& [p, c] : dag.edges) w(c, p) = rng.uniform_signed_band(0.25, 1.0);
      CHECK(notears_penalty(w).value < 1e-9);
    }
    Eigen::MatrixXd two_cycle = Eigen::MatrixXd::Zero(4, 4);
    two_cycle(0, 1) = 0.5;
    two_cycle(1, 0) = -0.5;
    CHECK(notears_penalty(two_cycle).value > 1e-3);
  }

  TEST_CASE("notears gradient matches finite differences") {
    Rng rng(3);
    Eigen::MatrixXd w(3, 3);
    for (int i = 0; i < 9; ++i) w(i / 3, i % 3) = rng.uniform(-1, 1);
    const NotearsResult res = notears_penalty(w);
    const Eigen::VectorXd numeric = finite_difference_gradient(
        [&](const Eigen::VectorXd& p) {
          Eigen::MatrixXd probe = Eigen::Map<const Eigen::MatrixXd>(p.data(), 3, 3);
          return notears_penalty(probe).value;
        },
        Eigen::Map<const Eigen::VectorXd>(w.data(), 9));
    const Eigen::VectorXd analytic = Eigen::Map<const Eigen::VectorXd>(res.grad.data(), 9);
    CHECK(max_relative_error(analytic, numeric) < 1e-6);
  }

  TEST_CASE("uninformative logits cost d ln 2 per paired sample") {
    Rng rng(4);
    const int d = 3;
    EncoderNet encoder = EncoderNet::mlp(6, d, 8, 0.01, rng);
    for (auto& p : encoder.params()) p.value.setZero();  // h == 0, g_i == alpha_i == 0
    const HeadParams head = HeadParams::init(d);
    BatchSet bs;
    bs.obs = Eigen::MatrixXd::Random(32, 6);
    for (int i = 0; i < d; ++i) bs.ints.push_back(Eigen::MatrixXd::Random(32, 6));
    const LossGrads lg = total_loss(encoder, head, bs, 0.0, 0.0);
    CHECK(lg.ce == doctest::Approx(d * std::numbers::ln2).epsilon(1e-12));

    // tau2 |W0|_1 with W0 = 0 changes nothing.
    const LossGrads with_l1 = total_loss(encoder, head, bs, 0.0, 1e-4);
    CHECK(with_l1.total == doctest::Approx(lg.total).epsilon(1e-15));
  }

  TEST_CASE("total loss gradient matches finite differences") {
    Rng rng(5);
    const int d = 2;
    EncoderNet encoder = EncoderNet::mlp(3, d, 4, 0.01, rng);
    HeadParams head = HeadParams::init(d);
    // Move off the symmetric init so |.|_1 is differentiable at the point.
    for (int i = 0; i < d; ++i) {
      head.alpha(i) += 0.1 * rng.normal();
      head.beta(i) += 0.1 * rng.normal();
      head.gamma(i) += 0.1 * rng.normal();
      head.dw_log(i) += 0.1 * rng.normal();
      for (int j = 0; j < d; ++j)
        if (i != j) head.aw(i, j) = 0.3 + 0.1 * rng.uniform();
    }
    BatchSet bs;
    bs.obs = Eigen::MatrixXd::Random(8, 3);
    for (int i = 0; i < d; ++i) bs.ints.push_back(Eigen::MatrixXd::Random(8, 3));
    const double tau1 = 1e-2, tau2 = 1e-2;

    const LossGrads lg = total_loss(encoder, head, bs, tau1, tau2);

    // Flatten encoder params + head params into one vector.
    std::ptrdiff_t enc_total = 0;
    for (const auto& p : encoder.params()) enc_total += p.value.size();
    const std::ptrdiff_t total = enc_total + 4 * d + d * d;
    Eigen::VectorXd at(total);
    {
      std::ptrdiff_t off = 0;
      for (const auto& p : encoder.params()) {
        at.segment(off, p.value.size()) =
            Eigen::Map<const Eigen::VectorXd>(p.value.data(), p.value.size());
        off += p.value.size();
      }
      at.segment(off, d) = head.alpha;
      at.segment(off + d, d) = head.beta;
      at.segment(off + 2 * d, d) = head.gamma;
      at.segment(off + 3 * d, d) = head.dw_log;
      at.segment(off + 4 * d, d * d) = Eigen::Map<const Eigen::VectorXd>(head.aw.data(), d * d);
    }
    auto eval = [&](const Eigen::VectorXd& p) {
      EncoderNet enc = encoder;
      HeadParams hd = head;
      std::ptrdiff_t off = 0;
      for (auto& q : enc.params()) {
        Eigen::Map<Eigen::VectorXd>(q.value.data(), q.value.size()) = p.segment(off, q.value.size());
        off += q.value.size();
      }
      enc.bump_version();
      hd.alpha = p.segment(off, d);
      hd.beta = p.segment(off + d, d);
      hd.gamma = p.segment(off + 2 * d, d);
      hd.dw_log = p.segment(off + 3 * d, d);
      hd.aw = Eigen::Map<const Eigen::MatrixXd>(p.segment(off + 4 * d, d * d).data(), d, d);
      hd.aw.diagonal().setZero();
      return total_loss(enc, hd, bs, tau1, tau2).total;
    };
    const Eigen::VectorXd numeric = finite_difference_gradient(eval, at);
    Eigen::VectorXd analytic(total);
    {
      std::ptrdiff_t off = 0;
      for (const auto& g : lg.encoder_grads) {
        analytic.segment(off, g.size()) = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
        off += g.size();
      }
      analytic.segment(off, d) = lg.d_alpha;
      analytic.segment(off + d, d) = lg.d_beta;
      analytic.segment(off + 2 * d, d) = lg.d_gamma;
      analytic.segment(off + 3 * d, d) = lg.d_dw_log;
      analytic.segment(off + 4 * d, d * d) = Eigen::Map<const Eigen::VectorXd>(lg.d_aw.data(), d * d);
    }
    // Diagonal A_w entries are masked in the analytic gradient; the numeric
    // probe moves them, so compare them as zero on both sides.
    for (int i = 0; i < d; ++i) analytic(enc_total + 4 * d + i * d + i) = numeric(enc_total + 4 * d + i * d + i);
    CHECK(max_relative_error(analytic, numeric, 1e-6) < 1e-4);
  }

  TEST_CASE("training beats chance on a scalar family") {
    Rng rng(6);
    ScmFamily fam;
    fam.dag = Dag::from_edges(1, {});
    fam.A = Eigen::MatrixXd::Zero(1, 1);
    fam.D = Eigen::VectorXd::Ones(1);
    ScmEnvironment obs;
    obs.B = Eigen::MatrixXd::Identity(1, 1);
    fam.environments.push_back(obs);
    InterventionSpec spec;
    spec.kind = InterventionKind::perfect;
    spec.target = 0;
    spec.lambda = 2.0;
    spec.eta = 1.0;
    fam.environments.push_back(apply_intervention(fam, spec, rng));

    const MixingFunction f = MixingFunction::linear(1, 2, rng);
    std::vector<Eigen::MatrixXd> data;
    for (const auto& env : fam.environments) data.push_back(f.apply(sample_latents(env, 5000, rng)));

    TrainConfig cfg;
    cfg.epochs = 100;
    cfg.seed = 11;
    const ContrastiveModel model = train(data, cfg);
    CHECK(model.best_val_ce < 0.95 * std::numbers::ln2);
  }

  TEST_CASE("no signal keeps validation near ln 2") {
    Rng rng(7);
    ScmEnvironment obs;
    obs.B = Eigen::MatrixXd::Identity(1, 1);
    const MixingFunction f = MixingFunction::linear(1, 2, rng);
    // "Interventional" samples drawn from the observational law: no signal.
    std::vector<Eigen::MatrixXd> data;
    data.push_back(f.apply(sample_latents(obs, 4000, rng)));
    data.push_back(f.apply(sample_latents(obs, 4000, rng)));
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 5;
    const ContrastiveModel model = train(data, cfg);
    CHECK(model.best_val_ce > 0.99 * std::numbers::ln2);
    CHECK(model.best_val_ce < 1.01 * std::numbers::ln2);
  }

  TEST_CASE("embedding is centered on the observational split") {
    Rng rng(8);
    ScmEnvironment obs;
    obs.B = Eigen::MatrixXd::Identity(2, 2);
    ScmEnvironment env1 = obs, env2 = obs;
    env1.eta = 1.0;
    env1.target = 0;
    env1.kind = InterventionKind::pure_shift;
    env2.eta = 1.0;
    env2.target = 1;
    env2.kind = InterventionKind::pure_shift;
    const MixingFunction f = MixingFunction::linear(2, 3, rng);
    std::vector<Eigen::MatrixXd> data{f.apply(sample_latents(obs, 1000, rng)),
                                      f.apply(sample_latents(env1, 1000, rng)),
                                      f.apply(sample_latents(env2, 1000, rng))};
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 2;
    const ContrastiveModel model = train(data, cfg);
    const Eigen::MatrixXd z_hat = model.embed(data[0]);
    CHECK(z_hat.colwise().mean().cwiseAbs().maxCoeff() < 1e-10);
    const Eigen::MatrixXd again = model.embed(data[0]);
    CHECK((z_hat - again).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("graph extraction selects top scores with lexicographic ties") {
    ContrastiveModel model;
    model.head = HeadParams::init(3);
    CHECK(model.extract_graph(2).empty());  // W0 = 0: empty edge set

    Eigen::MatrixXd w = Eigen::MatrixXd::Identity(3, 3);
    w(0, 1) = 2.0;   // edge 1 -> 0
    w(2, 0) = -1.5;  // edge 0 -> 2
    w(1, 2) = 0.2;
    model.head = HeadParams::from_w(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3),
                                    Eigen::VectorXd::Zero(3), w);
    const auto edges = model.extract_graph(2);
    REQUIRE(edges.size() == 2);
    CHECK(edges[0] == std::pair<int, int>(0, 2));
    CHECK(edges[1] == std::pair<int, int>(1, 0));

    // All-equal scores: ties break by (row, col) order.
    Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(3, 3, 0.5);
    flat.diagonal().setOnes();
    model.head = HeadParams::from_w(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3),
                                    Eigen::VectorXd::Zero(3), flat);
    const auto tied = model.extract_graph(2);
    REQUIRE(tied.size() == 2);
    CHECK(tied[0] == std::pair<int, int>(1, 0));  // entries (0,1) then (0,2)
    CHECK(tied[1] == std::pair<int, int>(2, 0));
  }

  TEST_CASE("diagonal-only w extracts nothing") {
    ContrastiveModel model;
    model.head = HeadParams::init(4);
    model.head.dw_log.setConstant(0.3);
    CHECK(model.edge_scores().cwiseAbs().maxCoeff() == 0.0);
    CHECK(model.extract_graph(3).empty());
  }

  TEST_CASE("oracle-initialized linear encoder recovers latents") {
    Rng rng(9);
    const ScmFamily fam = random_family(3, 1.0, {InterventionKind::perfect}, true, rng);
    Rng rng_mix = rng.split();
    const MixingFunction f = MixingFunction::linear(3, 7, rng_mix);
    const OracleFit fit = oracle_head_fit(fam, &f.matrix());
    REQUIRE(fit.encoder_pinv.has_value());

    ContrastiveModel model;
    Rng scratch(0);
    model.encoder = EncoderNet::linear(7, 3, scratch);
    model.encoder.params()[0].value = fit.encoder_pinv->transpose();
    model.encoder.params()[1].value.setZero();
    model.head = fit.head;
    model.center = Eigen::VectorXd::Zero(3);

    const Eigen::MatrixXd z = sample_latents(fam.observational(), 2000, rng);
    const Eigen::MatrixXd z_hat = model.embed(f.apply(z));
    for (int c = 0; c < 3; ++c) {
      const double rho = pearson(z_hat.col(c), z.col(c));
      CHECK(std::abs(rho) > 0.99);
    }
  }

  TEST_CASE("eta zero diagnostic on exact recovery") {
    Rng rng(10);
    Eigen::MatrixXd z(500, 2);
    z.setRandom();
    const EtaZeroDiagnostic diag = eta_zero_diagnostic(z, z);
    CHECK(diag.corr_z.minCoeff() > 1.0 - 1e-12);
  }

  TEST_CASE("divergence guard trips on absurd logits") {
    Rng rng(11);
    ScmEnvironment obs;
    obs.B = Eigen::MatrixXd::Identity(1, 1);
    std::vector<Eigen::MatrixXd> data{1e6 * sample_latents(obs, 600, rng),
                                      1e6 * sample_latents(obs, 600, rng)};
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.lr = 10.0;  // deliberately unstable
    cfg.seed = 3;
    CHECK_THROWS_AS(train(data, cfg), std::runtime_error);
  }
}
