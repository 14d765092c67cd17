#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <nlohmann/json.hpp>

#include "crl/rng.hpp"
#include "crl/scm.hpp"
#include "crl/verify.hpp"

using namespace crl;

namespace {

// Two-node chain 0 -> 1 with weight a and unit noise: B = [[1,0],[-a,1]].
ScmFamily chain_family(double a) {
  ScmFamily fam;
  fam.dag = Dag::from_edges(2, {{0, 1}});
  fam.A = Eigen::MatrixXd::Zero(2, 2);
  fam.A(1, 0) = a;
  fam.D = Eigen::VectorXd::Ones(2);
  ScmEnvironment obs;
  obs.B = fam.observational_b();
  fam.environments.push_back(obs);
  return fam;
}

ScmFamily identity_family(int d) {
  ScmFamily fam;
  fam.dag = Dag::from_edges(d, {});
  fam.A = Eigen::MatrixXd::Zero(d, d);
  fam.D = Eigen::VectorXd::Ones(d);
  ScmEnvironment obs;
  obs.B = Eigen::MatrixXd::Identity(d, d);
  fam.environments.push_back(obs);
  return fam;
}

}  // namespace

TEST_SUITE("scm") {
  TEST_CASE("er dag trivial densities") {
    Rng rng(7);
    CHECK(sample_er_dag(5, 0.0, rng).edges.empty());
    Rng rng2(1);
    const Dag complete = sample_er_dag(3, 3.0, rng2);  // p clamps to 1
    CHECK(complete.edges.size() == 3);
    CHECK_THROWS(sample_er_dag(0, 1.0, rng));
  }

  TEST_CASE("er dag expected edge count") {
    // Oracle: p * (number of pairs) = (kd / C(d,2)) * C(d,2) = kd = 20.
    Rng rng(11);
    double total = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) total += static_cast<double>(sample_er_dag(10, 2.0, rng).edges.size());
    CHECK(std::abs(total / draws - 20.0) < 0.5);
  }

  TEST_CASE("er dag edges follow the node order") {
    Rng rng(13);
    for (int rep = 0; rep < 50; ++rep) {
      const Dag dag = sample_er_dag(8, 1.5, rng);
      std::vector<int> pos(dag.d);
      for (int i = 0; i < dag.d; ++i) pos[dag.topo_order[i]] = i;
      for (const auto& [p, c] : dag.edges) CHECK(pos[p] < pos[c]);
    }
  }

  TEST_CASE("sample_weights ranges and mean magnitude") {
    Rng rng(3);
    const Dag empty = sample_er_dag(4, 0.0, rng);
    Eigen::MatrixXd a;
    Eigen::VectorXd d;
    sample_weights(empty, {0.25, 1.0, 1.5, 2.5}, rng, a, d);
    CHECK(a.cwiseAbs().maxCoeff() == 0.0);
    for (int j = 0; j < 4; ++j) {
      CHECK(d(j) >= 1.5);
      CHECK(d(j) <= 2.5);
    }

    // Oracle: mean |w| for w ~ U(+-[0.25, 1]) is (0.25 + 1) / 2 = 0.625.
    Rng rng2(4);
    Dag pair = Dag::from_edges(2, {{0, 1}});
    double acc = 0;
    const int reps = 10000;
    for (int i = 0; i < reps; ++i) {
      sample_weights(pair, {0.25, 1.0, 1.0, 1.0}, rng2, a, d);
      const double w = std::abs(a(1, 0));
      CHECK(w >= 0.25);
      CHECK(w <= 1.0);
      acc += w;
    }
    CHECK(std::abs(acc / reps - 0.625) < 0.01);
  }

  TEST_CASE("chain B matrix matches the definition") {
    const ScmFamily fam = chain_family(0.7);
    Eigen::MatrixXd expect(2, 2);
    expect << 1, 0, -0.7, 1;
    CHECK((fam.observational().B - expect).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("perfect intervention replaces the row") {
    Rng rng(1);
    ScmFamily fam = identity_family(2);
    InterventionSpec spec;
    spec.kind = InterventionKind::perfect;
    spec.target = 1;
    spec.lambda = 2.0;
    const ScmEnvironment env = apply_intervention(fam, spec, rng);
    Eigen::MatrixXd expect(2, 2);
    expect << 1, 0, 0, 2;
    CHECK((env.B - expect).cwiseAbs().maxCoeff() == 0.0);

    ScmFamily chain = chain_family(0.4);
    spec.lambda = 1.7;
    const ScmEnvironment env2 = apply_intervention(chain, spec, rng);
    CHECK(env2.B(1, 0) == 0.0);
    CHECK(env2.B(1, 1) == 1.7);
    CHECK(env2.B.row(0) == chain.observational().B.row(0));
  }

  TEST_CASE("pure shift keeps B and moves the mean") {
    Rng rng(1);
    ScmFamily chain = chain_family(0.4);
    InterventionSpec spec;
    spec.kind = InterventionKind::pure_shift;
    spec.target = 1;
    spec.eta = 1.5;
    const ScmEnvironment env = apply_intervention(chain, spec, rng);
    CHECK((env.B - chain.observational().B).cwiseAbs().maxCoeff() == 0.0);
    const GaussianStats st = gaussian_stats(env);
    const Eigen::VectorXd expect = 1.5 * chain.observational().B.inverse().col(1);
    CHECK((st.mu - expect).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("intervention error paths") {
    Rng rng(1);
    ScmFamily chain = chain_family(0.4);
    InterventionSpec bad;
    bad.kind = InterventionKind::perfect;
    bad.target = 0;
    bad.lambda = -1.0;
    CHECK_THROWS(apply_intervention(chain, bad, rng));

    InterventionSpec add_parent;
    add_parent.kind = InterventionKind::imperfect;
    add_parent.target = 0;  // node 0 has no parents
    Eigen::VectorXd row(2);
    row << 1.0, 0.5;  // entry on non-parent node 1
    add_parent.row = row;
    CHECK_THROWS(apply_intervention(chain, add_parent, rng));

    InterventionSpec trivial;
    trivial.kind = InterventionKind::imperfect;
    trivial.target = 1;
    trivial.eta = 0.0;
    trivial.row = Eigen::VectorXd(chain.observational().B.row(1).transpose());
    CHECK_THROWS(apply_intervention(chain, trivial, rng));

    InterventionSpec shift_zero;
    shift_zero.kind = InterventionKind::pure_shift;
    shift_zero.target = 1;
    shift_zero.eta = 0.0;
    CHECK_THROWS(apply_intervention(chain, shift_zero, rng));
  }

  TEST_CASE("latent sampling moments") {
    Rng rng(5);
    const ScmFamily fam = identity_family(2);
    const Eigen::MatrixXd z = sample_latents(fam.observational(), 100000, rng);
    CHECK(z.colwise().mean().cwiseAbs().maxCoeff() < 0.02);
    const Eigen::MatrixXd centered = z.rowwise() - z.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / (z.rows() - 1.0);
    CHECK((cov - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 0.05);
  }

  TEST_CASE("latent variance follows Sigma") {
    // Sigma = (B^T B)^{-1}; for B = diag(1, 2) the second variance is 1/4.
    Rng rng(6);
    ScmEnvironment env;
    env.B = Eigen::Vector2d(1, 2).asDiagonal();
    const Eigen::MatrixXd z = sample_latents(env, 100000, rng);
    const Eigen::VectorXd col = z.col(1);
    const double var = (col.array() - col.mean()).square().sum() / (col.size() - 1.0);
    CHECK(std::abs(var - 0.25) < 0.01);
  }

  TEST_CASE("latent shift moves the mean") {
    Rng rng(7);
    ScmEnvironment env;
    env.B = Eigen::MatrixXd::Identity(2, 2);
    env.eta = 3.0;
    env.target = 0;
    env.kind = InterventionKind::pure_shift;
    const Eigen::MatrixXd z = sample_latents(env, 100000, rng);
    CHECK(std::abs(z.col(0).mean() - 3.0) < 0.02);
    CHECK(std::abs(z.col(1).mean()) < 0.02);
  }

  TEST_CASE("gaussian_stats closed forms") {
    const ScmFamily id2 = identity_family(2);
    const GaussianStats st = gaussian_stats(id2.observational());
    CHECK((st.theta - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((st.sigma - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(st.mu.cwiseAbs().maxCoeff() == 0.0);
    CHECK(st.logdet_sigma == 0.0);

    const double a = 0.8;
    const ScmFamily chain = chain_family(a);
    const GaussianStats st2 = gaussian_stats(chain.observational());
    Eigen::MatrixXd theta(2, 2);
    theta << 1 + a * a, -a, -a, 1;
    CHECK((st2.theta - theta).cwiseAbs().maxCoeff() < 1e-14);

    ScmEnvironment env;
    env.B = Eigen::Vector2d(1, 2).asDiagonal();
    env.eta = 4.0;
    env.target = 1;
    env.kind = InterventionKind::perfect;
    const GaussianStats st3 = gaussian_stats(env);
    CHECK(std::abs(st3.mu(0)) < 1e-15);
    CHECK(std::abs(st3.mu(1) - 2.0) < 1e-15);

    ScmEnvironment singular;
    singular.B = Eigen::MatrixXd::Zero(2, 2);
    CHECK_THROWS(gaussian_stats(singular));
  }

  TEST_CASE("sigma theta inverse pair") {
    Rng rng(8);
    const std::vector<InterventionKind> kinds{InterventionKind::perfect, InterventionKind::imperfect};
    const ScmFamily fam = random_family(6, 1.5, kinds, true, rng);
    for (const ScmEnvironment& env : fam.environments) {
      const GaussianStats st = gaussian_stats(env);
      const Eigen::MatrixXd prod = st.sigma * st.theta;
      CHECK((prod - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  TEST_CASE("precision difference closed forms") {
    Rng rng(1);
    // d = 1: B = 1, lambda = 2 gives Delta = lambda^2 - 1 = 3.
    ScmFamily one = identity_family(1);
    InterventionSpec spec;
    spec.kind = InterventionKind::perfect;
    spec.target = 0;
    spec.lambda = 2.0;
    const ScmEnvironment env = apply_intervention(one, spec, rng);
    const PrecisionDifference pd = precision_difference(env, one.observational());
    CHECK(std::abs(pd.delta(0, 0) - 3.0) < 1e-15);

    // Chain: source-node target has rank 1, sink target rank <= 2.
    ScmFamily chain = chain_family(0.6);
    InterventionSpec on_source;
    on_source.kind = InterventionKind::perfect;
    on_source.target = 0;
    on_source.lambda = 1.9;
    const auto pd_src = precision_difference(apply_intervention(chain, on_source, rng),
                                             chain.observational());
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(pd_src.delta);
    int rank = 0;
    for (int i = 0; i < 2; ++i)
      if (svd.singularValues()(i) > 1e-10 * svd.singularValues()(0)) ++rank;
    CHECK(rank == 1);

    InterventionSpec on_sink;
    on_sink.kind = InterventionKind::imperfect;
    on_sink.target = 1;
    const auto pd_sink = precision_difference(apply_intervention(chain, on_sink, rng),
                                              chain.observational());
    Eigen::JacobiSVD<Eigen::MatrixXd> svd2(pd_sink.delta);
    int rank2 = 0;
    for (int i = 0; i < 2; ++i)
      if (svd2.singularValues()(i) > 1e-10 * svd2.singularValues()(0)) ++rank2;
    CHECK(rank2 <= 2);
  }

  TEST_CASE("lemma2 and row replacement identities on random families") {
    Rng rng(21);
    const std::vector<InterventionKind> kinds{InterventionKind::perfect, InterventionKind::imperfect,
                                              InterventionKind::pure_shift};
    for (int rep = 0; rep < 25; ++rep) {
      const int d = 1 + rng.uniform_int(8);
      const ScmFamily fam = random_family(d, 1.5, kinds, true, rng);
      const Eigen::MatrixXd b0 = fam.observational().B;
      for (std::size_t e = 1; e < fam.environments.size(); ++e) {
        const ScmEnvironment& env = fam.environments[e];
        const PrecisionDifference pd = precision_difference(env, fam.observational());
        const Eigen::MatrixXd outer = pd.s_tilde * pd.s_tilde.transpose() - pd.s * pd.s.transpose();
        CHECK((pd.delta - outer).cwiseAbs().maxCoeff() < 1e-12);

        const Eigen::VectorXd e_t = Eigen::VectorXd::Unit(d, env.target);
        const Eigen::MatrixXd rebuilt =
            env.B + e_t * (b0.transpose() * e_t - pd.s_tilde).transpose();
        // Exact in real arithmetic; the add/subtract round-trip leaves ulps.
        CHECK((rebuilt - b0).cwiseAbs().maxCoeff() < 1e-15);
      }
    }
  }

  TEST_CASE("empirical covariance matches Sigma") {
    Rng rng(22);
    const std::vector<InterventionKind> kinds{InterventionKind::perfect};
    const ScmFamily fam = random_family(4, 1.5, kinds, true, rng);
    const int n = 100000;
    const double band = 5.0 * std::sqrt(2.0 / n);
    for (const ScmEnvironment& env : fam.environments) {
      const GaussianStats st = gaussian_stats(env);
      const Eigen::MatrixXd z = sample_latents(env, n, rng);
      const Eigen::MatrixXd centered = z.rowwise() - z.colwise().mean();
      const Eigen::MatrixXd cov = centered.transpose() * centered / (n - 1.0);
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
          const double scale = std::sqrt(st.sigma(i, i) * st.sigma(j, j));
          CHECK(std::abs(cov(i, j) - st.sigma(i, j)) < band * scale);
        }
      }
    }
  }

  TEST_CASE("family json round trip") {
    Rng rng(31);
    const std::vector<InterventionKind> kinds{InterventionKind::perfect, InterventionKind::imperfect,
                                              InterventionKind::pure_shift};
    const ScmFamily fam = random_family(5, 1.5, kinds, true, rng);
    const nlohmann::json j = family_to_json(fam);
    const ScmFamily back = family_from_json(j);
    CHECK(back.d() == fam.d());
    CHECK(back.dag.edges == fam.dag.edges);
    CHECK((back.A - fam.A).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.D - fam.D).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(back.environments.size() == fam.environments.size());
    for (std::size_t e = 0; e < fam.environments.size(); ++e) {
      CHECK((back.environments[e].B - fam.environments[e].B).cwiseAbs().maxCoeff() == 0.0);
      CHECK(back.environments[e].eta == fam.environments[e].eta);
      CHECK(back.environments[e].target == fam.environments[e].target);
      CHECK(back.environments[e].kind == fam.environments[e].kind);
    }
    CHECK(back.seeds.root == fam.seeds.root);
  }

  TEST_CASE("dag validation") {
    CHECK_THROWS(Dag::from_edges(2, {{0, 1}, {1, 0}}));  // cycle
    CHECK_THROWS(Dag::from_edges(2, {{0, 2}}));          // out of range
    const Dag dag = Dag::from_edges(3, {{0, 1}, {1, 2}});
    CHECK(dag.parents(2) == std::vector<int>{1});
    CHECK(dag.is_source(0));
    CHECK(!dag.is_source(2));
  }
}
