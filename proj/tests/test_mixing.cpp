#include <doctest.h>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <numbers>
#include <set>

#include "crl/mixing.hpp"
#include "crl/rng.hpp"

using namespace crl;

namespace {

// Largest singular value by power iteration; test-side oracle for the
// Lipschitz bound.
double spectral_norm(const Eigen::MatrixXd& m, int iters = 200) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(m.cols()).normalized();
  for (int i = 0; i < iters; ++i) v = (m.transpose() * (m * v)).normalized();
  return (m * v).norm();
}

}  // namespace

TEST_SUITE("mixing") {
  TEST_CASE("linear mixing basics") {
    Rng rng(1);
    const MixingFunction f1 = MixingFunction::linear(1, 1, rng);
    CHECK(f1.matrix()(0, 0) != 0.0);
    Eigen::MatrixXd z(1, 1);
    z << 2.0;
    CHECK(f1.apply(z)(0, 0) == doctest::Approx(2.0 * f1.matrix()(0, 0)));

    const MixingFunction f2 = MixingFunction::linear(5, 10, rng);
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(f2.matrix());
    CHECK(svd.singularValues().minCoeff() > 0.0);
    CHECK_THROWS(MixingFunction::linear(5, 3, rng));
  }

  TEST_CASE("linear column norms at d_prime=100") {
    // E |N(0, I_100)| = sqrt(2) Gamma(50.5)/Gamma(50) ~ 9.9750.
    Rng rng(2);
    double acc = 0;
    int count = 0;
    for (int rep = 0; rep < 200; ++rep) {
      const MixingFunction f = MixingFunction::linear(5, 100, rng);
      for (int c = 0; c < 5; ++c) {
        acc += f.matrix().col(c).norm();
        ++count;
      }
    }
    CHECK(std::abs(acc / count - 10.0) < 0.3);
  }

  TEST_CASE("linear equals matrix product") {
    Rng rng(3);
    const MixingFunction f = MixingFunction::linear(3, 6, rng);
    Eigen::MatrixXd z(10, 3);
    z.setRandom();
    CHECK((f.apply(z) - z * f.matrix().transpose()).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("mlp architecture facts") {
    Rng rng(4);
    const MixingFunction f = MixingFunction::mlp(3, 8, rng);
    CHECK(f.layer_weights().size() == 4);
    CHECK(f.layer_weights()[0].rows() == 3);
    CHECK(f.layer_weights()[0].cols() == 512);
    CHECK(f.layer_weights()[3].cols() == 8);
    CHECK(f.leaky_slope() == 0.2);

    // No biases: f(0) = 0.
    const Eigen::MatrixXd out = f.apply(Eigen::MatrixXd::Zero(1, 3));
    CHECK(out.cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("mlp local injectivity via finite-difference jacobian") {
    Rng rng(5);
    const MixingFunction f = MixingFunction::mlp(3, 8, rng);
    const double eps = 1e-6;
    for (int rep = 0; rep < 100; ++rep) {
      Eigen::VectorXd z(3);
      for (int i = 0; i < 3; ++i) z(i) = rng.normal();
      Eigen::MatrixXd jac(8, 3);
      for (int c = 0; c < 3; ++c) {
        Eigen::VectorXd zp = z, zm = z;
        zp(c) += eps;
        zm(c) -= eps;
        jac.col(c) = (*f.apply_row(zp) - *f.apply_row(zm)) / (2 * eps);
      }
      const Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac);
      CHECK(svd.singularValues().minCoeff() > 1e-6);
    }
  }

  TEST_CASE("mlp lipschitz bound from layer spectral norms") {
    Rng rng(6);
    const MixingFunction f = MixingFunction::mlp(4, 6, rng);
    double lip = 1.0;
    for (const auto& w : f.layer_weights()) lip *= spectral_norm(w);  // LeakyReLU is 1-Lipschitz
    for (int rep = 0; rep < 200; ++rep) {
      Eigen::VectorXd z(4), delta(4);
      for (int i = 0; i < 4; ++i) {
        z(i) = rng.normal();
        delta(i) = 0.1 * rng.normal();
      }
      const double lhs = (*f.apply_row(z + delta) - *f.apply_row(z)).norm();
      CHECK(lhs <= lip * delta.norm() * (1 + 1e-12));
    }
  }

  TEST_CASE("renderer center and rejection") {
    ImageConfig cfg;
    Eigen::VectorXd z(2);
    z << 0.0, 0.0;
    const auto img = render_balls(z, cfg);
    REQUIRE(img.has_value());
    // Disk centered at pixel (32, 32): red channel set there.
    const int side = cfg.side;
    CHECK((*img)((32 * side + 32) * 3 + 0) == 1.0);

    // Count of the integer disk of radius 5 is 81, within pi r^2 +- 2r.
    int colored = 0;
    for (int p = 0; p < side * side; ++p)
      if ((*img)(p * 3) > 0) ++colored;
    CHECK(colored == 81);
    CHECK(std::abs(colored - std::numbers::pi * 25.0) <= 10.0);

    Eigen::VectorXd out_of_frame(2);
    out_of_frame << 0.6, 0.0;  // column floor(1.1 * 64) = 70 > 63
    CHECK(!render_balls(out_of_frame, cfg).has_value());
  }

  TEST_CASE("two distant balls give two disjoint disks") {
    ImageConfig cfg;
    Eigen::VectorXd z(4);
    z << -0.25, -0.25, 0.25, 0.25;
    const auto img = render_balls(z, cfg);
    REQUIRE(img.has_value());
    int red = 0, green = 0, both = 0;
    for (int p = 0; p < cfg.side * cfg.side; ++p) {
      const bool r = (*img)(p * 3) > 0, g = (*img)(p * 3 + 1) > 0;
      if (r) ++red;
      if (g) ++green;
      if (r && g) ++both;
    }
    CHECK(both == 0);
    CHECK(std::abs(red - std::numbers::pi * 25.0) <= 10.0);
    CHECK(std::abs(green - std::numbers::pi * 25.0) <= 10.0);
  }

  TEST_CASE("renderer translation invariance of colored pixel count") {
    ImageConfig cfg;
    Rng rng(7);
    int reference = -1;
    for (int rep = 0; rep < 50; ++rep) {
      Eigen::VectorXd z(2);
      z << rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3);
      const auto img = render_balls(z, cfg);
      REQUIRE(img.has_value());
      int colored = 0;
      for (int p = 0; p < cfg.side * cfg.side; ++p)
        if ((*img)(p * 3) > 0) ++colored;
      if (reference < 0) reference = colored;
      CHECK(colored == reference);
    }
  }

  TEST_CASE("image apply drops rejected rows and reports them") {
    ImageConfig cfg;
    const MixingFunction f = MixingFunction::image(2, cfg);
    Eigen::MatrixXd z(3, 2);
    z << 0.0, 0.0, 0.6, 0.0, 0.1, 0.1;
    std::vector<int> rejected;
    const Eigen::MatrixXd x = f.apply(z, &rejected);
    CHECK(x.rows() == 2);
    REQUIRE(rejected.size() == 1);
    CHECK(rejected[0] == 1);
  }

  TEST_CASE("rejection rate at image-table variances stays below 20%") {
    Rng rng(8);
    ImageConfig cfg;
    const MixingFunction f = MixingFunction::image(4, cfg);
    const double sigma = std::sqrt(0.015);
    int rejected = 0;
    const int n = 25000;
    for (int r = 0; r < n; ++r) {
      Eigen::VectorXd z(4);
      for (int i = 0; i < 4; ++i) z(i) = sigma * rng.normal();
      if (!f.apply_row(z)) ++rejected;
    }
    CHECK(static_cast<double>(rejected) / n < 0.20);
  }

  TEST_CASE("determinism and injectivity smoke test") {
    Rng rng_a(9), rng_b(9);
    const MixingFunction fa = MixingFunction::mlp(3, 6, rng_a);
    const MixingFunction fb = MixingFunction::mlp(3, 6, rng_b);
    Eigen::MatrixXd z(100, 3);
    z.setRandom();
    CHECK((fa.apply(z) - fb.apply(z)).cwiseAbs().maxCoeff() == 0.0);

    Rng rng(10);
    const MixingFunction lin = MixingFunction::linear(3, 6, rng);
    for (int rep = 0; rep < 10000; ++rep) {
      Eigen::VectorXd z1(3), z2(3);
      for (int i = 0; i < 3; ++i) {
        z1(i) = rng.normal();
        z2(i) = rng.normal();
      }
      if ((z1 - z2).norm() == 0.0) continue;
      CHECK((*lin.apply_row(z1) - *lin.apply_row(z2)).norm() > 0.0);
      if (rep < 1000) CHECK((*fa.apply_row(z1) - *fa.apply_row(z2)).norm() > 0.0);
    }
  }

  TEST_CASE("image variant validates dimensions") {
    CHECK_THROWS(MixingFunction::image(3));
    CHECK_THROWS(MixingFunction::image(0));
    Rng rng(11);
    const MixingFunction f = MixingFunction::image(4);
    CHECK(f.output_dim() == 64 * 64 * 3);
    Eigen::MatrixXd wrong(2, 3);
    CHECK_THROWS(f.apply(wrong));
  }
}
