#include <doctest.h>

#include <cmath>
#include <random>

#include <covshift/calibration.hpp>
#include <covshift/error.hpp>

#include "support/fixtures.hpp"

using namespace covshift;

namespace {

MomentTarget means(std::initializer_list<double> v) {
  MomentTarget t;
  t.values = Eigen::VectorXd(static_cast<Eigen::Index>(v.size()));
  Eigen::Index j = 0;
  for (double x : v) t.values(j++) = x;
  return t;
}

// w_i proportional to base_i exp(sum_j dual_j (f_ij - t_j)), written out
// with plain loops.
Eigen::VectorXd primal_from_dual(const Eigen::MatrixXd& f, const Eigen::VectorXd& t, const Eigen::VectorXd& dual,
                                 const Eigen::VectorXd& base) {
  Eigen::VectorXd eta(f.rows());
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    double s = 0;
    for (Eigen::Index j = 0; j < f.cols(); ++j) s += dual(j) * (f(i, j) - t(j));
    eta(i) = s;
  }
  const double m = eta.maxCoeff();
  Eigen::VectorXd w(f.rows());
  double total = 0;
  for (Eigen::Index i = 0; i < f.rows(); ++i) total += (w(i) = base(i) * std::exp(eta(i) - m));
  return w / total;
}

struct Problem {
  Eigen::MatrixXd x;
  MomentTarget target;
};

// Feasible by construction: the target is a positively reweighted mean of
// the source features.
Problem random_problem(std::mt19937_64& rng, MomentFeatures features) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  Problem p;
  p.x.resize(50, 5);
  for (Eigen::Index i = 0; i < 50; ++i) {
    for (Eigen::Index j = 0; j < 5; ++j) p.x(i, j) = z(rng) * (1 + 0.5 * static_cast<double>(j)) + static_cast<double>(j);
  }
  Eigen::VectorXd v(50);
  for (Eigen::Index i = 0; i < 50; ++i) v(i) = u(rng);
  v /= v.sum();
  p.target.features = features;
  p.target.values = moment_features(p.x, features).transpose() * v;
  return p;
}

}  // namespace

TEST_SUITE("calibration") {

TEST_CASE("two-point closed form") {
  Eigen::MatrixXd x(2, 1);
  x << 0, 1;
  const auto r = entropy_balance(x, means({0.75}));
  CHECK(r.converged);
  CHECK(std::abs(r.w(0) - 0.25) < 1e-8);
  CHECK(std::abs(r.w(1) - 0.75) < 1e-8);
  CHECK(std::abs(r.dual(0) - std::log(3.0)) < 1e-8);
}

TEST_CASE("target outside the hull is infeasible") {
  Eigen::MatrixXd x(2, 1);
  x << 0, 1;
  try {
    entropy_balance(x, means({1.5}));
    FAIL("expected Infeasible");
  } catch (const NumericalError& e) {
    CHECK(e.name() == "Infeasible");
  }
}

TEST_CASE("matching source moments keeps the base weights") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    auto p = random_problem(rng, MomentFeatures::first_and_second);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    Eigen::VectorXd base(50);
    for (Eigen::Index i = 0; i < 50; ++i) base(i) = u(rng);
    const Eigen::VectorXd bn = base / base.sum();
    p.target.values = moment_features(p.x, p.target.features).transpose() * bn;
    CalibrationOptions o;
    o.base_weights = base;
    const auto r = entropy_balance(p.x, p.target, o);
    CHECK((r.w - bn).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(r.dual.cwiseAbs().maxCoeff() < 1e-6);
  }
  Eigen::MatrixXd x(3, 1);
  x << 0, 1, 2;
  const auto uniform = entropy_balance(x, means({1.0}));
  CHECK(uniform.dual(0) == 0.0);
  CHECK((uniform.w.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("random feasible problems balance and agree with their dual") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const auto features = rep % 2 ? MomentFeatures::first_and_second : MomentFeatures::first;
    const auto p = random_problem(rng, features);
    const auto r = entropy_balance(p.x, p.target);
    REQUIRE(r.converged);
    const Eigen::MatrixXd f = moment_features(p.x, features);
    CHECK((f.transpose() * r.w - p.target.values).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(r.max_moment_violation <= 1e-8);
    CHECK((r.w.array() > 0).all());
    CHECK(std::abs(r.w.sum() - 1.0) < 1e-12);
    const auto again = primal_from_dual(f, p.target.values, r.dual, Eigen::VectorXd::Constant(50, 1.0 / 50));
    CHECK((again - r.w).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((weights_from_dual(p.x, p.target, r.dual) - r.w).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("affine rescaling of a feature leaves the weights unchanged") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    auto p = random_problem(rng, MomentFeatures::first);
    const auto base = entropy_balance(p.x, p.target);
    const double a = 0.01 + 50.0 * (rep % 3);
    const double b = -3.0 + rep;
    p.x.col(2) = (p.x.col(2).array() * a + b).matrix();
    p.target.values(2) = p.target.values(2) * a + b;
    const auto moved = entropy_balance(p.x, p.target);
    CHECK((moved.w - base.w).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(moved.dual(2) == doctest::Approx(base.dual(2) / a).epsilon(1e-6));
  }
}

TEST_CASE("calibrated estimate examples") {
  SUBCASE("uniform weights and known design give arm means") {
    const Dataset d(Eigen::MatrixXd::Zero(5, 1), {1, 1, 1, 1, 0}, {0, 1, 0, 1, std::nullopt},
                    {1.0, 2.0, 3.0, 6.0, std::nullopt});
    const auto r = calibrated_estimate(d, Eigen::VectorXd::Constant(4, 0.25), Eigen::MatrixXd::Constant(4, 2, 0.5));
    CHECK(r.psi(0) == 2.0);
    CHECK(r.psi(1) == 4.0);
  }
  SUBCASE("weight concentrated on one arm-1 row") {
    const Dataset d(Eigen::MatrixXd::Zero(3, 1), {1, 1, 1}, {0, 1, 1}, {1.0, 5.0, 9.0});
    Eigen::VectorXd w(3);
    w << 0.5, 0.5, 0.0;
    const auto r = calibrated_estimate(d, w, Eigen::MatrixXd::Constant(3, 2, 0.5));
    CHECK(r.psi(1) == 5.0);
  }
  SUBCASE("two rows with a quarter and three quarters") {
    const Dataset d(Eigen::MatrixXd::Zero(2, 1), {1, 1}, {0, 1}, {1.0, 5.0});
    Eigen::VectorXd w(2);
    w << 0.25, 0.75;
    const auto r = calibrated_estimate(d, w, Eigen::MatrixXd::Constant(2, 2, 0.5));
    CHECK(r.psi(0) == 1.0);
    CHECK(r.psi(1) == 5.0);
    REQUIRE(r.contrasts.size() == 1);
    CHECK(r.contrasts[0].tau == 4.0);
  }
  SUBCASE("an arm without weight is an error") {
    const Dataset d(Eigen::MatrixXd::Zero(2, 1), {1, 1}, {0, 1}, {1.0, 5.0});
    Eigen::VectorXd w(2);
    w << 0.0, 1.0;
    try {
      calibrated_estimate(d, w, Eigen::MatrixXd::Constant(2, 2, 0.5));
      FAIL("expected EmptyArmUnderWeights");
    } catch (const DataError& e) {
      CHECK(e.name() == "EmptyArmUnderWeights");
    }
  }
}

TEST_CASE("empirical arm propensity repeats study shares") {
  const Dataset d(Eigen::MatrixXd::Zero(5, 1), {1, 1, 1, 1, 0}, {0, 1, 1, 1, std::nullopt},
                  {1.0, 2.0, 3.0, 6.0, std::nullopt});
  const auto p = empirical_arm_propensity(d);
  CHECK(p.rows() == 4);
  CHECK(p(3, 0) == 0.25);
  CHECK(p(0, 1) == 0.75);
}

TEST_CASE("moment targets from files and entries") {
  fixture::TempDir dir;
  const auto path = dir.write("t.csv", "x1,0.5\nx2 , -1\nx1^2,0.4\nx2^2,1.5\n");
  const auto t = read_moment_target(path, {"x1", "x2"});
  CHECK(t.features == MomentFeatures::first_and_second);
  CHECK(t.values(1) == -1.0);
  CHECK(t.values(3) == 1.5);
  CHECK(t.names == std::vector<std::string>{"x1", "x2", "x1^2", "x2^2"});

  const auto first = moment_target_from_entries({{"x2", 2.0}, {"x1", 1.0}}, {"x1", "x2"});
  CHECK(first.features == MomentFeatures::first);
  CHECK(first.values(0) == 1.0);

  CHECK_THROWS_AS(moment_target_from_entries({{"x1", 1.0}}, {"x1", "x2"}), ConfigError);
  CHECK_THROWS_AS(moment_target_from_entries({{"x1", 1.0}, {"x3", 1.0}}, {"x1", "x2"}), ConfigError);
  const auto bad = dir.write("b.csv", "x1,abc\n");
  CHECK_THROWS_AS(read_moment_target(bad, {"x1"}), ConfigError);
}

TEST_CASE("sample moments") {
  Eigen::MatrixXd x(2, 2);
  x << 1, 2, 3, 6;
  const auto t = sample_moments(x, MomentFeatures::first_and_second, {"a", "b"});
  CHECK(t.values(0) == 2.0);
  CHECK(t.values(3) == 20.0);
  CHECK(t.names[2] == "a^2");
}

}  // TEST_SUITE
