#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "genpose/diffusion.hpp"
#include "genpose/errors.hpp"
#include "genpose/mlp.hpp"
#include "oracles.hpp"

using namespace genpose;

namespace {

Mlp small_net(int in, int out, Activation act, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return Mlp({in, 7, 5, out}, act, rng);
}

template <class F>
double central(F f, double& x, double h = 1e-6) {
  const double x0 = x;
  x = x0 + h;
  const double fp = f();
  x = x0 - h;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2 * h);
}

PoseVector random_pose_vector(Rng& rng, double scale = 1.0) { return scale * standard_normal_pose(rng); }

}  // namespace

TEST_CASE("mlp backward matches finite differences") {
  for (Activation act : {Activation::silu, Activation::tanh}) {
    Mlp net = small_net(4, 3, act, 1);
    Rng rng = make_rng(2);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 6);
    const Eigen::MatrixXd c = Eigen::MatrixXd::Random(3, 6);
    auto loss = [&] { return (net.forward(x).array() * c.array()).sum(); };
    Mlp::Cache cache;
    net.forward(x, cache);
    const Mlp::Gradient g = net.backward(cache, c);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      for (Eigen::Index i = 0; i < net.weights()[l].size(); i += 3) {
        CHECK(g.weights[l](i) == doctest::Approx(central(loss, net.weights()[l](i))).epsilon(1e-6).scale(1e-12));
      }
      for (Eigen::Index i = 0; i < net.biases()[l].size(); ++i) {
        CHECK(g.biases[l](i) == doctest::Approx(central(loss, net.biases()[l](i))).epsilon(1e-6).scale(1e-12));
      }
    }
    Eigen::MatrixXd xm = x;
    auto loss_x = [&] { return (net.forward(xm).array() * c.array()).sum(); };
    for (Eigen::Index i = 0; i < xm.size(); ++i) {
      CHECK(g.input(i) == doctest::Approx(central(loss_x, xm(i))).epsilon(1e-6).scale(1e-12));
    }
  }
}

TEST_CASE("mlp double backprop matches finite differences") {
  for (Activation act : {Activation::silu, Activation::tanh}) {
    Mlp net = small_net(5, 1, act, 3);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 4);
    const Eigen::MatrixXd c = Eigen::MatrixXd::Random(5, 4);
    // L = sum(c * d out / d x)
    auto loss = [&] {
      Mlp::Cache k;
      net.forward(x, k);
      return (net.input_gradient(k).array() * c.array()).sum();
    };
    Mlp::Cache cache;
    net.forward(x, cache);
    const Mlp::Gradient g = net.input_gradient_backward(cache, c);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      for (Eigen::Index i = 0; i < net.weights()[l].size(); i += 2) {
        CHECK(g.weights[l](i) == doctest::Approx(central(loss, net.weights()[l](i))).epsilon(1e-5).scale(1e-12));
      }
      for (Eigen::Index i = 0; i < net.biases()[l].size(); ++i) {
        CHECK(g.biases[l](i) == doctest::Approx(central(loss, net.biases()[l](i))).epsilon(1e-5).scale(1e-12));
      }
    }
  }
}

TEST_CASE("sigma schedule values") {
  const NoiseSchedule s;
  CHECK(sigma(s, 0.0) == doctest::Approx(0.01).epsilon(1e-12).scale(1e-12));
  CHECK(sigma(s, 1.0) == doctest::Approx(50.0).epsilon(1e-12).scale(1e-12));
  CHECK(sigma(s, 0.5) == doctest::Approx(std::sqrt(0.01 * 50.0)).epsilon(1e-12).scale(1e-12));
  CHECK(sigma(s, 0.5) == doctest::Approx(0.70711).epsilon(1e-5).scale(1e-12));
  CHECK_THROWS_AS(sigma(s, -0.1), InvalidArgument);
  CHECK_THROWS_AS(sigma(s, 1.1), InvalidArgument);
  for (double t : {0.1, 0.4, 0.9}) {
    double tt = t;
    CHECK(sigma_dot(s, t) == doctest::Approx(central([&] { return sigma(s, tt); }, tt)).epsilon(1e-6));
  }
  double prev = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double v = sigma(s, i / 100.0);
    CHECK(v > prev);
    prev = v;
  }
  CHECK_THROWS_AS((NoiseSchedule{1.0, 0.5, 1e-3}.validate()), InvalidArgument);
}

TEST_CASE("pose vector encode and decode") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const Pose p{oracle::random_rotation(rng), Vec3::Random()};
    const Pose q = decode_pose(encode_pose(p));
    CHECK(geodesic_distance(p.rotation, q.rotation) < 1e-9);
    CHECK((p.translation - q.translation).norm() < 1e-12);
  }
  PoseVector bad = PoseVector::Zero();
  CHECK_THROWS_AS(decode_pose(bad), InvalidArgument);
}

TEST_CASE("perturb statistics and determinism") {
  const NoiseSchedule s;
  Rng rng = make_rng(9);
  const PoseVector p0 = random_pose_vector(rng);
  const double t = 0.5;
  const int n = 20000;
  Eigen::Matrix<double, 9, 1> sum = Eigen::Matrix<double, 9, 1>::Zero(), sq = sum;
  for (int i = 0; i < n; ++i) {
    const PoseVector d = perturb(p0, t, s, rng) - p0;
    sum += d;
    sq += d.cwiseProduct(d);
  }
  const double sg = sigma(s, t);
  for (int k = 0; k < 9; ++k) {
    CHECK(std::abs(sum(k) / n) < 4 * sg / std::sqrt(n));
    CHECK(std::sqrt(sq(k) / n) == doctest::Approx(sg).epsilon(0.03).scale(1e-12));
  }
  Rng a = make_rng(1), b = make_rng(1);
  CHECK(perturb(p0, 0.3, s, a) == perturb(p0, 0.3, s, b));
  // Near-zero noise leaves the input in place.
  Rng c = make_rng(2);
  CHECK((perturb(p0, 1e-9, NoiseSchedule{1e-12, 50, 1e-3}, c) - p0).norm() < 1e-9);
  CHECK_THROWS_AS(perturb(p0, 0.0, s, c), InvalidArgument);
}

TEST_CASE("analytic score is the gradient of the log density") {
  const NoiseSchedule s;
  Rng rng = make_rng(4);
  GaussianMixture mix;
  mix.weights = {0.3, 0.7};
  mix.means = {random_pose_vector(rng), random_pose_vector(rng)};
  mix.stds = {0.1, 0.0};
  for (double t : {0.05, 0.3, 0.8}) {
    PoseVector p = random_pose_vector(rng, 0.5);
    const PoseVector g = analytic_score(mix, p, t, s);
    for (int k = 0; k < 9; ++k) {
      const double fd = central([&] { return analytic_log_density(mix, p, t, s); }, p(k), 1e-5);
      CHECK(g(k) == doctest::Approx(fd).epsilon(1e-5).scale(1e-12));
    }
  }
  GaussianMixture one{{1.0}, {mix.means[0]}, {0.05}};
  CHECK(analytic_score(one, mix.means[0], 0.2, s).norm() == doctest::Approx(0.0));
}

TEST_CASE("dsm loss of the zero field equals the noise dimension") {
  // sigma^2 |0 - (p0 - pt) / sigma^2|^2 = |z|^2, whose mean is 9.
  const NoiseSchedule s;
  const ScoreField zero(ZeroScore{s});
  Rng rng = make_rng(12);
  std::vector<TrainSample> batch(20000);
  for (auto& b : batch) b.pose = random_pose_vector(rng);
  Rng r1 = make_rng(3);
  const double loss = dsm_loss(zero, batch, s, r1);
  CHECK(loss == doctest::Approx(9.0).epsilon(0.03).scale(1e-12));
  Rng r2 = make_rng(3);
  CHECK(dsm_loss(zero, batch, s, r2) == loss);
  CHECK_THROWS_AS(dsm_loss(zero, std::span<const TrainSample>(), s, r2), InvalidArgument);

  // The exact score of point-mass data does better than zero.
  GaussianMixture point{{1.0}, {batch[0].pose}, {0.0}};
  std::vector<TrainSample> same(5000, batch[0]);
  const ScoreField exact(AnalyticScore{point, s});
  Rng r3 = make_rng(8);
  CHECK(dsm_loss(exact, same, s, r3) < 1e-9);
}

TEST_CASE("score training is deterministic and order independent") {
  Rng rng = make_rng(21);
  std::vector<TrainSample> data(40);
  for (auto& d : data) {
    d.pose = random_pose_vector(rng, 0.1);
    d.cond.feature = Eigen::VectorXd::Random(2);
  }
  TrainConfig cfg;
  cfg.steps = 30;
  cfg.batch_size = 16;
  cfg.hidden = {16, 16};
  cfg.seed = 77;
  const ScoreNet a = train_score(data, cfg);
  const ScoreNet b = train_score(data, cfg);
  CHECK(a == b);
  std::vector<TrainSample> shuffled = data;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(train_score(shuffled, cfg) == a);
  cfg.seed = 78;
  CHECK_FALSE(train_score(data, cfg) == a);
  CHECK(a.feature_dim == 2);

  std::vector<TrainSample> mixed = data;
  mixed[3].cond.feature = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(train_score(mixed, cfg), InvalidArgument);
  CHECK_THROWS_AS(train_score(std::span<const TrainSample>(), cfg), InvalidArgument);
}

TEST_CASE("score training reports divergence with the step") {
  Rng rng = make_rng(22);
  std::vector<TrainSample> data(20);
  for (auto& d : data) d.pose = random_pose_vector(rng, 1e200);
  TrainConfig cfg;
  cfg.steps = 5;
  cfg.batch_size = 4;
  cfg.hidden = {8};
  try {
    train_score(data, cfg);
    FAIL("expected divergence");
  } catch (const Diverged& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("score training lowers the held-out loss") {
  Rng rng = make_rng(23);
  const PoseVector mu = random_pose_vector(rng, 0.3);
  std::vector<TrainSample> data(2000);
  for (auto& d : data) d.pose = mu + 0.05 * standard_normal_pose(rng);
  TrainConfig cfg;
  cfg.steps = 400;
  cfg.batch_size = 64;
  cfg.hidden = {64, 64};
  TrainReport report;
  train_score(data, cfg, &report);
  CHECK(report.loss_history.size() == 400);
  CHECK(report.final_heldout_loss < report.initial_heldout_loss);
}
