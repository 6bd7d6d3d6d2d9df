#include "genpose/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "genpose/errors.hpp"

namespace genpose {

PoseVector encode_pose(const Pose& pose) {
  PoseVector v;
  v << pose.translation, rotation_to_sixd(pose.rotation);
  return v;
}

Pose decode_pose(const PoseVector& v) {
  if (!v.allFinite()) throw InvalidArgument("decode_pose: non-finite pose vector");
  return {sixd_to_rotation(v.tail<6>()), v.head<3>()};
}

void NoiseSchedule::validate() const {
  if (!(sigma_min > 0 && sigma_max > 0 && sigma_min < sigma_max)) {
    throw InvalidArgument("noise schedule: need 0 < sigma_min < sigma_max");
  }
  if (!(eps > 0 && eps < 1)) throw InvalidArgument("noise schedule: eps must lie in (0, 1)");
}

double sigma(const NoiseSchedule& schedule, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("sigma: t must lie in [0, 1]");
  return schedule.sigma_min * std::pow(schedule.sigma_max / schedule.sigma_min, t);
}

double sigma_dot(const NoiseSchedule& schedule, double t) {
  return sigma(schedule, t) * std::log(schedule.sigma_max / schedule.sigma_min);
}

PoseVector standard_normal_pose(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  PoseVector z;
  for (int i = 0; i < 9; ++i) z(i) = normal(rng);
  return z;
}

PoseVector perturb(const PoseVector& p0, double t, const NoiseSchedule& schedule, Rng& rng) {
  if (!(t > 0.0 && t <= 1.0)) throw InvalidArgument("perturb: t must lie in (0, 1]");
  return p0 + sigma(schedule, t) * standard_normal_pose(rng);
}

void GaussianMixture::validate() const {
  if (weights.empty() || weights.size() != means.size() || weights.size() != stds.size()) {
    throw InvalidArgument("mixture: weights, means and stds must be nonempty and equally long");
  }
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (!(weights[k] > 0) || !(stds[k] >= 0) || !means[k].allFinite()) {
      throw InvalidArgument("mixture: component " + std::to_string(k) + " is invalid");
    }
  }
}

GaussianMixture resolve(const AnalyticDensity& density, const Condition& cond) {
  if (const auto* m = std::get_if<GaussianMixture>(&density)) return *m;
  const auto& g = std::get<ConditionedGaussian>(density);
  if (cond.feature.size() < 9) {
    throw InvalidArgument("conditioned gaussian: condition needs at least 9 features");
  }
  return {{1.0}, {PoseVector(cond.feature.head<9>())}, {g.std}};
}

namespace {

// Per-component log weights of the sigma-convolved mixture at p.
std::vector<double> component_logits(const GaussianMixture& mix, const PoseVector& p, double s2) {
  std::vector<double> logits(mix.weights.size());
  for (std::size_t k = 0; k < mix.weights.size(); ++k) {
    const double v = mix.stds[k] * mix.stds[k] + s2;
    logits[k] = std::log(mix.weights[k]) - 4.5 * std::log(2.0 * std::numbers::pi * v) -
                (p - mix.means[k]).squaredNorm() / (2.0 * v);
  }
  return logits;
}

double log_sum_exp(const std::vector<double>& x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

PoseVector analytic_score(const GaussianMixture& mixture, const PoseVector& p, double t,
                          const NoiseSchedule& schedule) {
  const double sg = sigma(schedule, t);
  const double s2 = sg * sg;
  const auto logits = component_logits(mixture, p, s2);
  const double lse = log_sum_exp(logits);
  PoseVector out = PoseVector::Zero();
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double v = mixture.stds[k] * mixture.stds[k] + s2;
    out += std::exp(logits[k] - lse) * (mixture.means[k] - p) / v;
  }
  return out;
}

double analytic_log_density(const GaussianMixture& mixture, const PoseVector& p, double t,
                            const NoiseSchedule& schedule) {
  const double sg = sigma(schedule, t);
  return log_sum_exp(component_logits(mixture, p, sg * sg));
}

double input_scale(const NoiseSchedule& schedule, double t) {
  const double sg = sigma(schedule, t);
  return 1.0 / std::sqrt(1.0 + sg * sg);
}

Eigen::MatrixXd network_input(std::span<const PoseVector> poses, std::span<const double> times,
                              std::span<const Condition* const> conds, int feature_dim,
                              const NoiseSchedule& schedule) {
  const auto n = static_cast<Eigen::Index>(poses.size());
  Eigen::MatrixXd x(9 + feature_dim + kTimeEmbedding, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = times[i];
    const Condition& c = *conds[i];
    if (c.feature.size() != feature_dim) {
      throw InvalidArgument("condition length " + std::to_string(c.feature.size()) + " does not match model (" +
                            std::to_string(feature_dim) + ")");
    }
    x.col(i).head<9>() = input_scale(schedule, t) * poses[i];
    x.col(i).segment(9, feature_dim) = c.feature;
    x(9 + feature_dim, i) = t;
    x(10 + feature_dim, i) = std::sin(2.0 * std::numbers::pi * t);
    x(11 + feature_dim, i) = std::cos(2.0 * std::numbers::pi * t);
  }
  return x;
}

ScoreField::ScoreField(Kind kind) : kind_(std::move(kind)) {
  schedule().validate();
  if (const auto* a = std::get_if<AnalyticScore>(&kind_)) {
    if (const auto* m = std::get_if<GaussianMixture>(&a->density)) m->validate();
  }
}

const NoiseSchedule& ScoreField::schedule() const {
  return std::visit([](const auto& k) -> const NoiseSchedule& { return k.schedule; }, kind_);
}

PoseVector ScoreField::operator()(const PoseVector& p, double t, const Condition& cond) const {
  const Condition* c = &cond;
  return evaluate(std::span(&p, 1), std::span(&t, 1), std::span(&c, 1)).front();
}

std::vector<PoseVector> ScoreField::evaluate(std::span<const PoseVector> poses, std::span<const double> times,
                                             std::span<const Condition* const> conds) const {
  std::vector<PoseVector> out(poses.size());
  if (std::holds_alternative<ZeroScore>(kind_)) {
    std::fill(out.begin(), out.end(), PoseVector::Zero());
  } else if (const auto* a = std::get_if<AnalyticScore>(&kind_)) {
    for (std::size_t i = 0; i < poses.size(); ++i) {
      out[i] = analytic_score(resolve(a->density, *conds[i]), poses[i], times[i], a->schedule);
    }
  } else {
    const auto& s = std::get<ScoreNet>(kind_);
    const Eigen::MatrixXd y = s.net.forward(network_input(poses, times, conds, s.feature_dim, s.schedule));
    for (std::size_t i = 0; i < poses.size(); ++i) {
      out[i] = y.col(static_cast<Eigen::Index>(i)) / sigma(s.schedule, times[i]);
    }
  }
  return out;
}

void TrainConfig::validate() const {
  if (batch_size <= 0 || steps <= 0) throw InvalidArgument("train config: batch size and steps must be positive");
  if (!(lr_start > 0 && lr_end > 0)) throw InvalidArgument("train config: learning rates must be positive");
  for (int h : hidden) {
    if (h <= 0) throw InvalidArgument("train config: hidden sizes must be positive");
  }
  schedule.validate();
}

double dsm_loss(const ScoreField& field, std::span<const TrainSample> batch, const NoiseSchedule& schedule,
                Rng& rng) {
  if (batch.empty()) throw InvalidArgument("dsm_loss: empty batch");
  std::uniform_real_distribution<double> uniform(schedule.eps, 1.0);
  std::vector<PoseVector> noisy(batch.size());
  std::vector<PoseVector> noise(batch.size());
  std::vector<double> times(batch.size());
  std::vector<const Condition*> conds(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    times[i] = uniform(rng);
    noise[i] = standard_normal_pose(rng);
    noisy[i] = batch[i].pose + sigma(schedule, times[i]) * noise[i];
    conds[i] = &batch[i].cond;
  }
  const auto scores = field.evaluate(noisy, times, conds);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double sg = sigma(schedule, times[i]);
    const PoseVector target = (batch[i].pose - noisy[i]) / (sg * sg);
    total += sg * sg * (scores[i] - target).squaredNorm();
  }
  return total / static_cast<double>(batch.size());
}

std::vector<TrainSample> canonical_order(std::span<const TrainSample> data) {
  std::vector<TrainSample> out(data.begin(), data.end());
  auto key_less = [](const TrainSample& a, const TrainSample& b) {
    const auto& fa = a.cond.feature;
    const auto& fb = b.cond.feature;
    if (fa.size() != fb.size()) return fa.size() < fb.size();
    for (Eigen::Index i = 0; i < fa.size(); ++i) {
      if (fa(i) != fb(i)) return fa(i) < fb(i);
    }
    for (int i = 0; i < 9; ++i) {
      if (a.pose(i) != b.pose(i)) return a.pose(i) < b.pose(i);
    }
    return a.cond.object_id < b.cond.object_id;
  };
  std::stable_sort(out.begin(), out.end(), key_less);
  return out;
}

int infer_feature_dim(std::span<const TrainSample> data) {
  if (data.empty()) throw InvalidArgument("training data is empty");
  const auto f = data.front().cond.feature.size();
  for (const auto& s : data) {
    if (s.cond.feature.size() != f) throw InvalidArgument("training data: condition lengths differ");
    if (!s.pose.allFinite() || !s.cond.feature.allFinite()) {
      throw InvalidArgument("training data: non-finite values");
    }
  }
  return static_cast<int>(f);
}

DataSplit split_training_data(std::span<const TrainSample> data, std::uint64_t seed) {
  std::vector<TrainSample> all = canonical_order(data);
  Rng rng = make_rng(seed, 0x5EED);
  std::shuffle(all.begin(), all.end(), rng);
  DataSplit s;
  if (all.size() >= 10) {
    const std::size_t n_hold = all.size() / 10;
    s.heldout.assign(all.end() - static_cast<std::ptrdiff_t>(n_hold), all.end());
    s.train.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_hold));
  } else {
    s.train = all;
    s.heldout = all;
  }
  return s;
}

namespace {

double heldout_loss(const ScoreField& field, const std::vector<TrainSample>& heldout, const NoiseSchedule& schedule,
                    std::uint64_t seed) {
  // A few passes so that tiny hold-out sets still give a usable estimate.
  std::vector<TrainSample> batch;
  while (batch.size() < 512) batch.insert(batch.end(), heldout.begin(), heldout.end());
  Rng rng = make_rng(seed, 0xE7A1);
  return dsm_loss(field, batch, schedule, rng);
}

}  // namespace

ScoreNet train_score(std::span<const TrainSample> data, const TrainConfig& cfg, TrainReport* report) {
  cfg.validate();
  const int feature_dim = infer_feature_dim(data);
  const DataSplit split = split_training_data(data, cfg.seed);

  std::vector<int> sizes{9 + feature_dim + kTimeEmbedding};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(9);
  Rng init_rng = make_rng(cfg.seed, 0x1417);
  ScoreNet model{Mlp(sizes, cfg.activation, init_rng), cfg.schedule, feature_dim, cfg.seed};

  if (report) {
    report->initial_heldout_loss = heldout_loss(ScoreField(model), split.heldout, cfg.schedule, cfg.seed);
    report->loss_history.clear();
  }

  Rng rng = make_rng(cfg.seed, 0x7EA1);
  std::uniform_real_distribution<double> uniform(cfg.schedule.eps, 1.0);
  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  Adam adam(model.net);
  const auto b = static_cast<std::size_t>(cfg.batch_size);
  std::vector<PoseVector> noisy(b);
  std::vector<double> times(b);
  std::vector<const Condition*> conds(b);
  Eigen::MatrixXd noise(9, static_cast<Eigen::Index>(b));
  Mlp::Cache cache;

  for (int step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < b; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const TrainSample& s = split.train[order[cursor++]];
      times[i] = uniform(rng);
      const PoseVector z = standard_normal_pose(rng);
      noise.col(static_cast<Eigen::Index>(i)) = z;
      noisy[i] = s.pose + sigma(cfg.schedule, times[i]) * z;
      conds[i] = &s.cond;
    }
    const Eigen::MatrixXd x = network_input(noisy, times, conds, feature_dim, cfg.schedule);
    const Eigen::MatrixXd y = model.net.forward(x, cache);
    // sigma^2 |y / sigma - (p0 - pt) / sigma^2|^2 = |y + z|^2
    const Eigen::MatrixXd residual = y + noise;
    const double loss = residual.squaredNorm() / static_cast<double>(b);
    if (!std::isfinite(loss)) {
      throw Diverged("train_score: non-finite loss at step " + std::to_string(step));
    }
    if (report) report->loss_history.push_back(loss);
    const Mlp::Gradient grad = model.net.backward(cache, (2.0 / static_cast<double>(b)) * residual);
    adam.step(model.net, grad, decayed_learning_rate(cfg.lr_start, cfg.lr_end, step, cfg.steps));
  }

  if (report) report->final_heldout_loss = heldout_loss(ScoreField(model), split.heldout, cfg.schedule, cfg.seed);
  return model;
}

}  // namespace genpose
