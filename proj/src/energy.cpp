#include "genpose/energy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "genpose/errors.hpp"

namespace genpose {

namespace {

void check_inputs(const PoseVector& p, double t, const NoiseSchedule& schedule) {
  if (!p.allFinite() || !std::isfinite(t)) throw InvalidArgument("energy: non-finite input");
  if (t < schedule.eps || t > 1.0) throw InvalidArgument("energy: t must lie in [eps, 1]");
}

double output_scale(const NoiseSchedule& schedule, double t) {
  const double sg = sigma(schedule, t);
  return std::sqrt(1.0 + sg * sg) / sg;
}

}  // namespace

EnergyField::EnergyField(Kind kind) : kind_(std::move(kind)) {
  schedule().validate();
  if (const auto* a = std::get_if<AnalyticEnergy>(&kind_)) {
    if (const auto* m = std::get_if<GaussianMixture>(&a->density)) m->validate();
  } else if (std::get<EnergyNet>(kind_).net.output_size() != 1) {
    throw InvalidArgument("energy net must have a scalar output");
  }
}

const NoiseSchedule& EnergyField::schedule() const {
  return std::visit([](const auto& k) -> const NoiseSchedule& { return k.schedule; }, kind_);
}

double EnergyField::operator()(const PoseVector& p, double t, const Condition& cond) const {
  return evaluate(std::span(&p, 1), t, cond).front();
}

std::vector<double> EnergyField::evaluate(std::span<const PoseVector> poses, double t, const Condition& cond) const {
  for (const PoseVector& p : poses) check_inputs(p, t, schedule());
  std::vector<double> out(poses.size());
  if (const auto* a = std::get_if<AnalyticEnergy>(&kind_)) {
    const GaussianMixture mix = resolve(a->density, cond);
    for (std::size_t i = 0; i < poses.size(); ++i) out[i] = analytic_log_density(mix, poses[i], t, a->schedule);
    return out;
  }
  const auto& e = std::get<EnergyNet>(kind_);
  const std::vector<double> times(poses.size(), t);
  const std::vector<const Condition*> conds(poses.size(), &cond);
  const Eigen::MatrixXd y = e.net.forward(network_input(poses, times, conds, e.feature_dim, e.schedule));
  const double scale = output_scale(e.schedule, t);
  for (std::size_t i = 0; i < poses.size(); ++i) out[i] = scale * y(0, static_cast<Eigen::Index>(i));
  return out;
}

PoseVector EnergyField::gradient(const PoseVector& p, double t, const Condition& cond) const {
  check_inputs(p, t, schedule());
  if (const auto* a = std::get_if<AnalyticEnergy>(&kind_)) {
    return analytic_score(resolve(a->density, cond), p, t, a->schedule);
  }
  const auto& e = std::get<EnergyNet>(kind_);
  const Condition* c = &cond;
  Mlp::Cache cache;
  e.net.forward(network_input(std::span(&p, 1), std::span(&t, 1), std::span(&c, 1), e.feature_dim, e.schedule),
                cache);
  const Eigen::MatrixXd g = e.net.input_gradient(cache);
  return g.col(0).head<9>() / sigma(e.schedule, t);
}

namespace {

struct Batch {
  std::vector<PoseVector> noisy;
  std::vector<double> times;
  std::vector<const Condition*> conds;
};

Batch draw_batch(const std::vector<TrainSample>& data, const std::vector<std::size_t>& idx,
                 const NoiseSchedule& schedule, Rng& rng) {
  std::uniform_real_distribution<double> uniform(schedule.eps, 1.0);
  Batch b;
  for (std::size_t i : idx) {
    const double t = uniform(rng);
    b.times.push_back(t);
    b.noisy.push_back(data[i].pose + sigma(schedule, t) * standard_normal_pose(rng));
    b.conds.push_back(&data[i].cond);
  }
  return b;
}

// sigma^2 |grad_p energy - score|^2 = |d net / d x_pose - sigma * score|^2, per sample.
// Returns the mean loss and, if requested, dLoss/d(input gradient).
double match_loss(const EnergyNet& model, const ScoreField& score, const Batch& b, Mlp::Cache& cache,
                  Eigen::MatrixXd* d_input_gradient) {
  const Eigen::MatrixXd x = network_input(b.noisy, b.times, b.conds, model.feature_dim, model.schedule);
  model.net.forward(x, cache);
  const Eigen::MatrixXd g = model.net.input_gradient(cache);
  const auto targets = score.evaluate(b.noisy, b.times, b.conds);
  const auto n = static_cast<Eigen::Index>(b.noisy.size());
  Eigen::MatrixXd residual(9, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    residual.col(i) = g.col(i).head<9>() - sigma(model.schedule, b.times[i]) * targets[i];
  }
  const double loss = residual.squaredNorm() / static_cast<double>(n);
  if (d_input_gradient) {
    *d_input_gradient = Eigen::MatrixXd::Zero(g.rows(), n);
    d_input_gradient->topRows(9) = (2.0 / static_cast<double>(n)) * residual;
  }
  return loss;
}

double heldout_match_loss(const EnergyNet& model, const ScoreField& score, const std::vector<TrainSample>& heldout,
                          std::uint64_t seed) {
  std::vector<std::size_t> idx;
  while (idx.size() < 512) {
    for (std::size_t i = 0; i < heldout.size(); ++i) idx.push_back(i);
  }
  Rng rng = make_rng(seed, 0xE7A2);
  Mlp::Cache cache;
  return match_loss(model, score, draw_batch(heldout, idx, model.schedule, rng), cache, nullptr);
}

}  // namespace

EnergyNet distill_energy(const ScoreField& score, std::span<const TrainSample> data, const TrainConfig& cfg,
                         TrainReport* report) {
  cfg.validate();
  const int feature_dim = infer_feature_dim(data);
  const DataSplit split = split_training_data(data, cfg.seed);

  std::vector<int> sizes{9 + feature_dim + kTimeEmbedding};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(1);
  Rng init_rng = make_rng(cfg.seed, 0xE1417);
  EnergyNet model{Mlp(sizes, cfg.activation, init_rng), cfg.schedule, feature_dim, cfg.seed};

  if (report) {
    report->initial_heldout_loss = heldout_match_loss(model, score, split.heldout, cfg.seed);
    report->loss_history.clear();
  }

  Rng rng = make_rng(cfg.seed, 0xE7EA1);
  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  Adam adam(model.net);
  Mlp::Cache cache;
  Eigen::MatrixXd d_grad;
  std::vector<std::size_t> idx(static_cast<std::size_t>(cfg.batch_size));

  for (int step = 0; step < cfg.steps; ++step) {
    for (auto& i : idx) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      i = order[cursor++];
    }
    const Batch b = draw_batch(split.train, idx, cfg.schedule, rng);
    const double loss = match_loss(model, score, b, cache, &d_grad);
    if (!std::isfinite(loss)) {
      throw Diverged("distill_energy: non-finite loss at step " + std::to_string(step));
    }
    if (report) report->loss_history.push_back(loss);
    const Mlp::Gradient grad = model.net.input_gradient_backward(cache, d_grad);
    adam.step(model.net, grad, decayed_learning_rate(cfg.lr_start, cfg.lr_end, step, cfg.steps));
  }

  if (report) report->final_heldout_loss = heldout_match_loss(model, score, split.heldout, cfg.seed);
  return model;
}

}  // namespace genpose
