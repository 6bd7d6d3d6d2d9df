#include "genpose/mlp.hpp"

#include <cmath>

#include "genpose/errors.hpp"

namespace genpose {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Eigen::ArrayXXd act(const Eigen::ArrayXXd& z, Activation a) {
  if (a == Activation::tanh) return z.tanh();
  return z / (1.0 + (-z).exp());
}

Eigen::ArrayXXd act_d1(const Eigen::ArrayXXd& z, Activation a) {
  if (a == Activation::tanh) return 1.0 - z.tanh().square();
  const Eigen::ArrayXXd s = 1.0 / (1.0 + (-z).exp());
  return s * (1.0 + z * (1.0 - s));
}

Eigen::ArrayXXd act_d2(const Eigen::ArrayXXd& z, Activation a) {
  if (a == Activation::tanh) {
    const Eigen::ArrayXXd th = z.tanh();
    return -2.0 * th * (1.0 - th.square());
  }
  const Eigen::ArrayXXd s = 1.0 / (1.0 + (-z).exp());
  return s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s));
}

}  // namespace

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t state = seed ^ (0xD1B54A32D192ED03ULL * (stream + 1));
  std::seed_seq seq{splitmix64(state), splitmix64(state), splitmix64(state), splitmix64(state)};
  return Rng(seq);
}

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "silu"; }

Activation activation_from_string(const std::string& s) {
  if (s == "silu") return Activation::silu;
  if (s == "tanh") return Activation::tanh;
  throw InvalidArgument("unknown activation '" + s + "'");
}

Mlp::Mlp(std::vector<int> sizes, Activation activation, Rng& rng)
    : sizes_(std::move(sizes)), activation_(activation) {
  if (sizes_.size() < 2) throw InvalidArgument("mlp: need at least input and output sizes");
  for (int s : sizes_) {
    if (s <= 0) throw InvalidArgument("mlp: layer sizes must be positive");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const int fan_in = sizes_[l];
    const int fan_out = sizes_[l + 1];
    const double scale = std::sqrt(1.0 / fan_in);
    Eigen::MatrixXd w(fan_out, fan_in);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * normal(rng);
    }
    weights_.push_back(std::move(w));
    biases_.push_back(Eigen::VectorXd::Zero(fan_out));
  }
}

Mlp::Mlp(std::vector<int> sizes, Activation activation, std::vector<Eigen::MatrixXd> weights,
         std::vector<Eigen::VectorXd> biases)
    : sizes_(std::move(sizes)),
      activation_(activation),
      weights_(std::move(weights)),
      biases_(std::move(biases)) {
  if (sizes_.size() < 2 || weights_.size() + 1 != sizes_.size() || biases_.size() != weights_.size()) {
    throw InvalidArgument("mlp: layer count mismatch");
  }
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (weights_[l].rows() != sizes_[l + 1] || weights_[l].cols() != sizes_[l] ||
        biases_[l].size() != sizes_[l + 1]) {
      throw InvalidArgument("mlp: weight shape mismatch at layer " + std::to_string(l));
    }
  }
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
  return n;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input) const {
  Eigen::MatrixXd a = input;
  const std::size_t last = weights_.size() - 1;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::MatrixXd z = weights_[l] * a;
    z.colwise() += biases_[l];
    a = (l == last) ? z : Eigen::MatrixXd(act(z.array(), activation_).matrix());
  }
  return a;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input, Cache& cache) const {
  cache.pre.clear();
  cache.post.clear();
  cache.post.push_back(input);
  const std::size_t last = weights_.size() - 1;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::MatrixXd z = weights_[l] * cache.post.back();
    z.colwise() += biases_[l];
    if (l == last) {
      cache.pre.push_back(std::move(z));
    } else {
      cache.post.push_back(act(z.array(), activation_).matrix());
      cache.pre.push_back(std::move(z));
    }
  }
  return cache.pre.back();
}

Mlp::Gradient Mlp::backward(const Cache& cache, const Eigen::MatrixXd& d_output) const {
  const std::size_t n = weights_.size();
  Gradient g;
  g.weights.resize(n);
  g.biases.resize(n);
  Eigen::MatrixXd delta = d_output;
  for (std::size_t l = n; l-- > 0;) {
    g.weights[l] = delta * cache.post[l].transpose();
    g.biases[l] = delta.rowwise().sum();
    Eigen::MatrixXd up = weights_[l].transpose() * delta;
    if (l > 0) {
      delta = (up.array() * act_d1(cache.pre[l - 1].array(), activation_)).matrix();
    } else {
      g.input = std::move(up);
    }
  }
  return g;
}

Eigen::MatrixXd Mlp::input_gradient(const Cache& cache) const {
  const Eigen::Index batch = cache.post.front().cols();
  Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(1, batch);
  return backward(cache, ones).input;
}

// Reverse pass being differentiated, for l = L-1 .. 1 (hidden layers):
//   g_{L-1} = w_L,  d_l = g_l * act'(z_l),  g_{l-1} = W_l^T d_l,  result g_0.
// Its adjoint runs l = 1 .. L-1 and then feeds the forward-pass adjoint.
Mlp::Gradient Mlp::input_gradient_backward(const Cache& cache, const Eigen::MatrixXd& d_input_gradient) const {
  if (output_size() != 1) throw InvalidArgument("mlp: input_gradient_backward needs a scalar output");
  const std::size_t n = weights_.size();
  const std::size_t hidden = n - 1;
  const Eigen::Index batch = cache.post.front().cols();

  // Recompute the reverse pass, keeping g_l and d_l.
  std::vector<Eigen::MatrixXd> g(n);  // g[l] for l = 0..hidden
  std::vector<Eigen::MatrixXd> d(n);  // d[l] for l = 1..hidden
  g[hidden] = weights_[hidden].transpose() * Eigen::MatrixXd::Ones(1, batch);
  for (std::size_t l = hidden; l >= 1; --l) {
    d[l] = (g[l].array() * act_d1(cache.pre[l - 1].array(), activation_)).matrix();
    g[l - 1] = weights_[l - 1].transpose() * d[l];
  }

  Gradient out;
  out.weights.resize(n);
  out.biases.resize(n);
  for (std::size_t l = 0; l < n; ++l) {
    out.weights[l] = Eigen::MatrixXd::Zero(weights_[l].rows(), weights_[l].cols());
    out.biases[l] = Eigen::VectorXd::Zero(biases_[l].size());
  }

  std::vector<Eigen::MatrixXd> z_bar(n);  // direct adjoints of z_l (index l-1 in cache.pre)
  Eigen::MatrixXd g_bar = d_input_gradient;  // adjoint of g_0
  for (std::size_t l = 1; l <= hidden; ++l) {
    // g_{l-1} = W_l^T d_l  (W_l is weights_[l-1])
    out.weights[l - 1] += d[l] * g_bar.transpose();
    const Eigen::MatrixXd d_bar = weights_[l - 1] * g_bar;
    const Eigen::ArrayXXd& z = cache.pre[l - 1].array();
    // d_l = g_l * act'(z_l)
    z_bar[l] = (d_bar.array() * g[l].array() * act_d2(z, activation_)).matrix();
    g_bar = (d_bar.array() * act_d1(z, activation_)).matrix();
  }
  // g_hidden = w_L^T * 1
  out.weights[hidden] += g_bar.rowwise().sum().transpose();

  // Forward-pass adjoint. The scalar output itself does not enter the loss.
  Eigen::MatrixXd a_bar;
  for (std::size_t l = hidden; l >= 1; --l) {
    Eigen::MatrixXd zt = z_bar[l];
    if (l < hidden) zt += (a_bar.array() * act_d1(cache.pre[l - 1].array(), activation_)).matrix();
    out.weights[l - 1] += zt * cache.post[l - 1].transpose();
    out.biases[l - 1] += zt.rowwise().sum();
    a_bar = weights_[l - 1].transpose() * zt;
  }
  out.input = a_bar;
  return out;
}

bool Mlp::operator==(const Mlp& other) const {
  if (sizes_ != other.sizes_ || activation_ != other.activation_) return false;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (weights_[l] != other.weights_[l] || biases_[l] != other.biases_[l]) return false;
  }
  return true;
}

Adam::Adam(const Mlp& model, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    mw_.push_back(Eigen::MatrixXd::Zero(model.weights()[l].rows(), model.weights()[l].cols()));
    vw_.push_back(mw_.back());
    mb_.push_back(Eigen::VectorXd::Zero(model.biases()[l].size()));
    vb_.push_back(mb_.back());
  }
}

void Adam::step(Mlp& model, const Mlp::Gradient& grad, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    mw_[l] = beta1_ * mw_[l] + (1.0 - beta1_) * grad.weights[l];
    vw_[l] = beta2_ * vw_[l] + (1.0 - beta2_) * grad.weights[l].cwiseAbs2();
    model.weights()[l].array() -= lr * (mw_[l].array() / c1) / ((vw_[l].array() / c2).sqrt() + eps_);
    mb_[l] = beta1_ * mb_[l] + (1.0 - beta1_) * grad.biases[l];
    vb_[l] = beta2_ * vb_[l] + (1.0 - beta2_) * grad.biases[l].cwiseAbs2();
    model.biases()[l].array() -= lr * (mb_[l].array() / c1) / ((vb_[l].array() / c2).sqrt() + eps_);
  }
}

double decayed_learning_rate(double lr_start, double lr_end, int step, int total_steps) {
  if (total_steps <= 1) return lr_start;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return lr_start * std::pow(lr_end / lr_start, frac);
}

}  // namespace genpose
