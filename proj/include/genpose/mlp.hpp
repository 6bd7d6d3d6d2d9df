#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace genpose {

using Rng = std::mt19937_64;

// Independent stream `stream` of the generator family keyed by `seed`.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

enum class Activation : std::uint32_t { silu = 0, tanh = 1 };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

// Dense multilayer perceptron. Hidden layers use the activation, the output
// layer is linear. Batches are stored column-wise (one sample per column).
class Mlp {
 public:
  struct Cache {
    std::vector<Eigen::MatrixXd> pre;   // z_l for every layer
    std::vector<Eigen::MatrixXd> post;  // a_0 = input, a_l = act(z_l) for hidden layers
  };

  struct Gradient {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    Eigen::MatrixXd input;  // d loss / d input, one column per sample
  };

  Mlp() = default;
  Mlp(std::vector<int> sizes, Activation activation, Rng& rng);
  Mlp(std::vector<int> sizes, Activation activation, std::vector<Eigen::MatrixXd> weights,
      std::vector<Eigen::VectorXd> biases);

  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  Activation activation() const { return activation_; }
  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }
  std::vector<Eigen::MatrixXd>& weights() { return weights_; }
  std::vector<Eigen::VectorXd>& biases() { return biases_; }
  std::size_t layer_count() const { return weights_.size(); }
  std::size_t parameter_count() const;

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Cache& cache) const;

  // Reverse pass for an upstream gradient on the outputs.
  Gradient backward(const Cache& cache, const Eigen::MatrixXd& d_output) const;

  // For scalar-output nets: gradient of the output with respect to the input.
  Eigen::MatrixXd input_gradient(const Cache& cache) const;

  // For scalar-output nets: parameter gradient of L(input_gradient) given
  // dL/d(input_gradient). Differentiates through the reverse pass exactly.
  Gradient input_gradient_backward(const Cache& cache, const Eigen::MatrixXd& d_input_gradient) const;

  bool operator==(const Mlp& other) const;

 private:
  std::vector<int> sizes_;
  Activation activation_ = Activation::silu;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

class Adam {
 public:
  explicit Adam(const Mlp& model, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(Mlp& model, const Mlp::Gradient& grad, double lr);

 private:
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<Eigen::MatrixXd> mw_, vw_;
  std::vector<Eigen::VectorXd> mb_, vb_;
};

// Exponential interpolation from lr_start at step 0 to lr_end at the last step.
double decayed_learning_rate(double lr_start, double lr_end, int step, int total_steps);

}  // namespace genpose
