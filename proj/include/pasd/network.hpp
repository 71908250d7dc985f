#ifndef PASD_NETWORK_HPP_
#define PASD_NETWORK_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pasd {

// Dense feed-forward networks with exact reverse-mode gradients and an Adam
// optimizer. Batches are column-major: one sample per column.

enum class Activation : std::uint8_t { kTanh, kRelu };
enum class OutputTransform : std::uint8_t { kIdentity, kSoftmax, kSigmoid, kL2Normalize, kTanh };

std::string to_string(Activation a);
std::string to_string(OutputTransform t);
Activation activation_from_string(const std::string& s);
OutputTransform output_transform_from_string(const std::string& s);

struct NetworkSpec {
  std::vector<int> sizes;             // input, hidden..., output
  std::vector<Activation> hidden;     // one per hidden layer
  OutputTransform output = OutputTransform::kIdentity;
  double output_scale = 1.0;          // init scale of the last weight matrix

  static NetworkSpec mlp(int input, std::vector<int> hidden_sizes, int output,
                         OutputTransform transform = OutputTransform::kIdentity,
                         Activation activation = Activation::kTanh, double output_scale = 1.0);

  int input_size() const { return sizes.front(); }
  int output_size() const { return sizes.back(); }
  int layer_count() const { return static_cast<int>(sizes.size()) - 1; }
  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

// Parameter-shaped accumulator.
struct Gradients {
  std::vector<DenseLayer> layers;

  static Gradients zeros_like(const std::vector<DenseLayer>& shape);
  void set_zero();
  double squared_norm() const;
  void scale(double factor);
  bool all_finite() const;
  Gradients& operator+=(const Gradients& other);
};

struct ParamSet {
  NetworkSpec spec;
  std::vector<DenseLayer> layers;
  // Adam state.
  std::vector<DenseLayer> first_moment;
  std::vector<DenseLayer> second_moment;
  std::int64_t step = 0;

  std::size_t parameter_count() const;
  bool all_finite() const;
  bool operator==(const ParamSet& other) const;
};

ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed);

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer (post-activation of the previous)
  std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
  Eigen::MatrixXd output;               // transformed output
};

// Batch forward. Throws NumericError on non-finite input, ShapeError on size
// mismatch.
Eigen::MatrixXd forward(const ParamSet& params, const Eigen::MatrixXd& input,
                        ForwardCache* cache = nullptr);
Eigen::VectorXd forward(const ParamSet& params, const Eigen::VectorXd& input);

// Accumulates parameter gradients of <output_grad, output> summed over the
// batch into `grads`. Writes d/d(input) to `input_grad` when non-null.
void backward(const ParamSet& params, const ForwardCache& cache,
              const Eigen::MatrixXd& output_grad, Gradients& grads,
              Eigen::MatrixXd* input_grad = nullptr);
Gradients backward(const ParamSet& params, const ForwardCache& cache,
                   const Eigen::MatrixXd& output_grad);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One bias-corrected Adam update in place. Throws NumericError on non-finite
// gradients.
void adam_step(ParamSet& params, const Gradients& grads, double learning_rate,
               const AdamConfig& cfg = {});

// Rescales all gradient sets jointly so their global L2 norm is at most
// max_norm. Returns the norm before clipping.
double clip_global_norm(std::span<Gradients* const> grads, double max_norm);

}  // namespace pasd

#endif  // PASD_NETWORK_HPP_
