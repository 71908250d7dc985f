#include "pasd/network.hpp"

#include <cmath>

#include "pasd/common.hpp"

namespace pasd {

std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "relu"; }

std::string to_string(OutputTransform t) {
  switch (t) {
    case OutputTransform::kIdentity: return "identity";
    case OutputTransform::kSoftmax: return "softmax";
    case OutputTransform::kSigmoid: return "sigmoid";
    case OutputTransform::kL2Normalize: return "l2_normalize";
    case OutputTransform::kTanh: return "tanh";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + s + "'");
}

OutputTransform output_transform_from_string(const std::string& s) {
  for (auto t : {OutputTransform::kIdentity, OutputTransform::kSoftmax, OutputTransform::kSigmoid,
                 OutputTransform::kL2Normalize, OutputTransform::kTanh})
    if (to_string(t) == s) return t;
  throw ConfigError("unknown output transform '" + s + "'");
}

NetworkSpec NetworkSpec::mlp(int input, std::vector<int> hidden_sizes, int output,
                             OutputTransform transform, Activation activation,
                             double output_scale) {
  NetworkSpec spec;
  spec.sizes.push_back(input);
  for (int h : hidden_sizes) spec.sizes.push_back(h);
  spec.sizes.push_back(output);
  spec.hidden.assign(hidden_sizes.size(), activation);
  spec.output = transform;
  spec.output_scale = output_scale;
  spec.validate();
  return spec;
}

void NetworkSpec::validate() const {
  if (sizes.size() < 2) throw ConfigError("network needs at least one layer");
  for (int s : sizes)
    if (s <= 0) throw ConfigError("network layer sizes must be positive");
  if (hidden.size() != sizes.size() - 2)
    throw ConfigError("one activation per hidden layer required");
}

Gradients Gradients::zeros_like(const std::vector<DenseLayer>& shape) {
  Gradients g;
  g.layers.reserve(shape.size());
  for (const auto& l : shape)
    g.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                        Eigen::VectorXd::Zero(l.bias.size())});
  return g;
}

void Gradients::set_zero() {
  for (auto& l : layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const auto& l : layers) s += l.weight.squaredNorm() + l.bias.squaredNorm();
  return s;
}

void Gradients::scale(double factor) {
  for (auto& l : layers) {
    l.weight *= factor;
    l.bias *= factor;
  }
}

bool Gradients::all_finite() const {
  for (const auto& l : layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

Gradients& Gradients::operator+=(const Gradients& other) {
  if (other.layers.size() != layers.size()) throw ShapeError("gradient layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += other.layers[i].weight;
    layers[i].bias += other.layers[i].bias;
  }
  return *this;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

bool ParamSet::all_finite() const {
  for (const auto& l : layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

namespace {

bool same_layers(const std::vector<DenseLayer>& a, const std::vector<DenseLayer>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].weight.rows() != b[i].weight.rows() || a[i].weight.cols() != b[i].weight.cols() ||
        a[i].bias.size() != b[i].bias.size())
      return false;
    if (a[i].weight != b[i].weight || a[i].bias != b[i].bias) return false;
  }
  return true;
}

}  // namespace

bool ParamSet::operator==(const ParamSet& other) const {
  return spec == other.spec && step == other.step && same_layers(layers, other.layers) &&
         same_layers(first_moment, other.first_moment) &&
         same_layers(second_moment, other.second_moment);
}

ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamSet p;
  p.spec = spec;
  Rng rng(mix_seed(seed, 0x6e6574));
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int in = spec.sizes[l];
    const int out = spec.sizes[l + 1];
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    if (l == spec.layer_count() - 1) bound *= spec.output_scale;
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    // Row-major fill order so the draw sequence does not depend on storage.
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) layer.weight(r, c) = (2.0 * rng.uniform() - 1.0) * bound;
    p.layers.push_back(std::move(layer));
  }
  p.first_moment = Gradients::zeros_like(p.layers).layers;
  p.second_moment = Gradients::zeros_like(p.layers).layers;
  return p;
}

namespace {

void apply_transform(OutputTransform t, const Eigen::MatrixXd& pre, Eigen::MatrixXd& out) {
  switch (t) {
    case OutputTransform::kIdentity:
      out = pre;
      break;
    case OutputTransform::kSoftmax: {
      out.resize(pre.rows(), pre.cols());
      for (Eigen::Index j = 0; j < pre.cols(); ++j) {
        const double m = pre.col(j).maxCoeff();
        out.col(j) = (pre.col(j).array() - m).exp().matrix();
        out.col(j) /= out.col(j).sum();
      }
      break;
    }
    case OutputTransform::kSigmoid:
      out = pre.unaryExpr([](double x) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      });
      break;
    case OutputTransform::kL2Normalize: {
      out.resize(pre.rows(), pre.cols());
      for (Eigen::Index j = 0; j < pre.cols(); ++j) {
        const double n = pre.col(j).norm();
        if (!(n > 0.0)) throw NumericError("l2_normalize of a zero vector");
        out.col(j) = pre.col(j) / n;
      }
      break;
    }
    case OutputTransform::kTanh:
      out = pre.array().tanh().matrix();
      break;
  }
}

Eigen::MatrixXd transform_backward(OutputTransform t, const Eigen::MatrixXd& pre,
                                   const Eigen::MatrixXd& out, const Eigen::MatrixXd& g) {
  switch (t) {
    case OutputTransform::kIdentity:
      return g;
    case OutputTransform::kSoftmax: {
      Eigen::MatrixXd d(g.rows(), g.cols());
      for (Eigen::Index j = 0; j < g.cols(); ++j) {
        const double dot = out.col(j).dot(g.col(j));
        d.col(j) = (out.col(j).array() * (g.col(j).array() - dot)).matrix();
      }
      return d;
    }
    case OutputTransform::kSigmoid:
      return (g.array() * out.array() * (1.0 - out.array())).matrix();
    case OutputTransform::kL2Normalize: {
      Eigen::MatrixXd d(g.rows(), g.cols());
      for (Eigen::Index j = 0; j < g.cols(); ++j) {
        const double n = pre.col(j).norm();
        const double dot = out.col(j).dot(g.col(j));
        d.col(j) = (g.col(j) - out.col(j) * dot) / n;
      }
      return d;
    }
    case OutputTransform::kTanh:
      return (g.array() * (1.0 - out.array().square())).matrix();
  }
  return g;
}

}  // namespace

Eigen::MatrixXd forward(const ParamSet& params, const Eigen::MatrixXd& input,
                        ForwardCache* cache) {
  const NetworkSpec& spec = params.spec;
  if (input.rows() != spec.input_size())
    throw ShapeError("forward: input has " + std::to_string(input.rows()) + " rows, expected " +
                     std::to_string(spec.input_size()));
  if (!input.allFinite()) throw NumericError("forward: non-finite input");
  const int n_layers = spec.layer_count();
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
    cache->inputs.reserve(n_layers);
    cache->pre.reserve(n_layers);
  }
  Eigen::MatrixXd x = input;
  Eigen::MatrixXd out;
  for (int l = 0; l < n_layers; ++l) {
    const DenseLayer& layer = params.layers[l];
    Eigen::MatrixXd z = layer.weight * x;
    z.colwise() += layer.bias;
    if (cache) cache->inputs.push_back(x);
    if (l + 1 < n_layers) {
      x = spec.hidden[l] == Activation::kTanh ? Eigen::MatrixXd(z.array().tanh().matrix())
                                              : Eigen::MatrixXd(z.cwiseMax(0.0));
      if (cache) cache->pre.push_back(std::move(z));
    } else {
      apply_transform(spec.output, z, out);
      if (cache) cache->pre.push_back(std::move(z));
    }
  }
  if (cache) cache->output = out;
  return out;
}

Eigen::VectorXd forward(const ParamSet& params, const Eigen::VectorXd& input) {
  Eigen::MatrixXd in = input;
  return forward(params, in, nullptr).col(0);
}

void backward(const ParamSet& params, const ForwardCache& cache,
              const Eigen::MatrixXd& output_grad, Gradients& grads, Eigen::MatrixXd* input_grad) {
  const NetworkSpec& spec = params.spec;
  const int n_layers = spec.layer_count();
  if (static_cast<int>(cache.inputs.size()) != n_layers ||
      static_cast<int>(cache.pre.size()) != n_layers)
    throw ShapeError("backward: cache does not match network");
  if (output_grad.rows() != cache.output.rows() || output_grad.cols() != cache.output.cols())
    throw ShapeError("backward: output gradient shape mismatch");
  if (grads.layers.size() != params.layers.size())
    throw ShapeError("backward: gradient set does not match network");

  Eigen::MatrixXd delta =
      transform_backward(spec.output, cache.pre.back(), cache.output, output_grad);
  for (int l = n_layers - 1; l >= 0; --l) {
    grads.layers[l].weight.noalias() += delta * cache.inputs[l].transpose();
    grads.layers[l].bias += delta.rowwise().sum();
    if (l == 0 && !input_grad) break;
    Eigen::MatrixXd upstream = params.layers[l].weight.transpose() * delta;
    if (l == 0) {
      *input_grad = std::move(upstream);
      break;
    }
    const Eigen::MatrixXd& a = cache.inputs[l];  // activation of layer l-1
    if (spec.hidden[l - 1] == Activation::kTanh) {
      delta = (upstream.array() * (1.0 - a.array().square())).matrix();
    } else {
      delta = (upstream.array() * (cache.pre[l - 1].array() > 0.0).cast<double>()).matrix();
    }
  }
}

Gradients backward(const ParamSet& params, const ForwardCache& cache,
                   const Eigen::MatrixXd& output_grad) {
  Gradients g = Gradients::zeros_like(params.layers);
  backward(params, cache, output_grad, g);
  return g;
}

void adam_step(ParamSet& params, const Gradients& grads, double learning_rate,
               const AdamConfig& cfg) {
  if (grads.layers.size() != params.layers.size())
    throw ShapeError("adam_step: gradient set does not match network");
  if (!grads.all_finite()) throw NumericError("adam_step: non-finite gradient");
  ++params.step;
  const double t = static_cast<double>(params.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  auto update = [&](auto& value, auto& m, auto& v, const auto& g) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    value.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].weight, params.first_moment[l].weight, params.second_moment[l].weight,
           grads.layers[l].weight);
    update(params.layers[l].bias, params.first_moment[l].bias, params.second_moment[l].bias,
           grads.layers[l].bias);
  }
}

double clip_global_norm(std::span<Gradients* const> grads, double max_norm) {
  double sq = 0.0;
  for (const Gradients* g : grads) sq += g->squared_norm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (Gradients* g : grads) g->scale(f);
  }
  return norm;
}

}  // namespace pasd
