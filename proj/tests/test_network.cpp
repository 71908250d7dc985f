#include <gtest/gtest.h>

#include <cmath>

#include "pasd/network.hpp"
#include "test_util.hpp"

namespace pasd {
namespace {

using testing::random_matrix;
using testing::relative_error;
using testing::worst_param_error;

constexpr OutputTransform kTransforms[] = {OutputTransform::kIdentity, OutputTransform::kSoftmax,
                                           OutputTransform::kSigmoid, OutputTransform::kL2Normalize,
                                           OutputTransform::kTanh};

TEST(Network, ForwardMatchesHandComputedTwoLayerNet) {
  ParamSet p = init_params(NetworkSpec::mlp(2, {2}, 1), 3);
  p.layers[0].weight << 1.0, -1.0, 0.5, 2.0;
  p.layers[0].bias << 0.0, 0.1;
  p.layers[1].weight << 2.0, -3.0;
  p.layers[1].bias << 0.25;
  Eigen::VectorXd x(2);
  x << 0.3, -0.2;
  const double h0 = std::tanh(0.3 + 0.2);
  const double h1 = std::tanh(0.15 - 0.4 + 0.1);
  EXPECT_NEAR(forward(p, x)(0), 2.0 * h0 - 3.0 * h1 + 0.25, 1e-15);
}

TEST(Network, OutputTransformsHaveTheirDefiningProperties) {
  Rng rng(5);
  const Eigen::MatrixXd x = random_matrix(rng, 4, 7, 2.0);
  for (OutputTransform t : kTransforms) {
    ParamSet p = init_params(NetworkSpec::mlp(4, {5}, 3, t), 11);
    const Eigen::MatrixXd y = forward(p, x);
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      switch (t) {
        case OutputTransform::kSoftmax:
          EXPECT_NEAR(y.col(j).sum(), 1.0, 1e-12);
          EXPECT_GT(y.col(j).minCoeff(), 0.0);
          break;
        case OutputTransform::kSigmoid:
          EXPECT_GT(y.col(j).minCoeff(), 0.0);
          EXPECT_LT(y.col(j).maxCoeff(), 1.0);
          break;
        case OutputTransform::kL2Normalize:
          EXPECT_NEAR(y.col(j).norm(), 1.0, 1e-12);
          break;
        case OutputTransform::kTanh:
          EXPECT_LE(y.col(j).cwiseAbs().maxCoeff(), 1.0);
          break;
        case OutputTransform::kIdentity:
          break;
      }
    }
  }
}

TEST(Network, BatchForwardEqualsColumnwiseForward) {
  Rng rng(8);
  ParamSet p = init_params(NetworkSpec::mlp(3, {6, 4}, 2, OutputTransform::kSoftmax), 2);
  const Eigen::MatrixXd x = random_matrix(rng, 3, 5);
  const Eigen::MatrixXd y = forward(p, x);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Eigen::VectorXd col = x.col(j);
    EXPECT_LT((forward(p, col) - y.col(j)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

// Random network, random batch, random linear functional of the output.
struct GradCase {
  ParamSet params;
  Eigen::MatrixXd input;
  Eigen::MatrixXd probe;
};

GradCase random_case(Rng& rng, OutputTransform t, std::uint64_t seed) {
  const int in = 1 + static_cast<int>(rng.index(5));
  const int out = (t == OutputTransform::kSoftmax || t == OutputTransform::kL2Normalize)
                      ? 2 + static_cast<int>(rng.index(4))
                      : 1 + static_cast<int>(rng.index(4));
  std::vector<int> hidden;
  const int depth = static_cast<int>(rng.index(3));
  for (int d = 0; d < depth; ++d) hidden.push_back(1 + static_cast<int>(rng.index(6)));
  const Activation act = rng.bernoulli(0.3) ? Activation::kRelu : Activation::kTanh;
  GradCase c;
  c.params = init_params(NetworkSpec::mlp(in, hidden, out, t, act), seed);
  // Move the weights off their small initial values so the check is not
  // dominated by near-linear regimes.
  for (auto& layer : c.params.layers) {
    layer.weight = random_matrix(rng, layer.weight.rows(), layer.weight.cols(), 1.5);
    layer.bias = random_matrix(rng, layer.bias.rows(), 1, 0.5);
  }
  const int batch = 1 + static_cast<int>(rng.index(4));
  c.input = random_matrix(rng, in, batch, 1.5);
  c.probe = random_matrix(rng, out, batch, 1.0);
  return c;
}

TEST(Network, BackwardMatchesCentralDifferencesForEveryTransform) {
  Rng rng(20240601);
  int cases = 0;
  for (int round = 0; round < 24; ++round) {
    for (OutputTransform t : kTransforms) {
      GradCase c = random_case(rng, t, rng.next());
      ForwardCache cache;
      forward(c.params, c.input, &cache);
      Gradients g = Gradients::zeros_like(c.params.layers);
      Eigen::MatrixXd dx;
      backward(c.params, cache, c.probe, g, &dx);
      auto loss = [&] { return (forward(c.params, c.input).array() * c.probe.array()).sum(); };
      EXPECT_LT(worst_param_error(c.params, g, loss), 1e-4) << "transform " << to_string(t);
      for (Eigen::Index i = 0; i < c.input.size(); ++i) {
        const double saved = c.input.data()[i];
        c.input.data()[i] = saved + 1e-5;
        const double up = loss();
        c.input.data()[i] = saved - 1e-5;
        const double down = loss();
        c.input.data()[i] = saved;
        EXPECT_LT(relative_error(dx.data()[i], (up - down) / 2e-5), 1e-4);
      }
      ++cases;
    }
  }
  EXPECT_GE(cases, 100);
}

TEST(Network, BackwardAccumulatesIntoExistingGradients) {
  Rng rng(4);
  ParamSet p = init_params(NetworkSpec::mlp(3, {4}, 2), 9);
  const Eigen::MatrixXd x = random_matrix(rng, 3, 2);
  const Eigen::MatrixXd r = random_matrix(rng, 2, 2);
  ForwardCache cache;
  forward(p, x, &cache);
  Gradients once = backward(p, cache, r);
  Gradients twice = Gradients::zeros_like(p.layers);
  backward(p, cache, r, twice);
  backward(p, cache, r, twice);
  once.scale(2.0);
  EXPECT_NEAR(once.squared_norm(), twice.squared_norm(), 1e-12);
}

TEST(Network, AdamFirstStepMovesEachParameterByLearningRate) {
  // With bias correction the first update is lr * g / (|g| + eps) per entry.
  ParamSet p = init_params(NetworkSpec::mlp(2, {}, 1), 1);
  p.layers[0].weight << 0.5, -0.25;
  p.layers[0].bias << 0.0;
  Gradients g = Gradients::zeros_like(p.layers);
  g.layers[0].weight << 2.0, -0.001;
  g.layers[0].bias << 0.0;
  adam_step(p, g, 0.1);
  EXPECT_NEAR(p.layers[0].weight(0, 0), 0.5 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-12);
  EXPECT_NEAR(p.layers[0].weight(0, 1), -0.25 + 0.1 * 0.001 / (0.001 + 1e-8), 1e-12);
  EXPECT_EQ(p.layers[0].bias(0), 0.0);
  EXPECT_EQ(p.step, 1);
}

TEST(Network, AdamSecondStepMatchesReferenceRecurrence) {
  ParamSet p = init_params(NetworkSpec::mlp(1, {}, 1), 1);
  p.layers[0].weight << 1.0;
  p.layers[0].bias << 0.0;
  Gradients g = Gradients::zeros_like(p.layers);
  const double grads[2] = {0.3, -0.7};
  double w = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    g.layers[0].weight << grads[t - 1];
    adam_step(p, g, 0.01);
    m = 0.9 * m + 0.1 * grads[t - 1];
    v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    w -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
  }
  EXPECT_NEAR(p.layers[0].weight(0, 0), w, 1e-14);
}

TEST(Network, ClipGlobalNormRescalesJointly) {
  ParamSet p = init_params(NetworkSpec::mlp(1, {}, 1), 1);
  Gradients a = Gradients::zeros_like(p.layers), b = Gradients::zeros_like(p.layers);
  a.layers[0].weight << 3.0;
  b.layers[0].bias << 4.0;
  Gradients* both[2] = {&a, &b};
  EXPECT_DOUBLE_EQ(clip_global_norm(both, 1.0), 5.0);
  EXPECT_NEAR(a.layers[0].weight(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(b.layers[0].bias(0), 0.8, 1e-15);
  EXPECT_NEAR(clip_global_norm(both, 10.0), 1.0, 1e-15);
  EXPECT_NEAR(a.layers[0].weight(0, 0), 0.6, 1e-15);
}

TEST(Network, RejectsMalformedInput) {
  ParamSet p = init_params(NetworkSpec::mlp(3, {2}, 1), 1);
  EXPECT_THROW(forward(p, Eigen::VectorXd(Eigen::VectorXd::Zero(2))), ShapeError);
  Eigen::VectorXd bad = Eigen::VectorXd::Zero(3);
  bad(1) = std::nan("");
  EXPECT_THROW(forward(p, bad), NumericError);
  Gradients g = Gradients::zeros_like(p.layers);
  g.layers[0].weight(0, 0) = INFINITY;
  EXPECT_THROW(adam_step(p, g, 0.1), NumericError);
}

TEST(Network, InitIsSeedDeterministic) {
  const NetworkSpec spec = NetworkSpec::mlp(4, {8}, 3);
  EXPECT_TRUE(init_params(spec, 7) == init_params(spec, 7));
  EXPECT_FALSE(init_params(spec, 7) == init_params(spec, 8));
}

}  // namespace
}  // namespace pasd
