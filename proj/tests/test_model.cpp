#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <doctest.h>

#include "fairbase/data.hpp"
#include "fairbase/errors.hpp"
#include "fairbase/model.hpp"
#include "fairbase/objective.hpp"
#include "fairbase/trainer.hpp"
#include "test_support.hpp"

using namespace fairbase;
using testsupport::close_rel;

namespace {

model::ModelSpec small_spec(std::vector<int> hidden,
                            model::Activation activation = model::Activation::kTanh) {
  model::ModelSpec spec;
  spec.input_dim = 3;
  spec.hidden_dims = std::move(hidden);
  spec.num_classes = 2;
  spec.activation = activation;
  spec.init_seed = 42;
  return spec;
}

}  // namespace

TEST_CASE("init_params: determinism, shapes, bounds") {
  const model::ModelSpec spec = small_spec({5, 4});
  const model::ModelParams a = model::init_params(spec);
  const model::ModelParams b = model::init_params(spec);
  REQUIRE(a.layers.size() == 3);
  CHECK(a.layers[0].in_dim == 3);
  CHECK(a.layers[0].out_dim == 5);
  CHECK(a.layers[1].in_dim == 5);
  CHECK(a.layers[1].out_dim == 4);
  CHECK(a.layers[2].out_dim == 2);
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    CHECK(a.layers[l].weights == b.layers[l].weights);  // bit-identical
    const double bound = std::sqrt(6.0 / a.layers[l].in_dim);
    for (double w : a.layers[l].weights) {
      CHECK(std::abs(w) <= bound);
    }
    for (double bias : a.layers[l].bias) CHECK(bias == 0.0);
  }

  model::ModelSpec other = spec;
  other.init_seed = 43;
  CHECK(model::init_params(other).layers[0].weights != a.layers[0].weights);

  const model::ModelSpec linear = small_spec({});
  const model::ModelParams p = model::init_params(linear);
  REQUIRE(p.layers.size() == 1);
  CHECK(p.layers[0].in_dim == 3);
  CHECK(p.layers[0].out_dim == 2);

  model::ModelSpec bad = spec;
  bad.num_classes = 1;
  CHECK_THROWS_AS(model::init_params(bad), ArgumentError);
  bad = spec;
  bad.hidden_dims = {0};
  CHECK_THROWS_AS(model::init_params(bad), ArgumentError);
}

TEST_CASE("forward: hand values and batch consistency") {
  model::ModelSpec spec;
  spec.input_dim = 2;
  spec.num_classes = 2;
  model::ModelParams params;
  model::Layer layer;
  layer.in_dim = 2;
  layer.out_dim = 2;
  layer.weights = {2.0, 3.0, 5.0, 7.0};  // rows [2,3] and [5,7]
  layer.bias = {0.0, 0.0};
  params.layers.push_back(layer);

  const auto logits = model::forward(spec, params, {{1.0, 0.0}}).logits;
  CHECK(logits[0][0] == 2.0);  // first weight column
  CHECK(logits[0][1] == 5.0);

  model::ModelParams zeros = params;
  zeros.layers[0].weights = {0, 0, 0, 0};
  const auto flat = model::forward(spec, zeros, {{3.0, -1.0}}).logits;
  CHECK(flat[0][0] == 0.0);
  CHECK(flat[0][1] == 0.0);

  CHECK_THROWS_AS(model::forward(spec, params, {{1.0, 2.0, 3.0}}), ArgumentError);
  CHECK_THROWS_AS(model::forward(spec, params, {}), EmptyInputError);

  // batch forward equals per-sample forward
  const model::ModelSpec deep = small_spec({6, 5}, model::Activation::kRelu);
  const model::ModelParams dp = model::init_params(deep);
  std::mt19937_64 engine(9);
  std::uniform_real_distribution<double> value(-1.0, 1.0);
  std::vector<std::vector<double>> features(7, std::vector<double>(3));
  for (auto& row : features) {
    for (double& v : row) v = value(engine);
  }
  const auto batched = model::forward(deep, dp, features).logits;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto single = model::forward(deep, dp, {features[i]}).logits;
    CHECK(single[0] == batched[i]);
  }
}

TEST_CASE("backward: zero propagation, linearity, finite differences") {
  const model::ModelSpec spec = small_spec({8, 6});
  const model::ModelParams params = model::init_params(spec);
  std::mt19937_64 engine(77);
  std::uniform_real_distribution<double> value(-1.0, 1.0);
  std::vector<std::vector<double>> features(5, std::vector<double>(3));
  for (auto& row : features) {
    for (double& v : row) v = value(engine);
  }
  const model::Forward fwd = model::forward(spec, params, features);

  std::vector<std::vector<double>> zero(5, std::vector<double>(2, 0.0));
  const model::ParamGrads none = model::backward(spec, params, fwd.cache, zero);
  for (const auto& layer : none.layers) {
    for (double g : layer.weights) CHECK(g == 0.0);
    for (double g : layer.bias) CHECK(g == 0.0);
  }

  std::vector<std::vector<double>> grad(5, std::vector<double>(2));
  for (auto& row : grad) {
    for (double& v : row) v = value(engine);
  }
  const auto once = model::backward(spec, params, fwd.cache, grad);
  auto twice_grad = grad;
  for (auto& row : twice_grad) {
    for (double& v : row) v *= 2.0;
  }
  const auto twice = model::backward(spec, params, fwd.cache, twice_grad);
  for (std::size_t l = 0; l < once.layers.size(); ++l) {
    for (std::size_t i = 0; i < once.layers[l].weights.size(); ++i) {
      CHECK(twice.layers[l].weights[i] == doctest::Approx(2.0 * once.layers[l].weights[i]));
    }
  }

  CHECK_THROWS_AS(model::backward(spec, params, fwd.cache,
                                  std::vector<std::vector<double>>{{1.0, 0.0}}),
                  ArgumentError);
}

TEST_CASE("full-pipeline parameter gradients match finite differences") {
  const model::ModelSpec spec = small_spec({8, 6});  // tanh keeps the loss smooth
  OutputBatch labels;
  std::mt19937_64 engine(123);
  std::uniform_real_distribution<double> value(-1.0, 1.0);
  std::uniform_int_distribution<int> target(0, 1);
  std::vector<std::vector<double>> features(6, std::vector<double>(3));
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (double& v : features[i]) v = value(engine);
    labels.targets.push_back(target(engine));
    labels.demographics.push_back(static_cast<int>(i) % 2);
  }

  objective::ObjectiveConfig config;
  config.gamma = 0.5;
  config.kappa = 3.0;

  model::ModelParams params = model::init_params(spec);
  auto loss_at = [&](const model::ModelParams& p) {
    OutputBatch batch = labels;
    batch.outputs = model::forward(spec, p, features).logits;
    return objective::total_loss(batch, config).total;
  };

  OutputBatch batch = labels;
  const model::Forward fwd = model::forward(spec, params, features);
  batch.outputs = fwd.logits;
  const auto loss = objective::total_loss(batch, config);
  const model::ParamGrads grads =
      model::backward(spec, params, fwd.cache, loss.grad_outputs);

  const double h = 1e-5;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto probe = [&](std::vector<double> model::Layer::* member, std::size_t i,
                     double analytic) {
      model::ModelParams shifted = params;
      (shifted.layers[l].*member)[i] += h;
      const double up = loss_at(shifted);
      (shifted.layers[l].*member)[i] -= 2.0 * h;
      const double down = loss_at(shifted);
      const double fd = (up - down) / (2.0 * h);
      CHECK(close_rel(analytic, fd, 1e-4));
    };
    for (std::size_t i = 0; i < params.layers[l].weights.size(); i += 3) {
      probe(&model::Layer::weights, i, grads.layers[l].weights[i]);
    }
    for (std::size_t i = 0; i < params.layers[l].bias.size(); ++i) {
      probe(&model::Layer::bias, i, grads.layers[l].bias[i]);
    }
  }
}

TEST_CASE("adamw: decay-only step, sign asymptote, divergence guard") {
  const model::ModelSpec spec = small_spec({});
  model::ModelParams params = model::init_params(spec);
  const model::ModelParams before = params;
  model::OptimizerState state = model::init_optimizer(params, 0.1, 0.02);

  model::ParamGrads zero = params;
  for (auto& layer : zero.layers) {
    std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  model::adamw_step(params, zero, state);
  CHECK(state.step_count == 1);
  const double shrink = 1.0 - 0.1 * 0.02;
  for (std::size_t i = 0; i < params.layers[0].weights.size(); ++i) {
    CHECK(params.layers[0].weights[i] == before.layers[0].weights[i] * shrink);
  }

  // zero decay + constant gradient: every update is exactly -lr * sign(g)
  // up to the eps regularizer, because the bias corrections cancel
  params = model::init_params(spec);
  state = model::init_optimizer(params, 0.01, 0.0);
  model::ParamGrads constant = zero;
  std::fill(constant.layers[0].weights.begin(), constant.layers[0].weights.end(), 0.5);
  for (int step = 0; step < 25; ++step) {
    const double w0 = params.layers[0].weights[0];
    model::adamw_step(params, constant, state);
    CHECK(std::abs((w0 - params.layers[0].weights[0]) - 0.01) <= 1e-6);
  }
  CHECK(state.step_count == 25);

  // determinism: same inputs, same outputs
  model::ModelParams p1 = model::init_params(spec);
  model::ModelParams p2 = model::init_params(spec);
  model::OptimizerState s1 = model::init_optimizer(p1, 0.01, 0.02);
  model::OptimizerState s2 = model::init_optimizer(p2, 0.01, 0.02);
  model::adamw_step(p1, constant, s1);
  model::adamw_step(p2, constant, s2);
  CHECK(p1.layers[0].weights == p2.layers[0].weights);

  model::ParamGrads bad = constant;
  bad.layers[0].weights[1] = std::nan("");
  CHECK_THROWS_AS(model::adamw_step(params, bad, state), NumericError);
  bad.layers[0].weights[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(model::adamw_step(params, bad, state), NumericError);

  model::ParamGrads misshapen = constant;
  misshapen.layers[0].out_dim += 1;
  CHECK_THROWS_AS(model::adamw_step(params, misshapen, state), ArgumentError);
}

TEST_CASE("linear model separates linearly separable data perfectly") {
  data::Dataset dataset;
  dataset.num_classes = 2;
  dataset.num_demographics = 2;
  std::mt19937_64 engine(2024);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  for (int i = 0; i < 120; ++i) {
    data::LabeledSample sample;
    sample.target = i % 2;
    sample.demographic = (i / 2) % 2;
    const double center = sample.target == 0 ? -2.0 : 2.0;
    sample.features = {center + jitter(engine), jitter(engine)};
    dataset.samples.push_back(sample);
  }

  model::ModelSpec spec;
  spec.input_dim = 2;
  spec.num_classes = 2;
  spec.init_seed = 3;

  trainer::TrainConfig config;
  config.epochs = 200;
  config.batch_size = 120;
  config.base_lr = 0.05;
  config.lr_schedule = trainer::LrSchedule::kConstant;
  config.seed = 5;

  const trainer::TrainResult result = trainer::train(dataset, spec, config);
  CHECK(result.history.epochs.back().train_accuracy == 1.0);
}
