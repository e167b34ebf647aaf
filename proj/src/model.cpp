#include "fairbase/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "fairbase/errors.hpp"
#include "rng_util.hpp"

namespace fairbase::model {

void ModelSpec::validate() const {
  if (input_dim <= 0) {
    throw ArgumentError("input_dim must be positive, got " + std::to_string(input_dim));
  }
  if (num_classes < 2) {
    throw ArgumentError("num_classes must be at least 2, got " +
                        std::to_string(num_classes));
  }
  for (int h : hidden_dims) {
    if (h <= 0) {
      throw ArgumentError("hidden layer widths must be positive, got " +
                          std::to_string(h));
    }
  }
}

namespace {

inline double activation_value(Activation activation, double x) {
  switch (activation) {
    case Activation::kRelu:
      return x > 0.0 ? x : 0.0;
    case Activation::kTanh:
      return std::tanh(x);
  }
  throw ArgumentError("unknown activation");
}

inline double activation_derivative(Activation activation, double pre) {
  switch (activation) {
    case Activation::kRelu:
      return pre > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh: {
      const double t = std::tanh(pre);
      return 1.0 - t * t;
    }
  }
  throw ArgumentError("unknown activation");
}

}  // namespace

ModelParams init_params(const ModelSpec& spec) {
  spec.validate();
  std::mt19937_64 engine(spec.init_seed);
  std::vector<int> dims;
  dims.push_back(spec.input_dim);
  dims.insert(dims.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
  dims.push_back(spec.num_classes);

  ModelParams params;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer;
    layer.in_dim = dims[l];
    layer.out_dim = dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.in_dim));
    layer.weights.resize(static_cast<std::size_t>(layer.out_dim) * layer.in_dim);
    for (double& w : layer.weights) {
      w = (rng::uniform01(engine) * 2.0 - 1.0) * bound;
    }
    layer.bias.assign(layer.out_dim, 0.0);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

Forward forward(const ModelSpec& spec, const ModelParams& params,
                const std::vector<std::vector<double>>& features) {
  if (features.empty()) {
    throw EmptyInputError("forward pass requires at least one sample");
  }
  for (const auto& row : features) {
    if (static_cast<int>(row.size()) != spec.input_dim) {
      throw ArgumentError("feature row has " + std::to_string(row.size()) +
                          " values, expected " + std::to_string(spec.input_dim));
    }
  }
  const std::size_t n = features.size();
  const std::size_t num_layers = params.layers.size();

  Forward result;
  result.cache.activation = spec.activation;
  result.cache.layer_inputs.resize(num_layers);
  result.cache.preactivations.resize(num_layers);

  std::vector<std::vector<double>> current = features;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const Layer& layer = params.layers[l];
    result.cache.layer_inputs[l] = current;
    std::vector<std::vector<double>> next(n);
    result.cache.preactivations[l].resize(n);
    const bool last = (l + 1 == num_layers);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> pre(layer.out_dim);
      for (int o = 0; o < layer.out_dim; ++o) {
        double acc = layer.bias[o];
        const double* w = &layer.weights[static_cast<std::size_t>(o) * layer.in_dim];
        for (int j = 0; j < layer.in_dim; ++j) {
          acc += w[j] * current[i][j];
        }
        pre[o] = acc;
      }
      result.cache.preactivations[l][i] = pre;
      if (last) {
        next[i] = std::move(pre);
      } else {
        next[i].resize(layer.out_dim);
        for (int o = 0; o < layer.out_dim; ++o) {
          next[i][o] = activation_value(spec.activation, pre[o]);
        }
      }
    }
    current = std::move(next);
  }
  result.logits = std::move(current);
  return result;
}

ParamGrads backward(const ModelSpec& spec, const ModelParams& params,
                    const ForwardCache& cache,
                    const std::vector<std::vector<double>>& grad_logits) {
  const std::size_t num_layers = params.layers.size();
  if (cache.layer_inputs.size() != num_layers) {
    throw ArgumentError("forward cache does not match model depth");
  }
  const std::size_t n = grad_logits.size();
  if (n == 0 || cache.layer_inputs[0].size() != n) {
    throw ArgumentError("gradient batch size does not match forward cache");
  }

  ParamGrads grads;
  grads.layers.resize(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    grads.layers[l].in_dim = params.layers[l].in_dim;
    grads.layers[l].out_dim = params.layers[l].out_dim;
    grads.layers[l].weights.assign(params.layers[l].weights.size(), 0.0);
    grads.layers[l].bias.assign(params.layers[l].bias.size(), 0.0);
  }

  std::vector<std::vector<double>> delta = grad_logits;  // grad w.r.t. layer output
  for (std::size_t li = num_layers; li-- > 0;) {
    const Layer& layer = params.layers[li];
    Layer& grad = grads.layers[li];
    const bool last = (li + 1 == num_layers);
    std::vector<std::vector<double>> prev_delta;
    const bool need_prev = li > 0;
    if (need_prev) {
      prev_delta.assign(n, std::vector<double>(layer.in_dim, 0.0));
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (static_cast<int>(delta[i].size()) != layer.out_dim) {
        throw ArgumentError("gradient row width does not match layer output");
      }
      for (int o = 0; o < layer.out_dim; ++o) {
        double d = delta[i][o];
        if (!last) {
          d *= activation_derivative(cache.activation, cache.preactivations[li][i][o]);
        }
        grad.bias[o] += d;
        double* gw = &grad.weights[static_cast<std::size_t>(o) * layer.in_dim];
        const double* w = &layer.weights[static_cast<std::size_t>(o) * layer.in_dim];
        const std::vector<double>& input = cache.layer_inputs[li][i];
        for (int j = 0; j < layer.in_dim; ++j) {
          gw[j] += d * input[j];
          if (need_prev) prev_delta[i][j] += d * w[j];
        }
      }
    }
    if (need_prev) delta = std::move(prev_delta);
  }
  (void)spec;
  return grads;
}

OptimizerState init_optimizer(const ModelParams& params, double lr,
                              double weight_decay) {
  OptimizerState state;
  state.lr = lr;
  state.weight_decay = weight_decay;
  state.step_count = 0;
  auto zeros_like = [](const ModelParams& p) {
    std::vector<Layer> z;
    z.reserve(p.layers.size());
    for (const Layer& layer : p.layers) {
      Layer zl;
      zl.in_dim = layer.in_dim;
      zl.out_dim = layer.out_dim;
      zl.weights.assign(layer.weights.size(), 0.0);
      zl.bias.assign(layer.bias.size(), 0.0);
      z.push_back(std::move(zl));
    }
    return z;
  };
  state.first_moment = zeros_like(params);
  state.second_moment = zeros_like(params);
  return state;
}

namespace {

void check_finite(const std::vector<double>& values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value in ") + what);
    }
  }
}

void adamw_inplace(std::vector<double>& param, const std::vector<double>& grad,
                   std::vector<double>& m, std::vector<double>& v,
                   const OptimizerState& state, double bc1, double bc2) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    param[i] *= 1.0 - state.lr * state.weight_decay;
    m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad[i];
    v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    param[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

}  // namespace

void adamw_step(ModelParams& params, const ParamGrads& grads, OptimizerState& state) {
  if (grads.layers.size() != params.layers.size()) {
    throw ArgumentError("gradient and parameter layer counts differ");
  }
  if (state.first_moment.size() != params.layers.size() ||
      state.second_moment.size() != params.layers.size()) {
    throw ArgumentError("optimizer state does not match parameter layout");
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    if (!grads.layers[l].same_shape(params.layers[l])) {
      throw ArgumentError("gradient shape mismatch at layer " + std::to_string(l));
    }
    check_finite(grads.layers[l].weights, "weight gradients");
    check_finite(grads.layers[l].bias, "bias gradients");
  }
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    adamw_inplace(params.layers[l].weights, grads.layers[l].weights,
                  state.first_moment[l].weights, state.second_moment[l].weights, state,
                  bc1, bc2);
    adamw_inplace(params.layers[l].bias, grads.layers[l].bias, state.first_moment[l].bias,
                  state.second_moment[l].bias, state, bc1, bc2);
  }
}

}  // namespace fairbase::model
