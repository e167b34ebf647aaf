#include "fairbase/checkpoint.hpp"

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fairbase/errors.hpp"
#include "fairbase/io_util.hpp"

namespace fairbase::model {

namespace {

constexpr int kSchemaVersion = 1;

nlohmann::json layer_to_json(const Layer& layer) {
  return {{"in_dim", layer.in_dim},
          {"out_dim", layer.out_dim},
          {"weights", layer.weights},
          {"bias", layer.bias}};
}

Layer layer_from_json(const nlohmann::json& node, const std::string& path) {
  Layer layer;
  layer.in_dim = node.at("in_dim").get<int>();
  layer.out_dim = node.at("out_dim").get<int>();
  layer.weights = node.at("weights").get<std::vector<double>>();
  layer.bias = node.at("bias").get<std::vector<double>>();
  if (layer.in_dim <= 0 || layer.out_dim <= 0 ||
      layer.weights.size() !=
          static_cast<std::size_t>(layer.in_dim) * static_cast<std::size_t>(layer.out_dim) ||
      layer.bias.size() != static_cast<std::size_t>(layer.out_dim)) {
    throw ParseError(path, 1, "layer dimensions do not match stored values");
  }
  return layer;
}

std::vector<Layer> layers_from_json(const nlohmann::json& node, const std::string& path) {
  std::vector<Layer> layers;
  for (const nlohmann::json& entry : node) {
    layers.push_back(layer_from_json(entry, path));
  }
  return layers;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  checkpoint.spec.validate();
  nlohmann::json doc{
      {"schema_version", kSchemaVersion},
      {"spec",
       {{"input_dim", checkpoint.spec.input_dim},
        {"hidden_dims", checkpoint.spec.hidden_dims},
        {"num_classes", checkpoint.spec.num_classes},
        {"activation",
         checkpoint.spec.activation == Activation::kRelu ? "relu" : "tanh"},
        {"init_seed", checkpoint.spec.init_seed}}},
  };
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& layer : checkpoint.params.layers) {
    layers.push_back(layer_to_json(layer));
  }
  doc["params"] = {{"layers", std::move(layers)}};

  nlohmann::json first = nlohmann::json::array();
  nlohmann::json second = nlohmann::json::array();
  for (const Layer& layer : checkpoint.optimizer.first_moment) {
    first.push_back(layer_to_json(layer));
  }
  for (const Layer& layer : checkpoint.optimizer.second_moment) {
    second.push_back(layer_to_json(layer));
  }
  doc["optimizer"] = {{"step_count", checkpoint.optimizer.step_count},
                      {"lr", checkpoint.optimizer.lr},
                      {"beta1", checkpoint.optimizer.beta1},
                      {"beta2", checkpoint.optimizer.beta2},
                      {"eps", checkpoint.optimizer.eps},
                      {"weight_decay", checkpoint.optimizer.weight_decay},
                      {"first_moment", std::move(first)},
                      {"second_moment", std::move(second)}};
  io::atomic_write(path, doc.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  const nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded()) {
    throw ParseError(path.string(), 1, "invalid JSON");
  }
  const std::string path_str = path.string();
  try {
    if (doc.at("schema_version").get<int>() != kSchemaVersion) {
      throw ParseError(path_str, 1,
                       "unsupported checkpoint schema_version " +
                           doc.at("schema_version").dump());
    }
    Checkpoint checkpoint;
    const nlohmann::json& spec = doc.at("spec");
    checkpoint.spec.input_dim = spec.at("input_dim").get<int>();
    checkpoint.spec.hidden_dims = spec.at("hidden_dims").get<std::vector<int>>();
    checkpoint.spec.num_classes = spec.at("num_classes").get<int>();
    const std::string activation = spec.at("activation").get<std::string>();
    if (activation == "relu") {
      checkpoint.spec.activation = Activation::kRelu;
    } else if (activation == "tanh") {
      checkpoint.spec.activation = Activation::kTanh;
    } else {
      throw ParseError(path_str, 1, "unknown activation '" + activation + "'");
    }
    checkpoint.spec.init_seed = spec.at("init_seed").get<std::uint64_t>();
    checkpoint.spec.validate();

    checkpoint.params.layers = layers_from_json(doc.at("params").at("layers"), path_str);

    const nlohmann::json& optimizer = doc.at("optimizer");
    checkpoint.optimizer.step_count = optimizer.at("step_count").get<std::int64_t>();
    checkpoint.optimizer.lr = optimizer.at("lr").get<double>();
    checkpoint.optimizer.beta1 = optimizer.at("beta1").get<double>();
    checkpoint.optimizer.beta2 = optimizer.at("beta2").get<double>();
    checkpoint.optimizer.eps = optimizer.at("eps").get<double>();
    checkpoint.optimizer.weight_decay = optimizer.at("weight_decay").get<double>();
    checkpoint.optimizer.first_moment =
        layers_from_json(optimizer.at("first_moment"), path_str);
    checkpoint.optimizer.second_moment =
        layers_from_json(optimizer.at("second_moment"), path_str);

    if (checkpoint.optimizer.first_moment.size() != checkpoint.params.layers.size() ||
        checkpoint.optimizer.second_moment.size() != checkpoint.params.layers.size()) {
      throw ParseError(path_str, 1, "optimizer state does not match parameter layout");
    }
    return checkpoint;
  } catch (const nlohmann::json::exception& error) {
    throw ParseError(path_str, 1, error.what());
  }
}

}  // namespace fairbase::model
