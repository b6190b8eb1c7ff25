#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnode/data.hpp"
#include "mnode/errors.hpp"
#include "mnode/network.hpp"

namespace mnode {

/// A trained model: its configuration and parameters.
struct Checkpoint {
  NetworkConfig config;
  ParamList params;
};

/// JSON form: model kind, manifold, layer count, generator ids and one flat
/// array per layer. Doubles are written in shortest round-trip form, so a
/// save/load cycle is bitwise exact.
inline nlohmann::json to_json(const Checkpoint& c) {
  std::vector<std::string> ids;
  if (c.config.model == ModelKind::Manifold)
    for (const auto& g : c.config.generators.fields) ids.push_back(g.id);

  const auto flat = flatten(c.params);
  const std::size_t per_layer = params_per_layer(c.config);
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t n = 0; n < static_cast<std::size_t>(c.config.layers); ++n)
    layers.push_back(std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(n * per_layer),
                                         flat.begin() + static_cast<std::ptrdiff_t>((n + 1) * per_layer)));
  return {{"format", "mnode-checkpoint"},
          {"version", 1},
          {"model", to_string(c.config.model)},
          {"manifold", to_string(c.config.manifold)},
          {"layers", c.config.layers},
          {"generators", ids},
          {"param_count", flat.size()},
          {"params", std::move(layers)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "mnode-checkpoint") throw IoError("not a checkpoint file");
    Checkpoint c;
    c.config.model = model_kind_from_string(j.at("model").get<std::string>());
    c.config.manifold = manifold_kind_from_string(j.at("manifold").get<std::string>());
    c.config.layers = j.at("layers").get<int>();
    c.config.generators.kind = c.config.manifold;
    for (const auto& id : j.at("generators").get<std::vector<std::string>>())
      c.config.generators.fields.push_back(basis_field(id));
    validate(c.config);

    std::vector<double> flat;
    const auto& layers = j.at("params");
    if (layers.size() != static_cast<std::size_t>(c.config.layers)) throw IoError("checkpoint layer count mismatch");
    for (const auto& layer : layers) {
      const auto values = layer.get<std::vector<double>>();
      if (values.size() != params_per_layer(c.config)) throw IoError("checkpoint layer has wrong length");
      flat.insert(flat.end(), values.begin(), values.end());
    }
    c.params = unflatten(c.config, flat);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  } catch (const InvalidConfig& e) {
    throw IoError(std::string("invalid checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_text(path, to_json(c).dump(1) + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_json(nlohmann::json::parse(read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

/// Number of stored scalars in a serialized checkpoint.
inline std::size_t serialized_param_count(const nlohmann::json& j) {
  std::size_t n = 0;
  for (const auto& layer : j.at("params")) n += layer.size();
  return n;
}

}  // namespace mnode
