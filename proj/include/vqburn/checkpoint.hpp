#pragma once

// Checkpoint directory layout:
//   manifest.json       config, tensor table, normalization stats, optimizer step
//   <tensor>.bin        one little-endian float32 file per tensor
//   adam.m.<tensor>.bin / adam.v.<tensor>.bin  optimizer moments (for resume)

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqburn/common.hpp"
#include "vqburn/raster_io.hpp"
#include "vqburn/vqvae.hpp"

namespace vqburn {

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"input_size", c.input_size},
          {"in_channels", c.in_channels},
          {"conv_layers", c.conv_layers},
          {"latent_dim", c.latent_dim},
          {"codebook_size", c.codebook_size},
          {"hidden_channels", c.hidden_channels},
          {"commitment_weight", c.commitment_weight},
          {"alignment_weight", c.alignment_weight},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"activation", nn::to_string(c.activation)}};
}

/// Reads a model config; absent keys keep the defaults in `base`.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  try {
    base.input_size = j.value("input_size", base.input_size);
    base.in_channels = j.value("in_channels", base.in_channels);
    base.conv_layers = j.value("conv_layers", base.conv_layers);
    base.latent_dim = j.value("latent_dim", base.latent_dim);
    base.codebook_size = j.value("codebook_size", base.codebook_size);
    base.hidden_channels = j.value("hidden_channels", base.hidden_channels);
    base.commitment_weight = j.value("commitment_weight", base.commitment_weight);
    base.alignment_weight = j.value("alignment_weight", base.alignment_weight);
    base.lr = j.value("lr", base.lr);
    base.batch_size = j.value("batch_size", base.batch_size);
    base.epochs = j.value("epochs", base.epochs);
    base.seed = j.value("seed", base.seed);
    if (j.contains("activation")) base.activation = nn::activation_from_string(j["activation"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("invalid model config: ") + e.what());
  }
  return base;
}

inline void save_checkpoint(const TrainState<float>& state, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  auto params = state.params;  // for_each_tensor needs a mutable object
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t t = 0;
  const bool with_opt = !state.optimizer.slots.empty();
  params.for_each_tensor([&](const std::string& name, std::vector<float>& values) {
    write_file_atomic(dir / (name + ".bin"), encode_f32(values));
    tensors.push_back({{"name", name}, {"shape", {values.size()}}, {"dtype", "f32"}, {"file", name + ".bin"}});
    if (with_opt) {
      const auto& slot = state.optimizer.slots.at(t);
      const std::vector<float> zeros(values.size(), 0.0f);
      write_file_atomic(dir / ("adam.m." + name + ".bin"), encode_f32(slot.m.empty() ? zeros : slot.m));
      write_file_atomic(dir / ("adam.v." + name + ".bin"), encode_f32(slot.v.empty() ? zeros : slot.v));
    }
    ++t;
  });
  nlohmann::json m;
  m["format"] = "vqburn-checkpoint";
  m["version"] = 1;
  m["config"] = to_json(state.params.config);
  m["epochs_completed"] = state.epochs_completed;
  std::vector<std::string> roles;
  for (auto r : state.params.channel_roles) roles.push_back(to_string(r));
  m["channel_roles"] = roles;
  m["normalization"] = state.params.stats ? to_json(*state.params.stats) : nlohmann::json(nullptr);
  m["tensors"] = tensors;
  m["optimizer"] = {{"type", "adam"}, {"step", state.optimizer.step}, {"has_moments", with_opt}};
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

inline TrainState<float> load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw data_error("missing checkpoint: " + manifest_path.string());
  TrainState<float> state;
  try {
    const auto m = nlohmann::json::parse(read_file(manifest_path));
    if (m.value("format", "") != "vqburn-checkpoint") throw data_error("not a checkpoint manifest: " + manifest_path.string());
    const ModelConfig cfg = model_config_from_json(m.at("config"));
    state.params = init_params<float>(cfg);
    state.epochs_completed = m.at("epochs_completed").get<int>();
    for (const auto& r : m.at("channel_roles")) state.params.channel_roles.push_back(band_role_from_string(r.get<std::string>()));
    if (!m.at("normalization").is_null()) state.params.stats = band_stats_from_json(m["normalization"]);

    std::map<std::string, nlohmann::json> table;
    for (const auto& t : m.at("tensors")) table[t.at("name").get<std::string>()] = t;
    const bool with_opt = m.at("optimizer").value("has_moments", false);
    state.optimizer.step = m.at("optimizer").at("step").get<long>();
    state.params.for_each_tensor([&](const std::string& name, std::vector<float>& values) {
      auto it = table.find(name);
      if (it == table.end()) throw data_error("checkpoint lacks tensor " + name);
      auto loaded = decode_f32(read_file(dir / it->second.at("file").get<std::string>()));
      if (loaded.size() != values.size())
        throw data_error("tensor " + name + " has " + std::to_string(loaded.size()) + " values, model expects " +
                         std::to_string(values.size()));
      values = std::move(loaded);
      if (with_opt) {
        nn::AdamSlot<float> slot;
        slot.m = decode_f32(read_file(dir / ("adam.m." + name + ".bin")));
        slot.v = decode_f32(read_file(dir / ("adam.v." + name + ".bin")));
        if (slot.m.size() != values.size() || slot.v.size() != values.size())
          throw data_error("optimizer state for " + name + " has the wrong size");
        state.optimizer.slots.push_back(std::move(slot));
      }
    });
  } catch (const nlohmann::json::exception& e) {
    throw data_error("malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  return state;
}

}  // namespace vqburn
