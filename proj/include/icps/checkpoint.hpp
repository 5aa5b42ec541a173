#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "icps/network.hpp"

namespace icps {

/// On-disk layout (all integers little-endian):
///
///   bytes 0..7   magic "ICPSCKPT"
///   u32          format version (1)
///   u64          header length L
///   L bytes      UTF-8 JSON header:
///                  {"model_config": {...}, "metadata": {...},
///                   "tensors": [{"name", "kind", "shape", "offset", "count"}, ...]}
///   payload      float32 little-endian values; "offset" counts floats from payload start
struct CheckpointTensor {
  std::string kind;  // "parameter" or "buffer"
  std::vector<Index> shape;
  std::vector<float> values;
};

struct Checkpoint {
  ModelConfig config;
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, CheckpointTensor> tensors;
};

inline constexpr char kCheckpointMagic[9] = "ICPSCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
Checkpoint make_checkpoint(Model<Scalar>& model, const nlohmann::json& metadata = nlohmann::json::object());

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copy every tensor into `model`. Throws ContractViolation listing all
/// missing, unexpected, and mis-shaped names at once.
template <typename Scalar>
void load_state(Model<Scalar>& model, const Checkpoint& ckpt);

template <typename Scalar>
void save_model(const std::filesystem::path& path, Model<Scalar>& model,
                const nlohmann::json& metadata = nlohmann::json::object()) {
  write_checkpoint(path, make_checkpoint(model, metadata));
}

/// Builds a model from the embedded configuration and loads its state.
template <typename Scalar>
Model<Scalar> load_model(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  Model<Scalar> model(ckpt.config, 0);
  load_state(model, ckpt);
  return model;
}

}  // namespace icps
