#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "navgen/neural.hpp"

namespace navgen::nn {

// On-disk checkpoint: {"format": "navgen-checkpoint", "version": 1,
// "kind": ..., "metadata": {...}, "tensors": [{"name", "dims", "values"}]}.
// Values are row-major.
inline constexpr int kCheckpointVersion = 1;

nlohmann::json tensors_to_json(const ParameterStore& store);
// Copies values into existing parameters; names and shapes must match exactly.
void tensors_from_json(const nlohmann::json& tensors, ParameterStore& store);

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const ParameterStore& store,
                     const nlohmann::json& metadata);

struct Checkpoint {
  std::string kind;
  nlohmann::json metadata;
  nlohmann::json tensors;
};

// Throws CheckpointError on a missing file, malformed document, version
// mismatch or unexpected kind.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind);

}  // namespace navgen::nn
