#pragma once

// Checkpoint directory layout:
//   manifest.json  {format, version, meta, params: [{name, shape, dtype, offset}]}
//   params.bin     little-endian f32 values in manifest order
//   adam.json/.bin optional optimizer state, same scheme (entries "m.<name>", "v.<name>")

#include <filesystem>

#include <json.hpp>

#include "xmsleep/optim.hpp"
#include "xmsleep/params.hpp"

namespace xmsleep::diff {

void write_checkpoint(const std::filesystem::path& dir, const ModelParams<float>& params,
                      const nlohmann::json& meta, const AdamState* adam = nullptr);

nlohmann::json read_checkpoint_meta(const std::filesystem::path& dir);

enum class LoadMode {
  Strict,   // every param must be present in the checkpoint and vice versa
  Partial,  // load the name intersection; shapes must still agree
};

// Returns the number of params loaded.
std::size_t load_checkpoint(const std::filesystem::path& dir, ModelParams<float>& params,
                            LoadMode mode = LoadMode::Strict, AdamState* adam = nullptr);

bool checkpoint_exists(const std::filesystem::path& dir);

}  // namespace xmsleep::diff
