#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

namespace xmsleep {

// Architecture sizes. `paper()` is the full-size network; `desk()` keeps
// every structural element (5 CNN blocks, 4-pool chain to 5 tokens, channel
// pool, multi-head attention stacks, cross blocks) at widths a single CPU
// core can train end to end in minutes.
struct ModelConfig {
  std::vector<std::size_t> cnn_channels{64, 128, 128, 256, 256};
  std::vector<std::size_t> cnn_convs{2, 2, 3, 3, 3};
  std::size_t kernel = 3;
  std::size_t pool_width = 5;
  std::size_t channel_pool = 2;
  std::size_t d_model = 128;
  std::size_t heads = 8;
  std::size_t d_ff = 1024;
  std::size_t backbone_layers = 4;
  std::size_t sequence_layers = 4;
  double dropout = 0.1;
  std::size_t attention_size = 128;
  std::size_t proj_dim = 128;
  std::size_t head_hidden = 128;
  std::size_t seq_len = 21;

  static ModelConfig paper();
  static ModelConfig desk();
  // "paper" | "desk"
  static ModelConfig preset(const std::string& name);

  std::size_t d_k() const { return d_model / heads; }

  // Throws InputError on inconsistent sizes (heads must divide d_model, the
  // last CNN block must have channel_pool * d_model channels, ...).
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

}  // namespace xmsleep
