#include "xmsleep/config.hpp"

#include "xmsleep/errors.hpp"

namespace xmsleep {

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.cnn_channels = {4, 8, 8, 32, 32};
  c.d_model = 16;
  c.heads = 2;
  c.d_ff = 64;
  c.backbone_layers = 2;
  c.sequence_layers = 2;
  c.attention_size = 16;
  c.proj_dim = 16;
  c.head_hidden = 16;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw InputError("unknown model preset '" + name + "' (expected paper or desk)");
}

void ModelConfig::validate() const {
  if (cnn_channels.empty() || cnn_channels.size() != cnn_convs.size()) {
    throw InputError("model: cnn_channels and cnn_convs must be non-empty and equally long");
  }
  if (kernel % 2 == 0) throw InputError("model: kernel must be odd for same padding");
  if (heads == 0 || d_model % heads != 0) throw InputError("model: heads must divide d_model");
  if (cnn_channels.back() != channel_pool * d_model) {
    throw InputError("model: last CNN block needs channel_pool * d_model channels");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw InputError("model: dropout must be in [0,1)");
  if (seq_len < 1) throw InputError("model: seq_len must be >= 1");
  for (auto v : {d_ff, backbone_layers, sequence_layers, attention_size, proj_dim, head_hidden}) {
    if (v == 0) throw InputError("model: sizes must be positive");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"cnn_channels", cnn_channels},       {"cnn_convs", cnn_convs},
          {"kernel", kernel},                   {"pool_width", pool_width},
          {"channel_pool", channel_pool},       {"d_model", d_model},
          {"heads", heads},                     {"d_ff", d_ff},
          {"backbone_layers", backbone_layers}, {"sequence_layers", sequence_layers},
          {"dropout", dropout},                 {"attention_size", attention_size},
          {"proj_dim", proj_dim},               {"head_hidden", head_hidden},
          {"seq_len", seq_len}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (j.is_string()) return preset(j.get<std::string>());
  ModelConfig c = j.contains("preset") ? preset(j.at("preset").get<std::string>()) : paper();
  try {
    auto take = [&j](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    take("cnn_channels", c.cnn_channels);
    take("cnn_convs", c.cnn_convs);
    take("kernel", c.kernel);
    take("pool_width", c.pool_width);
    take("channel_pool", c.channel_pool);
    take("d_model", c.d_model);
    take("heads", c.heads);
    take("d_ff", c.d_ff);
    take("backbone_layers", c.backbone_layers);
    take("sequence_layers", c.sequence_layers);
    take("dropout", c.dropout);
    take("attention_size", c.attention_size);
    take("proj_dim", c.proj_dim);
    take("head_hidden", c.head_hidden);
    take("seq_len", c.seq_len);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace xmsleep
