#pragma once

// Epoch encoders: a CNN over the raw signal, a Transformer over the
// spectrogram, and the attention pooling that turns tokens into one feature.

#include <vector>

#include "xmsleep/config.hpp"
#include "xmsleep/layers.hpp"

namespace xmsleep::nn {

template <typename T>
struct Conv1d {
  Tensor<T> w;  // [Cout,Cin,K]
  Tensor<T> b;  // [Cout]
};

template <typename T>
class CnnBackbone {
 public:
  CnnBackbone() = default;
  CnnBackbone(ModelParams<T>& p, const std::string& name, const ModelConfig& cfg);

  // [B,1,3000] -> [B,5,C/2], token-major.
  Tensor<T> operator()(const Tensor<T>& x) const;

  const std::vector<std::vector<Conv1d<T>>>& blocks() const { return blocks_; }

 private:
  std::vector<std::vector<Conv1d<T>>> blocks_;
  std::size_t pool_width_ = 5;
  std::size_t channel_pool_ = 2;
};

template <typename T>
class SpecTransformer {
 public:
  SpecTransformer() = default;
  SpecTransformer(ModelParams<T>& p, const std::string& name, const ModelConfig& cfg);

  // [B,29,129] -> [B,29,D]: conv resize over time, ReLU, plus the PE table.
  Tensor<T> project(const Tensor<T>& spec) const;
  // Transformer stack, shape preserved.
  Tensor<T> encode(const Tensor<T>& x, ForwardContext& ctx) const;
  Tensor<T> operator()(const Tensor<T>& spec, ForwardContext& ctx) const {
    return encode(project(spec), ctx);
  }

  const Tensor<T>& pe() const { return pe_; }
  const std::vector<TransformerLayer<T>>& layers() const { return layers_; }

 private:
  Conv1d<T> resize_;
  Tensor<T> pe_;
  std::vector<TransformerLayer<T>> layers_;
};

// a_t = tanh(W z_t + b), alpha = softmax_t(a_t . a_e), out = sum_t alpha_t z_t.
template <typename T>
class EpochAttention {
 public:
  EpochAttention() = default;
  EpochAttention(ModelParams<T>& p, const std::string& name, std::size_t features,
                 std::size_t attention_size);

  // [B,T,F] -> [B,T] token weights.
  Tensor<T> weights(const Tensor<T>& z) const;
  // [B,T,F] -> [B,F]
  Tensor<T> operator()(const Tensor<T>& z) const;

  Tensor<T> w, b, context;  // [F,A], [A], [A,1]
};

}  // namespace xmsleep::nn
