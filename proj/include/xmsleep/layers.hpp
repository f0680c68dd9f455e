#pragma once

// Building blocks shared by the epoch encoders and the sequence model.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "xmsleep/ops.hpp"
#include "xmsleep/params.hpp"

namespace xmsleep::nn {

using diff::ModelParams;
using diff::Shape;
using diff::Tensor;

// Attention probabilities captured during a forward pass, [B,H,Tq,Tk].
struct AttentionTrace {
  std::string site;
  Shape shape;
  std::vector<double> probs;
};

struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;                 // dropout stream, required when training
  std::vector<AttentionTrace>* trace = nullptr;  // optional
};

// Fixed sinusoidal table [T,D]: even columns sin(pos / 10000^(2i/D)), odd cos.
std::vector<double> sinusoidal_table(std::size_t length, std::size_t dim);

template <typename T>
Tensor<T> positional_encoding(std::size_t length, std::size_t dim);

template <typename T>
struct Linear {
  Tensor<T> w;  // [in,out]
  Tensor<T> b;  // [out]

  Linear() = default;
  Linear(ModelParams<T>& p, const std::string& name, std::size_t in, std::size_t out,
         diff::Init init = diff::Init::XavierUniform);
  Tensor<T> operator()(const Tensor<T>& x) const { return diff::affine(x, w, b); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  LayerNorm(ModelParams<T>& p, const std::string& name, std::size_t dim);
  Tensor<T> operator()(const Tensor<T>& x) const { return diff::layer_norm(x, gamma, beta); }
};

// Scaled dot-product attention over H heads with Q/K/V/O projections.
template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;
  double dropout = 0.0;  // on the attention probabilities

  MultiHeadAttention() = default;
  MultiHeadAttention(ModelParams<T>& p, const std::string& name, std::size_t d_model,
                     std::size_t heads, double dropout);

  // query [B,Tq,D], memory [B,Tk,D] -> [B,Tq,D]
  Tensor<T> operator()(const Tensor<T>& query, const Tensor<T>& memory, ForwardContext& ctx,
                       const std::string& site = {}) const;
};

template <typename T>
struct FeedForward {
  Linear<T> up, down;

  FeedForward() = default;
  FeedForward(ModelParams<T>& p, const std::string& name, std::size_t d_model, std::size_t d_ff);
  Tensor<T> operator()(const Tensor<T>& x) const { return down(diff::relu(up(x))); }
};

// Post-LN encoder layer: LN(x + SA(x)), then LN(a + Dropout(FF(a))).
template <typename T>
struct TransformerLayer {
  MultiHeadAttention<T> attn;
  LayerNorm<T> ln1, ln2;
  FeedForward<T> ff;
  double dropout = 0.0;

  TransformerLayer() = default;
  TransformerLayer(ModelParams<T>& p, const std::string& name, std::size_t d_model,
                   std::size_t heads, std::size_t d_ff, double dropout);
  Tensor<T> operator()(const Tensor<T>& x, ForwardContext& ctx,
                       const std::string& site = {}) const;
};

// Self-attention + LN, cross-attention (queries from this stream, keys and
// values from `other`) + LN, FF + LN.
template <typename T>
struct CrossTransformerLayer {
  MultiHeadAttention<T> self_attn, cross_attn;
  LayerNorm<T> ln1, ln2, ln3;
  FeedForward<T> ff;
  double dropout = 0.0;

  CrossTransformerLayer() = default;
  CrossTransformerLayer(ModelParams<T>& p, const std::string& name, std::size_t d_model,
                        std::size_t heads, std::size_t d_ff, double dropout);
  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& other, ForwardContext& ctx,
                       const std::string& site = {}) const;
};

}  // namespace xmsleep::nn
