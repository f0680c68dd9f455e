#include "xmsleep/layers.hpp"

#include <cmath>

#include "xmsleep/errors.hpp"

namespace xmsleep::nn {

using diff::Init;

std::vector<double> sinusoidal_table(std::size_t length, std::size_t dim) {
  std::vector<double> pe(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, double(i - i % 2) / double(dim));
      const double angle = double(pos) / rate;
      pe[pos * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

template <typename T>
Tensor<T> positional_encoding(std::size_t length, std::size_t dim) {
  const auto table = sinusoidal_table(length, dim);
  return Tensor<T>({length, dim}, std::vector<T>(table.begin(), table.end()), false);
}

template <typename T>
Linear<T>::Linear(ModelParams<T>& p, const std::string& name, std::size_t in, std::size_t out,
                  Init init)
    : w(p.create(name + ".w", {in, out}, init, in, out)),
      b(p.create(name + ".b", {out}, Init::Zeros)) {}

template <typename T>
LayerNorm<T>::LayerNorm(ModelParams<T>& p, const std::string& name, std::size_t dim)
    : gamma(p.create(name + ".gamma", {dim}, Init::Ones)),
      beta(p.create(name + ".beta", {dim}, Init::Zeros)) {}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ModelParams<T>& p, const std::string& name,
                                          std::size_t d_model, std::size_t heads_,
                                          double dropout_)
    : q(p, name + ".q", d_model, d_model),
      k(p, name + ".k", d_model, d_model),
      v(p, name + ".v", d_model, d_model),
      o(p, name + ".o", d_model, d_model),
      heads(heads_),
      dropout(dropout_) {
  if (heads == 0 || d_model % heads != 0) {
    throw InputError("attention: " + std::to_string(heads) + " heads do not divide d_model " +
                     std::to_string(d_model));
  }
}

namespace {

// [B,T,H*dk] -> [B*H,T,dk]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  const std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2), dk = d / heads;
  auto y = diff::permute(diff::reshape(x, {b, t, heads, dk}), {0, 2, 1, 3});
  return diff::reshape(y, {b * heads, t, dk});
}

// [B*H,T,dk] -> [B,T,H*dk]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t batch, std::size_t heads) {
  const std::size_t t = x.dim(1), dk = x.dim(2);
  auto y = diff::permute(diff::reshape(x, {batch, heads, t, dk}), {0, 2, 1, 3});
  return diff::reshape(y, {batch, t, heads * dk});
}

}  // namespace

template <typename T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T>& query, const Tensor<T>& memory,
                                            ForwardContext& ctx, const std::string& site) const {
  if (query.rank() != 3 || memory.rank() != 3 || query.dim(0) != memory.dim(0) ||
      query.dim(2) != memory.dim(2)) {
    throw DimensionError("attention: query " + diff::shape_str(query.shape()) + " vs memory " +
                         diff::shape_str(memory.shape()));
  }
  const std::size_t batch = query.dim(0), tq = query.dim(1), tk = memory.dim(1);
  const std::size_t dk = query.dim(2) / heads;
  auto qh = split_heads(q(query), heads);
  auto kh = split_heads(k(memory), heads);
  auto vh = split_heads(v(memory), heads);
  auto scores = diff::scale(diff::bmm(qh, kh, true), T(1.0 / std::sqrt(double(dk))));
  auto probs = diff::softmax(scores, 2);
  if (ctx.trace != nullptr) {
    ctx.trace->push_back({site, {batch, heads, tq, tk},
                          std::vector<double>(probs.data().begin(), probs.data().end())});
  }
  probs = diff::dropout(probs, dropout, ctx.training, ctx.rng);
  return o(merge_heads(diff::bmm(probs, vh), batch, heads));
}

template <typename T>
FeedForward<T>::FeedForward(ModelParams<T>& p, const std::string& name, std::size_t d_model,
                            std::size_t d_ff)
    : up(p, name + ".up", d_model, d_ff, Init::HeUniform),
      down(p, name + ".down", d_ff, d_model, Init::XavierUniform) {}

template <typename T>
TransformerLayer<T>::TransformerLayer(ModelParams<T>& p, const std::string& name,
                                      std::size_t d_model, std::size_t heads, std::size_t d_ff,
                                      double dropout_)
    : attn(p, name + ".attn", d_model, heads, dropout_),
      ln1(p, name + ".ln1", d_model),
      ln2(p, name + ".ln2", d_model),
      ff(p, name + ".ff", d_model, d_ff),
      dropout(dropout_) {}

template <typename T>
Tensor<T> TransformerLayer<T>::operator()(const Tensor<T>& x, ForwardContext& ctx,
                                          const std::string& site) const {
  auto a = ln1(diff::add(x, attn(x, x, ctx, site)));
  auto f = diff::dropout(ff(a), dropout, ctx.training, ctx.rng);
  return ln2(diff::add(a, f));
}

template <typename T>
CrossTransformerLayer<T>::CrossTransformerLayer(ModelParams<T>& p, const std::string& name,
                                                std::size_t d_model, std::size_t heads,
                                                std::size_t d_ff, double dropout_)
    : self_attn(p, name + ".self", d_model, heads, dropout_),
      cross_attn(p, name + ".cross", d_model, heads, dropout_),
      ln1(p, name + ".ln1", d_model),
      ln2(p, name + ".ln2", d_model),
      ln3(p, name + ".ln3", d_model),
      ff(p, name + ".ff", d_model, d_ff),
      dropout(dropout_) {}

template <typename T>
Tensor<T> CrossTransformerLayer<T>::operator()(const Tensor<T>& x, const Tensor<T>& other,
                                               ForwardContext& ctx,
                                               const std::string& site) const {
  auto a = ln1(diff::add(x, self_attn(x, x, ctx, site + ".self")));
  auto c = ln2(diff::add(a, cross_attn(a, other, ctx, site + ".cross")));
  auto f = diff::dropout(ff(c), dropout, ctx.training, ctx.rng);
  return ln3(diff::add(c, f));
}

#define XMSLEEP_INSTANTIATE_LAYERS(T)                                          \
  template Tensor<T> positional_encoding<T>(std::size_t, std::size_t);        \
  template struct Linear<T>;                                                   \
  template struct LayerNorm<T>;                                                \
  template struct MultiHeadAttention<T>;                                       \
  template struct FeedForward<T>;                                              \
  template struct TransformerLayer<T>;                                         \
  template struct CrossTransformerLayer<T>;

XMSLEEP_INSTANTIATE_LAYERS(float)
XMSLEEP_INSTANTIATE_LAYERS(double)

}  // namespace xmsleep::nn
