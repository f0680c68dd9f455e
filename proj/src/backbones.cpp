#include "xmsleep/backbones.hpp"

#include "xmsleep/dsp.hpp"
#include "xmsleep/errors.hpp"

namespace xmsleep::nn {

using diff::Init;

template <typename T>
CnnBackbone<T>::CnnBackbone(ModelParams<T>& p, const std::string& name, const ModelConfig& cfg)
    : pool_width_(cfg.pool_width), channel_pool_(cfg.channel_pool) {
  std::size_t cin = 1;
  for (std::size_t bi = 0; bi < cfg.cnn_channels.size(); ++bi) {
    std::vector<Conv1d<T>> block;
    const std::size_t cout = cfg.cnn_channels[bi];
    for (std::size_t li = 0; li < cfg.cnn_convs[bi]; ++li) {
      const std::string base = name + ".block" + std::to_string(bi) + ".conv" + std::to_string(li);
      Conv1d<T> conv;
      conv.w = p.create(base + ".w", {cout, cin, cfg.kernel}, Init::HeUniform, cin * cfg.kernel);
      conv.b = p.create(base + ".b", {cout}, Init::Zeros);
      block.push_back(conv);
      cin = cout;
    }
    blocks_.push_back(std::move(block));
  }
}

template <typename T>
Tensor<T> CnnBackbone<T>::operator()(const Tensor<T>& x) const {
  if (x.rank() != 3 || x.dim(1) != 1 || x.dim(2) != dsp::kEpochSamples) {
    throw DimensionError("cnn_encode: expected [B,1," + std::to_string(dsp::kEpochSamples) +
                         "], got " + diff::shape_str(x.shape()));
  }
  Tensor<T> h = x;
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    for (const auto& conv : blocks_[bi]) h = diff::relu(diff::conv1d(h, conv.w, conv.b));
    if (bi >= 1) h = diff::maxpool1d(h, pool_width_, pool_width_, true);
  }
  // [B,C,5] -> [B,5,C] -> channel pool -> [B,5,C/2]
  h = diff::transpose_last(h);
  return diff::maxpool1d(h, channel_pool_, channel_pool_, false);
}

template <typename T>
SpecTransformer<T>::SpecTransformer(ModelParams<T>& p, const std::string& name,
                                    const ModelConfig& cfg)
    : pe_(positional_encoding<T>(dsp::kFrames, cfg.d_model)) {
  resize_.w = p.create(name + ".resize.w", {cfg.d_model, dsp::kBins, cfg.kernel},
                       Init::HeUniform, dsp::kBins * cfg.kernel);
  resize_.b = p.create(name + ".resize.b", {cfg.d_model}, Init::Zeros);
  for (std::size_t l = 0; l < cfg.backbone_layers; ++l) {
    layers_.emplace_back(p, name + ".layer" + std::to_string(l), cfg.d_model, cfg.heads, cfg.d_ff,
                         cfg.dropout);
  }
}

template <typename T>
Tensor<T> SpecTransformer<T>::project(const Tensor<T>& spec) const {
  if (spec.rank() != 3 || spec.dim(1) != dsp::kFrames || spec.dim(2) != dsp::kBins) {
    throw DimensionError("spec_project: expected [B," + std::to_string(dsp::kFrames) + "," +
                         std::to_string(dsp::kBins) + "], got " + diff::shape_str(spec.shape()));
  }
  auto h = diff::relu(diff::conv1d(diff::transpose_last(spec), resize_.w, resize_.b));
  return diff::add(diff::transpose_last(h), pe_);
}

template <typename T>
Tensor<T> SpecTransformer<T>::encode(const Tensor<T>& x, ForwardContext& ctx) const {
  Tensor<T> h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) h = layers_[l](h, ctx, "spec" + std::to_string(l));
  return h;
}

template <typename T>
EpochAttention<T>::EpochAttention(ModelParams<T>& p, const std::string& name,
                                  std::size_t features, std::size_t attention_size)
    : w(p.create(name + ".w", {features, attention_size}, Init::XavierUniform)),
      b(p.create(name + ".b", {attention_size}, Init::Zeros)),
      context(p.create(name + ".context", {attention_size, 1}, Init::XavierUniform,
                       attention_size, 1)) {}

template <typename T>
Tensor<T> EpochAttention<T>::weights(const Tensor<T>& z) const {
  if (z.rank() != 3) throw DimensionError("epoch_pool: expected [B,T,F], got " + diff::shape_str(z.shape()));
  auto a = diff::tanh(diff::affine(z, w, b));
  auto scores = diff::reshape(diff::matmul(a, context), {z.dim(0), z.dim(1)});
  return diff::softmax(scores, 1);
}

template <typename T>
Tensor<T> EpochAttention<T>::operator()(const Tensor<T>& z) const {
  auto w_t = weights(z);
  const std::size_t batch = z.dim(0), tokens = z.dim(1), feats = z.dim(2);
  auto alpha = diff::reshape(w_t, {batch, 1, tokens});
  return diff::reshape(diff::bmm(alpha, z), {batch, feats});
}

template class CnnBackbone<float>;
template class CnnBackbone<double>;
template class SpecTransformer<float>;
template class SpecTransformer<double>;
template class EpochAttention<float>;
template class EpochAttention<double>;

}  // namespace xmsleep::nn
