#include "xmsleep/sequence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xmsleep/errors.hpp"

namespace xmsleep::nn {

using diff::Init;

const char* to_string(MaskMode mode) {
  return mode == MaskMode::Independent ? "independent" : "complementary";
}

MaskMode mask_mode_from_string(const std::string& name) {
  if (name == "independent") return MaskMode::Independent;
  if (name == "complementary") return MaskMode::Complementary;
  throw InputError("unknown mask mode '" + name + "'");
}

std::size_t mask_count(std::size_t length, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InputError("mask ratio must be in [0,1]");
  // the epsilon keeps exact halves (0.5 * 21) from rounding down
  const auto n = static_cast<std::size_t>(std::floor(ratio * double(length) + 0.5 + 1e-9));
  return std::min(n, length);
}

namespace {

std::vector<std::uint8_t> choose(const std::vector<std::size_t>& pool, std::size_t count,
                                 std::size_t length, std::mt19937_64& rng) {
  std::vector<std::size_t> idx = pool;
  // partial Fisher-Yates
  for (std::size_t i = 0; i < count && i < idx.size(); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<std::uint8_t> mask(length, 0);
  for (std::size_t i = 0; i < count && i < idx.size(); ++i) mask[idx[i]] = 1;
  return mask;
}

}  // namespace

MaskSpec sample_masks(std::size_t length, double ratio, MaskMode mode, std::mt19937_64& rng) {
  const std::size_t n = mask_count(length, ratio);
  if (mode == MaskMode::Complementary && ratio > 0.5) {
    throw InputError("complementary masking needs ratio <= 0.5, got " + std::to_string(ratio));
  }
  MaskSpec spec;
  spec.ratio = ratio;
  spec.mode = mode;
  std::vector<std::size_t> all(length);
  std::iota(all.begin(), all.end(), 0);
  spec.sg = choose(all, n, length, rng);
  if (mode == MaskMode::Independent) {
    spec.sp = choose(all, n, length, rng);
  } else {
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < length; ++i)
      if (!spec.sg[i]) rest.push_back(i);
    spec.sp = choose(rest, std::min(n, rest.size()), length, rng);
  }
  return spec;
}

template <typename T>
Tensor<T> apply_masks(const Tensor<T>& seq, std::span<const std::uint8_t> mask,
                      const Tensor<T>& token) {
  if (seq.rank() != 3) throw DimensionError("apply_masks: expected [B,L,D], got " + diff::shape_str(seq.shape()));
  return diff::masked_replace(seq, mask, token);
}

template <typename T>
CrossMaskingModel<T>::CrossMaskingModel(ModelParams<T>& p, const std::string& name,
                                        const ModelConfig& cfg)
    : mask_sg(p.create(name + ".mask_sg", {cfg.d_model}, Init::SmallNormal)),
      mask_sp(p.create(name + ".mask_sp", {cfg.d_model}, Init::SmallNormal)) {
  for (std::size_t l = 0; l < cfg.sequence_layers; ++l) {
    layers_sg.emplace_back(p, name + ".sg.layer" + std::to_string(l), cfg.d_model, cfg.heads,
                           cfg.d_ff, cfg.dropout);
    layers_sp.emplace_back(p, name + ".sp.layer" + std::to_string(l), cfg.d_model, cfg.heads,
                           cfg.d_ff, cfg.dropout);
  }
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> CrossMaskingModel<T>::cross_encode(const Tensor<T>& seq_sg,
                                                                   const Tensor<T>& seq_sp,
                                                                   ForwardContext& ctx) const {
  if (seq_sg.rank() != 3 || seq_sg.shape() != seq_sp.shape()) {
    throw DimensionError("cross_encode: modality shapes differ: " + diff::shape_str(seq_sg.shape()) +
                         " vs " + diff::shape_str(seq_sp.shape()));
  }
  const auto pe = positional_encoding<T>(seq_sg.dim(1), seq_sg.dim(2));
  auto h_sg = diff::add(seq_sg, pe);
  auto h_sp = diff::add(seq_sp, pe);
  for (std::size_t l = 0; l < layers_sg.size(); ++l) {
    const std::string tag = std::to_string(l);
    auto next_sg = layers_sg[l](h_sg, h_sp, ctx, "seq.sg" + tag);
    auto next_sp = layers_sp[l](h_sp, h_sg, ctx, "seq.sp" + tag);
    h_sg = next_sg;
    h_sp = next_sp;
  }
  return {h_sg, h_sp};
}

template <typename T>
SequenceHeads<T>::SequenceHeads(ModelParams<T>& p, const std::string& name, std::size_t d_model,
                                std::size_t hidden, std::size_t classes)
    : sg1(p, name + ".sg.fc1", d_model, hidden, Init::HeUniform),
      sg2(p, name + ".sg.fc2", hidden, classes),
      sp1(p, name + ".sp.fc1", d_model, hidden, Init::HeUniform),
      sp2(p, name + ".sp.fc2", hidden, classes),
      cat1(p, name + ".cat.fc1", 2 * d_model, hidden, Init::HeUniform),
      cat2(p, name + ".cat.fc2", hidden, classes) {}

template <typename T>
HeadOutputs<T> SequenceHeads<T>::operator()(const Tensor<T>& t_sg, const Tensor<T>& t_sp) const {
  HeadOutputs<T> out;
  out.sg = sg2(diff::relu(sg1(t_sg)));
  out.sp = sp2(diff::relu(sp1(t_sp)));
  out.cat = cat2(diff::relu(cat1(diff::concat_last(t_sg, t_sp))));
  return out;
}

template <typename T>
Tensor<T> sequence_loss(const HeadOutputs<T>& logits, std::span<const int> labels,
                        const std::array<double, 3>& weights) {
  auto ce = [&labels](const Tensor<T>& x) {
    const std::size_t classes = x.shape().back();
    return diff::cross_entropy(diff::reshape(x, {x.numel() / classes, classes}), labels);
  };
  auto total = diff::scale(ce(logits.sg), T(weights[0]));
  total = diff::add(total, diff::scale(ce(logits.sp), T(weights[1])));
  return diff::add(total, diff::scale(ce(logits.cat), T(weights[2])));
}

#define XMSLEEP_INSTANTIATE_SEQUENCE(T)                                                  \
  template Tensor<T> apply_masks(const Tensor<T>&, std::span<const std::uint8_t>,       \
                                 const Tensor<T>&);                                     \
  template class CrossMaskingModel<T>;                                                   \
  template struct SequenceHeads<T>;                                                      \
  template Tensor<T> sequence_loss(const HeadOutputs<T>&, std::span<const int>,         \
                                   const std::array<double, 3>&);

XMSLEEP_INSTANTIATE_SEQUENCE(float)
XMSLEEP_INSTANTIATE_SEQUENCE(double)

}  // namespace xmsleep::nn
