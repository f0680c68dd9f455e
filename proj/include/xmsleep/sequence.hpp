#pragma once

// Sequence-level model over L pooled epoch features per modality: shared
// learnable mask tokens, two cross-attending Transformer stacks and the three
// classification heads.

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "xmsleep/config.hpp"
#include "xmsleep/layers.hpp"

namespace xmsleep::nn {

enum class MaskMode { Independent, Complementary };

const char* to_string(MaskMode mode);
MaskMode mask_mode_from_string(const std::string& name);

struct MaskSpec {
  double ratio = 0.0;
  MaskMode mode = MaskMode::Independent;
  std::vector<std::uint8_t> sg;  // length L, 1 = masked
  std::vector<std::uint8_t> sp;
};

// Round-half-up count: floor(ratio * L + 0.5).
std::size_t mask_count(std::size_t length, double ratio);

// Exactly mask_count(L, ratio) uniformly chosen positions per modality.
// Independent: separate draws. Complementary: the spectrogram stream masks
// only positions the raw stream left visible (the whole complement when it is
// smaller than the count); requires ratio <= 0.5.
MaskSpec sample_masks(std::size_t length, double ratio, MaskMode mode, std::mt19937_64& rng);

// seq [B,L,D]; mask holds B*L flags (row-major over batch then position).
template <typename T>
Tensor<T> apply_masks(const Tensor<T>& seq, std::span<const std::uint8_t> mask,
                      const Tensor<T>& token);

template <typename T>
class CrossMaskingModel {
 public:
  CrossMaskingModel() = default;
  CrossMaskingModel(ModelParams<T>& p, const std::string& name, const ModelConfig& cfg);

  // Adds the sinusoidal PE over positions, then runs both stacks layer by
  // layer; layer l of each stack cross-attends to the other stack's output of
  // layer l-1.
  std::pair<Tensor<T>, Tensor<T>> cross_encode(const Tensor<T>& seq_sg, const Tensor<T>& seq_sp,
                                               ForwardContext& ctx) const;

  Tensor<T> mask_sg, mask_sp;  // [D]
  std::vector<CrossTransformerLayer<T>> layers_sg, layers_sp;
};

template <typename T>
struct HeadOutputs {
  Tensor<T> sg, sp, cat;  // [B,L,5] each
};

template <typename T>
struct SequenceHeads {
  Linear<T> sg1, sg2, sp1, sp2, cat1, cat2;

  SequenceHeads() = default;
  SequenceHeads(ModelParams<T>& p, const std::string& name, std::size_t d_model,
                std::size_t hidden, std::size_t classes);
  HeadOutputs<T> operator()(const Tensor<T>& t_sg, const Tensor<T>& t_sp) const;
};

inline constexpr std::array<double, 3> kPretrainWeights{1.0, 0.1, 0.1};
inline constexpr std::array<double, 3> kFinetuneWeights{1.0, 1.0, 1.0};

// w1 CE(sg) + w2 CE(sp) + w3 CE(cat); each CE is the mean over B*L positions.
template <typename T>
Tensor<T> sequence_loss(const HeadOutputs<T>& logits, std::span<const int> labels,
                        const std::array<double, 3>& weights);

}  // namespace xmsleep::nn
