#pragma once

// The full two-modality network with a single parameter store, plus the
// batched forward used by every training stage.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xmsleep/backbones.hpp"
#include "xmsleep/config.hpp"
#include "xmsleep/contrastive.hpp"
#include "xmsleep/sequence.hpp"

namespace xmsleep::nn {

// Parameter groups frozen during fine-tuning (epoch encoders and pooling).
inline const std::vector<std::string> kBackbonePrefixes{"cnn.", "spec.", "pool_sg.", "pool_sp."};
inline const std::vector<std::string> kProjectionPrefixes{"proj_sg.", "proj_sp."};

// B windows of L epochs, epoch-major inside each window.
template <typename T>
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  Tensor<T> raw;            // [B*L,1,3000]
  Tensor<T> spec;           // [B*L,29,129]
  std::vector<int> labels;  // B*L
};

struct ForwardOptions {
  bool contrastive = true;
  double tau = 0.1;
  std::array<double, 3> weights = kPretrainWeights;
  // B*L flags per modality; empty means nothing masked.
  std::vector<std::uint8_t> mask_sg;
  std::vector<std::uint8_t> mask_sp;
};

template <typename T>
struct ForwardResult {
  Tensor<T> feat_sg, feat_sp;  // [B,L,D]
  std::optional<Tensor<T>> loss_epoch;
  Tensor<T> loss_seq;
  Tensor<T> total;
  HeadOutputs<T> logits;
};

template <typename T>
class SleepModel {
 public:
  SleepModel(const ModelConfig& cfg, std::uint64_t init_seed);
  SleepModel(const SleepModel&) = delete;
  SleepModel& operator=(const SleepModel&) = delete;

  // [N,1,3000] -> [N,D]
  Tensor<T> encode_raw(const Tensor<T>& raw) const;
  // [N,29,129] -> [N,D]
  Tensor<T> encode_spec(const Tensor<T>& spec, ForwardContext& ctx) const;

  ForwardResult<T> forward(const SequenceBatch<T>& batch, const ForwardOptions& opt,
                           ForwardContext& ctx) const;
  // Sequence part only, from pooled features [B,L,D] (e.g. cached under frozen encoders).
  ForwardResult<T> forward_features(const Tensor<T>& feat_sg, const Tensor<T>& feat_sp,
                                    std::span<const int> labels, const ForwardOptions& opt,
                                    ForwardContext& ctx) const;

  ModelConfig config;
  diff::ModelParams<T> params;
  CnnBackbone<T> cnn;
  SpecTransformer<T> spec;
  EpochAttention<T> pool_sg, pool_sp;
  Projection<T> proj_sg, proj_sp;
  CrossMaskingModel<T> seq;
  SequenceHeads<T> heads;
};

}  // namespace xmsleep::nn
