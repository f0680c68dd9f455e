#pragma once

#include "xmsleep/layers.hpp"

namespace xmsleep::nn {

// affine -> ReLU -> affine -> L2 normalize. One instance per modality.
template <typename T>
struct Projection {
  Linear<T> fc1, fc2;

  Projection() = default;
  Projection(ModelParams<T>& p, const std::string& name, std::size_t in, std::size_t out);
  // [..,in] -> [..,out] with unit rows.
  Tensor<T> operator()(const Tensor<T>& o) const;
};

// Bidirectional InfoNCE over [B,L,P] unit embeddings. Negatives for anchor
// (i,j) are the other batch items at the same position j. Each direction is
// the mean over (i,j) of -log softmax(s/tau)[i]; the result is their average.
// Throws InputError when B < 2 or tau <= 0.
template <typename T>
Tensor<T> info_nce_loss(const Tensor<T>& zz_sg, const Tensor<T>& zz_sp, double tau);

}  // namespace xmsleep::nn
