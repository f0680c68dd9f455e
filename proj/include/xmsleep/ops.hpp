#pragma once

// Differentiable primitives. Every op is a pure function of its inputs and
// records a backward closure when any input requires a gradient.

#include <cstdint>
#include <random>
#include <span>

#include "xmsleep/tensor.hpp"

namespace xmsleep::diff {

enum class Padding { Same, Valid };

// Elementwise. `b` may equal `a` in shape or match a trailing suffix of it, in
// which case it is broadcast over the leading dimensions.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);

// y = x . w (+ b), broadcast over the leading dims of x. `b` may be undefined.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
template <typename T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w);

// Batched matmul over [G,M,K] x [G,K,P]; with transpose_b the second operand
// is [G,P,K].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);
// Swaps the last two axes.
template <typename T> Tensor<T> transpose_last(const Tensor<T>& x);
template <typename T> Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b);

// Max-subtracted softmax along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Normalizes over the last dim, then applies gamma/beta. The residual add of
// a post-norm block is the caller's job.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// Cross-correlation of x[B,Cin,T] with w[Cout,Cin,K]. Same padding needs odd K.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride = 1, Padding padding = Padding::Same);

// Pools the last axis. In ceil mode the final window may be partial. Gradient
// goes to the first maximum of each window.
template <typename T>
Tensor<T> maxpool1d(const Tensor<T>& x, std::size_t width, std::size_t stride,
                    bool ceil_mode);
std::size_t pooled_length(std::size_t length, std::size_t width, std::size_t stride,
                          bool ceil_mode);

// Inverted dropout; identity when !training or rate == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, std::mt19937_64* rng);

// Mean over rows of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// x[B,L,D]: rows flagged in mask (length B*L) are replaced by token[D].
template <typename T>
Tensor<T> masked_replace(const Tensor<T>& x, std::span<const std::uint8_t> mask,
                         const Tensor<T>& token);

// Rows of the last dim divided by (norm + eps).
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps = T(1e-12));

}  // namespace xmsleep::diff
