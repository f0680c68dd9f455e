#include "xmsleep/contrastive.hpp"

#include <numeric>

#include "xmsleep/errors.hpp"

namespace xmsleep::nn {

using diff::Init;

template <typename T>
Projection<T>::Projection(ModelParams<T>& p, const std::string& name, std::size_t in,
                          std::size_t out)
    : fc1(p, name + ".fc1", in, out, Init::HeUniform), fc2(p, name + ".fc2", out, out) {}

template <typename T>
Tensor<T> Projection<T>::operator()(const Tensor<T>& o) const {
  return diff::l2_normalize(fc2(diff::relu(fc1(o))));
}

template <typename T>
Tensor<T> info_nce_loss(const Tensor<T>& zz_sg, const Tensor<T>& zz_sp, double tau) {
  if (zz_sg.shape() != zz_sp.shape() || zz_sg.rank() != 3) {
    throw DimensionError("info_nce_loss: expected matching [B,L,P], got " +
                         diff::shape_str(zz_sg.shape()) + " and " + diff::shape_str(zz_sp.shape()));
  }
  if (!(tau > 0.0)) throw InputError("info_nce_loss: tau must be positive");
  const std::size_t batch = zz_sg.dim(0), len = zz_sg.dim(1);
  if (batch < 2) throw InputError("info_nce_loss: batch size " + std::to_string(batch) +
                                  " leaves no negatives (need B >= 2)");
  // [L,B,P] so each position j yields a BxB similarity block.
  auto a = diff::permute(zz_sg, {1, 0, 2});
  auto b = diff::permute(zz_sp, {1, 0, 2});
  const T inv_tau = T(1.0 / tau);
  auto s = diff::scale(diff::bmm(a, b, true), inv_tau);   // [L,B,B], s[j,i,k] = sg_i . sp_k
  auto st = diff::scale(diff::bmm(b, a, true), inv_tau);  // sp_i . sg_k
  std::vector<int> labels(len * batch);
  for (std::size_t j = 0; j < len; ++j) std::iota(labels.begin() + j * batch,
                                                  labels.begin() + (j + 1) * batch, 0);
  auto l1 = diff::cross_entropy(diff::reshape(s, {len * batch, batch}), labels);
  auto l2 = diff::cross_entropy(diff::reshape(st, {len * batch, batch}), labels);
  return diff::scale(diff::add(l1, l2), T(0.5));
}

template struct Projection<float>;
template struct Projection<double>;
template Tensor<float> info_nce_loss(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> info_nce_loss(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace xmsleep::nn
