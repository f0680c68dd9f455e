#include "xmsleep/model.hpp"

#include "xmsleep/data.hpp"
#include "xmsleep/errors.hpp"

namespace xmsleep::nn {

template <typename T>
SleepModel<T>::SleepModel(const ModelConfig& cfg, std::uint64_t init_seed)
    : config((cfg.validate(), cfg)),
      params(init_seed),
      cnn(params, "cnn", cfg),
      spec(params, "spec", cfg),
      pool_sg(params, "pool_sg", cfg.d_model, cfg.attention_size),
      pool_sp(params, "pool_sp", cfg.d_model, cfg.attention_size),
      proj_sg(params, "proj_sg", cfg.d_model, cfg.proj_dim),
      proj_sp(params, "proj_sp", cfg.d_model, cfg.proj_dim),
      seq(params, "seq", cfg),
      heads(params, "heads", cfg.d_model, cfg.head_hidden, data::kNumClasses) {}

template <typename T>
Tensor<T> SleepModel<T>::encode_raw(const Tensor<T>& raw) const {
  return pool_sg(cnn(raw));
}

template <typename T>
Tensor<T> SleepModel<T>::encode_spec(const Tensor<T>& s, ForwardContext& ctx) const {
  return pool_sp(spec(s, ctx));
}

template <typename T>
ForwardResult<T> SleepModel<T>::forward(const SequenceBatch<T>& batch, const ForwardOptions& opt,
                                        ForwardContext& ctx) const {
  const std::size_t d = config.d_model;
  auto f_sg = diff::reshape(encode_raw(batch.raw), {batch.batch, batch.length, d});
  auto f_sp = diff::reshape(encode_spec(batch.spec, ctx), {batch.batch, batch.length, d});
  return forward_features(f_sg, f_sp, batch.labels, opt, ctx);
}

template <typename T>
ForwardResult<T> SleepModel<T>::forward_features(const Tensor<T>& feat_sg,
                                                 const Tensor<T>& feat_sp,
                                                 std::span<const int> labels,
                                                 const ForwardOptions& opt,
                                                 ForwardContext& ctx) const {
  ForwardResult<T> r;
  r.feat_sg = feat_sg;
  r.feat_sp = feat_sp;
  if (opt.contrastive) r.loss_epoch = info_nce_loss(proj_sg(feat_sg), proj_sp(feat_sp), opt.tau);
  auto in_sg = opt.mask_sg.empty() ? feat_sg : apply_masks(feat_sg, opt.mask_sg, seq.mask_sg);
  auto in_sp = opt.mask_sp.empty() ? feat_sp : apply_masks(feat_sp, opt.mask_sp, seq.mask_sp);
  auto [t_sg, t_sp] = seq.cross_encode(in_sg, in_sp, ctx);
  r.logits = heads(t_sg, t_sp);
  r.loss_seq = sequence_loss(r.logits, labels, opt.weights);
  r.total = r.loss_epoch ? diff::add(*r.loss_epoch, r.loss_seq) : r.loss_seq;
  return r;
}

template class SleepModel<float>;
template class SleepModel<double>;

}  // namespace xmsleep::nn
