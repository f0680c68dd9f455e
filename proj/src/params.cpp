#include "xmsleep/params.hpp"

#include <cmath>
#include <cstring>

namespace xmsleep::diff {

template <typename T>
Tensor<T> ModelParams<T>::create(const std::string& name, Shape shape, Init init,
                                 std::size_t fan_in, std::size_t fan_out) {
  if (index_.count(name)) throw StateError("duplicate parameter name: " + name);
  const std::size_t n = numel(shape);
  if (fan_in == 0) fan_in = shape.size() >= 2 ? shape[shape.size() - 2] : shape.back();
  if (fan_out == 0) fan_out = shape.back();
  std::vector<T> values(n, T(0));
  switch (init) {
    case Init::Zeros:
      break;
    case Init::Ones:
      std::fill(values.begin(), values.end(), T(1));
      break;
    case Init::HeUniform: {
      std::uniform_real_distribution<double> u(-std::sqrt(6.0 / double(fan_in)),
                                               std::sqrt(6.0 / double(fan_in)));
      for (auto& v : values) v = T(u(rng_));
      break;
    }
    case Init::XavierUniform: {
      const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : values) v = T(u(rng_));
      break;
    }
    case Init::SmallNormal: {
      std::normal_distribution<double> nd(0.0, 0.02);
      for (auto& v : values) v = T(nd(rng_));
      break;
    }
  }
  Tensor<T> t(std::move(shape), std::move(values), true);
  index_.emplace(name, params_.size());
  params_.push_back({name, t, true});
  return t;
}

template <typename T>
std::size_t ModelParams<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
const Param<T>* ModelParams<T>::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
Param<T>* ModelParams<T>::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
const Param<T>& ModelParams<T>::at(std::string_view name) const {
  const auto* p = find(name);
  if (!p) throw StateError("unknown parameter: " + std::string(name));
  return *p;
}

template <typename T>
std::size_t ModelParams<T>::set_trainable(std::string_view prefix, bool trainable) {
  std::size_t touched = 0;
  for (auto& p : params_) {
    if (std::string_view(p.name).starts_with(prefix)) {
      p.trainable = trainable;
      ++touched;
    }
  }
  return touched;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& p : params_) {
    if (p.trainable)
      p.tensor.zero_grad();
    else
      p.tensor.clear_grad();
  }
}

template <typename T>
std::uint64_t ModelParams<T>::hash(const std::vector<std::string>& prefixes) const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : params_) {
    bool selected = prefixes.empty();
    for (const auto& pre : prefixes) selected = selected || p.name.starts_with(pre);
    if (!selected) continue;
    mix(p.name.data(), p.name.size());
    for (auto d : p.tensor.shape()) mix(&d, sizeof(d));
    mix(p.tensor.data().data(), p.tensor.numel() * sizeof(T));
  }
  return h;
}

template class ModelParams<float>;
template class ModelParams<double>;

}  // namespace xmsleep::diff
