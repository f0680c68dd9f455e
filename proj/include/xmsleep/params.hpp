#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xmsleep/tensor.hpp"

namespace xmsleep::diff {

template <typename T>
struct Param {
  std::string name;  // dot-separated path, e.g. "cnn.block0.conv1.weight"
  Tensor<T> tensor;
  bool trainable = true;
};

enum class Init {
  Zeros,
  Ones,
  HeUniform,      // U(-sqrt(6/fan_in), +sqrt(6/fan_in)), for ReLU stacks
  XavierUniform,  // U(-sqrt(6/(fan_in+fan_out)), ...)
  SmallNormal,    // N(0, 0.02^2)
};

// Ordered, name-unique parameter collection. Modules hold Tensor handles that
// share nodes with the entries here, so loading a checkpoint updates them.
template <typename T>
class ModelParams {
 public:
  explicit ModelParams(std::uint64_t init_seed = 0) : rng_(init_seed) {}

  // fan_in/fan_out default to the last two dims (or the single dim).
  Tensor<T> create(const std::string& name, Shape shape, Init init, std::size_t fan_in = 0,
                   std::size_t fan_out = 0);

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  const Param<T>& operator[](std::size_t i) const { return params_[i]; }
  Param<T>& operator[](std::size_t i) { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  const Param<T>* find(std::string_view name) const;
  Param<T>* find(std::string_view name);
  const Param<T>& at(std::string_view name) const;

  // Sets the trainable flag on every param whose name starts with `prefix`.
  // Returns how many were touched.
  std::size_t set_trainable(std::string_view prefix, bool trainable);

  void zero_grad();

  // FNV-1a over names, shapes and value bytes of params matching any prefix
  // (all params when `prefixes` is empty).
  std::uint64_t hash(const std::vector<std::string>& prefixes = {}) const;

 private:
  std::vector<Param<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
};

extern template class ModelParams<float>;
extern template class ModelParams<double>;

}  // namespace xmsleep::diff
