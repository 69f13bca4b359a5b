#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcam/rng.hpp"
#include "mcam/tensor.hpp"

namespace mcam {

// Named model parameters in registration order.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
  };

  // The returned reference stays valid as more parameters are added.
  Tensor<T>& add(const std::string& name, Tensor<T> value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  Entry& operator[](std::size_t i) { return *entries_[i]; }
  const Entry& operator[](std::size_t i) const { return *entries_[i]; }

  std::size_t total_elements() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Entry>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

template <typename T>
struct AdamState {
  AdamConfig cfg;
  std::uint64_t t = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

// One Adam step over every parameter; g' = g + weight_decay * theta feeds the moments.
// Throws when a parameter has no gradient buffer.
template <typename T>
void adam_step(ParameterStore<T>& params, AdamState<T>& state);

// Glorot uniform for a (co, ci, k, k) weight: fan_in = ci*k*k, fan_out = co*k*k.
template <typename T>
Tensor<T> xavier_init(const Shape& shape, Rng& rng);

}  // namespace mcam
