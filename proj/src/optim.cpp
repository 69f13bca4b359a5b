#include "mcam/optim.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <utility>

namespace mcam {

template <typename T>
Tensor<T>& ParameterStore<T>::add(const std::string& name, Tensor<T> value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back(std::make_unique<Entry>(Entry{name, std::move(value)}));
  entries_.back()->value.set_requires_grad(true);
  return entries_.back()->value;
}

template <typename T>
Tensor<T>& ParameterStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return entries_[it->second]->value;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return entries_[it->second]->value;
}

template <typename T>
std::size_t ParameterStore<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e->value.numel();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) e->value.zero_grad();
}

template <typename T>
void adam_step(ParameterStore<T>& params, AdamState<T>& state) {
  const AdamConfig& c = state.cfg;
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].value.numel(), T{0});
      state.v[i].assign(params[i].value.numel(), T{0});
    }
  }
  if (state.m.size() != params.size()) throw std::logic_error("adam state does not match the parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].value.has_grad()) throw std::invalid_argument("adam_step: parameter " + params[i].name + " has no gradient");
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params[i].value;
    auto theta = p.data();
    const auto g = std::as_const(p).grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = static_cast<double>(g[k]) + c.weight_decay * static_cast<double>(theta[k]);
      const double mk = c.beta1 * static_cast<double>(m[k]) + (1.0 - c.beta1) * gk;
      const double vk = c.beta2 * static_cast<double>(v[k]) + (1.0 - c.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double step = c.lr * (mk / bc1) / (std::sqrt(vk / bc2) + c.eps);
      theta[k] = static_cast<T>(static_cast<double>(theta[k]) - step);
    }
  }
}

template <typename T>
Tensor<T> xavier_init(const Shape& shape, Rng& rng) {
  const std::size_t rf = shape.h * shape.w;
  const std::size_t fan_in = shape.c * rf;
  const std::size_t fan_out = shape.n * rf;
  if (fan_in == 0 || fan_out == 0) throw std::invalid_argument("xavier_init: zero fan for shape " + shape.str());
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> out(shape);
  for (T& x : out.data()) x = static_cast<T>(rng.uniform(-bound, bound));
  return out;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template void adam_step<float>(ParameterStore<float>&, AdamState<float>&);
template void adam_step<double>(ParameterStore<double>&, AdamState<double>&);
template Tensor<float> xavier_init<float>(const Shape&, Rng&);
template Tensor<double> xavier_init<double>(const Shape&, Rng&);

}  // namespace mcam
