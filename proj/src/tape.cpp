#include "mcam/tape.hpp"

#include <algorithm>

namespace mcam {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::leaf: return "leaf";
    case OpKind::parameter: return "parameter";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::max_pool2: return "max_pool2";
    case OpKind::avg_pool2: return "avg_pool2";
    case OpKind::unpool2: return "unpool2";
    case OpKind::concat: return "concat";
    case OpKind::merge_sum: return "merge_sum";
    case OpKind::merge_max: return "merge_max";
    case OpKind::dropout: return "dropout";
    case OpKind::sum: return "sum";
    case OpKind::mul: return "mul";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::weighted_bce: return "weighted_bce";
  }
  return "unknown";
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  Var v{static_cast<std::uint32_t>(slots_.size())};
  slots_.push_back(Slot{std::move(value), nullptr, {}, false});
  records_.push_back(Record{OpKind::constant, {}, v.id});
  backward_fns_.emplace_back();
  return v;
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value) {
  Var v{static_cast<std::uint32_t>(slots_.size())};
  slots_.push_back(Slot{std::move(value), nullptr, {}, true});
  records_.push_back(Record{OpKind::leaf, {}, v.id});
  backward_fns_.emplace_back();
  return v;
}

template <typename T>
Var Tape<T>::parameter(Tensor<T>& param) {
  Var v{static_cast<std::uint32_t>(slots_.size())};
  slots_.push_back(Slot{Tensor<T>{}, &param, {}, true});
  records_.push_back(Record{OpKind::parameter, {}, v.id});
  backward_fns_.emplace_back();
  return v;
}

template <typename T>
Var Tape<T>::record(OpKind kind, std::vector<Var> inputs, Tensor<T> output, BackwardFn backward) {
  Record rec{kind, {}, static_cast<std::uint32_t>(slots_.size())};
  bool needs = false;
  for (Var in : inputs) {
    needs = needs || slot(in).needs_grad;
    rec.inputs.push_back(in.id);
  }
  slots_.push_back(Slot{std::move(output), nullptr, {}, needs});
  records_.push_back(std::move(rec));
  backward_fns_.push_back(needs ? std::move(backward) : BackwardFn{});
  return Var{records_.back().output};
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  const Slot& s = slot(v);
  return s.borrowed ? *s.borrowed : s.owned;
}

template <typename T>
std::span<T> Tape<T>::grad_mut(Var v) {
  Slot& s = slot(v);
  if (s.grad.empty()) s.grad.assign(value(v).numel(), T{0});
  return s.grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (backward_done_) throw std::logic_error("backward already ran on this tape; start a new tape");
  const Slot& ls = slot(loss);
  if (value(loss).numel() != 1) {
    throw std::invalid_argument("backward needs a scalar loss, got shape " + value(loss).shape().str());
  }
  if (!ls.needs_grad) throw std::invalid_argument("loss is detached from every differentiable input");
  backward_done_ = true;

  grad_mut(loss)[0] = T{1};
  for (std::size_t i = records_.size(); i-- > 0;) {
    const Record& rec = records_[i];
    if (rec.output > loss.id) continue;
    if (!backward_fns_[i] || slots_[rec.output].grad.empty()) continue;
    backward_fns_[i](*this);
  }
  for (Slot& s : slots_) {
    if (!s.borrowed || s.grad.empty()) continue;
    auto dst = s.borrowed->grad();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += s.grad[k];
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace mcam
