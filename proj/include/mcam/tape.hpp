#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

#include "mcam/tensor.hpp"

namespace mcam {

enum class OpKind : std::uint8_t {
  constant,
  leaf,
  parameter,
  conv2d,
  relu,
  sigmoid,
  max_pool2,
  avg_pool2,
  unpool2,
  concat,
  merge_sum,
  merge_max,
  dropout,
  sum,
  mul,
  add,
  scale,
  weighted_bce,
};

std::string_view op_name(OpKind kind);

// Handle to a value recorded on a tape.
struct Var {
  static constexpr std::uint32_t npos = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = npos;
  bool valid() const { return id != npos; }
};

// Records executed ops in order and replays them backwards. One tape per forward pass;
// a tape is not meant to be shared between threads.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  struct Record {
    OpKind kind;
    std::vector<std::uint32_t> inputs;
    std::uint32_t output;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A value with no gradient.
  Var constant(Tensor<T> value);
  // An owned value that receives a gradient, readable through grad().
  Var leaf(Tensor<T> value);
  // A borrowed tensor (typically a model parameter). After backward() its
  // gradient is accumulated into param.grad(). The tensor must outlive the tape.
  Var parameter(Tensor<T>& param);

  // Used by op implementations.
  Var record(OpKind kind, std::vector<Var> inputs, Tensor<T> output, BackwardFn backward);

  const Tensor<T>& value(Var v) const;
  bool needs_grad(Var v) const { return slot(v).needs_grad; }

  // Gradient of the loss w.r.t. v; empty before backward() or when v needs no grad.
  std::span<const T> grad(Var v) const { return slot(v).grad; }
  // Mutable gradient sink; allocates zeros on first use. Used by op backward functions.
  std::span<T> grad_mut(Var v);

  void backward(Var loss);

  std::size_t size() const { return slots_.size(); }
  std::span<const Record> records() const { return records_; }
  bool backward_done() const { return backward_done_; }

 private:
  struct Slot {
    Tensor<T> owned;
    Tensor<T>* borrowed = nullptr;
    std::vector<T> grad;
    bool needs_grad = false;
  };

  const Slot& slot(Var v) const {
    if (!v.valid() || v.id >= slots_.size()) throw std::invalid_argument("variable is not on this tape");
    return slots_[v.id];
  }
  Slot& slot(Var v) { return const_cast<Slot&>(std::as_const(*this).slot(v)); }

  std::vector<Slot> slots_;
  std::vector<Record> records_;
  std::vector<BackwardFn> backward_fns_;
  bool backward_done_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mcam
