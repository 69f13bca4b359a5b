#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mcam/tape.hpp"
#include "mcam/tensor.hpp"

namespace mcam {

enum class HeadKind { boundary, occlusion, segmentation };

std::string_view head_kind_name(HeadKind kind);
HeadKind parse_head_kind(std::string_view name);

struct LossConfig {
  double alpha = 10.0;
  double clamp_eps = 1e-12;
  // Missing entries weigh 1.
  std::map<std::string, double> head_weights;

  void validate() const;
  double weight(const std::string& head) const;
};

// -(1/(N*P)) * sum[alpha*y*log(p) + beta*(1-y)*log(1-p)] with log arguments clamped to
// [clamp_eps, 1]. beta is 1 everywhere when beta_gate is null, otherwise alpha where
// beta_gate > 0.5 and 1 elsewhere.
template <typename T>
Var weighted_bce(Tape<T>& tape, Var pred, const Tensor<T>& target, const Tensor<T>* beta_gate, const LossConfig& cfg);

template <typename T>
Var loss_boundary(Tape<T>& tape, Var pred, const Tensor<T>& b, const LossConfig& cfg) {
  return weighted_bce<T>(tape, pred, b, nullptr, cfg);
}

template <typename T>
Var loss_occlusion(Tape<T>& tape, Var pred, const Tensor<T>& o, const Tensor<T>& b, const LossConfig& cfg) {
  return weighted_bce(tape, pred, o, &b, cfg);
}

template <typename T>
Var loss_segmentation(Tape<T>& tape, Var pred, const Tensor<T>& y, const Tensor<T>& b, const LossConfig& cfg) {
  return weighted_bce(tape, pred, y, &b, cfg);
}

template <typename T>
struct TargetMaps {
  const Tensor<T>* b = nullptr;
  const Tensor<T>* o = nullptr;
  const Tensor<T>* y = nullptr;
};

struct HeadOutput {
  std::string name;
  HeadKind kind;
  Var pred;
};

struct LossTerms {
  Var total;
  std::vector<Var> per_head;  // same order as the heads passed in
};

template <typename T>
LossTerms total_loss(Tape<T>& tape, const std::vector<HeadOutput>& heads, const TargetMaps<T>& gt,
                     const LossConfig& cfg);

}  // namespace mcam
