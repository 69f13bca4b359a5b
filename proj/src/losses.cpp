#include "mcam/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mcam/ops.hpp"

namespace mcam {

std::string_view head_kind_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::boundary: return "boundary";
    case HeadKind::occlusion: return "occlusion";
    case HeadKind::segmentation: return "segmentation";
  }
  return "unknown";
}

HeadKind parse_head_kind(std::string_view name) {
  if (name == "boundary") return HeadKind::boundary;
  if (name == "occlusion") return HeadKind::occlusion;
  if (name == "segmentation") return HeadKind::segmentation;
  throw std::invalid_argument("unknown head kind '" + std::string(name) + "'");
}

void LossConfig::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("loss alpha must be positive");
  if (!(clamp_eps > 0.0 && clamp_eps <= 1e-3)) throw std::invalid_argument("loss clamp_eps must lie in (0, 1e-3]");
}

double LossConfig::weight(const std::string& head) const {
  auto it = head_weights.find(head);
  return it == head_weights.end() ? 1.0 : it->second;
}

namespace {

constexpr double kRangeSlack = 1e-6;

}  // namespace

template <typename T>
Var weighted_bce(Tape<T>& tape, Var pred, const Tensor<T>& target, const Tensor<T>* beta_gate, const LossConfig& cfg) {
  cfg.validate();
  const Tensor<T>& p = tape.value(pred);
  if (!(p.shape() == target.shape())) {
    throw std::invalid_argument("loss: prediction " + p.shape().str() + " vs target " + target.shape().str());
  }
  if (beta_gate && !(beta_gate->shape() == target.shape())) {
    throw std::invalid_argument("loss: boundary map " + beta_gate->shape().str() + " vs target " + target.shape().str());
  }
  if (p.numel() == 0) throw std::invalid_argument("loss: empty prediction");
  const double eps = cfg.clamp_eps;
  const double alpha = cfg.alpha;
  const double inv = 1.0 / static_cast<double>(p.numel());
  double acc = 0.0;
  // Per-pixel derivative dL/dp, computed in the same pass.
  std::vector<T> dp(p.numel());
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double pi = static_cast<double>(p[i]);
    if (pi < -kRangeSlack || pi > 1.0 + kRangeSlack) {
      throw std::invalid_argument("loss: prediction " + std::to_string(pi) + " lies outside [0, 1]");
    }
    const double y = static_cast<double>(target[i]);
    const double beta = beta_gate && (*beta_gate)[i] > T(0.5) ? alpha : 1.0;
    const double a = std::clamp(pi, eps, 1.0);
    const double b = std::clamp(1.0 - pi, eps, 1.0);
    acc += alpha * y * std::log(a) + beta * (1.0 - y) * std::log(b);
    double d = 0.0;
    if (pi > eps && pi <= 1.0) d -= alpha * y / a;
    if (1.0 - pi > eps && 1.0 - pi <= 1.0) d += beta * (1.0 - y) / b;
    dp[i] = static_cast<T>(d * inv);
  }
  const auto out_id = static_cast<std::uint32_t>(tape.size());
  Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(-acc * inv));
  return tape.record(OpKind::weighted_bce, {pred}, std::move(out), [pred, out_id, dp = std::move(dp)](Tape<T>& t) {
    const T g = t.grad(Var{out_id})[0];
    auto dx = t.grad_mut(pred);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * dp[i];
  });
}

template <typename T>
LossTerms total_loss(Tape<T>& tape, const std::vector<HeadOutput>& heads, const TargetMaps<T>& gt,
                     const LossConfig& cfg) {
  if (heads.empty()) throw std::invalid_argument("total_loss: no heads");
  LossTerms terms;
  for (const HeadOutput& h : heads) {
    auto need = [&](const Tensor<T>* m, const char* what) -> const Tensor<T>& {
      if (!m) throw std::invalid_argument("total_loss: head " + h.name + " needs ground truth " + what);
      return *m;
    };
    Var l;
    switch (h.kind) {
      case HeadKind::boundary: l = loss_boundary(tape, h.pred, need(gt.b, "B"), cfg); break;
      case HeadKind::occlusion: l = loss_occlusion(tape, h.pred, need(gt.o, "O"), need(gt.b, "B"), cfg); break;
      case HeadKind::segmentation: l = loss_segmentation(tape, h.pred, need(gt.y, "Y"), need(gt.b, "B"), cfg); break;
    }
    terms.per_head.push_back(l);
    const double w = cfg.weight(h.name);
    Var weighted = w == 1.0 ? l : scale(tape, l, static_cast<T>(w));
    terms.total = terms.total.valid() ? add(tape, terms.total, weighted) : weighted;
  }
  return terms;
}

template Var weighted_bce<float>(Tape<float>&, Var, const Tensor<float>&, const Tensor<float>*, const LossConfig&);
template Var weighted_bce<double>(Tape<double>&, Var, const Tensor<double>&, const Tensor<double>*, const LossConfig&);
template LossTerms total_loss<float>(Tape<float>&, const std::vector<HeadOutput>&, const TargetMaps<float>&,
                                     const LossConfig&);
template LossTerms total_loss<double>(Tape<double>&, const std::vector<HeadOutput>&, const TargetMaps<double>&,
                                      const LossConfig&);

}  // namespace mcam
