#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "mcam/metrics.hpp"
#include "mcam/rng.hpp"

namespace mcam::oracle {

inline BinaryMap random_binary(std::size_t w, std::size_t h, double p, Rng& rng) {
  BinaryMap m(w, h, 0);
  for (auto& v : m.data) v = rng.bernoulli(p);
  return m;
}

inline ProbMap random_prob(std::size_t w, std::size_t h, Rng& rng) {
  ProbMap m(w, h, 0.0f);
  for (auto& v : m.data) v = static_cast<float>(rng.uniform());
  return m;
}

inline BinaryMap binarize(const ProbMap& p, double thr) {
  BinaryMap b(p.width, p.height, 0);
  for (std::size_t i = 0; i < p.size(); ++i) b[i] = static_cast<double>(p[i]) >= thr;
  return b;
}

inline EvalCurve curve_from(const std::vector<std::pair<double, double>>& pr) {
  // Builds counts that reproduce the requested (precision, recall) pairs exactly enough.
  EvalCurve c;
  const std::uint64_t scale = 1'000'000;
  double thr = 0.1;
  for (auto [p, r] : pr) {
    CurvePoint pt;
    pt.threshold = thr;
    thr += 0.1;
    pt.counts.total_pred = scale;
    pt.counts.matched_pred = static_cast<std::uint64_t>(std::llround(p * scale));
    pt.counts.total_gt = scale;
    pt.counts.matched_gt = static_cast<std::uint64_t>(std::llround(r * scale));
    c.points.push_back(pt);
  }
  return c;
}

// Dense midpoint Riemann sum of the same piecewise-linear P(R).
inline double riemann(const std::vector<std::pair<double, double>>& rp_sorted, double lo, double hi, std::size_t n) {
  auto p_at = [&](double r) {
    if (r < rp_sorted.front().first) return rp_sorted.front().second;
    for (std::size_t i = 1; i < rp_sorted.size(); ++i) {
      const auto [r0, p0] = rp_sorted[i - 1];
      const auto [r1, p1] = rp_sorted[i];
      if (r <= r1) return r1 > r0 ? p0 + (p1 - p0) * (r - r0) / (r1 - r0) : p1;
    }
    return 0.0;
  };
  double s = 0.0;
  const double h = (hi - lo) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) s += p_at(lo + (i + 0.5) * h);
  return s * h;
}

}  // namespace mcam::oracle
