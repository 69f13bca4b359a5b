#include "mcam/gt.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mcam {

namespace {

struct Offset {
  int dx, dy;
};

constexpr std::array<Offset, 8> kNeighbours = {
    {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, 1}, {1, -1}, {-1, -1}}};

std::size_t neighbour_count(int connectivity) {
  if (connectivity != 4 && connectivity != 8) throw std::invalid_argument("connectivity must be 4 or 8");
  return static_cast<std::size_t>(connectivity);
}

// Calls fn(label) for each in-bounds neighbour of (x, y).
template <typename Fn>
void for_neighbours(const LabelMap& inst, std::size_t n, std::size_t x, std::size_t y, Fn&& fn) {
  const auto w = static_cast<long>(inst.width), h = static_cast<long>(inst.height);
  for (std::size_t k = 0; k < n; ++k) {
    const long nx = static_cast<long>(x) + kNeighbours[k].dx;
    const long ny = static_cast<long>(y) + kNeighbours[k].dy;
    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
    fn(inst.at(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny)));
  }
}

bool touches(const LabelMap& inst, std::size_t n, std::size_t x, std::size_t y, std::uint16_t other) {
  bool hit = false;
  for_neighbours(inst, n, x, y, [&](std::uint16_t l) { hit = hit || l == other; });
  return hit;
}

struct Window {
  std::size_t x0, x1, y0, y1;  // inclusive
};

Window window_at(const LabelMap& inst, std::size_t x, std::size_t y, std::size_t r) {
  return {x >= r ? x - r : 0, std::min(inst.width - 1, x + r), y >= r ? y - r : 0, std::min(inst.height - 1, y + r)};
}

// Up to two labels seen in a window; `more` flags a third.
struct LabelPair {
  std::uint16_t a = 0, b = 0;
  std::size_t count = 0;
  bool more = false;
};

LabelPair window_labels(const LabelMap& inst, const Window& win) {
  LabelPair p;
  for (std::size_t y = win.y0; y <= win.y1 && !p.more; ++y) {
    for (std::size_t x = win.x0; x <= win.x1; ++x) {
      const std::uint16_t l = inst.at(x, y);
      if (p.count == 0) {
        p.a = l;
        p.count = 1;
      } else if (l != p.a && (p.count == 1 || l != p.b)) {
        if (p.count == 2) {
          p.more = true;
          break;
        }
        p.b = l;
        p.count = 2;
      }
    }
  }
  return p;
}

}  // namespace

std::size_t check_instance_map(const LabelMap& inst) {
  if (inst.data.size() != inst.width * inst.height) throw std::invalid_argument("instance map: data size mismatch");
  std::uint16_t k = 0;
  for (auto l : inst.data) k = std::max(k, l);
  std::vector<char> seen(static_cast<std::size_t>(k) + 1, 0);
  for (auto l : inst.data) seen[l] = 1;
  for (std::size_t i = 1; i <= k; ++i)
    if (!seen[i]) throw std::invalid_argument("instance map: ids not contiguous, missing " + std::to_string(i));
  return k;
}

BinaryMap boundaries(const LabelMap& inst, int connectivity) {
  const std::size_t n = neighbour_count(connectivity);
  BinaryMap b(inst.width, inst.height, 0);
  for (std::size_t y = 0; y < inst.height; ++y) {
    for (std::size_t x = 0; x < inst.width; ++x) {
      const std::uint16_t l = inst.at(x, y);
      if (l == 0) continue;
      bool diff = false;
      for_neighbours(inst, n, x, y, [&](std::uint16_t m) { diff = diff || m != l; });
      b.at(x, y) = diff ? 1 : 0;
    }
  }
  return b;
}

BinaryMap occluding_sides(const LabelMap& inst, const DepthMap& depth, std::size_t window_radius, int connectivity) {
  if (window_radius < 1) throw std::invalid_argument("occluding_sides: window radius must be >= 1");
  require_same_size(inst, depth, "occluding_sides");
  const std::size_t n = neighbour_count(connectivity);
  const BinaryMap b = boundaries(inst, connectivity);
  BinaryMap o(inst.width, inst.height, 0);
  constexpr double kFar = -std::numeric_limits<double>::infinity();

  for (std::size_t y = 0; y < inst.height; ++y) {
    for (std::size_t x = 0; x < inst.width; ++x) {
      if (!b.at(x, y)) continue;
      const Window win = window_at(inst, x, y, window_radius);
      const LabelPair pair = window_labels(inst, win);
      if (pair.more || pair.count != 2) continue;

      double sum_a = 0, sum_b = 0;
      std::size_t n_a = 0, n_b = 0;
      for (std::size_t v = win.y0; v <= win.y1; ++v) {
        for (std::size_t u = win.x0; u <= win.x1; ++u) {
          if (inst.at(u, v) == pair.a) {
            sum_a += depth.at(u, v);
            ++n_a;
          } else {
            sum_b += depth.at(u, v);
            ++n_b;
          }
        }
      }
      const double za = pair.a == 0 ? kFar : sum_a / static_cast<double>(n_a);
      const double zb = pair.b == 0 ? kFar : sum_b / static_cast<double>(n_b);
      if (za == zb) continue;
      const std::uint16_t near = za > zb ? pair.a : pair.b;
      const std::uint16_t far = za > zb ? pair.b : pair.a;

      for (std::size_t v = win.y0; v <= win.y1; ++v)
        for (std::size_t u = win.x0; u <= win.x1; ++u)
          if (inst.at(u, v) == near && touches(inst, n, u, v, far)) o.at(u, v) = 1;
    }
  }
  return o;
}

BinaryMap unoccluded_mask(const LabelMap& inst, const BinaryMap& b, const BinaryMap& o, double threshold) {
  require_same_size(inst, b, "unoccluded_mask");
  require_same_size(inst, o, "unoccluded_mask");
  const std::size_t k = check_instance_map(inst);
  std::vector<std::size_t> nb(k + 1, 0), no(k + 1, 0), area(k + 1, 0);
  for (std::size_t i = 0; i < inst.size(); ++i) {
    const auto l = inst[i];
    ++area[l];
    if (l == 0) continue;
    nb[l] += b[i] ? 1 : 0;
    no[l] += o[i] ? 1 : 0;
  }
  std::vector<char> keep(k + 1, 0);
  for (std::size_t l = 1; l <= k; ++l) {
    if (nb[l] == 0)
      throw std::domain_error("unoccluded_mask: instance " + std::to_string(l) + " has zero perimeter");
    keep[l] = static_cast<double>(no[l]) >= threshold * static_cast<double>(nb[l]);
  }
  BinaryMap y(inst.width, inst.height, 0);
  for (std::size_t i = 0; i < inst.size(); ++i) y[i] = keep[inst[i]] ? 1 : 0;
  return y;
}

double junction_fraction(const LabelMap& inst, std::size_t window_radius, int connectivity) {
  const BinaryMap b = boundaries(inst, connectivity);
  std::size_t total = 0, simple = 0;
  for (std::size_t y = 0; y < inst.height; ++y) {
    for (std::size_t x = 0; x < inst.width; ++x) {
      if (!b.at(x, y)) continue;
      ++total;
      if (!window_labels(inst, window_at(inst, x, y, window_radius)).more) ++simple;
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(simple) / static_cast<double>(total);
}

DepthMap pseudo_depth(const LabelMap& inst, const DepthMap& depth) {
  require_same_size(inst, depth, "pseudo_depth");
  const std::size_t k = check_instance_map(inst);
  std::vector<double> sum(k + 1, 0.0);
  std::vector<std::size_t> count(k + 1, 0);
  for (std::size_t i = 0; i < inst.size(); ++i) {
    sum[inst[i]] += depth[i];
    ++count[inst[i]];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{1});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sum[a] / static_cast<double>(count[a]) < sum[b] / static_cast<double>(count[b]);
  });
  std::vector<float> rank(k + 1, 0.0f);
  for (std::size_t r = 0; r < k; ++r) rank[order[r]] = static_cast<float>(r + 1);
  DepthMap out(inst.width, inst.height, 0.0f);
  for (std::size_t i = 0; i < inst.size(); ++i) out[i] = rank[inst[i]];
  return out;
}

GroundTruth generate_gt(const LabelMap& inst, const DepthMap& depth, const GtConfig& cfg) {
  check_instance_map(inst);
  GroundTruth gt;
  gt.b = boundaries(inst, cfg.connectivity);
  gt.o = cfg.pseudo_depth ? occluding_sides(inst, pseudo_depth(inst, depth), cfg.window_radius, cfg.connectivity)
                          : occluding_sides(inst, depth, cfg.window_radius, cfg.connectivity);
  gt.y = unoccluded_mask(inst, gt.b, gt.o, cfg.threshold);
  return gt;
}

}  // namespace mcam
