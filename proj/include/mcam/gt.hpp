#pragma once

#include <cstddef>

#include "mcam/image.hpp"

namespace mcam {

struct GtConfig {
  int connectivity = 4;
  std::size_t window_radius = 2;
  double threshold = 0.95;
  bool pseudo_depth = false;
};

struct GroundTruth {
  BinaryMap b;
  BinaryMap o;
  BinaryMap y;
};

// Throws unless ids are exactly 0..K with every 1..K present.
std::size_t check_instance_map(const LabelMap& inst);

// Non-background pixels with an in-bounds neighbour of another label.
BinaryMap boundaries(const LabelMap& inst, int connectivity = 4);

// For every boundary pixel whose (2r+1)^2 window holds exactly two labels, the pixels of the
// label with the higher mean depth over the window that touch the other label are set.
// Background always counts as the far side. Windows with more than two labels, or tied
// means, set nothing.
BinaryMap occluding_sides(const LabelMap& inst, const DepthMap& depth, std::size_t window_radius,
                          int connectivity = 4);

// Instances whose occluding-side count reaches threshold * boundary count.
BinaryMap unoccluded_mask(const LabelMap& inst, const BinaryMap& b, const BinaryMap& o, double threshold);

// Share of boundary pixels whose window holds at most two labels; 1 when there are no boundaries.
double junction_fraction(const LabelMap& inst, std::size_t window_radius = 2, int connectivity = 4);

// Per-instance rank (1 = farthest) of mean depth, constant within each instance; background 0.
DepthMap pseudo_depth(const LabelMap& inst, const DepthMap& depth);

GroundTruth generate_gt(const LabelMap& inst, const DepthMap& depth, const GtConfig& cfg = {});

}  // namespace mcam
