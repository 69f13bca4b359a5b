#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mcam/image.hpp"
#include "mcam/rng.hpp"

namespace mcam {

struct SceneConfig {
  std::size_t width = 640;
  std::size_t height = 512;
  std::size_t instances_min = 15;
  std::size_t instances_max = 25;
  // Semi-axes as fractions of min(width, height); the minor axis is major / elongation.
  double semi_axis_min = 0.14;
  double semi_axis_max = 0.30;
  double elongation_min = 1.0;
  double elongation_max = 3.0;
  double squareness_min = 2.0;
  double squareness_max = 4.0;
  // Radial sinusoidal deformation amplitude (fraction of radius).
  double deform_max = 0.08;
  double bump_height = 0.5;
  // Every instance keeps at least this share of its own area visible.
  double min_visible = 0.05;
  std::size_t max_retries = 200;
  bool homogeneous = true;
  bool plus_mode = false;
  std::uint64_t background_seed = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Sample {
  RgbImage rgb;
  LabelMap instances;
  DepthMap depth;
  bool operator==(const Sample&) const = default;
};

struct SceneStats {
  std::size_t instances = 0;
  // Pairs of instances whose visible regions touch and whose full masks overlap.
  std::size_t occlusion_contacts = 0;
};

Sample generate_scene(const SceneConfig& cfg, SceneStats* stats = nullptr);

// Scene `index` of a corpus seeded with cfg.seed.
SceneConfig scene_config_for(const SceneConfig& cfg, std::size_t index);

struct PhotometricConfig {
  double filter_probability = 0.5;
  bool blur = true;
  double blur_sigma_min = 0.5;
  double blur_sigma_max = 1.5;
  double jitter = 16.0;  // additive, per channel, in 8-bit units
  bool plus_mode = false;
  double exposure_min = 0.6;
  double exposure_max = 1.4;
};

RgbImage augment_online(const RgbImage& rgb, std::uint64_t seed, const PhotometricConfig& cfg = {});

struct GeometricTransform {
  bool flip_h = false;
  bool flip_v = false;
  int quarter_turns = 0;  // counter-clockwise, 0..3
  double angle_deg = 0.0;
  double scale = 1.0;

  bool is_identity() const;
};

struct GeometricConfig {
  bool flips = true;
  bool quarter_turns = true;
  double max_angle_deg = 0.0;
  double scale_min = 1.0;
  double scale_max = 1.0;
};

GeometricTransform random_transform(Rng& rng, const GeometricConfig& cfg = {});

// Nearest-neighbour resampling; pixels that map outside the source get `fill`.
template <typename T>
Grid<T> apply_transform(const Grid<T>& g, const GeometricTransform& t, T fill = T{});
RgbImage apply_transform(const RgbImage& img, const GeometricTransform& t);

// Joint transform of all three layers, followed by contiguous relabelling.
Sample augment_offline(const Sample& s, const GeometricTransform& t);

// Renumbers the surviving ids to 1..K, keeping their relative order.
LabelMap relabel_contiguous(const LabelMap& m);

template <typename T>
Grid<T> crop_grid(const Grid<T>& g, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  Grid<T> out(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out.at(x, y) = g.at(x0 + x, y0 + y);
  return out;
}
RgbImage crop_rgb(const RgbImage& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h);

}  // namespace mcam
