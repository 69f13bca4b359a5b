#include "mcam/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>

namespace mcam {

namespace {

constexpr double kPi = std::numbers::pi;

// ---- procedural textures ----------------------------------------------------

double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  const std::uint64_t h = mix_seed(seed ^ mix_seed(static_cast<std::uint64_t>(ix) * 0x9e3779b97f4a7c15ULL ^
                                                   static_cast<std::uint64_t>(iy)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(double x, double y, std::uint64_t seed) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double tx = smooth(x - fx), ty = smooth(y - fy);
  const double a = lattice(ix, iy, seed), b = lattice(ix + 1, iy, seed);
  const double c = lattice(ix, iy + 1, seed), d = lattice(ix + 1, iy + 1, seed);
  return (a + (b - a) * tx) + ((c + (d - c) * tx) - (a + (b - a) * tx)) * ty;
}

double fbm(double x, double y, std::uint64_t seed) {
  double sum = 0.0, amp = 0.5, norm = 0.0;
  for (int o = 0; o < 4; ++o) {
    sum += amp * value_noise(x, y, seed + static_cast<std::uint64_t>(o));
    norm += amp;
    amp *= 0.5;
    x *= 2.0;
    y *= 2.0;
  }
  return sum / norm;
}

using Rgb = std::array<double, 3>;

struct Texture {
  enum class Kind { bands, noise, rings } kind = Kind::bands;
  Rgb c0{}, c1{};
  double freq = 0.1;
  double warp = 1.0;
  double noise_scale = 0.05;
  std::uint64_t seed = 0;

  static Texture sample(std::uint64_t seed) {
    Rng rng(seed);
    Texture t;
    t.kind = static_cast<Kind>(rng.uniform_int(0, 2));
    for (auto& c : t.c0) c = rng.uniform(20.0, 235.0);
    for (auto& c : t.c1) c = rng.uniform(20.0, 235.0);
    t.freq = rng.uniform(0.04, 0.2);
    t.warp = rng.uniform(0.5, 3.0);
    t.noise_scale = rng.uniform(0.03, 0.15);
    t.seed = rng.next_u64();
    return t;
  }

  Rgb at(double u, double v) const {
    const double n = fbm(u * noise_scale, v * noise_scale, seed);
    double t = 0.0;
    switch (kind) {
      case Kind::bands: t = 0.5 + 0.5 * std::sin(2.0 * kPi * freq * u + warp * 2.0 * kPi * n); break;
      case Kind::noise: t = n; break;
      case Kind::rings: t = 0.5 + 0.5 * std::sin(2.0 * kPi * freq * std::hypot(u, v) + warp * n); break;
    }
    return {c0[0] + (c1[0] - c0[0]) * t, c0[1] + (c1[1] - c0[1]) * t, c0[2] + (c1[2] - c0[2]) * t};
  }
};

// ---- shapes -----------------------------------------------------------------

struct Shape {
  double cx, cy, a, b, n, theta, amp, phase;
  int lobes;
  double off_u, off_v, brightness;

  double extent() const { return a * (1.0 + amp) + 1.0; }

  // Normalised superellipse radius scaled by the local deformation; <= 1 inside. Also
  // returns the local frame coordinates.
  double radius(double x, double y, double& u, double& v) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    u = c * dx + s * dy;
    v = -s * dx + c * dy;
    const double ua = std::abs(u) / a, vb = std::abs(v) / b;
    const double rho = std::pow(std::pow(ua, n) + std::pow(vb, n), 1.0 / n);
    const double phi = std::atan2(v / b, u / a);
    return rho / (1.0 + amp * std::sin(lobes * phi + phase));
  }
};

Shape sample_shape(const SceneConfig& cfg, Rng& rng) {
  const double s = static_cast<double>(std::min(cfg.width, cfg.height));
  Shape sh{};
  sh.a = rng.uniform(cfg.semi_axis_min, cfg.semi_axis_max) * s;
  sh.b = sh.a / rng.uniform(cfg.elongation_min, cfg.elongation_max);
  sh.n = rng.uniform(cfg.squareness_min, cfg.squareness_max);
  sh.theta = rng.uniform(0.0, kPi);
  sh.amp = rng.uniform(0.0, cfg.deform_max);
  sh.lobes = static_cast<int>(rng.uniform_int(2, 5));
  sh.phase = rng.uniform(0.0, 2.0 * kPi);
  sh.cx = rng.uniform(0.0, static_cast<double>(cfg.width));
  sh.cy = rng.uniform(0.0, static_cast<double>(cfg.height));
  sh.off_u = rng.uniform(0.0, 1000.0);
  sh.off_v = rng.uniform(0.0, 1000.0);
  sh.brightness = rng.uniform(0.85, 1.15);
  return sh;
}

struct Stamp {
  std::vector<std::size_t> pixels;
  std::vector<float> rho, u, v;
};

Stamp rasterize(const Shape& sh, std::size_t w, std::size_t h) {
  Stamp st;
  const double e = sh.extent();
  const long x0 = std::max(0L, static_cast<long>(std::floor(sh.cx - e)));
  const long x1 = std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(sh.cx + e)));
  const long y0 = std::max(0L, static_cast<long>(std::floor(sh.cy - e)));
  const long y1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(sh.cy + e)));
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) {
      double u, v;
      const double r = sh.radius(static_cast<double>(x), static_cast<double>(y), u, v);
      if (r > 1.0) continue;
      st.pixels.push_back(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x));
      st.rho.push_back(static_cast<float>(r));
      st.u.push_back(static_cast<float>(u));
      st.v.push_back(static_cast<float>(v));
    }
  return st;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

void permute_and_expose(std::vector<double>& px, Rng& rng, const PhotometricConfig& cfg) {
  if (rng.bernoulli(0.5)) {
    std::array<int, 3> perm{0, 1, 2};
    for (int i = 2; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
    for (std::size_t i = 0; i < px.size(); i += 3) {
      const std::array<double, 3> c{px[i], px[i + 1], px[i + 2]};
      for (int k = 0; k < 3; ++k) px[i + k] = c[perm[k]];
    }
  }
  if (rng.bernoulli(0.5)) {
    const double e = rng.uniform(cfg.exposure_min, cfg.exposure_max);
    for (double& v : px) v *= e;
  }
}

void gaussian_blur(std::vector<double>& px, std::size_t w, std::size_t h, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double norm = 0.0;
  for (int i = -r; i <= r; ++i) norm += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= norm;
  std::vector<double> tmp(px.size());
  const auto W = static_cast<long>(w), H = static_cast<long>(h);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * px[(y * W + std::clamp(x + i, 0L, W - 1)) * 3 + c];
        tmp[(y * W + x) * 3 + c] = s;
      }
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[(std::clamp(y + i, 0L, H - 1) * W + x) * 3 + c];
        px[(y * W + x) * 3 + c] = s;
      }
}

// ---- geometry ---------------------------------------------------------------

struct IndexMap {
  std::size_t width, height;
  std::vector<long> source;  // -1 = outside
};

IndexMap build_index_map(std::size_t w, std::size_t h, const GeometricTransform& t) {
  const int turns = ((t.quarter_turns % 4) + 4) % 4;
  const bool swap = turns % 2 == 1;
  IndexMap m{swap ? h : w, swap ? w : h, {}};
  m.source.assign(m.width * m.height, -1);
  const double cx = (static_cast<double>(m.width) - 1.0) / 2.0, cy = (static_cast<double>(m.height) - 1.0) / 2.0;
  const double c = std::cos(t.angle_deg * kPi / 180.0), s = std::sin(t.angle_deg * kPi / 180.0);
  const bool similarity = t.angle_deg != 0.0 || t.scale != 1.0;
  if (!(t.scale > 0.0)) throw std::invalid_argument("geometric transform: scale must be positive");
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t x = 0; x < m.width; ++x) {
      long qx = static_cast<long>(x), qy = static_cast<long>(y);
      if (similarity) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        qx = std::lround((c * dx + s * dy) / t.scale + cx);
        qy = std::lround((-s * dx + c * dy) / t.scale + cy);
        if (qx < 0 || qy < 0 || qx >= static_cast<long>(m.width) || qy >= static_cast<long>(m.height)) continue;
      }
      // Undo the quarter turns; a counter-clockwise turn sends (x, y) in a w-wide image to (y, w-1-x).
      std::size_t cw = m.width, ch = m.height;
      for (int k = 0; k < turns; ++k) {
        const long pw = static_cast<long>(ch);  // width before this turn
        const long sx = pw - 1 - qy, sy = qx;
        qx = sx;
        qy = sy;
        std::swap(cw, ch);
      }
      if (t.flip_v) qy = static_cast<long>(h) - 1 - qy;
      if (t.flip_h) qx = static_cast<long>(w) - 1 - qx;
      m.source[y * m.width + x] = qy * static_cast<long>(w) + qx;
    }
  }
  return m;
}

}  // namespace

void SceneConfig::validate() const {
  if (width < 1 || height < 1) throw std::invalid_argument("scene: empty image");
  if (instances_min > instances_max) throw std::invalid_argument("scene: instance range is empty");
  if (instances_max > 65535) throw std::invalid_argument("scene: too many instances for 16-bit ids");
  if (!(semi_axis_min > 0.0) || semi_axis_min > semi_axis_max)
    throw std::invalid_argument("scene: bad semi-axis range");
  if (semi_axis_max * (1.0 + deform_max) > 0.5)
    throw std::invalid_argument("scene: instance larger than image (semi-axis limit exceeds half the image)");
  if (!(elongation_min >= 1.0) || elongation_min > elongation_max)
    throw std::invalid_argument("scene: bad elongation range");
  if (!(squareness_min > 0.0) || squareness_min > squareness_max)
    throw std::invalid_argument("scene: bad squareness range");
  if (deform_max < 0.0 || deform_max >= 1.0) throw std::invalid_argument("scene: deformation must lie in [0, 1)");
  if (bump_height < 0.0 || bump_height >= 1.0)
    throw std::invalid_argument("scene: bump height must lie in [0, 1) to keep drop order");
  if (min_visible < 0.0 || min_visible > 1.0) throw std::invalid_argument("scene: min_visible must lie in [0, 1]");
}

SceneConfig scene_config_for(const SceneConfig& cfg, std::size_t index) {
  SceneConfig c = cfg;
  c.seed = derive_seed(cfg.seed, index);
  return c;
}

Sample generate_scene(const SceneConfig& cfg, SceneStats* stats) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t w = cfg.width, h = cfg.height, npx = w * h;
  const auto k = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.instances_min), static_cast<std::int64_t>(cfg.instances_max)));
  const std::uint64_t texture_seed = rng.next_u64();

  std::vector<int> owner(npx, -1);
  std::vector<float> top_rho(npx, 0.0f), top_u(npx, 0.0f), top_v(npx, 0.0f);
  std::vector<Shape> shapes;
  std::vector<std::size_t> area, visible;
  std::vector<std::vector<std::size_t>> masks;
  std::vector<std::size_t> covered;

  for (std::size_t j = 0; j < k; ++j) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      const Shape sh = sample_shape(cfg, rng);
      Stamp st = rasterize(sh, w, h);
      if (st.pixels.empty()) continue;
      covered.assign(j, 0);
      for (std::size_t p : st.pixels)
        if (owner[p] >= 0) ++covered[static_cast<std::size_t>(owner[p])];
      bool ok = true;
      for (std::size_t i = 0; i < j && ok; ++i)
        ok = static_cast<double>(visible[i] - covered[i]) >= cfg.min_visible * static_cast<double>(area[i]) &&
             visible[i] > covered[i];
      if (!ok) continue;
      for (std::size_t i = 0; i < j; ++i) visible[i] -= covered[i];
      for (std::size_t q = 0; q < st.pixels.size(); ++q) {
        const std::size_t p = st.pixels[q];
        owner[p] = static_cast<int>(j);
        top_rho[p] = st.rho[q];
        top_u[p] = st.u[q];
        top_v[p] = st.v[q];
      }
      shapes.push_back(sh);
      area.push_back(st.pixels.size());
      visible.push_back(st.pixels.size());
      masks.push_back(std::move(st.pixels));
      placed = true;
    }
    if (!placed)
      throw std::runtime_error("generate_scene: could not place instance " + std::to_string(j + 1) + " after " +
                               std::to_string(cfg.max_retries) + " attempts");
  }

  Sample s{RgbImage(w, h), LabelMap(w, h, 0), DepthMap(w, h, 0.0f)};
  const Texture tex = Texture::sample(cfg.homogeneous ? texture_seed : 0);
  const Texture bg = Texture::sample(derive_seed(cfg.background_seed, texture_seed));
  std::vector<Texture> own;
  if (!cfg.homogeneous)
    for (std::size_t j = 0; j < k; ++j) own.push_back(Texture::sample(derive_seed(texture_seed, j)));

  Rng noise = rng.fork(1);
  std::vector<double> px(npx * 3);
  for (std::size_t p = 0; p < npx; ++p) {
    const double x = static_cast<double>(p % w), y = static_cast<double>(p / w);
    Rgb c;
    if (owner[p] < 0) {
      c = bg.at(x, y);
      for (double& v : c) v *= 0.6;
    } else {
      const auto j = static_cast<std::size_t>(owner[p]);
      const Shape& sh = shapes[j];
      const double rho = top_rho[p];
      c = (cfg.homogeneous ? tex : own[j]).at(top_u[p] + sh.off_u, top_v[p] + sh.off_v);
      const double shade = sh.brightness * (0.55 + 0.45 * std::sqrt(std::max(0.0, 1.0 - rho * rho)));
      for (double& v : c) v *= shade;
      s.instances[p] = static_cast<std::uint16_t>(j + 1);
      s.depth[p] = static_cast<float>(static_cast<double>(j + 1) + cfg.bump_height * (1.0 - rho * rho));
    }
    for (int ch = 0; ch < 3; ++ch) px[p * 3 + ch] = c[ch] + 3.0 * noise.normal();
  }
  if (cfg.plus_mode) {
    Rng plus = rng.fork(2);
    permute_and_expose(px, plus, PhotometricConfig{});
  }
  for (std::size_t i = 0; i < px.size(); ++i) s.rgb.data[i] = to_byte(px[i]);

  if (stats) {
    stats->instances = k;
    std::set<std::pair<int, int>> touching;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const int a = owner[y * w + x];
        if (a < 0) continue;
        const int r = x + 1 < w ? owner[y * w + x + 1] : -1;
        const int d = y + 1 < h ? owner[(y + 1) * w + x] : -1;
        for (int b : {r, d})
          if (b >= 0 && b != a) touching.insert({std::min(a, b), std::max(a, b)});
      }
    std::vector<std::uint8_t> bitmap(npx);
    stats->occlusion_contacts = 0;
    for (const auto& [a, b] : touching) {
      std::fill(bitmap.begin(), bitmap.end(), 0);
      for (std::size_t p : masks[static_cast<std::size_t>(a)]) bitmap[p] = 1;
      const auto& mb = masks[static_cast<std::size_t>(b)];
      if (std::any_of(mb.begin(), mb.end(), [&](std::size_t p) { return bitmap[p] != 0; }))
        ++stats->occlusion_contacts;
    }
  }
  return s;
}

RgbImage augment_online(const RgbImage& rgb, std::uint64_t seed, const PhotometricConfig& cfg) {
  Rng rng(seed);
  std::vector<double> px(rgb.data.begin(), rgb.data.end());
  bool changed = false;
  if (rng.bernoulli(cfg.filter_probability)) {
    if (cfg.blur && cfg.blur_sigma_max > 0.0) {
      gaussian_blur(px, rgb.width, rgb.height, rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max));
    }
    for (int c = 0; c < 3; ++c) {
      const double d = rng.uniform(-cfg.jitter, cfg.jitter);
      for (std::size_t i = static_cast<std::size_t>(c); i < px.size(); i += 3) px[i] += d;
    }
    changed = true;
  }
  if (cfg.plus_mode) {
    permute_and_expose(px, rng, cfg);
    changed = true;
  }
  if (!changed) return rgb;
  RgbImage out(rgb.width, rgb.height);
  for (std::size_t i = 0; i < px.size(); ++i) out.data[i] = to_byte(px[i]);
  return out;
}

bool GeometricTransform::is_identity() const {
  return !flip_h && !flip_v && quarter_turns % 4 == 0 && angle_deg == 0.0 && scale == 1.0;
}

GeometricTransform random_transform(Rng& rng, const GeometricConfig& cfg) {
  GeometricTransform t;
  if (cfg.flips) {
    t.flip_h = rng.bernoulli(0.5);
    t.flip_v = rng.bernoulli(0.5);
  }
  if (cfg.quarter_turns) t.quarter_turns = static_cast<int>(rng.uniform_int(0, 3));
  if (cfg.max_angle_deg > 0.0) t.angle_deg = rng.uniform(-cfg.max_angle_deg, cfg.max_angle_deg);
  if (cfg.scale_max > cfg.scale_min) t.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  return t;
}

template <typename T>
Grid<T> apply_transform(const Grid<T>& g, const GeometricTransform& t, T fill) {
  const IndexMap m = build_index_map(g.width, g.height, t);
  Grid<T> out(m.width, m.height, fill);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (m.source[i] >= 0) out[i] = g[static_cast<std::size_t>(m.source[i])];
  return out;
}

template Grid<std::uint8_t> apply_transform(const Grid<std::uint8_t>&, const GeometricTransform&, std::uint8_t);
template Grid<std::uint16_t> apply_transform(const Grid<std::uint16_t>&, const GeometricTransform&, std::uint16_t);
template Grid<float> apply_transform(const Grid<float>&, const GeometricTransform&, float);

RgbImage apply_transform(const RgbImage& img, const GeometricTransform& t) {
  const IndexMap m = build_index_map(img.width, img.height, t);
  RgbImage out(m.width, m.height, 0);
  for (std::size_t i = 0; i < m.source.size(); ++i) {
    if (m.source[i] < 0) continue;
    const auto src = static_cast<std::size_t>(m.source[i]);
    for (int c = 0; c < 3; ++c) out.data[i * 3 + c] = img.data[src * 3 + c];
  }
  return out;
}

LabelMap relabel_contiguous(const LabelMap& m) {
  std::vector<std::uint16_t> map(65536, 0);
  for (auto l : m.data) map[l] = 1;
  std::uint16_t next = 0;
  for (std::size_t l = 1; l < map.size(); ++l)
    if (map[l]) map[l] = ++next;
  map[0] = 0;
  LabelMap out(m.width, m.height, 0);
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = map[m[i]];
  return out;
}

Sample augment_offline(const Sample& s, const GeometricTransform& t) {
  if (t.is_identity()) return s;
  Sample out;
  out.rgb = apply_transform(s.rgb, t);
  out.instances = relabel_contiguous(apply_transform<std::uint16_t>(s.instances, t, 0));
  out.depth = apply_transform<float>(s.depth, t, 0.0f);
  return out;
}

RgbImage crop_rgb(const RgbImage& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  RgbImage out(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x0 + x, y0 + y, c);
  return out;
}

}  // namespace mcam
