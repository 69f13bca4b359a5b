#include "mcam/io.hpp"

#include <png.h>

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mcam {

namespace {

using json = nlohmann::json;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const fs::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

// rows: byte rows in PNG order (16-bit samples big-endian).
void write_png_rows(const fs::path& path, std::size_t w, std::size_t h, int bit_depth, int color_type,
                    const std::vector<std::uint8_t>& bytes) {
  File f = open_file(path, "wb");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png: out of memory");
  }
  const std::size_t channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t stride = w * channels * static_cast<std::size_t>(bit_depth / 8);
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = const_cast<png_bytep>(bytes.data() + y * stride);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: writing '" + path.string() + "': " + err);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct PngData {
  std::size_t width = 0, height = 0;
  int bit_depth = 0, color_type = 0;
  std::vector<std::uint8_t> bytes;
};

PngData read_png_rows(const fs::path& path) {
  File f = open_file(path, "rb");
  std::array<std::uint8_t, 8> sig{};
  if (std::fread(sig.data(), 1, sig.size(), f.get()) != sig.size() || png_sig_cmp(sig.data(), 0, sig.size()))
    throw FormatError("png: '" + path.string() + "' is not a PNG file");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png: out of memory");
  }
  PngData d;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png: reading '" + path.string() + "': " + err);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, static_cast<int>(sig.size()));
  png_read_info(png, info);
  d.width = png_get_image_width(png, info);
  d.height = png_get_image_height(png, info);
  d.bit_depth = png_get_bit_depth(png, info);
  d.color_type = png_get_color_type(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  d.bytes.resize(stride * d.height);
  rows.resize(d.height);
  for (std::size_t y = 0; y < d.height; ++y) rows[y] = d.bytes.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return d;
}

void expect_format(const PngData& d, int bit_depth, int color_type, const fs::path& path) {
  if (d.bit_depth != bit_depth || d.color_type != color_type)
    throw FormatError("png: '" + path.string() + "' has bit depth " + std::to_string(d.bit_depth) +
                      ", color type " + std::to_string(d.color_type) + "; expected " + std::to_string(bit_depth) +
                      ", " + std::to_string(color_type));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("short write to '" + path.string() + "'");
}

BinaryMap to_255(const BinaryMap& m) {
  BinaryMap out = m;
  for (auto& v : out.data) v = v ? 255 : 0;
  return out;
}

BinaryMap from_255(const BinaryMap& m, const fs::path& path) {
  BinaryMap out = m;
  for (auto& v : out.data) {
    if (v != 0 && v != 255) throw FormatError("gt: '" + path.string() + "' holds values other than 0/255");
    v = v ? 1 : 0;
  }
  return out;
}

}  // namespace

void write_png(const fs::path& path, const RgbImage& img) {
  write_png_rows(path, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, img.data);
}

void write_png(const fs::path& path, const LabelMap& img) {
  std::vector<std::uint8_t> bytes(img.size() * 2);
  for (std::size_t i = 0; i < img.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(img[i] >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(img[i] & 0xff);
  }
  write_png_rows(path, img.width, img.height, 16, PNG_COLOR_TYPE_GRAY, bytes);
}

void write_png(const fs::path& path, const BinaryMap& img) {
  write_png_rows(path, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY, img.data);
}

RgbImage read_png_rgb(const fs::path& path) {
  PngData d = read_png_rows(path);
  expect_format(d, 8, PNG_COLOR_TYPE_RGB, path);
  RgbImage img(d.width, d.height);
  img.data = std::move(d.bytes);
  return img;
}

LabelMap read_png_gray16(const fs::path& path) {
  const PngData d = read_png_rows(path);
  expect_format(d, 16, PNG_COLOR_TYPE_GRAY, path);
  LabelMap m(d.width, d.height, 0);
  for (std::size_t i = 0; i < m.size(); ++i)
    m[i] = static_cast<std::uint16_t>((d.bytes[2 * i] << 8) | d.bytes[2 * i + 1]);
  return m;
}

BinaryMap read_png_gray8(const fs::path& path) {
  PngData d = read_png_rows(path);
  expect_format(d, 8, PNG_COLOR_TYPE_GRAY, path);
  BinaryMap m(d.width, d.height, 0);
  m.data = std::move(d.bytes);
  return m;
}

void write_depth(const fs::path& path, const DepthMap& d) {
  std::string out = "MKDD";
  put_u32(out, static_cast<std::uint32_t>(d.width));
  put_u32(out, static_cast<std::uint32_t>(d.height));
  for (float v : d.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  write_file(path, out);
}

DepthMap read_depth(const fs::path& path) {
  const std::string in = read_file(path);
  if (in.size() < 12 || in.compare(0, 4, "MKDD") != 0)
    throw FormatError("depth: '" + path.string() + "' has a bad header");
  const std::size_t w = get_u32(in, 4), h = get_u32(in, 8);
  if (in.size() != 12 + 4 * w * h)
    throw FormatError("depth: '" + path.string() + "' holds " + std::to_string(in.size() - 12) + " data bytes, expected " +
                      std::to_string(4 * w * h));
  DepthMap d(w, h, 0.0f);
  for (std::size_t i = 0; i < w * h; ++i) d[i] = std::bit_cast<float>(get_u32(in, 12 + 4 * i));
  return d;
}

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

std::string scene_config_to_json(const SceneConfig& c) {
  json j = {{"width", c.width},
            {"height", c.height},
            {"instances_min", c.instances_min},
            {"instances_max", c.instances_max},
            {"semi_axis_min", c.semi_axis_min},
            {"semi_axis_max", c.semi_axis_max},
            {"elongation_min", c.elongation_min},
            {"elongation_max", c.elongation_max},
            {"squareness_min", c.squareness_min},
            {"squareness_max", c.squareness_max},
            {"deform_max", c.deform_max},
            {"bump_height", c.bump_height},
            {"min_visible", c.min_visible},
            {"max_retries", c.max_retries},
            {"homogeneous", c.homogeneous},
            {"plus_mode", c.plus_mode},
            {"background_seed", c.background_seed},
            {"seed", c.seed}};
  return j.dump(2);
}

SceneConfig scene_config_from_json(const std::string& text) {
  SceneConfig c;
  try {
    const json j = json::parse(text);
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("width", c.width);
    get("height", c.height);
    get("instances_min", c.instances_min);
    get("instances_max", c.instances_max);
    get("semi_axis_min", c.semi_axis_min);
    get("semi_axis_max", c.semi_axis_max);
    get("elongation_min", c.elongation_min);
    get("elongation_max", c.elongation_max);
    get("squareness_min", c.squareness_min);
    get("squareness_max", c.squareness_max);
    get("deform_max", c.deform_max);
    get("bump_height", c.bump_height);
    get("min_visible", c.min_visible);
    get("max_retries", c.max_retries);
    get("homogeneous", c.homogeneous);
    get("plus_mode", c.plus_mode);
    get("background_seed", c.background_seed);
    get("seed", c.seed);
  } catch (const json::exception& e) {
    throw FormatError(std::string("scene config: ") + e.what());
  }
  c.validate();
  return c;
}

void write_manifest(const fs::path& dir, const std::vector<std::string>& ids, const std::string& config_json) {
  json j;
  j["schema_version"] = kManifestVersion;
  j["samples"] = ids;
  try {
    j["config"] = json::parse(config_json);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("manifest: config is not JSON: ") + e.what());
  }
  write_file(dir / "manifest.json", j.dump(2) + "\n");
}

Dataset read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  Dataset d;
  d.dir = dir;
  try {
    const json j = json::parse(read_file(path));
    const int version = j.at("schema_version").get<int>();
    if (version != kManifestVersion)
      throw FormatError("manifest: unsupported schema_version " + std::to_string(version));
    d.ids = j.at("samples").get<std::vector<std::string>>();
    d.config_json = j.contains("config") ? j.at("config").dump() : "{}";
  } catch (const json::exception& e) {
    throw FormatError("manifest: '" + path.string() + "': " + e.what());
  }
  return d;
}

void write_sample(const fs::path& dir, const std::string& id, const Sample& s) {
  if (s.rgb.width != s.instances.width || s.rgb.height != s.instances.height)
    throw std::invalid_argument("sample " + id + ": rgb and instance sizes differ");
  require_same_size(s.instances, s.depth, "sample");
  write_png(dir / (id + "_rgb.png"), s.rgb);
  write_png(dir / (id + "_inst.png"), s.instances);
  write_depth(dir / (id + "_depth.raw"), s.depth);
}

Sample read_sample(const fs::path& dir, const std::string& id) {
  Sample s;
  s.rgb = read_png_rgb(dir / (id + "_rgb.png"));
  s.instances = read_png_gray16(dir / (id + "_inst.png"));
  const fs::path dpath = dir / (id + "_depth.raw");
  if (!fs::exists(dpath)) throw FormatError("sample " + id + ": missing depth file '" + dpath.string() + "'");
  s.depth = read_depth(dpath);
  if (s.rgb.width != s.instances.width || s.rgb.height != s.instances.height || !s.instances.same_size(s.depth))
    throw FormatError("sample " + id + ": rgb " + std::to_string(s.rgb.width) + "x" + std::to_string(s.rgb.height) +
                      ", instances " + std::to_string(s.instances.width) + "x" + std::to_string(s.instances.height) +
                      ", depth " + std::to_string(s.depth.width) + "x" + std::to_string(s.depth.height) +
                      " disagree");
  return s;
}

void write_dataset(const fs::path& dir, const std::vector<Sample>& samples, const std::string& config_json) {
  fs::create_directories(dir);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ids.push_back(sample_id(i));
    write_sample(dir, ids.back(), samples[i]);
  }
  write_manifest(dir, ids, config_json);
}

std::vector<Sample> read_dataset(const fs::path& dir) {
  const Dataset d = read_manifest(dir);
  std::vector<Sample> out;
  for (const auto& id : d.ids) out.push_back(read_sample(dir, id));
  return out;
}

void write_gt(const fs::path& dir, const std::string& id, const GroundTruth& gt) {
  write_png(dir / (id + "_b.png"), to_255(gt.b));
  write_png(dir / (id + "_o.png"), to_255(gt.o));
  write_png(dir / (id + "_y.png"), to_255(gt.y));
}

GroundTruth read_gt(const fs::path& dir, const std::string& id) {
  GroundTruth gt;
  const fs::path b = dir / (id + "_b.png"), o = dir / (id + "_o.png"), y = dir / (id + "_y.png");
  gt.b = from_255(read_png_gray8(b), b);
  gt.o = from_255(read_png_gray8(o), o);
  gt.y = from_255(read_png_gray8(y), y);
  if (!gt.b.same_size(gt.o) || !gt.b.same_size(gt.y)) throw FormatError("gt " + id + ": map sizes disagree");
  return gt;
}

bool has_gt(const fs::path& dir, const std::string& id) {
  return fs::exists(dir / (id + "_b.png")) && fs::exists(dir / (id + "_o.png")) && fs::exists(dir / (id + "_y.png"));
}

}  // namespace mcam
