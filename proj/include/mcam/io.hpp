#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcam/gt.hpp"
#include "mcam/image.hpp"
#include "mcam/scene.hpp"

namespace mcam {

namespace fs = std::filesystem;

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_png(const fs::path& path, const RgbImage& img);
void write_png(const fs::path& path, const LabelMap& img);   // 16-bit gray
void write_png(const fs::path& path, const BinaryMap& img);  // 8-bit gray, stored as is
RgbImage read_png_rgb(const fs::path& path);
LabelMap read_png_gray16(const fs::path& path);
BinaryMap read_png_gray8(const fs::path& path);

// "MKDD", u32 width, u32 height, f32 data; all little-endian.
void write_depth(const fs::path& path, const DepthMap& d);
DepthMap read_depth(const fs::path& path);

inline constexpr int kManifestVersion = 1;

std::string sample_id(std::size_t index);

struct Dataset {
  fs::path dir;
  std::vector<std::string> ids;
  std::string config_json;  // echo of the generating config
};

std::string scene_config_to_json(const SceneConfig& cfg);
SceneConfig scene_config_from_json(const std::string& text);

void write_manifest(const fs::path& dir, const std::vector<std::string>& ids, const std::string& config_json);
Dataset read_manifest(const fs::path& dir);

void write_sample(const fs::path& dir, const std::string& id, const Sample& s);
// Throws FormatError when the three files disagree on size.
Sample read_sample(const fs::path& dir, const std::string& id);

void write_dataset(const fs::path& dir, const std::vector<Sample>& samples, const std::string& config_json = "{}");
std::vector<Sample> read_dataset(const fs::path& dir);

// 0/255 PNGs beside the sample.
void write_gt(const fs::path& dir, const std::string& id, const GroundTruth& gt);
GroundTruth read_gt(const fs::path& dir, const std::string& id);
bool has_gt(const fs::path& dir, const std::string& id);

}  // namespace mcam
