#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mcam/gt.hpp"
#include "mcam/io.hpp"
#include "mcam/losses.hpp"
#include "mcam/metrics.hpp"
#include "mcam/net.hpp"
#include "mcam/optim.hpp"
#include "mcam/scene.hpp"

namespace mcam {

struct TrainConfig {
  MCConfig arch = preset_config("mc2");
  LossConfig loss;
  AdamConfig adam;
  std::size_t crop_size = 256;  // 0 = whole image
  std::size_t batch_size = 8;
  std::size_t epochs = 1;
  std::size_t max_iterations = 0;  // 0 = no cap
  std::uint64_t seed = 0;
  bool augment = true;
  GeometricConfig geometric;
  PhotometricConfig photometric;

  void validate() const;
};

// An RGB image with its ground truth, as fed to training and evaluation.
struct LabeledImage {
  std::string id;
  RgbImage rgb;
  GroundTruth gt;
};

// Reads every sample in a dataset directory. Ground-truth PNGs are used when present and
// derived from instances and depth otherwise.
std::vector<LabeledImage> load_labeled(const fs::path& dir, const GtConfig& gt = {});
LabeledImage label_sample(std::string id, const Sample& s, const GtConfig& gt = {});

struct Model {
  NetworkGraph graph;
  ParameterStore<float> params;
  AdamState<float> adam;
  std::uint64_t epoch = 0;
};

Model make_model(const MCConfig& arch, std::uint64_t seed);

struct LossRow {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  std::vector<double> per_head;
  double total = 0.0;
};

struct LossLog {
  std::vector<std::string> heads;
  std::vector<LossRow> rows;

  // iteration,epoch,<head>...,total
  std::string csv() const;
  // Mean total loss over rows [begin, end).
  double mean_total(std::size_t begin, std::size_t end) const;
};

using IterationHook = std::function<void(const LossRow&)>;

// Runs cfg.epochs further epochs on top of model.epoch.
LossLog train(Model& model, const std::vector<LabeledImage>& data, const TrainConfig& cfg,
              const IterationHook& hook = {});

// rgb / 255 - 0.5, NCHW.
Tensor<float> to_input(const std::vector<const RgbImage*>& images);

// One probability map per head, in graph head order. Dropout is off.
std::vector<ProbMap> infer(Model& model, const RgbImage& rgb);

const BinaryMap& gt_for(const GroundTruth& gt, HeadKind kind);

struct HeadEval {
  std::string name;
  HeadKind kind;
  EvalCurve curve;
  CurveSummary summary;
};

std::vector<HeadEval> evaluate(Model& model, const std::vector<LabeledImage>& data, const EvalConfig& cfg);

// Checkpoint: "MCKP", u32 version, u32 count, tensors (parameters then meta/epoch), then
// u32 count and the Adam tensors. Each tensor is u32 name length, name, u32 ndim, u32 dims,
// f32 data, all little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Model& model);
// The model must already have the target architecture; mismatches name the tensor.
void deserialize_checkpoint(const std::string& bytes, Model& model);
void save_checkpoint(const fs::path& path, const Model& model);
void load_checkpoint(const fs::path& path, Model& model);
// Builds the model from the sidecar architecture file written by save_checkpoint.
Model load_model(const fs::path& path);
fs::path arch_sidecar(const fs::path& checkpoint);

}  // namespace mcam
