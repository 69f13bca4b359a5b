#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mcam/losses.hpp"
#include "mcam/ops.hpp"
#include "mcam/optim.hpp"
#include "mcam/rng.hpp"
#include "mcam/tape.hpp"

namespace mcam {

constexpr std::size_t kScales = 5;

// Channel widths per scale. encoder is the VGG16 backbone, unit applies to columns t > 1.
struct FilterTable {
  std::array<std::size_t, kScales> encoder{};
  std::array<std::size_t, kScales> unit{};

  static FilterTable full();
  // full / divisor, for divisor in {1, 2, 4, 8}. 4 is the pruned table.
  static FilterTable scaled(std::size_t divisor);
  static FilterTable pruned() { return scaled(4); }

  std::size_t encoder_filters(std::size_t s) const { return encoder.at(s - 1); }
  std::size_t unit_filters(std::size_t s) const { return unit.at(s - 1); }
  bool operator==(const FilterTable&) const = default;
};

enum class ColumnKind { encoder, decoder };
enum class NodeType { plain, coords, atrous };
enum class PoolKind { max, avg };

struct ColumnSpec {
  ColumnKind kind = ColumnKind::decoder;
  // On the backbone column: coords adds coordinate channels to all 13 convolutions,
  // atrous appends a dilated pyramid to the deepest block.
  NodeType node_type = NodeType::plain;
  PoolKind pooling = PoolKind::max;
  std::optional<HeadKind> head;
};

struct MCConfig {
  std::string name;
  FilterTable filters = FilterTable::pruned();
  std::vector<ColumnSpec> columns;
  std::size_t scales = kScales;
  MergeMode merge_mode = MergeMode::concat;
  bool horizontal_skips = true;
  std::size_t kernel_size = 5;
  double dropout = 0.5;

  void validate() const;
};

std::string_view merge_mode_name(MergeMode m);
std::string_view node_type_name(NodeType t);

// Named architectures: mc2, mc3, mc3d, mc4, mc4d, mc6d, mc6d_atrous_d4, mc6d_coords_d4,
// red_atrous, red_coords, mc2_atrous_d, mc2_coords_d, mc4s_atrous_d2, optionally suffixed
// with _pruned (default), _full, _half or _tiny.
MCConfig preset_config(std::string_view name);
std::vector<std::string> preset_names();

std::string config_to_json(const MCConfig& cfg);
MCConfig config_from_json(std::string_view text);
// A preset name, or a path to a JSON file following config_to_json's schema.
MCConfig resolve_arch(const std::string& arch);

enum class NodeKind { input, conv, pool_max, pool_avg, unpool, unit, atrous_unit, pyramid, head };

struct ParamSpec {
  std::string name;
  Shape shape;
};

struct GraphNode {
  std::size_t id = 0;
  std::string name;
  NodeKind kind = NodeKind::input;
  std::size_t column = 0;  // 1-based; 0 for the image input
  std::size_t scale = 0;   // 1 = full resolution
  std::vector<std::size_t> inputs;
  // Indices into NetworkGraph::params, weight/bias pairs in application order.
  std::vector<std::size_t> params;
  std::size_t channels = 0;
  bool coords = false;
  bool dropout = false;
  MergeMode merge = MergeMode::concat;
};

struct HeadInfo {
  std::string name;
  HeadKind kind;
  std::size_t column;
  std::size_t node;
};

struct NetworkGraph {
  MCConfig config;
  std::vector<GraphNode> nodes;
  std::vector<ParamSpec> params;
  std::vector<HeadInfo> heads;
  // outputs[t-1][s-1] is the node holding x_s^t, or npos when the column has no such scale.
  std::vector<std::array<std::size_t, kScales>> outputs;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  const GraphNode& node(const std::string& name) const;
  std::size_t output(std::size_t column, std::size_t scale) const;
};

NetworkGraph build_backbone(const FilterTable& filters, NodeType node_type = NodeType::plain,
                            std::size_t scales = kScales);
NetworkGraph build_multicameral(const MCConfig& cfg);
// kernel_size x kernel_size conv to one channel plus sigmoid on the column's full-resolution node.
void attach_head(NetworkGraph& graph, std::size_t column, HeadKind kind, std::string name = "");
std::size_t count_parameters(const NetworkGraph& graph);

// Xavier-uniform weights, zero biases, in graph parameter order.
template <typename T>
ParameterStore<T> init_parameters(const NetworkGraph& graph, Rng& rng);

// Heads in graph order. Input is normalized RGB (n, 3, H, W).
template <typename T>
std::vector<HeadOutput> forward(const NetworkGraph& graph, ParameterStore<T>& params, Tape<T>& tape, Var input,
                                bool training, Rng& rng);

}  // namespace mcam
