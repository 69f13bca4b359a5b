#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mcam/net.hpp"

namespace mcam {

namespace {

using json = nlohmann::json;

ColumnSpec encoder(PoolKind pool = PoolKind::max, NodeType type = NodeType::plain) {
  return ColumnSpec{ColumnKind::encoder, type, pool, std::nullopt};
}

ColumnSpec decoder(std::optional<HeadKind> head = std::nullopt, NodeType type = NodeType::plain) {
  return ColumnSpec{ColumnKind::decoder, type, PoolKind::max, head};
}

constexpr auto kB = HeadKind::boundary;
constexpr auto kO = HeadKind::occlusion;
constexpr auto kS = HeadKind::segmentation;

std::vector<ColumnSpec> base_columns(std::string_view base) {
  if (base == "mc2") return {encoder(), decoder(kS)};
  if (base == "mc3") return {encoder(), decoder(), decoder(kS)};
  if (base == "mc3d") return {encoder(), decoder(kB), decoder(kO)};
  if (base == "mc4") return {encoder(), decoder(), decoder(), decoder(kS)};
  if (base == "mc4d") return {encoder(), decoder(kB), decoder(kO), decoder(kS)};
  if (base == "mc6d") return {encoder(), decoder(kB), decoder(kO), decoder(kS), encoder(PoolKind::avg), decoder(kS)};
  if (base == "mc6d_atrous_d4" || base == "mc6d_coords_d4") {
    auto cols = base_columns("mc6d");
    cols[3].node_type = base == "mc6d_atrous_d4" ? NodeType::atrous : NodeType::coords;
    return cols;
  }
  if (base == "red_atrous") return {encoder(PoolKind::max, NodeType::atrous), decoder(kS)};
  if (base == "red_coords") return {encoder(), decoder(kS, NodeType::coords)};
  if (base == "mc2_atrous_d") return {encoder(), decoder(kS, NodeType::atrous)};
  if (base == "mc2_coords_d") return {encoder(PoolKind::max, NodeType::coords), decoder(kS, NodeType::coords)};
  if (base == "mc4s_atrous_d2") return {encoder(), decoder(kS, NodeType::atrous), encoder(), decoder(kS)};
  throw std::invalid_argument("unknown architecture preset '" + std::string(base) + "'");
}

const char* const kBases[] = {"mc2",        "mc3",        "mc3d",         "mc4",          "mc4d",
                              "mc6d",       "mc6d_atrous_d4", "mc6d_coords_d4", "red_atrous", "red_coords",
                              "mc2_atrous_d", "mc2_coords_d", "mc4s_atrous_d2"};

struct Suffix {
  const char* text;
  std::size_t divisor;
};
constexpr Suffix kSuffixes[] = {{"_pruned", 4}, {"_full", 1}, {"_half", 2}, {"_tiny", 8}};

bool ends_with(std::string_view s, std::string_view tail) {
  return s.size() >= tail.size() && s.substr(s.size() - tail.size()) == tail;
}

template <typename E>
E parse_enum(const json& j, const char* key, std::initializer_list<std::pair<const char*, E>> options, E fallback) {
  if (!j.contains(key)) return fallback;
  const std::string v = j.at(key).get<std::string>();
  for (const auto& [name, value] : options)
    if (v == name) return value;
  throw std::invalid_argument(std::string("config: bad value '") + v + "' for " + key);
}

FilterTable parse_filters(const json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    for (const auto& sfx : kSuffixes)
      if (s == std::string(sfx.text).substr(1)) return FilterTable::scaled(sfx.divisor);
    throw std::invalid_argument("config: unknown filter table '" + s + "'");
  }
  FilterTable t;
  const auto enc = j.at("encoder").get<std::vector<std::size_t>>();
  const auto unit = j.at("unit").get<std::vector<std::size_t>>();
  if (enc.size() != kScales || unit.size() != kScales) throw std::invalid_argument("config: filters need 5 entries each");
  std::copy(enc.begin(), enc.end(), t.encoder.begin());
  std::copy(unit.begin(), unit.end(), t.unit.begin());
  return t;
}

}  // namespace

MCConfig preset_config(std::string_view name) {
  std::string_view base = name;
  std::size_t divisor = 4;
  for (const auto& sfx : kSuffixes) {
    if (ends_with(name, sfx.text)) {
      base = name.substr(0, name.size() - std::string_view(sfx.text).size());
      divisor = sfx.divisor;
      break;
    }
  }
  MCConfig cfg;
  cfg.columns = base_columns(base);
  cfg.filters = FilterTable::scaled(divisor);
  cfg.name = std::string(name);
  return cfg;
}

std::vector<std::string> preset_names() { return {std::begin(kBases), std::end(kBases)}; }

std::string config_to_json(const MCConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["filters"] = {{"encoder", cfg.filters.encoder}, {"unit", cfg.filters.unit}};
  j["scales"] = cfg.scales;
  j["merge_mode"] = merge_mode_name(cfg.merge_mode);
  j["horizontal_skips"] = cfg.horizontal_skips;
  j["kernel_size"] = cfg.kernel_size;
  j["dropout"] = cfg.dropout;
  j["columns"] = json::array();
  for (const auto& c : cfg.columns) {
    json col;
    col["kind"] = c.kind == ColumnKind::encoder ? "encoder" : "decoder";
    col["node_type"] = node_type_name(c.node_type);
    col["pooling"] = c.pooling == PoolKind::avg ? "avg" : "max";
    col["head"] = c.head ? std::string(head_kind_name(*c.head)) : "none";
    j["columns"].push_back(col);
  }
  return j.dump(2);
}

MCConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  MCConfig cfg = j.contains("preset") ? preset_config(j.at("preset").get<std::string>()) : MCConfig{};
  try {
    if (j.contains("name")) cfg.name = j.at("name").get<std::string>();
    if (j.contains("filters")) cfg.filters = parse_filters(j.at("filters"));
    if (j.contains("scales")) cfg.scales = j.at("scales").get<std::size_t>();
    cfg.merge_mode = parse_enum(j, "merge_mode",
                                {{"concat", MergeMode::concat}, {"sum", MergeMode::sum}, {"max", MergeMode::max}},
                                cfg.merge_mode);
    if (j.contains("horizontal_skips")) cfg.horizontal_skips = j.at("horizontal_skips").get<bool>();
    if (j.contains("kernel_size")) cfg.kernel_size = j.at("kernel_size").get<std::size_t>();
    if (j.contains("dropout")) cfg.dropout = j.at("dropout").get<double>();
    if (j.contains("columns")) {
      cfg.columns.clear();
      for (const auto& c : j.at("columns")) {
        ColumnSpec col;
        col.kind = parse_enum(c, "kind", {{"encoder", ColumnKind::encoder}, {"decoder", ColumnKind::decoder}},
                              ColumnKind::decoder);
        col.node_type = parse_enum(
            c, "node_type", {{"plain", NodeType::plain}, {"coords", NodeType::coords}, {"atrous", NodeType::atrous}},
            NodeType::plain);
        col.pooling = parse_enum(c, "pooling", {{"max", PoolKind::max}, {"avg", PoolKind::avg}}, PoolKind::max);
        const std::string head = c.value("head", "none");
        if (head != "none") col.head = parse_head_kind(head);
        cfg.columns.push_back(col);
      }
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

MCConfig resolve_arch(const std::string& arch) {
  if (std::filesystem::is_regular_file(arch)) {
    std::ifstream in(arch);
    std::stringstream ss;
    ss << in.rdbuf();
    MCConfig cfg = config_from_json(ss.str());
    if (cfg.name.empty()) cfg.name = std::filesystem::path(arch).stem().string();
    return cfg;
  }
  return preset_config(arch);
}

}  // namespace mcam
