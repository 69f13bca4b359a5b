#include "mcam/net.hpp"

#include <map>
#include <stdexcept>
#include <utility>

namespace mcam {

FilterTable FilterTable::full() {
  return FilterTable{{64, 128, 256, 512, 512}, {32, 64, 128, 256, 256}};
}

FilterTable FilterTable::scaled(std::size_t divisor) {
  if (divisor == 0 || 32 % divisor != 0) throw std::invalid_argument("filter divisor must divide 32");
  FilterTable t = full();
  for (auto& c : t.encoder) c /= divisor;
  for (auto& c : t.unit) c /= divisor;
  return t;
}

std::string_view merge_mode_name(MergeMode m) {
  switch (m) {
    case MergeMode::concat: return "concat";
    case MergeMode::sum: return "sum";
    case MergeMode::max: return "max";
  }
  return "unknown";
}

std::string_view node_type_name(NodeType t) {
  switch (t) {
    case NodeType::plain: return "plain";
    case NodeType::coords: return "coords";
    case NodeType::atrous: return "atrous";
  }
  return "unknown";
}

void MCConfig::validate() const {
  if (columns.empty()) throw std::invalid_argument("architecture has no columns");
  if (columns.front().kind != ColumnKind::encoder) {
    throw std::invalid_argument("the first column must be the backbone encoder, not a decoder");
  }
  for (std::size_t t = 0; t < columns.size(); ++t) {
    if (columns[t].kind == ColumnKind::encoder && columns[t].head) {
      throw std::invalid_argument("column " + std::to_string(t + 1) + " is an encoder and cannot carry a head");
    }
  }
  if (scales != kScales) throw std::invalid_argument("only " + std::to_string(kScales) + " scales are supported");
  if (kernel_size == 0 || kernel_size % 2 == 0) throw std::invalid_argument("kernel_size must be odd");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  for (std::size_t s = 1; s <= kScales; ++s) {
    if (filters.encoder_filters(s) == 0 || filters.unit_filters(s) == 0) {
      throw std::invalid_argument("filter table has a zero width at scale " + std::to_string(s));
    }
  }
}

const GraphNode& NetworkGraph::node(const std::string& name) const {
  for (const auto& n : nodes)
    if (n.name == name) return n;
  throw std::out_of_range("no graph node named " + name);
}

std::size_t NetworkGraph::output(std::size_t column, std::size_t scale) const {
  if (column == 0 || column > outputs.size() || scale == 0 || scale > kScales) return npos;
  return outputs[column - 1][scale - 1];
}

namespace {

constexpr std::array<std::size_t, 3> kAtrousDilations{1, 3, 6};
constexpr std::array<std::size_t, kScales> kBackboneConvs{2, 2, 3, 3, 3};

class Builder {
 public:
  explicit Builder(NetworkGraph& g) : g_(g) {}

  std::size_t node(GraphNode n) {
    n.id = g_.nodes.size();
    g_.nodes.push_back(std::move(n));
    return g_.nodes.back().id;
  }

  void conv_params(GraphNode& n, const std::string& prefix, std::size_t co, std::size_t ci, std::size_t k) {
    n.params.push_back(param(prefix + "weight", Shape{co, ci, k, k}));
    n.params.push_back(param(prefix + "bias", Shape{1, co, 1, 1}));
  }

  // Pooling and unpooling nodes are shared between consumers of the same source.
  std::size_t transform(NodeKind kind, std::size_t src) {
    auto key = std::make_pair(kind, src);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const GraphNode& s = g_.nodes.at(src);
    GraphNode n;
    n.kind = kind;
    n.column = s.column;
    n.inputs = {src};
    n.channels = s.channels;
    const char* tag = kind == NodeKind::unpool ? "unpool" : kind == NodeKind::pool_avg ? "avgpool" : "maxpool";
    n.name = std::string(tag) + "(" + s.name + ")";
    n.scale = kind == NodeKind::unpool ? s.scale - 1 : s.scale + 1;
    const std::size_t id = node(std::move(n));
    cache_.emplace(key, id);
    return id;
  }

  std::size_t unit(const std::string& name, std::size_t column, std::size_t scale, std::vector<std::size_t> inputs,
                   std::size_t width, const MCConfig& cfg, NodeType type) {
    std::size_t merged = 0;
    for (std::size_t i : inputs) {
      const std::size_t c = g_.nodes.at(i).channels;
      if (cfg.merge_mode == MergeMode::concat) {
        merged += c;
      } else if (merged == 0) {
        merged = c;
      } else if (merged != c) {
        throw std::invalid_argument("node " + name + ": element-wise " + std::string(merge_mode_name(cfg.merge_mode)) +
                                    " merge needs equal channel counts, got " + std::to_string(merged) + " and " +
                                    std::to_string(c));
      }
    }
    GraphNode n;
    n.name = name;
    n.column = column;
    n.scale = scale;
    n.inputs = std::move(inputs);
    n.channels = width;
    n.coords = type == NodeType::coords;
    n.dropout = true;
    n.merge = cfg.merge_mode;
    const std::size_t cin = merged + (n.coords ? 2 : 0);
    const std::size_t k = cfg.kernel_size;
    if (type == NodeType::atrous) {
      n.kind = NodeKind::atrous_unit;
      conv_params(n, name + ".in.", width, cin, 1);
      for (std::size_t d : kAtrousDilations) conv_params(n, name + ".d" + std::to_string(d) + ".", width, width, k);
      conv_params(n, name + ".out.", width, 3 * width, 1);
    } else {
      n.kind = NodeKind::unit;
      conv_params(n, name + ".", width, cin, k);
    }
    return node(std::move(n));
  }

 private:
  std::size_t param(const std::string& name, Shape shape) {
    for (const auto& p : g_.params)
      if (p.name == name) throw std::logic_error("duplicate parameter " + name);
    g_.params.push_back(ParamSpec{name, shape});
    return g_.params.size() - 1;
  }

  NetworkGraph& g_;
  std::map<std::pair<NodeKind, std::size_t>, std::size_t> cache_;
};

std::string column_name(ColumnKind kind, std::size_t t) {
  return (kind == ColumnKind::encoder ? "E" : "D") + std::to_string(t);
}

}  // namespace

NetworkGraph build_backbone(const FilterTable& filters, NodeType node_type, std::size_t scales) {
  if (scales != kScales) throw std::invalid_argument("the VGG16 backbone needs exactly 5 scales");
  NetworkGraph g;
  g.config.filters = filters;
  g.config.columns = {ColumnSpec{ColumnKind::encoder, node_type, PoolKind::max, std::nullopt}};
  Builder b(g);
  GraphNode in;
  in.name = "image";
  in.kind = NodeKind::input;
  in.channels = 3;
  in.scale = 1;
  std::size_t prev = b.node(std::move(in));
  g.outputs.emplace_back();
  g.outputs[0].fill(NetworkGraph::npos);
  const bool coords = node_type == NodeType::coords;
  for (std::size_t s = 1; s <= kScales; ++s) {
    if (s > 1) prev = b.transform(NodeKind::pool_max, prev);
    const std::size_t width = filters.encoder_filters(s);
    for (std::size_t j = 1; j <= kBackboneConvs[s - 1]; ++j) {
      GraphNode n;
      n.name = "E1.s" + std::to_string(s) + ".conv" + std::to_string(j);
      n.kind = NodeKind::conv;
      n.column = 1;
      n.scale = s;
      n.inputs = {prev};
      n.channels = width;
      n.coords = coords;
      b.conv_params(n, n.name + ".", width, g.nodes[prev].channels + (coords ? 2 : 0), 3);
      prev = b.node(std::move(n));
    }
    if (s == kScales && node_type == NodeType::atrous) {
      GraphNode n;
      n.name = "E1.pyramid";
      n.kind = NodeKind::pyramid;
      n.column = 1;
      n.scale = s;
      n.inputs = {prev};
      n.channels = width;
      for (std::size_t d : kAtrousDilations) b.conv_params(n, n.name + ".d" + std::to_string(d) + ".", width, width, 3);
      b.conv_params(n, n.name + ".out.", width, 3 * width, 1);
      prev = b.node(std::move(n));
    }
    g.outputs[0][s - 1] = prev;
  }
  return g;
}

NetworkGraph build_multicameral(const MCConfig& cfg) {
  cfg.validate();
  NetworkGraph g = build_backbone(cfg.filters, cfg.columns[0].node_type, cfg.scales);
  g.config = cfg;
  Builder b(g);
  std::size_t deep = g.outputs[0][kScales - 1];
  for (std::size_t t = 2; t <= cfg.columns.size(); ++t) {
    const ColumnSpec& col = cfg.columns[t - 1];
    g.outputs.emplace_back();
    auto& out = g.outputs.back();
    out.fill(NetworkGraph::npos);
    auto horizontal = [&](std::size_t s) {
      std::vector<std::size_t> h;
      for (std::size_t tp = 1; tp < t; ++tp)
        if (std::size_t id = g.output(tp, s); id != NetworkGraph::npos) h.push_back(id);
      return h;
    };
    const std::string cname = column_name(col.kind, t);
    if (col.kind == ColumnKind::decoder) {
      for (std::size_t s = kScales - 1; s >= 1; --s) {
        const std::size_t up_src = s == kScales - 1 ? deep : out[s];
        std::vector<std::size_t> ins{b.transform(NodeKind::unpool, up_src)};
        if (cfg.horizontal_skips)
          for (std::size_t h : horizontal(s)) ins.push_back(h);
        out[s - 1] = b.unit(cname + ".s" + std::to_string(s), t, s, std::move(ins), cfg.filters.unit_filters(s), cfg,
                            col.node_type);
      }
    } else {
      const NodeKind pool = col.pooling == PoolKind::avg ? NodeKind::pool_avg : NodeKind::pool_max;
      for (std::size_t s = 1; s <= kScales; ++s) {
        std::vector<std::size_t> ins;
        if (s > 1) ins.push_back(b.transform(pool, out[s - 2]));
        if (cfg.horizontal_skips) {
          for (std::size_t h : horizontal(s)) ins.push_back(h);
        } else if (s == 1) {
          ins.push_back(g.output(t - 1, 1));
        }
        const std::size_t width = s == kScales ? cfg.filters.encoder_filters(s) : cfg.filters.unit_filters(s);
        out[s - 1] = b.unit(cname + ".s" + std::to_string(s), t, s, std::move(ins), width, cfg, col.node_type);
      }
      deep = out[kScales - 1];
    }
  }
  for (std::size_t t = 2; t <= cfg.columns.size(); ++t) {
    const auto& head = cfg.columns[t - 1].head;
    if (!head) continue;
    bool later = false;
    for (std::size_t u = t + 1; u <= cfg.columns.size(); ++u) later = later || cfg.columns[u - 1].head == head;
    std::string name(head_kind_name(*head));
    if (later) name += "_d" + std::to_string(t);
    attach_head(g, t, *head, name);
  }
  return g;
}

void attach_head(NetworkGraph& graph, std::size_t column, HeadKind kind, std::string name) {
  if (column < 2 || column > graph.config.columns.size() ||
      graph.config.columns[column - 1].kind != ColumnKind::decoder) {
    throw std::invalid_argument("heads attach to decoder columns only (column " + std::to_string(column) + ")");
  }
  if (name.empty()) name = head_kind_name(kind);
  for (const auto& h : graph.heads)
    if (h.name == name) throw std::invalid_argument("duplicate head name " + name);
  const std::size_t src = graph.output(column, 1);
  Builder b(graph);
  GraphNode n;
  n.name = column_name(ColumnKind::decoder, column) + ".head";
  for (const auto& h : graph.heads)
    if (h.column == column) n.name += "." + name;
  n.kind = NodeKind::head;
  n.column = column;
  n.scale = 1;
  n.inputs = {src};
  n.channels = 1;
  const std::size_t k = graph.config.kernel_size == 0 ? 5 : graph.config.kernel_size;
  b.conv_params(n, n.name + ".", 1, graph.nodes[src].channels, k);
  const std::size_t id = b.node(std::move(n));
  graph.heads.push_back(HeadInfo{name, kind, column, id});
}

std::size_t count_parameters(const NetworkGraph& graph) {
  std::size_t n = 0;
  for (const auto& p : graph.params) n += p.shape.numel();
  return n;
}

template <typename T>
ParameterStore<T> init_parameters(const NetworkGraph& graph, Rng& rng) {
  ParameterStore<T> store;
  for (const auto& p : graph.params) {
    const bool bias = p.name.size() >= 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0;
    store.add(p.name, bias ? Tensor<T>(p.shape) : xavier_init<T>(p.shape, rng));
  }
  return store;
}

template <typename T>
std::vector<HeadOutput> forward(const NetworkGraph& graph, ParameterStore<T>& params, Tape<T>& tape, Var input,
                                bool training, Rng& rng) {
  const Shape is = tape.value(input).shape();
  if (is.c != 3) throw std::invalid_argument("forward: expected 3 input channels, got " + std::to_string(is.c));
  const std::size_t div = std::size_t{1} << (kScales - 1);
  if (is.h == 0 || is.w == 0 || is.h % div != 0 || is.w % div != 0) {
    throw std::invalid_argument("forward: spatial size " + std::to_string(is.h) + "x" + std::to_string(is.w) +
                                " must be a positive multiple of " + std::to_string(div));
  }
  if (params.size() != graph.params.size()) {
    throw std::invalid_argument("forward: parameter store holds " + std::to_string(params.size()) +
                                " tensors, graph needs " + std::to_string(graph.params.size()));
  }
  std::vector<Var> pv(graph.params.size());
  auto param = [&](std::size_t i) {
    if (!pv[i].valid()) {
      auto& e = params[i];
      if (e.name != graph.params[i].name || !(e.value.shape() == graph.params[i].shape)) {
        throw std::invalid_argument("forward: parameter " + graph.params[i].name + " does not match the store");
      }
      pv[i] = tape.parameter(e.value);
    }
    return pv[i];
  };
  auto conv = [&](Var x, const GraphNode& n, std::size_t pair, std::size_t dilation = 1) {
    return conv2d(tape, x, param(n.params[2 * pair]), param(n.params[2 * pair + 1]), dilation);
  };
  auto with_coords = [&](Var x) {
    const Shape s = tape.value(x).shape();
    const Var parts[] = {tape.constant(coord_channels<T>(s.n, s.h, s.w)), x};
    return concat_channels<T>(tape, parts);
  };

  std::vector<Var> val(graph.nodes.size());
  for (const GraphNode& n : graph.nodes) {
    Var out;
    switch (n.kind) {
      case NodeKind::input: out = input; break;
      case NodeKind::pool_max: out = max_pool2(tape, val[n.inputs[0]]); break;
      case NodeKind::pool_avg: out = avg_pool2(tape, val[n.inputs[0]]); break;
      case NodeKind::unpool: out = unpool2(tape, val[n.inputs[0]]); break;
      case NodeKind::conv: {
        Var x = val[n.inputs[0]];
        if (n.coords) x = with_coords(x);
        out = relu(tape, conv(x, n, 0));
        break;
      }
      case NodeKind::pyramid: {
        std::vector<Var> branches;
        for (std::size_t i = 0; i < kAtrousDilations.size(); ++i)
          branches.push_back(relu(tape, conv(val[n.inputs[0]], n, i, kAtrousDilations[i])));
        out = relu(tape, conv(concat_channels<T>(tape, branches), n, kAtrousDilations.size()));
        break;
      }
      case NodeKind::unit:
      case NodeKind::atrous_unit: {
        std::vector<Var> ins;
        for (std::size_t i : n.inputs) ins.push_back(val[i]);
        Var x = merge<T>(tape, ins, n.merge);
        if (n.coords) x = with_coords(x);
        if (n.kind == NodeKind::unit) {
          out = relu(tape, conv(x, n, 0));
        } else {
          Var a = relu(tape, conv(x, n, 0));
          std::vector<Var> branches;
          for (std::size_t i = 0; i < kAtrousDilations.size(); ++i)
            branches.push_back(relu(tape, conv(a, n, i + 1, kAtrousDilations[i])));
          out = relu(tape, conv(concat_channels<T>(tape, branches), n, kAtrousDilations.size() + 1));
        }
        if (n.dropout) out = dropout(tape, out, graph.config.dropout, training, rng);
        break;
      }
      case NodeKind::head: out = sigmoid(tape, conv(val[n.inputs[0]], n, 0)); break;
    }
    val[n.id] = out;
  }
  std::vector<HeadOutput> heads;
  for (const auto& h : graph.heads) heads.push_back(HeadOutput{h.name, h.kind, val[h.node]});
  return heads;
}

template ParameterStore<float> init_parameters<float>(const NetworkGraph&, Rng&);
template ParameterStore<double> init_parameters<double>(const NetworkGraph&, Rng&);
template std::vector<HeadOutput> forward<float>(const NetworkGraph&, ParameterStore<float>&, Tape<float>&, Var, bool,
                                                Rng&);
template std::vector<HeadOutput> forward<double>(const NetworkGraph&, ParameterStore<double>&, Tape<double>&, Var,
                                                 bool, Rng&);

}  // namespace mcam
