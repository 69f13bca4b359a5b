#include "mcam/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mcam {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kSampleStream = 0x534d;
constexpr std::uint64_t kDropoutStream = 0x4450;


Tensor<float> stack_maps(const std::vector<const BinaryMap*>& maps) {
  const std::size_t h = maps.front()->height, w = maps.front()->width;
  Tensor<float> t(Shape{maps.size(), 1, h, w});
  for (std::size_t n = 0; n < maps.size(); ++n)
    for (std::size_t i = 0; i < h * w; ++i) t[n * h * w + i] = (*maps[n])[i] ? 1.0f : 0.0f;
  return t;
}

struct Prepared {
  RgbImage rgb;
  GroundTruth gt;
};

Prepared prepare(const LabeledImage& src, const TrainConfig& cfg, Rng& rng) {
  const std::size_t w = src.rgb.width, h = src.rgb.height;
  const std::size_t cw = cfg.crop_size ? cfg.crop_size : w, ch = cfg.crop_size ? cfg.crop_size : h;
  if (cw > w || ch > h)
    throw std::invalid_argument("train: crop " + std::to_string(cw) + "x" + std::to_string(ch) +
                                " larger than image " + src.id + " (" + std::to_string(w) + "x" +
                                std::to_string(h) + ")");
  const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(w - cw)));
  const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(h - ch)));
  Prepared p{crop_rgb(src.rgb, x0, y0, cw, ch),
             {crop_grid(src.gt.b, x0, y0, cw, ch), crop_grid(src.gt.o, x0, y0, cw, ch),
              crop_grid(src.gt.y, x0, y0, cw, ch)}};
  if (!cfg.augment) return p;
  GeometricConfig geo = cfg.geometric;
  // Odd quarter turns would swap a non-square crop's sides and break batching.
  if (cw != ch) geo.quarter_turns = false;
  GeometricTransform t = random_transform(rng, geo);
  if (cw != ch) t.quarter_turns = 0;
  if (!t.is_identity()) {
    p.rgb = apply_transform(p.rgb, t);
    p.gt.b = apply_transform<std::uint8_t>(p.gt.b, t);
    p.gt.o = apply_transform<std::uint8_t>(p.gt.o, t);
    p.gt.y = apply_transform<std::uint8_t>(p.gt.y, t);
  }
  p.rgb = augment_online(p.rgb, rng.next_u64(), cfg.photometric);
  return p;
}

double scalar(Tape<float>& tape, Var v) { return static_cast<double>(tape.value(v)[0]); }

// ---- checkpoint encoding ----

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_tensor(std::string& out, const std::string& name, const Shape& s, const float* data) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_u32(out, 4);
  for (std::size_t d : {s.n, s.c, s.h, s.w}) put_u32(out, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < s.numel(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, data + i, 4);
    put_u32(out, bits);
  }
}

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> data;
  };

  Entry tensor() {
    Entry e;
    e.name = bytes(u32("tensor name length"), "tensor name");
    const std::uint32_t ndim = u32("tensor rank");
    if (ndim < 1 || ndim > 4) throw FormatError("checkpoint: tensor '" + e.name + "' has rank " + std::to_string(ndim));
    std::size_t dims[4] = {1, 1, 1, 1};
    for (std::uint32_t i = 0; i < ndim; ++i) dims[i] = u32("tensor dims");
    e.shape = Shape{dims[0], dims[1], dims[2], dims[3]};
    const std::size_t n = e.shape.numel();
    need(4 * n, ("data of '" + e.name + "'").c_str());
    e.data.resize(n);
    std::memcpy(e.data.data(), b_.data() + pos_, 4 * n);
    pos_ += 4 * n;
    return e;
  }

  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw FormatError(std::string("checkpoint: truncated while reading ") + what);
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

void copy_into(std::vector<float>& dst, const Reader::Entry& e) {
  dst.assign(e.data.begin(), e.data.end());
}

}  // namespace

void TrainConfig::validate() const {
  arch.validate();
  loss.validate();
  const std::size_t div = std::size_t{1} << (arch.scales - 1);
  if (crop_size % div != 0)
    throw std::invalid_argument("train: crop size " + std::to_string(crop_size) + " must be a multiple of " +
                                std::to_string(div));
  if (batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  if (adam.lr < 0.0) throw std::invalid_argument("train: negative learning rate");
}

LabeledImage label_sample(std::string id, const Sample& s, const GtConfig& gt) {
  return LabeledImage{std::move(id), s.rgb, generate_gt(s.instances, s.depth, gt)};
}

std::vector<LabeledImage> load_labeled(const fs::path& dir, const GtConfig& gt) {
  const Dataset d = read_manifest(dir);
  std::vector<LabeledImage> out;
  for (const auto& id : d.ids) {
    if (has_gt(dir, id)) {
      LabeledImage li{id, read_png_rgb(dir / (id + "_rgb.png")), read_gt(dir, id)};
      if (li.gt.b.width != li.rgb.width || li.gt.b.height != li.rgb.height)
        throw FormatError("sample " + id + ": ground truth and image sizes differ");
      out.push_back(std::move(li));
    } else {
      out.push_back(label_sample(id, read_sample(dir, id), gt));
    }
  }
  return out;
}

Model make_model(const MCConfig& arch, std::uint64_t seed) {
  Model m;
  m.graph = build_multicameral(arch);
  Rng rng(seed);
  m.params = init_parameters<float>(m.graph, rng);
  return m;
}

std::string LossLog::csv() const {
  std::ostringstream os;
  os << "iteration,epoch";
  for (const auto& h : heads) os << ',' << h;
  os << ",total\n";
  os.precision(9);
  for (const auto& r : rows) {
    os << r.iteration << ',' << r.epoch;
    for (double v : r.per_head) os << ',' << v;
    os << ',' << r.total << '\n';
  }
  return os.str();
}

double LossLog::mean_total(std::size_t begin, std::size_t end) const {
  end = std::min(end, rows.size());
  if (begin >= end) throw std::invalid_argument("loss log: empty window");
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += rows[i].total;
  return s / static_cast<double>(end - begin);
}

Tensor<float> to_input(const std::vector<const RgbImage*>& images) {
  if (images.empty()) throw std::invalid_argument("to_input: no images");
  const std::size_t w = images.front()->width, h = images.front()->height;
  Tensor<float> t(Shape{images.size(), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const RgbImage& img = *images[n];
    if (img.width != w || img.height != h) throw std::invalid_argument("to_input: images differ in size");
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) t.at(n, c, y, x) = img.at(x, y, c) / 255.0f - 0.5f;
  }
  return t;
}

LossLog train(Model& model, const std::vector<LabeledImage>& data, const TrainConfig& cfg, const IterationHook& hook) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  for (const auto& d : data)
    if (!d.gt.b.same_size(d.rgb.width, d.rgb.height) || !d.gt.o.same_size(d.gt.b) || !d.gt.y.same_size(d.gt.b))
      throw std::invalid_argument("train: ground truth of " + d.id + " does not match its image");
  model.adam.cfg = cfg.adam;

  LossLog log;
  for (const auto& h : model.graph.heads) log.heads.push_back(h.name);
  std::size_t iteration = model.adam.t;
  const std::size_t last_epoch = static_cast<std::size_t>(model.epoch) + cfg.epochs;
  for (std::size_t epoch = static_cast<std::size_t>(model.epoch); epoch < last_epoch; ++epoch) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(derive_seed(cfg.seed, kShuffleStream), epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_iterations && log.rows.size() >= cfg.max_iterations) break;
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<Prepared> batch;
      for (std::size_t k = start; k < stop; ++k) {
        Rng rng(derive_seed(derive_seed(derive_seed(cfg.seed, kSampleStream), epoch), k));
        batch.push_back(prepare(data[order[k]], cfg, rng));
      }
      std::vector<const RgbImage*> imgs;
      std::vector<const BinaryMap*> bs, os, ys;
      for (const auto& p : batch) {
        imgs.push_back(&p.rgb);
        bs.push_back(&p.gt.b);
        os.push_back(&p.gt.o);
        ys.push_back(&p.gt.y);
      }
      const Tensor<float> tb = stack_maps(bs), to = stack_maps(os), ty = stack_maps(ys);

      Tape<float> tape;
      Rng dropout(derive_seed(derive_seed(cfg.seed, kDropoutStream), iteration));
      const Var input = tape.constant(to_input(imgs));
      const auto heads = forward(model.graph, model.params, tape, input, true, dropout);
      const LossTerms terms = total_loss(tape, heads, TargetMaps<float>{&tb, &to, &ty}, cfg.loss);
      model.params.zero_grad();
      tape.backward(terms.total);
      adam_step(model.params, model.adam);

      LossRow row;
      row.iteration = iteration;
      row.epoch = epoch;
      for (Var v : terms.per_head) row.per_head.push_back(scalar(tape, v));
      row.total = scalar(tape, terms.total);
      if (!std::isfinite(row.total)) throw std::runtime_error("train: loss became non-finite at iteration " +
                                                              std::to_string(iteration));
      log.rows.push_back(row);
      if (hook) hook(row);
      ++iteration;
    }
    model.epoch = epoch + 1;
    if (cfg.max_iterations && log.rows.size() >= cfg.max_iterations) break;
  }
  return log;
}

std::vector<ProbMap> infer(Model& model, const RgbImage& rgb) {
  Tape<float> tape;
  Rng unused(0);
  const Var input = tape.constant(to_input({&rgb}));
  const auto heads = forward(model.graph, model.params, tape, input, false, unused);
  std::vector<ProbMap> out;
  for (const auto& h : heads) {
    const Tensor<float>& p = tape.value(h.pred);
    ProbMap m(rgb.width, rgb.height, 0.0f);
    std::copy(p.storage().begin(), p.storage().end(), m.data.begin());
    out.push_back(std::move(m));
  }
  return out;
}

const BinaryMap& gt_for(const GroundTruth& gt, HeadKind kind) {
  switch (kind) {
    case HeadKind::boundary: return gt.b;
    case HeadKind::occlusion: return gt.o;
    case HeadKind::segmentation: return gt.y;
  }
  throw std::invalid_argument("gt_for: bad head kind");
}

std::vector<HeadEval> evaluate(Model& model, const std::vector<LabeledImage>& data, const EvalConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<CurveAccumulator> acc(model.graph.heads.size(), CurveAccumulator(cfg));
  for (const auto& d : data) {
    const auto maps = infer(model, d.rgb);
    for (std::size_t h = 0; h < maps.size(); ++h) acc[h].add(maps[h], gt_for(d.gt, model.graph.heads[h].kind));
  }
  std::vector<HeadEval> out;
  for (std::size_t h = 0; h < acc.size(); ++h) {
    HeadEval e{model.graph.heads[h].name, model.graph.heads[h].kind, acc[h].curve(), {}};
    e.summary = summarize(e.curve);
    out.push_back(std::move(e));
  }
  return out;
}

std::string serialize_checkpoint(const Model& model) {
  std::string out = "MCKP";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(model.params.size() + 1));
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& e = model.params[i];
    put_tensor(out, e.name, e.value.shape(), e.value.storage().data());
  }
  const float epoch = static_cast<float>(model.epoch);
  if (static_cast<std::uint64_t>(epoch) != model.epoch) throw std::runtime_error("checkpoint: epoch too large");
  put_tensor(out, "meta/epoch", Shape{1, 1, 1, 1}, &epoch);

  const AdamState<float>& a = model.adam;
  const bool moments = !a.m.empty();
  put_u32(out, moments ? static_cast<std::uint32_t>(2 + 2 * model.params.size()) : 2u);
  const float step = static_cast<float>(a.t);
  if (static_cast<std::uint64_t>(step) != a.t) throw std::runtime_error("checkpoint: step count too large");
  put_tensor(out, "adam/step", Shape{1, 1, 1, 1}, &step);
  const float hyper[5] = {static_cast<float>(a.cfg.lr), static_cast<float>(a.cfg.beta1),
                          static_cast<float>(a.cfg.beta2), static_cast<float>(a.cfg.eps),
                          static_cast<float>(a.cfg.weight_decay)};
  put_tensor(out, "adam/hyper", Shape{5, 1, 1, 1}, hyper);
  if (moments) {
    for (std::size_t i = 0; i < model.params.size(); ++i)
      put_tensor(out, "adam/m/" + model.params[i].name, model.params[i].value.shape(), a.m[i].data());
    for (std::size_t i = 0; i < model.params.size(); ++i)
      put_tensor(out, "adam/v/" + model.params[i].name, model.params[i].value.shape(), a.v[i].data());
  }
  return out;
}

void deserialize_checkpoint(const std::string& bytes, Model& model) {
  Reader r(bytes);
  if (r.bytes(4, "magic") != "MCKP") throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32("tensor count");
  if (count != model.params.size() + 1)
    throw FormatError("checkpoint: holds " + std::to_string(count) + " tensors, architecture '" +
                      model.graph.config.name + "' needs " + std::to_string(model.params.size() + 1));

  // Decode everything before touching the model so a failure leaves it unchanged.
  std::vector<Reader::Entry> params;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    Reader::Entry e = r.tensor();
    const auto& want = model.params[i];
    if (e.name != want.name)
      throw FormatError("checkpoint: tensor " + std::to_string(i) + " is '" + e.name + "', expected '" + want.name +
                        "'");
    if (!(e.shape == want.value.shape()))
      throw FormatError("checkpoint: shape mismatch for '" + e.name + "': file " + e.shape.str() + ", model " +
                        want.value.shape().str());
    params.push_back(std::move(e));
  }
  const Reader::Entry epoch = r.tensor();
  if (epoch.name != "meta/epoch" || epoch.data.size() != 1) throw FormatError("checkpoint: missing meta/epoch");

  const std::uint32_t adam_count = r.u32("adam tensor count");
  const bool moments = adam_count == 2 + 2 * model.params.size();
  if (adam_count != 2 && !moments)
    throw FormatError("checkpoint: unexpected adam tensor count " + std::to_string(adam_count));
  const Reader::Entry step = r.tensor();
  const Reader::Entry hyper = r.tensor();
  if (step.name != "adam/step" || step.data.size() != 1) throw FormatError("checkpoint: missing adam/step");
  if (hyper.name != "adam/hyper" || hyper.data.size() != 5) throw FormatError("checkpoint: missing adam/hyper");
  std::vector<Reader::Entry> mv;
  if (moments) {
    for (const char* prefix : {"adam/m/", "adam/v/"}) {
      for (std::size_t i = 0; i < model.params.size(); ++i) {
        Reader::Entry e = r.tensor();
        const std::string want = prefix + model.params[i].name;
        if (e.name != want) throw FormatError("checkpoint: found '" + e.name + "', expected '" + want + "'");
        if (!(e.shape == model.params[i].value.shape())) throw FormatError("checkpoint: shape mismatch for '" + want + "'");
        mv.push_back(std::move(e));
      }
    }
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");

  for (std::size_t i = 0; i < params.size(); ++i)
    std::copy(params[i].data.begin(), params[i].data.end(), model.params[i].value.storage().begin());
  model.epoch = static_cast<std::uint64_t>(epoch.data[0]);
  AdamState<float>& a = model.adam;
  a.t = static_cast<std::uint64_t>(step.data[0]);
  a.cfg = AdamConfig{hyper.data[0], hyper.data[1], hyper.data[2], hyper.data[3], hyper.data[4]};
  a.m.clear();
  a.v.clear();
  if (moments) {
    const std::size_t n = model.params.size();
    a.m.resize(n);
    a.v.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      copy_into(a.m[i], mv[i]);
      copy_into(a.v[i], mv[n + i]);
    }
  }
}

fs::path arch_sidecar(const fs::path& checkpoint) { return fs::path(checkpoint.string() + ".arch.json"); }

void save_checkpoint(const fs::path& path, const Model& model) {
  const std::string bytes = serialize_checkpoint(model);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::ofstream arch(arch_sidecar(path), std::ios::trunc);
  arch << config_to_json(model.graph.config) << "\n";
}

void load_checkpoint(const fs::path& path, Model& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  deserialize_checkpoint(ss.str(), model);
}

Model load_model(const fs::path& path) {
  const fs::path sidecar = arch_sidecar(path);
  if (!fs::exists(sidecar)) throw std::runtime_error("no architecture file '" + sidecar.string() + "'");
  Model m = make_model(resolve_arch(sidecar.string()), 0);
  load_checkpoint(path, m);
  return m;
}

}  // namespace mcam
