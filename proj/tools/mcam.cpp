// mcam: dataset generation, GT derivation, training, evaluation and inference.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "mcam/trainer.hpp"

namespace {

using namespace mcam;
using nlohmann::json;

// Runs fn(i) for i in [0, n) on MCAM_THREADS workers; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, Fn fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(env_threads(), n));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  auto run = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < workers; ++j) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::pair<std::size_t, std::size_t> parse_pair(const std::string& s, const std::string& sep, const char* what) {
  const auto at = s.find(sep);
  try {
    if (at == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    const std::string a = s.substr(0, at), b = s.substr(at + sep.size());
    const auto x = std::stoul(a, &used);
    if (used != a.size()) throw std::invalid_argument(s);
    const auto y = std::stoul(b, &used);
    if (used != b.size()) throw std::invalid_argument(s);
    return {x, y};
  } catch (const std::logic_error&) {
    throw std::invalid_argument(std::string("bad ") + what + " '" + s + "'");
  }
}

std::string with_commas(std::size_t n) {
  std::string s = std::to_string(n);
  for (long i = static_cast<long>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

// Head names are "<kind>" or "<kind>_<suffix>".
HeadKind kind_of_head(const std::string& name) { return parse_head_kind(name.substr(0, name.find('_'))); }

BinaryMap binarize(const ProbMap& p, double thr) {
  BinaryMap b(p.width, p.height, 0);
  for (std::size_t i = 0; i < p.size(); ++i) b[i] = static_cast<double>(p[i]) >= thr;
  return b;
}

BinaryMap to_png8(const ProbMap& p) {
  BinaryMap out(p.width, p.height, 0);
  for (std::size_t i = 0; i < p.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(p[i], 0.0f, 1.0f) * 255.0f));
  return out;
}

ProbMap from_png8(const BinaryMap& m) {
  ProbMap p(m.width, m.height, 0.0f);
  for (std::size_t i = 0; i < m.size(); ++i) p[i] = static_cast<float>(m[i]) / 255.0f;
  return p;
}

void paint(RgbImage& img, const BinaryMap& mask, std::array<std::uint8_t, 3> color) {
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i])
      for (std::size_t c = 0; c < 3; ++c) img.data[3 * i + c] = color[c];
}

constexpr std::array<std::uint8_t, 3> kBlue{30, 80, 255};
constexpr std::array<std::uint8_t, 3> kOrange{255, 140, 0};

// ---- report rendering ----

std::string render_report(const json& summary, const fs::path& dir, bool curves) {
  std::ostringstream os;
  char line[160];
  os << "images " << summary.at("images").get<std::size_t>() << "  tau " << summary.at("tau").get<double>() << "\n";
  std::snprintf(line, sizeof line, "%-18s %-12s %6s %6s %6s %6s\n", "head", "kind", "ODS", "thr", "AP", "AP60");
  os << line;
  for (const auto& h : summary.at("heads")) {
    std::snprintf(line, sizeof line, "%-18s %-12s %6.3f %6.2f %6.3f %6.3f\n", h.at("name").get<std::string>().c_str(),
                  h.at("kind").get<std::string>().c_str(), h.at("ods").get<double>(), h.at("ods_threshold").get<double>(),
                  h.at("ap").get<double>(), h.at("ap60").get<double>());
    os << line;
  }
  if (curves) {
    for (const auto& h : summary.at("heads")) {
      const fs::path p = dir / (h.at("name").get<std::string>() + "_curve.txt");
      std::ifstream in(p);
      if (!in) throw std::runtime_error("report: missing " + p.string());
      os << "\n# " << h.at("name").get<std::string>() << "\n" << in.rdbuf();
    }
  }
  return os.str();
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

// ---- commands ----

struct GenArgs {
  std::string out;
  std::size_t count = 100;
  std::string size = "640x512";
  std::string instances = "15..25";
  std::uint64_t seed = 0;
  bool plus = false;
  bool heterogeneous = false;
};

int run_gen(const GenArgs& a) {
  SceneConfig cfg;
  std::tie(cfg.width, cfg.height) = parse_pair(a.size, "x", "--size");
  std::tie(cfg.instances_min, cfg.instances_max) = parse_pair(a.instances, "..", "--instances");
  cfg.seed = a.seed;
  cfg.plus_mode = a.plus;
  cfg.homogeneous = !a.heterogeneous;
  cfg.validate();
  const fs::path dir = a.out;
  fs::create_directories(dir);
  std::vector<std::string> ids(a.count);
  std::atomic<std::size_t> done{0};
  parallel_for(a.count, [&](std::size_t i) {
    ids[i] = sample_id(i);
    write_sample(dir, ids[i], generate_scene(scene_config_for(cfg, i)));
    const std::size_t d = ++done;
    if (d % 100 == 0) std::cerr << "gen: " << d << "/" << a.count << "\n";
  });
  write_manifest(dir, ids, scene_config_to_json(cfg));
  std::cerr << "gen: wrote " << a.count << " samples to " << dir.string() << "\n";
  return 0;
}

struct GtArgs {
  std::string data;
  std::size_t window = 2;
  double threshold = 0.95;
  std::size_t connectivity = 4;
  bool pseudo_depth = false;
};

int run_gtgen(const GtArgs& a) {
  GtConfig cfg;
  cfg.window_radius = a.window;
  cfg.threshold = a.threshold;
  cfg.connectivity = a.connectivity;
  cfg.pseudo_depth = a.pseudo_depth;
  const Dataset d = read_manifest(a.data);
  parallel_for(d.ids.size(), [&](std::size_t i) {
    const Sample s = read_sample(d.dir, d.ids[i]);
    write_gt(d.dir, d.ids[i], generate_gt(s.instances, s.depth, cfg));
  });
  std::cerr << "gtgen: labelled " << d.ids.size() << " samples in " << d.dir.string() << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, out, arch = "mc2", resume, log;
  std::size_t epochs = 1, batch = 8, crop = 256, max_iterations = 0, log_every = 50;
  double lr = 1e-4, weight_decay = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, alpha = 10.0;
  double dropout = -1.0, max_angle = 0.0;
  std::uint64_t seed = 0;
  bool no_augment = false, plus = false;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg;
  cfg.batch_size = a.batch;
  cfg.crop_size = a.crop;
  cfg.max_iterations = a.max_iterations;
  cfg.seed = a.seed;
  cfg.augment = !a.no_augment;
  cfg.adam.lr = a.lr;
  cfg.adam.weight_decay = a.weight_decay;
  cfg.adam.beta1 = a.beta1;
  cfg.adam.beta2 = a.beta2;
  cfg.adam.eps = a.eps;
  cfg.loss.alpha = a.alpha;
  cfg.geometric.max_angle_deg = a.max_angle;
  cfg.photometric.plus_mode = a.plus;

  Model model;
  if (!a.resume.empty()) {
    model = load_model(a.resume);
    std::cerr << "train: resuming " << model.graph.config.name << " at epoch " << model.epoch << "\n";
  } else {
    MCConfig arch = resolve_arch(a.arch);
    if (a.dropout >= 0.0) arch.dropout = a.dropout;
    model = make_model(arch, a.seed);
  }
  cfg.arch = model.graph.config;
  cfg.validate();

  // Plus-mode datasets keep their colour changes during training too.
  const json gen_cfg = json::parse(read_manifest(a.data).config_json, nullptr, false);
  if (gen_cfg.is_object() && gen_cfg.value("plus_mode", false)) cfg.photometric.plus_mode = true;
  const auto data = load_labeled(a.data);
  const fs::path log_path = a.log.empty() ? fs::path(a.out + ".loss.csv") : fs::path(a.log);
  const bool append = !a.resume.empty() && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());

  cfg.epochs = 1;
  std::size_t iterations = 0;
  for (std::size_t e = 0; e < a.epochs; ++e) {
    const LossLog l = train(model, data, cfg, [&](const LossRow& r) {
      if (a.log_every && (r.iteration + 1) % a.log_every == 0)
        std::cerr << "train: epoch " << r.epoch << " iteration " << r.iteration + 1 << " loss " << r.total << "\n";
    });
    std::string csv = l.csv();
    if (append || e > 0) csv.erase(0, csv.find('\n') + 1);
    log << csv << std::flush;
    save_checkpoint(a.out, model);
    iterations += l.rows.size();
    if (a.max_iterations && iterations >= a.max_iterations) break;
    if (a.max_iterations) cfg.max_iterations = a.max_iterations - iterations;
  }
  std::cerr << "train: " << iterations << " iterations, checkpoint " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string data, checkpoint, pred_dir, out, tau = "0";
  bool gt_as_prediction = false, curves = false;
  std::vector<std::string> heads{"boundary", "occlusion", "segmentation"};
};

int run_eval(const EvalArgs& a) {
  const int sources = !a.checkpoint.empty() + !a.pred_dir.empty() + a.gt_as_prediction;
  if (sources != 1) throw std::invalid_argument("eval: give exactly one of --checkpoint, --pred-dir, --gt-as-prediction");
  const auto data = load_labeled(a.data);
  if (data.empty()) throw std::invalid_argument("eval: empty dataset");

  EvalConfig cfg;
  cfg.tau = a.tau == "auto" ? tolerance(data[0].rgb.width, data[0].rgb.height) : std::stod(a.tau);
  cfg.validate();

  std::vector<HeadEval> results;
  if (!a.checkpoint.empty()) {
    Model m = load_model(a.checkpoint);
    results = evaluate(m, data, cfg);
  } else {
    for (const auto& head : a.heads) {
      const HeadKind kind = kind_of_head(head);
      if (!a.pred_dir.empty() && !fs::exists(fs::path(a.pred_dir) / (data[0].id + "_" + head + ".png"))) continue;
      CurveAccumulator acc(cfg);
      for (const auto& d : data) {
        const BinaryMap& gt = gt_for(d.gt, kind);
        if (a.gt_as_prediction) {
          ProbMap q(gt.width, gt.height, 0.0f);
          for (std::size_t i = 0; i < gt.size(); ++i) q[i] = gt[i] ? 1.0f : 0.0f;
          acc.add(q, gt);
        } else {
          const ProbMap p = from_png8(read_png_gray8(fs::path(a.pred_dir) / (d.id + "_" + head + ".png")));
          acc.add(p, gt);
        }
      }
      const EvalCurve c = acc.curve();
      results.push_back({head, kind, c, summarize(c)});
    }
    if (results.empty()) throw std::runtime_error("eval: no prediction maps found in " + a.pred_dir);
  }

  json summary{{"images", data.size()}, {"tau", cfg.tau}, {"heads", json::array()}};
  for (const auto& r : results)
    summary["heads"].push_back({{"name", r.name},
                                {"kind", std::string(head_kind_name(r.kind))},
                                {"ods", r.summary.ods},
                                {"ods_threshold", r.summary.ods_threshold},
                                {"ap", r.summary.ap},
                                {"ap60", r.summary.ap60}});
  fs::path dir;
  if (!a.out.empty()) {
    dir = a.out;
    fs::create_directories(dir);
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    for (const auto& r : results) write_text(dir / (r.name + "_curve.txt"), curve_table(r.curve));
  }
  std::cout << render_report(summary, dir, a.curves && !a.out.empty());
  return 0;
}

struct InferArgs {
  std::string checkpoint, data, out;
  std::vector<std::string> images;
  double threshold = 0.5;
};

int run_infer(const InferArgs& a) {
  if (a.images.empty() == a.data.empty()) throw std::invalid_argument("infer: give either --image or --data");
  Model model = load_model(a.checkpoint);
  std::vector<std::pair<std::string, fs::path>> inputs;
  if (!a.data.empty()) {
    const Dataset d = read_manifest(a.data);
    for (const auto& id : d.ids) inputs.emplace_back(id, d.dir / (id + "_rgb.png"));
  } else {
    for (const auto& p : a.images) inputs.emplace_back(fs::path(p).stem().string(), p);
  }
  const fs::path out = a.out;
  fs::create_directories(out);
  for (const auto& [stem, path] : inputs) {
    const RgbImage rgb = read_png_rgb(path);
    const auto maps = infer(model, rgb);
    RgbImage overlay = rgb;
    const ProbMap* boundary = nullptr;
    const ProbMap* occlusion = nullptr;
    const ProbMap* segmentation = nullptr;
    for (std::size_t h = 0; h < maps.size(); ++h) {
      const auto& head = model.graph.heads[h];
      write_png(out / (stem + "_" + head.name + ".png"), to_png8(maps[h]));
      if (head.kind == HeadKind::boundary) boundary = &maps[h];
      if (head.kind == HeadKind::occlusion) occlusion = &maps[h];
      if (head.kind == HeadKind::segmentation) segmentation = &maps[h];
    }
    // Without a boundary head, outline the segmented instances instead.
    if (boundary) {
      paint(overlay, binarize(*boundary, a.threshold), kBlue);
    } else if (segmentation) {
      const BinaryMap seg = binarize(*segmentation, a.threshold);
      LabelMap lm(seg.width, seg.height, 0);
      for (std::size_t i = 0; i < seg.size(); ++i) lm[i] = seg[i];
      paint(overlay, boundaries(lm), kBlue);
    }
    if (occlusion) paint(overlay, binarize(*occlusion, a.threshold), kOrange);
    write_png(out / (stem + "_overlay.png"), overlay);
  }
  std::cerr << "infer: " << inputs.size() << " images to " << out.string() << "\n";
  return 0;
}

int run_params(const std::string& arch, bool list, bool raw) {
  auto show = [&](const MCConfig& cfg) {
    const std::size_t n = count_parameters(build_multicameral(cfg));
    return raw ? std::to_string(n) : with_commas(n);
  };
  if (list) {
    for (const auto& name : preset_names()) std::cout << name << " " << show(preset_config(name)) << "\n";
    return 0;
  }
  std::cout << show(resolve_arch(arch)) << "\n";
  return 0;
}

int run_report(const std::string& dir, bool curves) {
  std::ifstream in(fs::path(dir) / "summary.json");
  if (!in) throw std::runtime_error("report: no summary.json in " + dir);
  std::cout << render_report(json::parse(in), dir, curves);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multicameral boundary / occlusion / segmentation toolkit. MCAM_THREADS sets worker threads."};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic pile dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--count", gen.count, "Number of scenes")->capture_default_str();
  g->add_option("--size", gen.size, "Image size WxH")->capture_default_str();
  g->add_option("--instances", gen.instances, "Instances per scene LO..HI")->capture_default_str();
  g->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  g->add_flag("--plus", gen.plus, "Random channel permutation and exposure per scene");
  g->add_flag("--heterogeneous", gen.heterogeneous, "Independent texture per instance");

  GtArgs gt;
  auto* t = app.add_subcommand("gtgen", "Write boundary, occluding-side and unoccluded-instance maps");
  t->add_option("--data", gt.data, "Dataset directory")->required();
  t->add_option("--window", gt.window, "Window radius r of the (2r+1)^2 neighbourhood")->capture_default_str();
  t->add_option("--threshold", gt.threshold, "Unoccluded share of the perimeter")->capture_default_str();
  t->add_option("--connectivity", gt.connectivity, "Pixel connectivity, 4 or 8")->capture_default_str();
  t->add_flag("--pseudo-depth", gt.pseudo_depth, "Use per-instance depth ranks instead of metric depth");

  TrainArgs tr;
  auto* r = app.add_subcommand("train", "Train a network; writes a checkpoint and a loss CSV");
  r->add_option("--data", tr.data, "Dataset directory")->required();
  r->add_option("--out", tr.out, "Checkpoint path")->required();
  r->add_option("--arch", tr.arch, "Preset name or JSON architecture file")->capture_default_str();
  r->add_option("--resume", tr.resume, "Continue from this checkpoint (its architecture wins)");
  r->add_option("--epochs", tr.epochs, "Epochs to run")->capture_default_str();
  r->add_option("--batch", tr.batch, "Batch size")->capture_default_str();
  r->add_option("--crop", tr.crop, "Random crop side, 0 = whole image")->capture_default_str();
  r->add_option("--max-iterations", tr.max_iterations, "Stop after this many iterations, 0 = no cap")->capture_default_str();
  r->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
  r->add_option("--weight-decay", tr.weight_decay, "L2 weight decay")->capture_default_str();
  r->add_option("--beta1", tr.beta1, "Adam beta1")->capture_default_str();
  r->add_option("--beta2", tr.beta2, "Adam beta2")->capture_default_str();
  r->add_option("--eps", tr.eps, "Adam epsilon")->capture_default_str();
  r->add_option("--alpha", tr.alpha, "Positive-class loss weight")->capture_default_str();
  r->add_option("--dropout", tr.dropout, "Override the architecture's dropout rate");
  r->add_option("--max-angle", tr.max_angle, "Random rotation range in degrees")->capture_default_str();
  r->add_option("--seed", tr.seed, "Initialisation, shuffling and augmentation seed")->capture_default_str();
  r->add_option("--log", tr.log, "Loss CSV path (default <out>.loss.csv)");
  r->add_option("--log-every", tr.log_every, "Progress line interval, 0 = silent")->capture_default_str();
  r->add_flag("--no-augment", tr.no_augment, "Disable geometric and photometric augmentation");
  r->add_flag("--plus", tr.plus, "Add channel permutation and exposure to online augmentation (implied by plus-mode datasets)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Precision/recall sweep with ODS, AP and AP60 per head");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Evaluate this model");
  e->add_option("--pred-dir", ev.pred_dir, "Evaluate <id>_<head>.png probability maps (as written by infer)");
  e->add_flag("--gt-as-prediction", ev.gt_as_prediction, "Evaluate the ground truth against itself");
  e->add_option("--heads", ev.heads, "Heads looked up with --pred-dir / --gt-as-prediction")->capture_default_str();
  e->add_option("--tau", ev.tau, "Match tolerance in pixels, or 'auto' for the image-diagonal rule")->capture_default_str();
  e->add_option("--out", ev.out, "Write summary.json and <head>_curve.txt here");
  e->add_flag("--curves", ev.curves, "Also print the full curves (needs --out)");

  InferArgs in;
  auto* f = app.add_subcommand("infer", "Per-head probability PNGs and an RGB overlay");
  f->add_option("--checkpoint", in.checkpoint, "Model checkpoint")->required();
  f->add_option("--image", in.images, "Input RGB PNG (repeatable)");
  f->add_option("--data", in.data, "Run on every sample of a dataset");
  f->add_option("--out", in.out, "Output directory")->required();
  f->add_option("--threshold", in.threshold, "Overlay binarisation threshold")->capture_default_str();

  std::string arch = "mc2";
  bool list = false, raw = false;
  auto* p = app.add_subcommand("params", "Print the parameter count of an architecture");
  p->add_option("--arch", arch, "Preset name or JSON architecture file")->capture_default_str();
  p->add_flag("--list", list, "All presets with their counts");
  p->add_flag("--raw", raw, "No thousands separators");

  std::string report_dir;
  bool report_curves = false;
  auto* rep = app.add_subcommand("report", "Render an eval output directory");
  rep->add_option("--eval", report_dir, "Directory written by eval --out")->required();
  rep->add_flag("--curves", report_curves, "Include the precision/recall tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*g) return run_gen(gen);
    if (*t) return run_gtgen(gt);
    if (*r) return run_train(tr);
    if (*e) return run_eval(ev);
    if (*f) return run_infer(in);
    if (*p) return run_params(arch, list, raw);
    if (*rep) return run_report(report_dir, report_curves);
  } catch (const std::exception& err) {
    std::cerr << "mcam: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
