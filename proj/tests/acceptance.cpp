// Acceptance checks; one PASS/FAIL line per criterion on stdout, details on stderr.
//   acceptance [--only 1,2,...] [--arch-iterations N] [--arch-seeds N] [--corpus N]

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "mcam/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/gt_oracle.hpp"
#include "support/metric_oracle.hpp"

#ifndef MCAM_BIN
#error "MCAM_BIN must point at the mcam executable"
#endif

using namespace mcam;
using namespace mcam::oracle;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failures without stopping at the first one.
struct Check {
  bool ok = true;
  std::vector<std::string> failures;
  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (failures.size() < 8) failures.push_back(what);
    }
  }
  Outcome done(std::string detail) const {
    for (const auto& f : failures) detail += "; FAILED " + f;
    return {ok, detail};
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string shell(const std::string& cmd, int* status) {
  std::string out;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) {
    *status = -1;
    return out;
  }
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) out.append(buf, n);
  const int st = ::pclose(p);
  *status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mcam_accept_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---- 1 ----

Outcome parameter_counts() {
  const std::vector<std::pair<std::string, std::size_t>> want{
      {"mc2", 1'465'105},  {"mc3", 2'145'225},        {"mc4", 2'961'345},       {"mc4d", 2'961'747},
      {"mc6d", 5'411'916}, {"red_coords", 1'471'105}, {"red_atrous", 1'957'137}};
  Check c;
  for (const auto& [name, n] : want) {
    int st = 0;
    const std::string out = shell(std::string(MCAM_BIN) + " params --raw --arch " + name, &st);
    c.expect(st == 0 && out == std::to_string(n) + "\n", name + " printed '" + out + "'");
    c.expect(count_parameters(build_multicameral(preset_config(name))) == n, name + " library count");
  }
  return c.done("7/7 exact via `mcam params`");
}

// ---- 2 ----

Outcome tolerance_formula() {
  Check c;
  const double t = tolerance(256, 256);
  c.expect(std::abs(t - 2.7153) <= 1e-4, "tolerance(256,256) = " + fmt("%.6f", t));
  c.expect(EvalConfig{}.tau == 0.0, "default tau is 0");

  // A one-pixel shift loses matches at tau 0 and is fully matched at the formula tolerance.
  SceneConfig sc;
  sc.width = sc.height = 256;
  sc.seed = 2;
  const Sample s = generate_scene(sc);
  const GroundTruth gt = generate_gt(s.instances, s.depth);
  ProbMap shifted(256, 256, 0.0f);
  for (std::size_t y = 0; y < 256; ++y)
    for (std::size_t x = 1; x < 256; ++x) shifted.at(x, y) = gt.b.at(x - 1, y) ? 1.0f : 0.0f;
  EvalConfig zero;
  const MatchCounts exact = match_counts(binarize(shifted, 0.5), gt.b, 0.0);
  const EvalCurve c0 = pr_sweep({shifted}, {gt.b}, zero);
  c.expect(c0.points[49].counts == exact, "tau 0 counts equal exact overlap");
  EvalConfig loose;
  loose.tau = tolerance(256, 256);
  const EvalCurve c1 = pr_sweep({shifted}, {gt.b}, loose);
  c.expect(c1.points[49].counts.matched_pred == c1.points[49].counts.total_pred, "shift matched at formula tolerance");
  c.expect(exact.matched_pred < exact.total_pred, "shift unmatched at tau 0");
  return c.done("tolerance(256,256) = " + fmt("%.6f", t) + ", tau 0 honoured");
}

// ---- 3 ----

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kCases = 20;
  constexpr double kTol = 1e-4;
  Check c;
  std::size_t probes = 0;
  double worst = 0.0;
  std::map<std::string, int> per_op;
  auto record = [&](const std::string& op, const GradReport& r) {
    probes += r.checked;
    worst = std::max(worst, r.max_rel_err);
    ++per_op[op];
    c.expect(r.max_rel_err < kTol, op + " rel err " + fmt("%.3g", r.max_rel_err));
  };
  using V = const std::vector<Var>&;
  Rng rng(3), gemm_rng(4);
  for (int k = 0; k < kCases; ++k) {
    const std::uint64_t seed = 10'000 + static_cast<std::uint64_t>(k) * 37;
    {
      const std::size_t ks = 2 * static_cast<std::size_t>(rng.uniform_int(0, 2)) + 1;
      const std::size_t d = static_cast<std::size_t>(rng.uniform_int(1, 3));
      const Shape s = random_shape(rng);
      const std::size_t co = static_cast<std::size_t>(rng.uniform_int(1, 3));
      record("conv2d", check_gradients({random_tensor(s, rng), random_tensor(Shape{co, s.c, ks, ks}, rng),
                                        random_tensor(Shape{1, co, 1, 1}, rng)},
                                       [d](Tape<double>& t, V v) { return conv2d(t, v[0], v[1], v[2], d); }, seed));
    }
    {
      // Over eight outputs: the im2col + GEMM kernel instead of the direct one.
      const std::size_t ks = 2 * static_cast<std::size_t>(gemm_rng.uniform_int(0, 2)) + 1;
      const std::size_t d = static_cast<std::size_t>(gemm_rng.uniform_int(1, 3));
      const Shape s = random_shape(gemm_rng);
      const std::size_t co = static_cast<std::size_t>(gemm_rng.uniform_int(9, 11));
      record("conv2d_gemm",
             check_gradients({random_tensor(s, gemm_rng), random_tensor(Shape{co, s.c, ks, ks}, gemm_rng),
                              random_tensor(Shape{1, co, 1, 1}, gemm_rng)},
                             [d](Tape<double>& t, V v) { return conv2d(t, v[0], v[1], v[2], d); }, seed + 20));
    }
    {
      const std::vector<Tensor<double>> in{spaced_tensor(random_shape(rng), rng)};
      record("relu", check_gradients(in, [](Tape<double>& t, V v) { return relu(t, v[0]); }, seed + 1));
      record("sigmoid", check_gradients(in, [](Tape<double>& t, V v) { return sigmoid(t, v[0]); }, seed + 2));
    }
    {
      const std::vector<Tensor<double>> in{spaced_tensor(random_shape(rng, 3, true), rng)};
      record("max_pool2", check_gradients(in, [](Tape<double>& t, V v) { return max_pool2(t, v[0]); }, seed + 3));
      record("avg_pool2", check_gradients(in, [](Tape<double>& t, V v) { return avg_pool2(t, v[0]); }, seed + 4));
    }
    record("unpool2", check_gradients({random_tensor(random_shape(rng), rng)},
                                      [](Tape<double>& t, V v) { return unpool2(t, v[0]); }, seed + 5));
    {
      const Shape s = random_shape(rng);
      std::vector<Tensor<double>> in;
      for (int p = 0, n = static_cast<int>(rng.uniform_int(2, 3)); p < n; ++p) {
        Shape sp = s;
        sp.c = static_cast<std::size_t>(rng.uniform_int(1, 3));
        in.push_back(random_tensor(sp, rng));
      }
      record("concat", check_gradients(in, [](Tape<double>& t, V v) { return concat_channels<double>(t, v); }, seed + 6));
    }
    {
      const Shape s = random_shape(rng);
      std::vector<Tensor<double>> in{spaced_tensor(s, rng), spaced_tensor(s, rng)};
      for (std::size_t i = 0; i < in[1].numel(); ++i) in[1][i] += 0.0087;
      record("merge_sum", check_gradients(in, [](Tape<double>& t, V v) { return merge<double>(t, v, MergeMode::sum); }, seed + 7));
      record("merge_max", check_gradients(in, [](Tape<double>& t, V v) { return merge<double>(t, v, MergeMode::max); }, seed + 8));
      record("merge_concat",
             check_gradients(in, [](Tape<double>& t, V v) { return merge<double>(t, v, MergeMode::concat); }, seed + 9));
      record("add", check_gradients(in, [](Tape<double>& t, V v) { return add(t, v[0], v[1]); }, seed + 10));
      record("mul", check_gradients(in, [](Tape<double>& t, V v) { return mul(t, v[0], v[1]); }, seed + 11));
      record("scale", check_gradients({in[0]}, [](Tape<double>& t, V v) { return scale(t, v[0], -1.7); }, seed + 12));
      record("sum", check_gradients({in[0]}, [](Tape<double>& t, V v) { return sum(t, v[0]); }, seed + 13));
    }
    {
      const std::uint64_t mask = seed + 14;
      record("dropout", check_gradients({random_tensor(random_shape(rng), rng)}, [mask](Tape<double>& t, V v) {
               Rng m(mask);
               return dropout(t, v[0], 0.3, true, m);
             }, seed + 15));
    }
  }

  // Composed bicameral toy graph: parameter gradients of the full loss.
  NetworkGraph g = build_multicameral(preset_config("mc3d_tiny"));
  for (int k = 0; k < kCases; ++k) {
    Rng r(500 + static_cast<std::uint64_t>(k));
    auto ps = init_parameters<double>(g, r);
    const Tensor<double> img = random_tensor(Shape{1, 3, 16, 16}, r, -0.5, 0.5);
    Tensor<double> b(Shape{1, 1, 16, 16}), o(Shape{1, 1, 16, 16});
    for (std::size_t i = 0; i < b.numel(); ++i) {
      b[i] = r.bernoulli(0.3);
      o[i] = b[i] > 0 && r.bernoulli(0.5);
    }
    auto build = [&](Tape<double>& tape) {
      Rng drop(900 + static_cast<std::uint64_t>(k));
      auto heads = forward(g, ps, tape, tape.constant(img), true, drop);
      return total_loss(tape, heads, TargetMaps<double>{&b, &o, nullptr}, LossConfig{}).total;
    };
    // A 1e-4 step crosses ReLU / max-pool kinks in a deep random graph too often; 1e-6 stays
    // well above f64 rounding.
    record("mc3d_tiny", check_parameter_gradients(ps, build, 5, 700 + static_cast<std::uint64_t>(k), 1e-6));
  }

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.expect(secs < 120.0, "runtime " + fmt("%.1f s", secs));
  for (const auto& [op, n] : per_op) c.expect(n >= kCases, op + " has " + std::to_string(n) + " cases");
  return c.done(std::to_string(per_op.size()) + " ops x " + std::to_string(kCases) + " cases, " + std::to_string(probes) +
                " probes, max rel err " + fmt("%.2e", worst) + ", " + fmt("%.1f s", secs));
}

// ---- 4 ----

BinaryMap dilate1(const BinaryMap& m) {
  BinaryMap out(m.width, m.height, 0);
  const long w = static_cast<long>(m.width), h = static_cast<long>(m.height);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long u = x + dx, v = y + dy;
          if (u >= 0 && v >= 0 && u < w && v < h && m.at(u, v)) out.at(x, y) = 1;
        }
  return out;
}

// Labels in the clipped (2r+1)^2 window around (x, y).
std::size_t window_labels(const LabelMap& m, long x, long y, long r) {
  std::set<std::uint16_t> labels;
  for (long v = std::max(0L, y - r); v <= std::min<long>(static_cast<long>(m.height) - 1, y + r); ++v)
    for (long u = std::max(0L, x - r); u <= std::min<long>(static_cast<long>(m.width) - 1, x + r); ++u)
      labels.insert(m.at(u, v));
  return labels.size();
}

Outcome gt_oracle() {
  Check c;
  Rng rng(4);
  std::size_t positives = 0, scenes = 0;
  for (int k = 0; k < 200; ++k) {
    const RandomScene s = random_scene(32, 32, rng);
    ++scenes;
    for (int conn : {4, 8}) {
      const BinaryMap b = boundaries(s.inst, conn);
      c.expect(b == brute_boundaries(s.inst, conn), "boundaries scene " + std::to_string(k) + " conn " + std::to_string(conn));
      for (long r : {1L, 2L, 3L}) {
        const BinaryMap o = occluding_sides(s.inst, s.depth, static_cast<std::size_t>(r), conn);
        c.expect(o == brute_occluding_sides(s.inst, s.depth, r, conn),
                 "occluding_sides scene " + std::to_string(k) + " r " + std::to_string(r) + " conn " + std::to_string(conn));
        const BinaryMap d = dilate1(b);
        const long w = 32;
        for (long y = 0; y < w; ++y)
          for (long x = 0; x < w; ++x) {
            if (!o.at(x, y)) continue;
            ++positives;
            c.expect(d.at(x, y), "O outside dilate(B) scene " + std::to_string(k));
            // Some boundary pixel whose window holds exactly two labels must cover this positive.
            bool explained = false;
            for (long v = std::max(0L, y - r); v <= std::min(w - 1, y + r) && !explained; ++v)
              for (long u = std::max(0L, x - r); u <= std::min(w - 1, x + r) && !explained; ++u)
                explained = b.at(u, v) && window_labels(s.inst, u, v, r) == 2;
            c.expect(explained, "positive without a two-label window, scene " + std::to_string(k));
          }
      }
    }
    // A window covering the whole image never holds exactly two labels once there are three.
    const std::size_t labels = window_labels(s.inst, 0, 0, 32);
    if (labels > 2) {
      const BinaryMap all = occluding_sides(s.inst, s.depth, 32, 4);
      bool any = false;
      for (auto v : all.data) any |= v != 0;
      c.expect(!any, "r=32 window with " + std::to_string(labels) + " labels produced positives, scene " + std::to_string(k));
    }
  }
  return c.done(std::to_string(scenes) + " scenes x conn {4,8} x r {1,2,3} bit-exact, " + std::to_string(positives) +
                " O positives all inside dilate(B) and covered by two-label windows");
}

// ---- 5 ----

Outcome metric_oracle() {
  Check c;
  Rng rng(5);
  for (int k = 0; k < 10; ++k) {
    std::vector<ProbMap> probs;
    std::vector<BinaryMap> gts;
    for (int i = 0; i < 3; ++i) {
      gts.push_back(random_binary(24, 20, 0.15, rng));
      ProbMap p(24, 20, 0.0f);
      for (std::size_t j = 0; j < p.size(); ++j) p[j] = gts.back()[j] ? 1.0f : 0.0f;
      probs.push_back(p);
    }
    for (double tau : {0.0, 1.0, tolerance(24, 20)}) {
      EvalConfig cfg;
      cfg.tau = tau;
      const CurveSummary s = summarize(pr_sweep(probs, gts, cfg));
      c.expect(s.ods == 1.0 && s.ap == 1.0 && s.ap60 == 1.0, "perfect prediction tau " + fmt("%.3f", tau));
    }
  }

  double worst_ap = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> rs;
    const int n = static_cast<int>(rng.uniform_int(2, 8));
    for (int i = 0; i < n; ++i) rs.push_back(rng.uniform(0.05, 0.98));
    std::sort(rs.rbegin(), rs.rend());
    std::vector<std::pair<double, double>> pr;
    for (double r : rs) pr.push_back({rng.uniform(0.1, 1.0), r});
    const EvalCurve curve = curve_from(pr);
    std::vector<std::pair<double, double>> rp;
    for (const auto& pt : curve.points) rp.push_back({pt.counts.recall(), pt.counts.precision()});
    std::sort(rp.begin(), rp.end());
    const double max_r = rp.back().first;
    const double e1 = std::abs(ap(curve) - riemann(rp, 0.0, max_r, 1'000'000));
    const double want60 = max_r > 0.6 ? riemann(rp, 0.6, max_r, 1'000'000) / 0.4 : 0.0;
    const double e2 = std::abs(ap60(curve) - want60);
    worst_ap = std::max({worst_ap, e1, e2});
    c.expect(e1 <= 1e-9 && e2 <= 1e-9, "AP Riemann trial " + std::to_string(trial));
  }

  std::vector<ProbMap> probs;
  std::vector<BinaryMap> gts;
  for (int i = 0; i < 4; ++i) {
    probs.push_back(random_prob(30, 22, rng));
    gts.push_back(random_binary(30, 22, 0.12, rng));
  }
  const EvalCurve zero = pr_sweep(probs, gts, EvalConfig{});
  for (const auto& pt : zero.points) {
    MatchCounts want;
    for (int i = 0; i < 4; ++i) {
      const BinaryMap b = binarize(probs[i], pt.threshold);
      for (std::size_t j = 0; j < b.size(); ++j) {
        want.total_pred += b[j];
        want.total_gt += gts[i][j];
        want.matched_pred += b[j] && gts[i][j];
        want.matched_gt += b[j] && gts[i][j];
      }
    }
    c.expect(pt.counts == want, "tau 0 confusion counts at " + fmt("%.2f", pt.threshold));
  }

  EvalCurve prev = zero;
  for (double tau : {0.5, 1.0, 1.5, 2.0, 2.7153, 4.0, 6.0}) {
    EvalConfig cfg;
    cfg.tau = tau;
    const EvalCurve cur = pr_sweep(probs, gts, cfg);
    for (std::size_t t = 0; t < cur.points.size(); ++t) {
      c.expect(cur.points[t].counts.matched_pred >= prev.points[t].counts.matched_pred &&
                   cur.points[t].counts.matched_gt >= prev.points[t].counts.matched_gt,
               "tau monotonicity at " + fmt("%.4f", tau));
    }
    prev = cur;
  }
  return c.done("perfect = 1, AP/AP60 vs Riemann max err " + fmt("%.1e", worst_ap) +
                ", tau 0 exact over 99 thresholds, monotone over 8 taus");
}

// ---- 6 ----

Outcome loss_checks() {
  Check c;
  auto px = [](double v) { return Tensor<double>(Shape{1, 1, 1, 1}, v); };
  Tape<double> t;
  const double l1 = t.value(loss_boundary(t, t.constant(px(std::exp(-1.0))), px(1.0), LossConfig{}))[0];
  const double l2 = t.value(loss_boundary(t, t.constant(px(0.5)), px(0.0), LossConfig{}))[0];
  const double l3 = t.value(loss_occlusion(t, t.constant(px(0.5)), px(0.0), px(1.0), LossConfig{}))[0];
  c.expect(std::abs(l1 - 10.0) <= 1e-9, "B=1, p=1/e gives " + fmt("%.12f", l1));
  c.expect(std::abs(l2 - std::log(2.0)) <= 1e-9, "B=0, p=.5 gives " + fmt("%.12f", l2));
  c.expect(std::abs(l3 - 10.0 * std::log(2.0)) <= 1e-9, "beta branch gives " + fmt("%.12f", l3));

  Rng rng(6);
  double worst = 0.0;
  for (int k = 0; k < 60; ++k) {
    const Shape s{static_cast<std::size_t>(rng.uniform_int(1, 2)), 1, 5, 6};
    Tensor<double> y(s), b(s);
    for (std::size_t i = 0; i < y.numel(); ++i) {
      y[i] = rng.bernoulli(0.4);
      b[i] = rng.bernoulli(0.3);
    }
    const int which = k % 3;
    const auto r = check_gradients({random_tensor(s, rng, 0.05, 0.95)}, [&](Tape<double>& tp, const std::vector<Var>& v) {
      if (which == 0) return loss_boundary(tp, v[0], y, LossConfig{});
      if (which == 1) return loss_occlusion(tp, v[0], y, b, LossConfig{});
      return loss_segmentation(tp, v[0], y, b, LossConfig{});
    }, 60 + static_cast<std::uint64_t>(k));
    worst = std::max(worst, r.max_rel_err);
    c.expect(r.max_rel_err < 1e-4, "loss gradient case " + std::to_string(k));
  }
  return c.done("point values within 1e-9, 3 losses x 20 gradient cases max rel err " + fmt("%.2e", worst));
}

// ---- 7 ----

struct ArchRun {
  double seg_ap = 0.0;
  double head_loss = 0.0, tail_loss = 0.0;
  double seconds = 0.0;
};

ArchRun run_arch(const std::string& arch, const std::vector<LabeledImage>& train_set,
                 const std::vector<LabeledImage>& test_set, std::uint64_t seed, std::size_t iterations) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig cfg;
  cfg.arch = preset_config(arch);
  cfg.arch.dropout = 0.1;
  cfg.adam.lr = 1e-3;
  cfg.crop_size = 0;
  cfg.batch_size = 8;
  cfg.epochs = 1'000'000;
  cfg.max_iterations = iterations;
  cfg.seed = seed;
  Model m = make_model(cfg.arch, seed);
  const LossLog log = train(m, train_set, cfg);
  ArchRun r;
  const std::size_t n = log.rows.size(), win = std::min<std::size_t>(50, n / 4);
  r.head_loss = log.mean_total(0, win);
  r.tail_loss = log.mean_total(n - win, n);
  for (const auto& h : evaluate(m, test_set, EvalConfig{}))
    if (h.name == "segmentation") r.seg_ap = h.summary.ap;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Outcome arch_ordering(std::size_t iterations, std::size_t seeds) {
  const auto t0 = std::chrono::steady_clock::now();
  SceneConfig sc;
  sc.width = sc.height = 64;
  auto make = [&](std::uint64_t seed, std::size_t count) {
    sc.seed = seed;
    std::vector<LabeledImage> out;
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(label_sample(sample_id(i), generate_scene(scene_config_for(sc, i))));
    return out;
  };
  const auto train_set = make(7001, 300), test_set = make(7002, 60);
  Check c;
  std::size_t wins = 0;
  std::ostringstream os;
  double sum2 = 0.0, sum6 = 0.0;
  for (std::size_t s = 0; s < seeds; ++s) {
    const ArchRun a = run_arch("mc2_tiny", train_set, test_set, s + 1, iterations);
    const ArchRun b = run_arch("mc6d_tiny", train_set, test_set, s + 1, iterations);
    std::fprintf(stderr, "  seed %zu: mc2 AP %.4f loss %.4f -> %.4f (%.0f s); mc6d AP %.4f loss %.4f -> %.4f (%.0f s)\n", s + 1,
                 a.seg_ap, a.head_loss, a.tail_loss, a.seconds, b.seg_ap, b.head_loss, b.tail_loss, b.seconds);
    c.expect(a.tail_loss < a.head_loss, "mc2 seed " + std::to_string(s + 1) + " loss did not decrease");
    c.expect(b.tail_loss < b.head_loss, "mc6d seed " + std::to_string(s + 1) + " loss did not decrease");
    wins += b.seg_ap > a.seg_ap;
    sum2 += a.seg_ap;
    sum6 += b.seg_ap;
    os << (s ? ", " : "") << fmt("%.3f", b.seg_ap) << " vs " << fmt("%.3f", a.seg_ap);
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  const std::size_t need = seeds / 2 + 1;
  c.expect(wins >= need, "mc6d ahead on " + std::to_string(wins) + "/" + std::to_string(seeds) + " seeds");
  c.expect(minutes < 60.0, "budget " + fmt("%.1f min", minutes));
  return c.done("segmentation AP mc6d vs mc2 per seed: " + os.str() + " (means " + fmt("%.3f", sum6 / double(seeds)) + " vs " +
                fmt("%.3f", sum2 / double(seeds)) + "), " + std::to_string(wins) + "/" + std::to_string(seeds) +
                " wins, " + std::to_string(iterations) + " iterations, " + fmt("%.1f min", minutes));
}

// ---- 8 ----

Outcome corpus_statistics(std::size_t count) {
  const auto t0 = std::chrono::steady_clock::now();
  SceneConfig sc;
  sc.seed = 8;
  double jf_sum = 0.0, inst_sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    SceneStats st;
    const Sample s = generate_scene(scene_config_for(sc, i), &st);
    jf_sum += junction_fraction(s.instances);
    inst_sum += static_cast<double>(st.instances);
  }
  const double jf = jf_sum / double(count), inst = inst_sum / double(count);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Check c;
  c.expect(jf >= 0.90, "junction fraction " + fmt("%.4f", jf));
  c.expect(inst >= 15.0, "mean instances " + fmt("%.2f", inst));
  c.expect(count >= 500, "corpus of " + std::to_string(count) + " scenes");
  return c.done(std::to_string(count) + " scenes at " + std::to_string(sc.width) + "x" + std::to_string(sc.height) +
                ": junction fraction " + fmt("%.4f", jf) + ", mean instances " + fmt("%.2f", inst) + ", " + fmt("%.0f s", secs));
}

// ---- 9 ----

template <typename Fn>
bool throws_format(Fn fn) {
  try {
    fn();
  } catch (const FormatError&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

Outcome serialization() {
  Check c;
  const fs::path a = scratch("ser_a"), b = scratch("ser_b");
  SceneConfig sc;
  sc.width = 80;
  sc.height = 64;
  sc.instances_min = 5;
  sc.instances_max = 9;
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < 5; ++i) samples.push_back(generate_scene(scene_config_for(sc, i)));
  write_dataset(a, samples, scene_config_to_json(sc));
  const auto back = read_dataset(a);
  c.expect(back == samples, "dataset decode equals the generated samples");
  write_dataset(b, back, read_manifest(a).config_json);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    c.expect(slurp(e.path()) == slurp(b / e.path().filename()), "dataset file " + e.path().filename().string());
  }

  TrainConfig cfg;
  cfg.arch = preset_config("mc3d_tiny");
  cfg.crop_size = 32;
  cfg.batch_size = 2;
  cfg.adam.lr = 1e-3;
  std::vector<LabeledImage> data;
  for (std::size_t i = 0; i < 3; ++i) data.push_back(label_sample(sample_id(i), samples[i]));
  Model m = make_model(cfg.arch, 9);
  train(m, data, cfg);
  save_checkpoint(a / "m.ckpt", m);
  Model m2 = load_model(a / "m.ckpt");
  save_checkpoint(b / "m.ckpt", m2);
  const std::string bytes = slurp(a / "m.ckpt");
  c.expect(bytes == slurp(b / "m.ckpt"), "checkpoint save-load-save");

  std::string bad = bytes;
  bad[1] ^= 0x20;
  c.expect(throws_format([&] { deserialize_checkpoint(bad, m2); }), "checkpoint bad magic");
  bad = bytes;
  bad[4] = 9;
  c.expect(throws_format([&] { deserialize_checkpoint(bad, m2); }), "checkpoint bad version");
  c.expect(throws_format([&] { deserialize_checkpoint(bytes.substr(0, 40), m2); }), "checkpoint truncated");
  Model other = make_model(preset_config("mc2_tiny"), 1);
  c.expect(throws_format([&] { deserialize_checkpoint(bytes, other); }), "checkpoint architecture mismatch");

  const fs::path depth = a / (sample_id(0) + "_depth.raw");
  std::string raw = slurp(depth);
  raw[0] = 'X';
  std::ofstream(depth, std::ios::binary) << raw;
  c.expect(throws_format([&] { read_depth(depth); }), "depth bad magic");
  const fs::path png = a / (sample_id(1) + "_rgb.png");
  std::string img = slurp(png);
  img[1] = 'Q';
  std::ofstream(png, std::ios::binary) << img;
  c.expect(throws_format([&] { read_png_rgb(png); }), "png bad signature");
  std::ofstream(a / "manifest.json") << "{\"schema_version\": 99}";
  c.expect(throws_format([&] { read_manifest(a); }), "manifest bad schema");

  fs::remove_all(a);
  fs::remove_all(b);
  return c.done(std::to_string(files) + " dataset files and checkpoint byte-identical; 7 corruptions rejected");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::size_t arch_iterations = 1600, arch_seeds = 3, corpus = 500;
  app.add_option("--only", only, "Criteria to run (default all)")->delimiter(',');
  app.add_option("--arch-iterations", arch_iterations, "Training iterations per architecture run")->capture_default_str();
  app.add_option("--arch-seeds", arch_seeds, "Seeds for the architecture ordering")->capture_default_str();
  app.add_option("--corpus", corpus, "Scenes in the corpus statistics")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  if (only.empty()) only = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria{
      {1, {"parameter counts", parameter_counts}},
      {2, {"tolerance formula", tolerance_formula}},
      {3, {"gradient suite", gradient_suite}},
      {4, {"gt oracle equivalence", gt_oracle}},
      {5, {"metric oracle suite", metric_oracle}},
      {6, {"loss point checks", loss_checks}},
      {7, {"architecture ordering", [&] { return arch_ordering(arch_iterations, arch_seeds); }}},
      {8, {"corpus statistics", [&] { return corpus_statistics(corpus); }}},
      {9, {"serialization", serialization}},
  };
  int failed = 0;
  for (int k : only) {
    const auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", k);
      return 2;
    }
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d %s: %s - %s\n", k, it->second.first.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
