#include "mcam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <limits>
#include <stdexcept>
#include <thread>

namespace mcam {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Felzenszwalb-Huttenlocher lower envelope of parabolas for one row/column.
void dt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<std::size_t>& v, std::vector<double>& z) {
  const std::size_t n = f.size();
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q)
    if (f[q] < kInf) {
      first = q;
      break;
    }
  if (first == n) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  v[0] = first;
  z[0] = -kInf;
  z[1] = kInf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    auto meet = [&](std::size_t p) {
      const double qd = static_cast<double>(q), pd = static_cast<double>(p);
      return ((f[q] + qd * qd) - (f[p] + pd * pd)) / (2.0 * qd - 2.0 * pd);
    };
    double s = meet(v[k]);
    while (s <= z[k]) s = meet(v[--k]);
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double qd = static_cast<double>(q);
    while (z[k + 1] < qd) ++k;
    const double dq = qd - static_cast<double>(v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

std::size_t bin_of(const std::vector<double>& thresholds, double value) {
  return static_cast<std::size_t>(std::upper_bound(thresholds.begin(), thresholds.end(), value) - thresholds.begin());
}

// Suffix sum: number of values that pass threshold index t.
std::uint64_t passing(const std::vector<std::uint64_t>& hist, std::size_t t) {
  std::uint64_t n = 0;
  for (std::size_t k = t + 1; k < hist.size(); ++k) n += hist[k];
  return n;
}

struct RecallPoint {
  double r, p;
};

// Piecewise-linear P(R) in ascending recall, starting at recall 0.
std::vector<RecallPoint> pr_polyline(const EvalCurve& c) {
  if (c.points.empty()) throw std::invalid_argument("metrics: empty curve");
  std::vector<RecallPoint> pts;
  for (auto it = c.points.rbegin(); it != c.points.rend(); ++it)
    pts.push_back({it->counts.recall(), it->counts.precision()});
  std::stable_sort(pts.begin(), pts.end(), [](const RecallPoint& a, const RecallPoint& b) { return a.r < b.r; });
  if (pts.front().r > 0.0) pts.insert(pts.begin(), RecallPoint{0.0, pts.front().p});
  return pts;
}

// Area under the polyline restricted to [lo, +inf).
double area_from(const std::vector<RecallPoint>& pts, double lo) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    RecallPoint a = pts[i - 1];
    const RecallPoint b = pts[i];
    if (b.r <= lo) continue;
    if (a.r < lo) {
      const double t = b.r > a.r ? (lo - a.r) / (b.r - a.r) : 0.0;
      a = {lo, a.p + t * (b.p - a.p)};
    }
    area += 0.5 * (a.p + b.p) * (b.r - a.r);
  }
  return area;
}

}  // namespace

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 1; i <= 99; ++i) t.push_back(i / 100.0);
  return t;
}

void EvalConfig::validate() const {
  if (nms) throw std::invalid_argument("eval config: non-maximum suppression is not supported");
  if (thresholds.empty()) throw std::invalid_argument("eval config: no thresholds");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0))
      throw std::invalid_argument("eval config: thresholds must lie in (0, 1)");
    if (i > 0 && thresholds[i] <= thresholds[i - 1])
      throw std::invalid_argument("eval config: thresholds must be strictly increasing");
  }
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw std::invalid_argument("eval config: tau must be finite and >= 0");
}

MatchCounts& MatchCounts::operator+=(const MatchCounts& o) {
  matched_pred += o.matched_pred;
  total_pred += o.total_pred;
  matched_gt += o.matched_gt;
  total_gt += o.total_gt;
  return *this;
}

double MatchCounts::precision() const {
  return total_pred == 0 ? 1.0 : static_cast<double>(matched_pred) / static_cast<double>(total_pred);
}

double MatchCounts::recall() const {
  return total_gt == 0 ? 1.0 : static_cast<double>(matched_gt) / static_cast<double>(total_gt);
}

double MatchCounts::f_score() const {
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double tolerance(std::size_t width, std::size_t height) {
  if (width < 1 || height < 1) throw std::invalid_argument("tolerance: width and height must be >= 1");
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  return 0.0075 * std::sqrt(w * w + h * h);
}

Grid<double> squared_distance_transform(const BinaryMap& m) {
  const std::size_t w = m.width, h = m.height;
  Grid<double> g(w, h, kInf);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) g[i] = 0.0;
  const std::size_t n = std::max(w, h);
  std::vector<double> f, d;
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  f.resize(h);
  d.resize(h);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) f[y] = g.at(x, y);
    dt_1d(f, d, v, z);
    for (std::size_t y = 0; y < h; ++y) g.at(x, y) = d[y];
  }
  f.resize(w);
  d.resize(w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) f[x] = g.at(x, y);
    dt_1d(f, d, v, z);
    for (std::size_t x = 0; x < w; ++x) g.at(x, y) = d[x];
  }
  return g;
}

Grid<double> euclidean_dt(const BinaryMap& m) {
  Grid<double> g = squared_distance_transform(m);
  for (double& v : g.data) v = std::sqrt(v);
  return g;
}

MatchCounts match_counts(const BinaryMap& pred, const BinaryMap& gt, double tau) {
  require_same_size(pred, gt, "match_counts");
  const double tau2 = tau * tau;
  const Grid<double> to_gt = squared_distance_transform(gt);
  const Grid<double> to_pred = squared_distance_transform(pred);
  MatchCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i]) {
      ++c.total_pred;
      c.matched_pred += to_gt[i] <= tau2;
    }
    if (gt[i]) {
      ++c.total_gt;
      c.matched_gt += to_pred[i] <= tau2;
    }
  }
  return c;
}

CurveAccumulator::CurveAccumulator(EvalConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t bins = cfg_.thresholds.size() + 1;
  pred_hist_.assign(bins, 0);
  matched_pred_hist_.assign(bins, 0);
  matched_gt_hist_.assign(bins, 0);
}

void CurveAccumulator::add(const ProbMap& prob, const BinaryMap& gt) {
  require_same_size(prob, gt, "pr_sweep");
  const double tau2 = cfg_.tau * cfg_.tau;
  const Grid<double> to_gt = squared_distance_transform(gt);

  // A GT pixel is matched at threshold t iff some pixel within tau has prob >= t, so it
  // suffices to bin the maximum probability over the tau-disk.
  const long r = static_cast<long>(std::floor(cfg_.tau));
  std::vector<std::pair<long, long>> disk;
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx)
      if (static_cast<double>(dx * dx + dy * dy) <= tau2) disk.emplace_back(dx, dy);

  const long w = static_cast<long>(prob.width), h = static_cast<long>(prob.height);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y * w + x);
      const std::size_t k = bin_of(cfg_.thresholds, prob[i]);
      ++pred_hist_[k];
      if (to_gt[i] <= tau2) ++matched_pred_hist_[k];
      if (!gt[i]) continue;
      ++total_gt_;
      double best = -kInf;
      for (auto [dx, dy] : disk) {
        const long u = x + dx, v = y + dy;
        if (u < 0 || v < 0 || u >= w || v >= h) continue;
        best = std::max(best, static_cast<double>(prob[static_cast<std::size_t>(v * w + u)]));
      }
      ++matched_gt_hist_[bin_of(cfg_.thresholds, best)];
    }
  }
  ++images_;
}

EvalCurve CurveAccumulator::curve() const {
  if (images_ == 0) throw std::invalid_argument("pr_sweep: no images");
  EvalCurve c;
  for (std::size_t t = 0; t < cfg_.thresholds.size(); ++t) {
    CurvePoint p;
    p.threshold = cfg_.thresholds[t];
    p.counts.total_pred = passing(pred_hist_, t);
    p.counts.matched_pred = passing(matched_pred_hist_, t);
    p.counts.matched_gt = passing(matched_gt_hist_, t);
    p.counts.total_gt = total_gt_;
    c.points.push_back(p);
  }
  return c;
}

void CurveAccumulator::merge(const CurveAccumulator& other) {
  if (other.cfg_.thresholds != cfg_.thresholds || other.cfg_.tau != cfg_.tau)
    throw std::invalid_argument("pr_sweep: merging accumulators with different settings");
  for (std::size_t k = 0; k < pred_hist_.size(); ++k) {
    pred_hist_[k] += other.pred_hist_[k];
    matched_pred_hist_[k] += other.matched_pred_hist_[k];
    matched_gt_hist_[k] += other.matched_gt_hist_[k];
  }
  total_gt_ += other.total_gt_;
  images_ += other.images_;
}

std::size_t env_threads() {
  const char* s = std::getenv("MCAM_THREADS");
  if (!s) return 1;
  char* end = nullptr;
  const long n = std::strtol(s, &end, 10);
  return (end != s && *end == '\0' && n > 0) ? static_cast<std::size_t>(n) : 1;
}

EvalCurve pr_sweep(const std::vector<ProbMap>& probs, const std::vector<BinaryMap>& gts, const EvalConfig& cfg) {
  if (probs.size() != gts.size()) throw std::invalid_argument("pr_sweep: prediction/GT count mismatch");
  if (probs.empty()) throw std::invalid_argument("pr_sweep: no images");
  const std::size_t n = std::min(cfg.threads ? cfg.threads : env_threads(), probs.size());
  std::vector<CurveAccumulator> parts(n, CurveAccumulator(cfg));
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t j) {
    try {
      for (std::size_t i = j; i < probs.size(); i += n) parts[j].add(probs[i], gts[i]);
    } catch (...) {
      errors[j] = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < n; ++j) pool.emplace_back(work, j);
  work(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (std::size_t j = 1; j < n; ++j) parts[0].merge(parts[j]);
  return parts[0].curve();
}

double ods(const EvalCurve& c) { return summarize(c).ods; }

double ap(const EvalCurve& c) { return area_from(pr_polyline(c), 0.0); }

double ap60(const EvalCurve& c) { return area_from(pr_polyline(c), 0.6) / 0.4; }

CurveSummary summarize(const EvalCurve& c) {
  if (c.points.empty()) throw std::invalid_argument("metrics: empty curve");
  CurveSummary s;
  s.ods = -1.0;
  for (const auto& p : c.points) {
    const double f = p.counts.f_score();
    if (f > s.ods) {
      s.ods = f;
      s.ods_threshold = p.threshold;
    }
  }
  s.ap = ap(c);
  s.ap60 = ap60(c);
  return s;
}

std::string curve_table(const EvalCurve& c) {
  std::string out = "threshold precision recall f\n";
  char line[96];
  for (const auto& p : c.points) {
    std::snprintf(line, sizeof line, "%.4f %.6f %.6f %.6f\n", p.threshold, p.counts.precision(), p.counts.recall(),
                  p.counts.f_score());
    out += line;
  }
  return out;
}

}  // namespace mcam
