#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mcam/image.hpp"

namespace mcam {

using ProbMap = Grid<float>;

// .01, .02, ..., .99
std::vector<double> default_thresholds();

struct EvalConfig {
  std::vector<double> thresholds = default_thresholds();
  double tau = 0.0;
  bool nms = false;
  // Worker threads for pr_sweep; 0 reads MCAM_THREADS (default 1).
  std::size_t threads = 0;

  void validate() const;
};

struct MatchCounts {
  std::uint64_t matched_pred = 0;
  std::uint64_t total_pred = 0;
  std::uint64_t matched_gt = 0;
  std::uint64_t total_gt = 0;

  MatchCounts& operator+=(const MatchCounts& o);
  bool operator==(const MatchCounts&) const = default;
  // Empty prediction has precision 1; empty ground truth has recall 1.
  double precision() const;
  double recall() const;
  double f_score() const;
};

struct CurvePoint {
  double threshold = 0.0;
  MatchCounts counts;
};

struct EvalCurve {
  std::vector<CurvePoint> points;  // increasing threshold
};

struct CurveSummary {
  double ods = 0.0;
  double ods_threshold = 0.0;
  double ap = 0.0;
  double ap60 = 0.0;
};

// 0.0075 * diagonal.
double tolerance(std::size_t width, std::size_t height);

// Exact squared distance to the nearest positive; +inf everywhere if there is none.
Grid<double> squared_distance_transform(const BinaryMap& m);
Grid<double> euclidean_dt(const BinaryMap& m);

MatchCounts match_counts(const BinaryMap& pred, const BinaryMap& gt, double tau);

// Dataset-level sweep, fed one image at a time.
class CurveAccumulator {
 public:
  explicit CurveAccumulator(EvalConfig cfg);
  void add(const ProbMap& prob, const BinaryMap& gt);
  std::size_t images() const { return images_; }
  // Folds another accumulator with the same thresholds into this one.
  void merge(const CurveAccumulator& other);
  EvalCurve curve() const;

 private:
  EvalConfig cfg_;
  // Histogram bin k counts values v with exactly k thresholds <= v.
  std::vector<std::uint64_t> pred_hist_, matched_pred_hist_, matched_gt_hist_;
  std::uint64_t total_gt_ = 0;
  std::size_t images_ = 0;
};

// MCAM_THREADS as a positive integer, 1 when unset or invalid.
std::size_t env_threads();

EvalCurve pr_sweep(const std::vector<ProbMap>& probs, const std::vector<BinaryMap>& gts, const EvalConfig& cfg);

double ods(const EvalCurve& c);
double ap(const EvalCurve& c);
double ap60(const EvalCurve& c);
CurveSummary summarize(const EvalCurve& c);

// "threshold precision recall f" per line, with a header.
std::string curve_table(const EvalCurve& c);

}  // namespace mcam
