#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mspad/dataset.hpp"
#include "mspad/geometry.hpp"
#include "mspad/io.hpp"

namespace mspad {

enum class ApInterpolation { all_points, eleven_point };

std::string_view to_string(ApInterpolation interp);
/// "all-points" or "eleven-point"; throws std::invalid_argument.
ApInterpolation parse_interpolation(std::string_view text);

struct EvalConfig {
  double iou_threshold = 0.5;
  ApInterpolation interpolation = ApInterpolation::all_points;

  bool operator==(const EvalConfig&) const = default;
};

/// Outcome of matching one class on one image.
struct MatchResult {
  std::vector<bool> true_positive;  // per detection, input order
  std::vector<int> gt_match;        // per GT: matching detection index or -1
};

/**
 * Greedy matching in descending score order (stable for equal scores).
 * Each detection takes the still-unmatched GT with the highest IoU (lowest
 * index on ties) when that IoU reaches the threshold; otherwise it is a
 * false positive.
 */
MatchResult match(std::span<const BBox> gt, std::span<const ScoredBox> detections,
                  double iou_threshold);

/// One pooled detection: its score and whether it matched.
struct RankedDecision {
  double score = 0.0;
  bool true_positive = false;
};

struct PRPoint {
  double recall = 0.0;
  double precision = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
};

/// Precision/recall after each detection of the descending-score sweep.
struct PRCurve {
  std::size_t num_gt = 0;
  std::vector<PRPoint> points;
};

/// Sorts decisions by descending score (stable) and sweeps them.
PRCurve pr_curve(std::span<const RankedDecision> decisions, std::size_t num_gt);

/**
 * AP of a curve. all-points: area under the monotone precision envelope.
 * eleven-point: mean envelope precision at recall 0, 0.1, ..., 1.
 * With no ground truth the AP is 1 when there are also no detections and 0
 * otherwise.
 */
double average_precision(const PRCurve& curve, ApInterpolation interp);

struct ClassEval {
  ClassId class_id;
  std::string label;
  double ap = 0.0;
  std::size_t num_gt = 0;
  /// Zero-area GT boxes left out of num_gt (they can never be matched).
  std::size_t ignored_gt = 0;
  std::size_t num_detections = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  /// Set when the class has no GT in the evaluated images.
  bool no_ground_truth = false;
  PRCurve curve;
};

struct EvalReport {
  EvalConfig config;
  std::vector<std::string> labels;
  std::vector<ClassEval> classes;
  double map = 0.0;
};

using DetectionMap = std::map<std::string, std::vector<ScoredBox>>;

/**
 * Per-class AP pooled over every image of `ground_truth`, plus the
 * unweighted mean. Images without an entry in `detections` count as having
 * none. Matching runs per (class, image) in parallel.
 *
 * Throws EvalError when a detection names an image outside the index or a
 * class outside the registry.
 */
EvalReport evaluate(const DatasetIndex& ground_truth, const DetectionMap& detections,
                    const EvalConfig& config = {});

/// Builds a report from per-class AP values alone (tables, fixtures).
EvalReport report_from_aps(std::vector<std::string> labels, std::vector<double> aps,
                           const EvalConfig& config = {});

struct AggregateReport {
  std::vector<std::string> labels;
  std::vector<double> mean_ap;  // per class, over runs
  double mean_map = 0.0;        // mean of per-run mAPs
  std::vector<EvalReport> runs;
};

/// Arithmetic means over the runs. Throws EvalError for an empty list or
/// runs with different class lists.
AggregateReport aggregate(std::span<const EvalReport> reports);

std::string format_eval_table(const EvalReport& report);

/// Per-run table (class rows, one Original/Ours column pair per run) and
/// side-by-side averages, both with a trailing mAP row.
std::string format_comparison_tables(const AggregateReport& original,
                                     const AggregateReport& ours);

Json to_json(const EvalReport& report, bool include_curves = false);
Json to_json(const AggregateReport& report);

namespace serial {

/// Single-threaded reference for evaluate().
EvalReport evaluate(const DatasetIndex& ground_truth, const DetectionMap& detections,
                    const EvalConfig& config = {});

}  // namespace serial

}  // namespace mspad
