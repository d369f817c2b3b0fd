#include "mspad/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "mspad/errors.hpp"
#include "mspad/parallel.hpp"

namespace mspad {

std::string_view to_string(ApInterpolation interp) {
  return interp == ApInterpolation::all_points ? "all-points" : "eleven-point";
}

ApInterpolation parse_interpolation(std::string_view text) {
  if (text == "all-points") return ApInterpolation::all_points;
  if (text == "eleven-point") return ApInterpolation::eleven_point;
  throw std::invalid_argument(
      fmt::format("unknown interpolation '{}' (expected all-points or eleven-point)", text));
}

MatchResult match(std::span<const BBox> gt, std::span<const ScoredBox> detections,
                  double iou_threshold) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].score > detections[b].score;
  });

  MatchResult out{std::vector<bool>(detections.size(), false), std::vector<int>(gt.size(), -1)};
  for (const std::size_t d : order) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (out.gt_match[g] >= 0) continue;
      const double o = iou(gt[g], detections[d].box);
      if (o > best_iou) {
        best_iou = o;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= iou_threshold && best_iou > 0.0) {
      out.true_positive[d] = true;
      out.gt_match[static_cast<std::size_t>(best)] = static_cast<int>(d);
    }
  }
  return out;
}

PRCurve pr_curve(std::span<const RankedDecision> decisions, std::size_t num_gt) {
  std::vector<RankedDecision> sorted(decisions.begin(), decisions.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const RankedDecision& a, const RankedDecision& b) { return a.score > b.score; });
  PRCurve curve;
  curve.num_gt = num_gt;
  curve.points.reserve(sorted.size());
  std::size_t tp = 0, fp = 0;
  for (const auto& d : sorted) {
    (d.true_positive ? tp : fp) += 1;
    PRPoint p;
    p.tp = tp;
    p.fp = fp;
    p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    p.recall = num_gt == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(num_gt);
    curve.points.push_back(p);
  }
  return curve;
}

double average_precision(const PRCurve& curve, ApInterpolation interp) {
  if (curve.num_gt == 0) return curve.points.empty() ? 1.0 : 0.0;
  const auto& pts = curve.points;

  if (interp == ApInterpolation::eleven_point) {
    double sum = 0.0;
    for (int i = 0; i <= 10; ++i) {
      const double t = i / 10.0;
      double best = 0.0;
      for (const auto& p : pts)
        if (p.recall >= t) best = std::max(best, p.precision);
      sum += best;
    }
    return sum / 11.0;
  }

  // Sentinels at recall 0 and 1 with precision 0, then the running max from
  // the right gives the envelope.
  std::vector<double> rec{0.0};
  std::vector<double> prec{0.0};
  for (const auto& p : pts) {
    rec.push_back(p.recall);
    prec.push_back(p.precision);
  }
  rec.push_back(1.0);
  prec.push_back(0.0);
  for (std::size_t i = prec.size() - 1; i > 0; --i) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < rec.size(); ++i)
    if (rec[i] != rec[i - 1]) ap += (rec[i] - rec[i - 1]) * prec[i];
  return std::clamp(ap, 0.0, 1.0);
}

namespace {

EvalReport evaluate_impl(const DatasetIndex& index, const DetectionMap& detections,
                         const EvalConfig& config, bool parallel) {
  if (!(config.iou_threshold > 0.0 && config.iou_threshold <= 1.0))
    throw EvalError(fmt::format("iou threshold {} outside (0, 1]", config.iou_threshold));
  const auto& registry = index.registry();
  const std::size_t k = registry.size();
  for (const auto& [id, dets] : detections) {
    if (!index.find(id))
      throw EvalError(fmt::format("detections reference unknown image_id '{}'", id));
    for (const auto& d : dets)
      if (d.class_id.value < 0 || static_cast<std::size_t>(d.class_id.value) >= k)
        throw EvalError(fmt::format("image '{}': detection class id {} outside registry", id,
                                    d.class_id.value));
  }

  const auto& images = index.images();
  const std::size_t n = images.size();
  static const std::vector<ScoredBox> kNone;

  // Work item (class c, image i) at c * n + i.
  std::vector<MatchResult> matches(k * n);
  std::vector<std::vector<ScoredBox>> class_dets(k * n);
  std::vector<std::size_t> valid_gt(k * n, 0), ignored_gt(k * n, 0);

  parallel_for(
      k * n,
      [&](std::size_t item) {
        const std::size_t c = item / n;
        const std::size_t i = item % n;
        const ClassId cls{static_cast<int>(c)};
        std::vector<BBox> gt;
        for (const auto& a : images[i].annotations) {
          if (a.class_id != cls) continue;
          gt.push_back(a.box);
          (a.box.degenerate() ? ignored_gt : valid_gt)[item] += 1;
        }
        const auto it = detections.find(images[i].image_id);
        const auto& all = it == detections.end() ? kNone : it->second;
        for (const auto& d : all)
          if (d.class_id == cls) class_dets[item].push_back(d);
        matches[item] = match(gt, class_dets[item], config.iou_threshold);
      },
      parallel);

  EvalReport report;
  report.config = config;
  report.labels = registry.labels();
  for (std::size_t c = 0; c < k; ++c) {
    ClassEval ce;
    ce.class_id = ClassId{static_cast<int>(c)};
    ce.label = registry.labels()[c];
    std::vector<RankedDecision> decisions;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t item = c * n + i;
      ce.num_gt += valid_gt[item];
      ce.ignored_gt += ignored_gt[item];
      for (std::size_t d = 0; d < class_dets[item].size(); ++d)
        decisions.push_back({class_dets[item][d].score, matches[item].true_positive[d]});
    }
    ce.num_detections = decisions.size();
    ce.curve = pr_curve(decisions, ce.num_gt);
    if (!ce.curve.points.empty()) {
      ce.tp = ce.curve.points.back().tp;
      ce.fp = ce.curve.points.back().fp;
    }
    ce.no_ground_truth = ce.num_gt == 0;
    ce.ap = average_precision(ce.curve, config.interpolation);
    report.classes.push_back(std::move(ce));
  }
  double sum = 0.0;
  for (const auto& ce : report.classes) sum += ce.ap;
  report.map = report.classes.empty() ? 0.0 : sum / static_cast<double>(report.classes.size());
  return report;
}

}  // namespace

EvalReport evaluate(const DatasetIndex& ground_truth, const DetectionMap& detections,
                    const EvalConfig& config) {
  return evaluate_impl(ground_truth, detections, config, true);
}

namespace serial {

EvalReport evaluate(const DatasetIndex& ground_truth, const DetectionMap& detections,
                    const EvalConfig& config) {
  return evaluate_impl(ground_truth, detections, config, false);
}

}  // namespace serial

EvalReport report_from_aps(std::vector<std::string> labels, std::vector<double> aps,
                           const EvalConfig& config) {
  if (labels.size() != aps.size() || labels.empty())
    throw EvalError("report_from_aps: need one AP per label");
  EvalReport r;
  r.config = config;
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!(aps[i] >= 0.0 && aps[i] <= 1.0))
      throw EvalError(fmt::format("AP {} for '{}' outside [0, 1]", aps[i], labels[i]));
    ClassEval ce;
    ce.class_id = ClassId{static_cast<int>(i)};
    ce.label = labels[i];
    ce.ap = aps[i];
    sum += aps[i];
    r.classes.push_back(std::move(ce));
  }
  r.map = sum / static_cast<double>(aps.size());
  r.labels = std::move(labels);
  return r;
}

AggregateReport aggregate(std::span<const EvalReport> reports) {
  if (reports.empty()) throw EvalError("aggregate needs at least one report");
  AggregateReport out;
  out.labels = reports.front().labels;
  const std::size_t k = out.labels.size();
  out.mean_ap.assign(k, 0.0);
  for (const auto& r : reports) {
    if (r.labels != out.labels || r.classes.size() != k)
      throw EvalError("aggregate: reports use different class registries");
    for (std::size_t c = 0; c < k; ++c) out.mean_ap[c] += r.classes[c].ap;
    out.mean_map += r.map;
  }
  const auto runs = static_cast<double>(reports.size());
  for (auto& v : out.mean_ap) v /= runs;
  out.mean_map /= runs;
  out.runs.assign(reports.begin(), reports.end());
  return out;
}

std::string format_eval_table(const EvalReport& report) {
  std::string out = fmt::format("IoU threshold {} | interpolation {}\n",
                                report.config.iou_threshold, to_string(report.config.interpolation));
  out += fmt::format("{:<12} {:>7} {:>7} {:>7} {:>7} {:>7}\n", "Class", "AP", "GT", "TP", "FP",
                     "Dets");
  for (const auto& c : report.classes) {
    out += fmt::format("{:<12} {:>7.3f} {:>7} {:>7} {:>7} {:>7}{}\n", c.label, c.ap, c.num_gt, c.tp,
                       c.fp, c.num_detections, c.no_ground_truth ? "  (no ground truth)" : "");
  }
  out += fmt::format("{:<12} {:>7.3f}\n", "mAP", report.map);
  return out;
}

std::string format_comparison_tables(const AggregateReport& original, const AggregateReport& ours) {
  if (original.labels != ours.labels || original.runs.size() != ours.runs.size())
    throw EvalError("comparison tables need matching class lists and run counts");
  const std::size_t runs = ours.runs.size();
  std::string out = "Per-split AP\n";
  out += fmt::format("{:<12}", "");
  for (std::size_t r = 0; r < runs; ++r) out += fmt::format(" {:^19}", fmt::format("k = {}", r + 1));
  out += fmt::format("\n{:<12}", "");
  for (std::size_t r = 0; r < runs; ++r) out += fmt::format(" {:>9} {:>9}", "Original", "Ours");
  out += "\n";
  for (std::size_t c = 0; c < ours.labels.size(); ++c) {
    out += fmt::format("{:<12}", ours.labels[c]);
    for (std::size_t r = 0; r < runs; ++r)
      out += fmt::format(" {:>9.3f} {:>9.3f}", original.runs[r].classes[c].ap, ours.runs[r].classes[c].ap);
    out += "\n";
  }
  out += fmt::format("{:<12}", "mAP");
  for (std::size_t r = 0; r < runs; ++r)
    out += fmt::format(" {:>9.3f} {:>9.3f}", original.runs[r].map, ours.runs[r].map);
  out += "\n\nAverage over splits\n";
  out += fmt::format("{:<12} {:>9} {:>9}\n", "", "Original", "Ours");
  for (std::size_t c = 0; c < ours.labels.size(); ++c)
    out += fmt::format("{:<12} {:>9.3f} {:>9.3f}\n", ours.labels[c], original.mean_ap[c], ours.mean_ap[c]);
  out += fmt::format("{:<12} {:>9.3f} {:>9.3f}\n", "mAP", original.mean_map, ours.mean_map);
  return out;
}

Json to_json(const EvalReport& report, bool include_curves) {
  Json classes = Json::array();
  for (const auto& c : report.classes) {
    Json j{{"label", c.label},         {"ap", c.ap},
           {"num_gt", c.num_gt},       {"ignored_gt", c.ignored_gt},
           {"num_detections", c.num_detections},
           {"tp", c.tp},               {"fp", c.fp},
           {"no_ground_truth", c.no_ground_truth}};
    if (include_curves) {
      Json pts = Json::array();
      for (const auto& p : c.curve.points) pts.push_back({p.recall, p.precision});
      j["pr_curve"] = std::move(pts);
    }
    classes.push_back(std::move(j));
  }
  return Json{{"version", kFormatVersion},
              {"config",
               {{"iou_threshold", report.config.iou_threshold},
                {"interpolation", to_string(report.config.interpolation)}}},
              {"classes", classes},
              {"map", report.map}};
}

Json to_json(const AggregateReport& report) {
  Json per_class = Json::array();
  for (std::size_t c = 0; c < report.labels.size(); ++c)
    per_class.push_back({{"label", report.labels[c]}, {"ap", report.mean_ap[c]}});
  Json runs = Json::array();
  for (const auto& r : report.runs) runs.push_back(to_json(r));
  return Json{{"version", kFormatVersion},
              {"mean_ap", per_class},
              {"mean_map", report.mean_map},
              {"runs", runs}};
}

}  // namespace mspad
