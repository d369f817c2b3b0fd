#include "mspad/geometry.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <tuple>

namespace mspad {

double intersection_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double iou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0.0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

BBox translate(const BBox& b, double dx, double dy) {
  return {b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy};
}

std::optional<BBox> clip(const BBox& b, const BBox& region) {
  const BBox out{std::max(b.x_min, region.x_min), std::max(b.y_min, region.y_min),
                 std::min(b.x_max, region.x_max), std::min(b.y_max, region.y_max)};
  if (out.x_max <= out.x_min || out.y_max <= out.y_min) return std::nullopt;
  return out;
}

BBox clamp(const BBox& b, const BBox& region) {
  auto cx = [&](double v) { return std::clamp(v, region.x_min, region.x_max); };
  auto cy = [&](double v) { return std::clamp(v, region.y_min, region.y_max); };
  return {cx(b.x_min), cy(b.y_min), cx(b.x_max), cy(b.y_max)};
}

bool ranks_before(const ScoredBox& a, const ScoredBox& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.box, a.class_id) < std::tie(b.box, b.class_id);
}

bool suppresses(const ScoredBox& kept, const ScoredBox& candidate,
                double iou_threshold) {
  if (kept.class_id != candidate.class_id) return false;
  const double overlap = iou(kept.box, candidate.box);
  return overlap > 0.0 && overlap >= iou_threshold;
}

namespace {

void check_threshold(double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::invalid_argument("nms: iou_threshold must lie in [0, 1]");
}

std::vector<ScoredBox> ranked(std::span<const ScoredBox> boxes) {
  std::vector<ScoredBox> out(boxes.begin(), boxes.end());
  std::stable_sort(out.begin(), out.end(), ranks_before);
  return out;
}

// Greedy scan of one class given its upper-triangular suppression mask
// (row i, bit j set when i would suppress j, j > i).
void greedy_scan(const std::vector<ScoredBox>& cls,
                 const std::vector<std::uint64_t>& mask, std::size_t words,
                 std::vector<std::size_t>& keep) {
  const std::size_t n = cls.size();
  std::vector<std::uint64_t> removed(words, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (removed[i / 64] >> (i % 64) & 1u) continue;
    if (cls[i].box.degenerate()) continue;
    keep.push_back(i);
    const std::uint64_t* row = mask.data() + i * words;
    for (std::size_t w = i / 64; w < words; ++w) removed[w] |= row[w];
  }
}

}  // namespace

std::vector<ScoredBox> nms(std::span<const ScoredBox> boxes,
                           double iou_threshold) {
  check_threshold(iou_threshold);
  const std::vector<ScoredBox> order = ranked(boxes);

  std::map<ClassId, std::vector<ScoredBox>> by_class;
  for (const auto& b : order) by_class[b.class_id].push_back(b);

  std::vector<ScoredBox> out;
  out.reserve(order.size());
  for (const auto& [cls_id, cls] : by_class) {
    const std::size_t n = cls.size();
    const std::size_t words = (n + 63) / 64;
    std::vector<std::uint64_t> mask(n * words, 0);
    const auto rows = static_cast<std::int64_t>(n);

#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t i = 0; i < rows; ++i) {
      std::uint64_t* row = mask.data() + static_cast<std::size_t>(i) * words;
      for (std::size_t j = static_cast<std::size_t>(i) + 1; j < n; ++j) {
        if (suppresses(cls[i], cls[j], iou_threshold))
          row[j / 64] |= std::uint64_t{1} << (j % 64);
      }
    }

    std::vector<std::size_t> keep;
    greedy_scan(cls, mask, words, keep);
    for (auto k : keep) out.push_back(cls[k]);
  }
  std::stable_sort(out.begin(), out.end(), ranks_before);
  return out;
}

namespace serial {

std::vector<ScoredBox> nms(std::span<const ScoredBox> boxes,
                           double iou_threshold) {
  check_threshold(iou_threshold);
  std::vector<ScoredBox> kept;
  for (const auto& candidate : ranked(boxes)) {
    if (candidate.box.degenerate()) continue;
    const bool dropped = std::any_of(kept.begin(), kept.end(), [&](const ScoredBox& k) {
      return suppresses(k, candidate, iou_threshold);
    });
    if (!dropped) kept.push_back(candidate);
  }
  return kept;
}

}  // namespace serial

}  // namespace mspad
