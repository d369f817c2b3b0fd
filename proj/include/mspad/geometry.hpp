#pragma once

#include <compare>
#include <optional>
#include <span>
#include <vector>

namespace mspad {

/// Index into the active ClassRegistry.
struct ClassId {
  int value = -1;

  constexpr auto operator<=>(const ClassId&) const = default;
};

/// Grid cell coordinates. (-1, -1) means "not a tile" (whole frame).
struct TileId {
  int row = -1;
  int col = -1;

  constexpr auto operator<=>(const TileId&) const = default;
};

/**
 * Axis-aligned closed rectangle in continuous pixel coordinates.
 *
 * Zero-area boxes are legal values (see degenerate()); they never survive
 * NMS and never match during evaluation. Comparison is lexicographic over
 * (x_min, y_min, x_max, y_max), which is also the NMS tie-break order.
 */
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  constexpr double width() const { return x_max - x_min; }
  constexpr double height() const { return y_max - y_min; }
  constexpr double area() const { return width() * height(); }
  constexpr bool degenerate() const { return !(area() > 0.0); }
  constexpr bool valid() const { return x_min <= x_max && y_min <= y_max; }
  constexpr double center_x() const { return 0.5 * (x_min + x_max); }
  constexpr double center_y() const { return 0.5 * (y_min + y_max); }

  constexpr auto operator<=>(const BBox&) const = default;
};

/// Which MS-PAD branch produced a detection.
enum class Branch { none, resized, tiled };

struct Provenance {
  Branch branch = Branch::none;
  TileId tile{};

  constexpr bool operator==(const Provenance&) const = default;
};

/// A class-labelled, scored detection.
struct ScoredBox {
  BBox box;
  ClassId class_id;
  double score = 0.0;
  Provenance provenance{};

  constexpr bool operator==(const ScoredBox&) const = default;
};

/// Area of the overlap of a and b (0 when disjoint or touching).
double intersection_area(const BBox& a, const BBox& b);

/// Intersection over union; 0 when the union has zero area.
double iou(const BBox& a, const BBox& b);

BBox translate(const BBox& b, double dx, double dy);

/// Intersection of b with region, or nullopt when it has zero area.
std::optional<BBox> clip(const BBox& b, const BBox& region);

/// Coordinates clamped into region. Unlike clip() this never drops the box.
BBox clamp(const BBox& b, const BBox& region);

/// NMS ranking: descending score, then ascending box, then class id.
bool ranks_before(const ScoredBox& a, const ScoredBox& b);

/// True when `kept` removes `candidate` at the given IoU threshold: same
/// class and a positive overlap with IoU >= threshold.
bool suppresses(const ScoredBox& kept, const ScoredBox& candidate,
                double iou_threshold);

/**
 * Greedy class-wise non-maximum suppression.
 *
 * Boxes are ranked with ranks_before(); a box is kept iff it is not
 * degenerate and no already-kept box of its class suppresses it. Output is
 * in rank order. The pairwise overlap mask is computed with OpenMP.
 */
std::vector<ScoredBox> nms(std::span<const ScoredBox> boxes,
                           double iou_threshold);

namespace serial {

/// Single-threaded reference for nms(); kept for tests and benchmarks.
std::vector<ScoredBox> nms(std::span<const ScoredBox> boxes,
                           double iou_threshold);

}  // namespace serial

}  // namespace mspad
