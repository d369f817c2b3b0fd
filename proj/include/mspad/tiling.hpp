#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mspad/dataset.hpp"
#include "mspad/geometry.hpp"

namespace mspad {

/// rows x cols grid. overlap (pixels) grows every cell on each side before
/// clamping to the frame; with overlap 0 the cells partition the frame.
struct GridSpec {
  int rows = 4;
  int cols = 4;
  double overlap = 0.0;

  bool operator==(const GridSpec&) const = default;
};

struct TileRegion {
  TileId tile_id;
  BBox region;  // global image coordinates

  bool operator==(const TileRegion&) const = default;
};

struct TileProjectionPolicy {
  /// Minimum clipped-area / original-area for an annotation to be kept in
  /// a tile. Must lie in (0, 1].
  double min_visible_fraction = 0.25;
};

struct TileAnnotations {
  TileId tile_id;
  std::vector<Annotation> annotations;  // tile-local coordinates
};

/**
 * Splits a width x height frame into a row-major list of tiles.
 *
 * Every column but the last is floor(width / cols) wide and the last one
 * absorbs the remainder; rows likewise. Throws TilingError when a cell
 * would be narrower than one pixel or the grid is invalid.
 */
std::vector<TileRegion> make_grid(double width, double height, const GridSpec& spec);

/**
 * Projects annotations of the selected classes (all classes when
 * `classes` is nullopt) into every tile that keeps at least
 * min_visible_fraction of their area. Kept boxes are clipped to the tile
 * and expressed in tile-local coordinates.
 *
 * Zero-area annotations have no visible fraction; they go to the first
 * tile whose closed region contains their top-left corner.
 *
 * Output has one entry per tile, in tile order.
 */
std::vector<TileAnnotations> project_annotations(const ImageRecord& record,
                                                 std::span<const TileRegion> tiles,
                                                 const TileProjectionPolicy& policy,
                                                 std::optional<std::span<const ClassId>> classes = std::nullopt);

/**
 * Moves tile-local detections into global coordinates, clamps them to the
 * frame (the union of all tiles) and stamps the tile on their provenance.
 * Throws TilingError for an unknown tile id.
 */
std::vector<ScoredBox> remap_detections(TileId tile_id, std::span<const TileRegion> tiles,
                                        std::span<const ScoredBox> detections);

}  // namespace mspad
