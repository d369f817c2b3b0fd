#include "mspad/tiling.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mspad/errors.hpp"

namespace mspad {

namespace {

// Cell boundaries along one axis: n+1 cut positions from 0 to extent.
std::vector<double> cuts(double extent, int n) {
  const double cell = std::floor(extent / n);
  std::vector<double> out(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = cell * i;
  out.back() = extent;
  return out;
}

bool contains_point(const BBox& r, double x, double y) {
  return x >= r.x_min && x <= r.x_max && y >= r.y_min && y <= r.y_max;
}

}  // namespace

std::vector<TileRegion> make_grid(double width, double height, const GridSpec& spec) {
  if (!(width > 0.0) || !(height > 0.0))
    throw TilingError(fmt::format("frame must be positive, got {}x{}", width, height));
  if (spec.rows < 1 || spec.cols < 1)
    throw TilingError(fmt::format("grid must be at least 1x1, got {}x{}", spec.rows, spec.cols));
  if (!(spec.overlap >= 0.0)) throw TilingError("grid overlap must be >= 0");
  if (std::floor(width / spec.cols) < 1.0 || std::floor(height / spec.rows) < 1.0) {
    throw TilingError(fmt::format("{}x{} grid is finer than the {}x{} frame", spec.rows,
                                  spec.cols, width, height));
  }

  const auto xs = cuts(width, spec.cols);
  const auto ys = cuts(height, spec.rows);
  const BBox frame{0.0, 0.0, width, height};
  std::vector<TileRegion> tiles;
  tiles.reserve(static_cast<std::size_t>(spec.rows * spec.cols));
  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) {
      BBox cell{xs[static_cast<std::size_t>(c)], ys[static_cast<std::size_t>(r)],
                xs[static_cast<std::size_t>(c) + 1], ys[static_cast<std::size_t>(r) + 1]};
      if (spec.overlap > 0.0) {
        cell = clamp({cell.x_min - spec.overlap, cell.y_min - spec.overlap,
                      cell.x_max + spec.overlap, cell.y_max + spec.overlap},
                     frame);
      }
      tiles.push_back({TileId{r, c}, cell});
    }
  }
  return tiles;
}

std::vector<TileAnnotations> project_annotations(const ImageRecord& record,
                                                 std::span<const TileRegion> tiles,
                                                 const TileProjectionPolicy& policy,
                                                 std::optional<std::span<const ClassId>> classes) {
  if (!(policy.min_visible_fraction > 0.0 && policy.min_visible_fraction <= 1.0))
    throw TilingError("min_visible_fraction must lie in (0, 1]");

  auto selected = [&](ClassId id) {
    return !classes || std::find(classes->begin(), classes->end(), id) != classes->end();
  };

  std::vector<TileAnnotations> out;
  out.reserve(tiles.size());
  for (const auto& t : tiles) out.push_back({t.tile_id, {}});

  for (const auto& a : record.annotations) {
    if (!selected(a.class_id)) continue;
    if (a.box.degenerate()) {
      for (std::size_t i = 0; i < tiles.size(); ++i) {
        const BBox& r = tiles[i].region;
        if (!contains_point(r, a.box.x_min, a.box.y_min)) continue;
        const BBox local = translate(clamp(a.box, r), -r.x_min, -r.y_min);
        out[i].annotations.push_back({a.class_id, local});
        break;
      }
      continue;
    }
    const double area = a.box.area();
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      const BBox& r = tiles[i].region;
      const auto piece = clip(a.box, r);
      if (!piece || piece->area() / area < policy.min_visible_fraction) continue;
      out[i].annotations.push_back({a.class_id, translate(*piece, -r.x_min, -r.y_min)});
    }
  }
  return out;
}

std::vector<ScoredBox> remap_detections(TileId tile_id, std::span<const TileRegion> tiles,
                                        std::span<const ScoredBox> detections) {
  const auto it = std::find_if(tiles.begin(), tiles.end(),
                               [&](const TileRegion& t) { return t.tile_id == tile_id; });
  if (it == tiles.end())
    throw TilingError(fmt::format("unknown tile ({}, {})", tile_id.row, tile_id.col));

  BBox frame{0.0, 0.0, 0.0, 0.0};
  for (const auto& t : tiles) {
    frame.x_max = std::max(frame.x_max, t.region.x_max);
    frame.y_max = std::max(frame.y_max, t.region.y_max);
  }

  std::vector<ScoredBox> out;
  out.reserve(detections.size());
  for (const auto& d : detections) {
    ScoredBox g = d;
    g.box = clamp(translate(d.box, it->region.x_min, it->region.y_min), frame);
    g.provenance.tile = tile_id;
    out.push_back(g);
  }
  return out;
}

}  // namespace mspad
