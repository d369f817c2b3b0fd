#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mspad/backend.hpp"
#include "mspad/dataset.hpp"
#include "mspad/geometry.hpp"
#include "mspad/tiling.hpp"

namespace mspad {

/// Which classes go to the grid-tiled branch; everything else goes to the
/// resized full-frame branch.
struct ClassRouting {
  std::vector<ClassId> tiled_classes;
  std::vector<ClassId> resized_classes;

  /// damper tiled, the other four resized.
  static ClassRouting plad_default(const ClassRegistry& registry);
  /// Routes `tiled` to the tiled branch and the rest of the registry to
  /// the resized branch.
  static ClassRouting from_tiled(const ClassRegistry& registry, std::vector<ClassId> tiled);

  /// Throws PipelineError unless the subsets are disjoint and cover the
  /// registry.
  void validate(const ClassRegistry& registry) const;
};

enum class PipelineMode { mspad, resize_only };

struct PipelineConfig {
  PipelineMode mode = PipelineMode::mspad;
  ClassRouting routing;
  GridSpec grid{};
  InputSize resized_branch_input{512, 512};
  /// Input size sent with tile requests; nullopt means the tile's own size.
  std::optional<InputSize> tiled_branch_input;
  double fusion_nms_iou = 0.5;
};

/// Per-image counters, mostly for tests and logs.
struct RunStats {
  std::size_t resized_requests = 0;
  std::size_t tile_requests = 0;
};

/// The two detectors of a run. In resize-only mode only `resized` is used.
struct Backends {
  Backend& resized;
  Backend& tiled;
};

/**
 * Runs one image through the pipeline.
 *
 * Branch A sees the whole frame and keeps resized-branch classes; branch B
 * sees every grid tile and keeps tiled-branch classes, remapped to global
 * coordinates. The union goes through class-wise NMS at fusion_nms_iou and
 * comes out sorted by descending score, each detection tagged with its
 * branch and tile. In resize-only mode all classes go through branch A and
 * no tile is requested.
 *
 * `truth` is forwarded to the backends (oracle kinds need it). Backend
 * failures are rethrown as PipelineError naming image, branch and tile.
 */
std::vector<ScoredBox> run_image(const ImageRecord& record, const ClassRegistry& registry,
                                 const PipelineConfig& config, Backends backends,
                                 bool pass_truth = true, RunStats* stats = nullptr);

enum class FailurePolicy { fail_fast, keep_going };

struct DatasetRun {
  std::map<std::string, std::vector<ScoredBox>> detections;
  /// image_id -> message, only populated under keep_going.
  std::map<std::string, std::string> failures;
};

/// run_image over every image. Images run in parallel unless a backend is
/// single-flight; results do not depend on completion order.
DatasetRun run_dataset(const DatasetIndex& index, const PipelineConfig& config, Backends backends,
                       FailurePolicy policy = FailurePolicy::fail_fast, bool pass_truth = true);

namespace serial {

/// One image at a time, tiles in order. Reference for run_dataset().
DatasetRun run_dataset(const DatasetIndex& index, const PipelineConfig& config, Backends backends,
                       FailurePolicy policy = FailurePolicy::fail_fast, bool pass_truth = true);

}  // namespace serial

}  // namespace mspad
