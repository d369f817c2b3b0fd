#include "mspad/pipeline.hpp"

#include <algorithm>
#include <exception>

#include <fmt/format.h>

#include "mspad/errors.hpp"
#include "mspad/parallel.hpp"

namespace mspad {

ClassRouting ClassRouting::plad_default(const ClassRegistry& registry) {
  return from_tiled(registry, {registry.at("damper")});
}

ClassRouting ClassRouting::from_tiled(const ClassRegistry& registry, std::vector<ClassId> tiled) {
  ClassRouting r;
  std::sort(tiled.begin(), tiled.end());
  tiled.erase(std::unique(tiled.begin(), tiled.end()), tiled.end());
  r.tiled_classes = std::move(tiled);
  for (auto id : registry.ids())
    if (!std::binary_search(r.tiled_classes.begin(), r.tiled_classes.end(), id))
      r.resized_classes.push_back(id);
  return r;
}

void ClassRouting::validate(const ClassRegistry& registry) const {
  std::vector<int> seen(registry.size(), 0);
  for (const auto* list : {&tiled_classes, &resized_classes}) {
    for (auto id : *list) {
      if (id.value < 0 || static_cast<std::size_t>(id.value) >= registry.size())
        throw PipelineError(fmt::format("routing names class id {} outside the registry", id.value));
      ++seen[static_cast<std::size_t>(id.value)];
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (seen[i] == 0)
      throw PipelineError(fmt::format("class '{}' is routed to neither branch", registry.labels()[i]));
    if (seen[i] > 1)
      throw PipelineError(fmt::format("class '{}' is routed to both branches", registry.labels()[i]));
  }
}

namespace {

bool contains(const std::vector<ClassId>& set, ClassId id) {
  return std::find(set.begin(), set.end(), id) != set.end();
}

std::optional<std::span<const Annotation>> truth_of(const ImageRecord& r, bool pass_truth) {
  if (!pass_truth) return std::nullopt;
  return std::span<const Annotation>(r.annotations);
}

std::vector<ScoredBox> run_image_impl(const ImageRecord& record, const ClassRegistry& registry,
                                      const PipelineConfig& config, Backends backends,
                                      bool pass_truth, RunStats* stats, bool parallel_tiles) {
  const bool tiled_mode = config.mode == PipelineMode::mspad;
  if (tiled_mode) config.routing.validate(registry);
  if (!(config.fusion_nms_iou >= 0.0 && config.fusion_nms_iou <= 1.0))
    throw PipelineError("fusion_nms_iou must lie in [0, 1]");

  const BBox frame = record.frame();
  const auto truth = truth_of(record, pass_truth);
  const std::vector<ClassId> resized_classes =
      tiled_mode ? config.routing.resized_classes : registry.ids();

  std::vector<ScoredBox> merged;

  InferenceRequest whole{record.image_id, frame, config.resized_branch_input, resized_classes};
  std::vector<ScoredBox> a;
  try {
    a = backends.resized.infer(whole, truth);
  } catch (const Error& e) {
    throw PipelineError(fmt::format("image '{}': branch resized: {}", record.image_id, e.what()));
  }
  if (stats) ++stats->resized_requests;
  for (auto& d : a) {
    if (!contains(resized_classes, d.class_id)) continue;
    d.box = clamp(d.box, frame);
    d.provenance = {Branch::resized, TileId{}};
    merged.push_back(d);
  }

  if (tiled_mode) {
    std::vector<TileRegion> tiles;
    try {
      tiles = make_grid(record.width, record.height, config.grid);
    } catch (const Error& e) {
      throw PipelineError(fmt::format("image '{}': branch tiled: {}", record.image_id, e.what()));
    }
    std::vector<InferenceRequest> requests;
    requests.reserve(tiles.size());
    for (const auto& t : tiles) {
      const InputSize native{static_cast<int>(t.region.width()), static_cast<int>(t.region.height())};
      requests.push_back({record.image_id, t.region, config.tiled_branch_input.value_or(native),
                          config.routing.tiled_classes});
    }

    std::vector<std::vector<ScoredBox>> per_tile(tiles.size());
    if (backends.tiled.single_flight()) {
      try {
        per_tile = backends.tiled.infer_batch(requests, truth);
      } catch (const Error& e) {
        throw PipelineError(
            fmt::format("image '{}': branch tiled, tile batch: {}", record.image_id, e.what()));
      }
    } else {
      parallel_for(
          tiles.size(),
          [&](std::size_t i) {
            try {
              per_tile[i] = backends.tiled.infer(requests[i], truth);
            } catch (const Error& e) {
              throw PipelineError(fmt::format("image '{}': branch tiled, tile ({}, {}): {}",
                                              record.image_id, tiles[i].tile_id.row,
                                              tiles[i].tile_id.col, e.what()));
            }
          },
          parallel_tiles);
    }
    if (stats) stats->tile_requests += tiles.size();

    for (std::size_t i = 0; i < tiles.size(); ++i) {
      std::vector<ScoredBox> kept;
      for (const auto& d : per_tile[i])
        if (contains(config.routing.tiled_classes, d.class_id)) kept.push_back(d);
      for (auto& g : remap_detections(tiles[i].tile_id, tiles, kept)) {
        g.provenance.branch = Branch::tiled;
        merged.push_back(g);
      }
    }
  }

  return nms(merged, config.fusion_nms_iou);
}

DatasetRun run_dataset_impl(const DatasetIndex& index, const PipelineConfig& config,
                            Backends backends, FailurePolicy policy, bool pass_truth,
                            bool parallel) {
  const auto& images = index.images();
  const bool concurrent =
      parallel && !backends.resized.single_flight() && !backends.tiled.single_flight();

  std::vector<std::vector<ScoredBox>> results(images.size());
  std::vector<std::string> errors(images.size());
  std::vector<char> failed(images.size(), 0);

  auto work = [&](std::size_t i) {
    try {
      results[i] = run_image_impl(images[i], index.registry(), config, backends, pass_truth,
                                  nullptr, concurrent);
    } catch (const Error& e) {
      if (policy == FailurePolicy::fail_fast) throw;
      failed[i] = 1;
      errors[i] = e.what();
    }
  };
  if (concurrent) {
    parallel_for(images.size(), work);
  } else {
    for (std::size_t i = 0; i < images.size(); ++i) work(i);
  }

  DatasetRun run;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (failed[i]) run.failures.emplace(images[i].image_id, errors[i]);
    else run.detections.emplace(images[i].image_id, std::move(results[i]));
  }
  return run;
}

}  // namespace

std::vector<ScoredBox> run_image(const ImageRecord& record, const ClassRegistry& registry,
                                 const PipelineConfig& config, Backends backends,
                                 bool pass_truth, RunStats* stats) {
  return run_image_impl(record, registry, config, backends, pass_truth, stats,
                        !backends.tiled.single_flight());
}

DatasetRun run_dataset(const DatasetIndex& index, const PipelineConfig& config, Backends backends,
                       FailurePolicy policy, bool pass_truth) {
  return run_dataset_impl(index, config, backends, policy, pass_truth, true);
}

namespace serial {

DatasetRun run_dataset(const DatasetIndex& index, const PipelineConfig& config, Backends backends,
                       FailurePolicy policy, bool pass_truth) {
  return run_dataset_impl(index, config, backends, policy, pass_truth, false);
}

}  // namespace serial

}  // namespace mspad
