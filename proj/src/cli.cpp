#include "mspad/cli.hpp"

#include <filesystem>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mspad/backend.hpp"
#include "mspad/dataset.hpp"
#include "mspad/errors.hpp"
#include "mspad/evaluation.hpp"
#include "mspad/io.hpp"
#include "mspad/parallel.hpp"
#include "mspad/pipeline.hpp"
#include "mspad/splits.hpp"
#include "mspad/tiling.hpp"

namespace mspad {

namespace fs = std::filesystem;

namespace {

// Bad flag values discovered after CLI11 parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GlobalOptions {
  std::string dataset;
  std::string registry;
  std::string out;
  int verbose = 0;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string annotation_subdir;
  bool recursive = false;
};

struct PipelineOptions {
  std::string grid = "4x4";
  double overlap = 0.0;
  std::string tiled_classes = "damper";
  std::string resized_input = "512x512";
  std::string tiled_input;
  double fusion_iou = 0.5;
};

struct Options {
  GlobalOptions global;
  std::string root;  // per-subcommand positional, falls back to --dataset

  // slice
  std::string slice_classes;
  double min_visible = 0.25;

  // detect
  std::string mode = "mspad";
  std::string branch_a = "oracle";
  std::string branch_b = "oracle";
  bool keep_going = false;

  // eval
  std::string detections;
  std::string test_ids;
  bool curves = false;

  // eval + cv
  double iou = 0.5;
  std::string interp = "all-points";

  // cv
  int k = 5;
  double train_frac = 0.8;
  std::string original_backend = "oracle";
  std::string mspad_branch_a = "oracle";
  std::string mspad_branch_b = "oracle";

  PipelineOptions pipeline;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<ClassId> parse_classes(const std::string& list, const ClassRegistry& registry) {
  std::vector<ClassId> out;
  for (const auto& label : split_list(list)) {
    const auto id = registry.find(label);
    if (!id) throw UsageError(fmt::format("unknown class label '{}'", label));
    out.push_back(*id);
  }
  return out;
}

GridSpec parse_grid(const std::string& text, double overlap) {
  InputSize s;
  try {
    s = parse_input_size(text);
  } catch (const std::invalid_argument&) {
    throw UsageError(fmt::format("--grid expects ROWSxCOLS, got '{}'", text));
  }
  return GridSpec{s.width, s.height, overlap};
}

BackendDescriptor parse_backend(const std::string& text, const char* flag) {
  try {
    return BackendDescriptor::parse(text);
  } catch (const std::invalid_argument& e) {
    throw UsageError(fmt::format("{}: {}", flag, e.what()));
  }
}

PipelineConfig make_pipeline_config(const PipelineOptions& o, const ClassRegistry& registry,
                                    PipelineMode mode) {
  PipelineConfig c;
  c.mode = mode;
  c.grid = parse_grid(o.grid, o.overlap);
  c.routing = ClassRouting::from_tiled(registry, parse_classes(o.tiled_classes, registry));
  try {
    c.resized_branch_input = parse_input_size(o.resized_input);
    if (!o.tiled_input.empty()) c.tiled_branch_input = parse_input_size(o.tiled_input);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  c.fusion_nms_iou = o.fusion_iou;
  return c;
}

void add_pipeline_flags(CLI::App* sub, PipelineOptions& o) {
  sub->add_option("--grid", o.grid, "Tile grid as ROWSxCOLS")->capture_default_str();
  sub->add_option("--overlap", o.overlap, "Tile overlap in pixels")->capture_default_str()->check(CLI::NonNegativeNumber);
  sub->add_option("--tiled-classes", o.tiled_classes, "Comma-separated labels routed to the tiled branch")
      ->capture_default_str();
  sub->add_option("--resized-input", o.resized_input, "Model input of the resized branch (WxH)")
      ->capture_default_str();
  sub->add_option("--tiled-input", o.tiled_input, "Model input of the tiled branch (WxH); default: tile size")
      ->capture_default_str();
  sub->add_option("--fusion-iou", o.fusion_iou, "Class-wise NMS threshold when fusing branches")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
}

class Runner {
 public:
  Runner(const Options& o, std::ostream& out, std::ostream& err) : o_(o), out_(out), err_(err) {}

  ClassRegistry registry() const {
    return o_.global.registry.empty() ? ClassRegistry::plad()
                                      : ClassRegistry::from_file(o_.global.registry);
  }

  fs::path dataset_root() const {
    if (!o_.root.empty()) return o_.root;
    if (!o_.global.dataset.empty()) return o_.global.dataset;
    throw UsageError("no dataset root: pass it as an argument, via --dataset or MSPAD_DATASET_ROOT");
  }

  fs::path out_dir() const {
    if (o_.global.out.empty()) throw UsageError("--out is required for this subcommand");
    return o_.global.out;
  }

  DatasetIndex load(const ClassRegistry& reg) const {
    LoaderOptions lo;
    lo.annotation_subdir = o_.global.annotation_subdir;
    lo.recursive = o_.global.recursive;
    auto result = load_dataset(dataset_root(), reg, lo);
    if (!result.warnings.empty()) {
      err_ << fmt::format("{} annotation warning(s)\n", result.warnings.size());
      if (o_.global.verbose > 0)
        for (const auto& w : result.warnings) err_ << "warning: " << w << "\n";
    }
    if (o_.global.verbose > 0)
      err_ << fmt::format("loaded {} images, {} annotations\n", result.index.size(),
                          result.index.annotation_count());
    return std::move(result.index);
  }

  int stats() {
    const auto reg = registry();
    const auto index = load(reg);
    const auto stats = compute_stats(index);
    const std::string table = format_stats_table(stats);
    out_ << table;
    if (!o_.global.out.empty()) {
      write_file_atomic(out_dir() / "stats.txt", table);
      write_file_atomic(out_dir() / "stats.json", dump(to_json(stats)));
    }
    return kExitOk;
  }

  int slice() {
    const auto reg = registry();
    const auto index = load(reg);
    const GridSpec grid = parse_grid(o_.pipeline.grid, o_.pipeline.overlap);
    const auto classes = parse_classes(o_.slice_classes, reg);
    const TileProjectionPolicy policy{o_.min_visible};
    const fs::path dir = out_dir() / "slices";
    std::size_t tiles_written = 0;
    for (const auto& rec : index.images()) {
      const auto tiles = make_grid(rec.width, rec.height, grid);
      const auto projected = classes.empty()
                                 ? project_annotations(rec, tiles, policy)
                                 : project_annotations(rec, tiles, policy, std::span<const ClassId>(classes));
      Json jt = Json::array();
      for (std::size_t i = 0; i < tiles.size(); ++i) {
        Json anns = Json::array();
        for (const auto& a : projected[i].annotations)
          anns.push_back({{"label", reg.label(a.class_id)}, {"box", box_to_json(a.box)}});
        jt.push_back({{"tile_id", {tiles[i].tile_id.row, tiles[i].tile_id.col}},
                      {"region", box_to_json(tiles[i].region)},
                      {"annotations", std::move(anns)}});
      }
      const Json manifest{{"version", kFormatVersion},
                          {"image_id", rec.image_id},
                          {"width", rec.width},
                          {"height", rec.height},
                          {"grid", {{"rows", grid.rows}, {"cols", grid.cols}, {"overlap", grid.overlap}}},
                          {"min_visible_fraction", policy.min_visible_fraction},
                          {"tiles", std::move(jt)}};
      write_file_atomic(dir / (rec.image_id + ".json"), dump(manifest));
      tiles_written += tiles.size();
    }
    out_ << fmt::format("wrote {} manifests ({} tiles) to {}\n", index.size(), tiles_written,
                        dir.string());
    return kExitOk;
  }

  int detect() {
    const auto reg = registry();
    const auto index = load(reg);
    PipelineMode mode;
    if (o_.mode == "mspad") mode = PipelineMode::mspad;
    else if (o_.mode == "resize-only") mode = PipelineMode::resize_only;
    else throw UsageError(fmt::format("--mode must be mspad or resize-only, got '{}'", o_.mode));
    const PipelineConfig config = make_pipeline_config(o_.pipeline, reg, mode);
    auto a = make_backend(parse_backend(o_.branch_a, "--branch-a"), reg);
    auto b = make_backend(parse_backend(o_.branch_b, "--branch-b"), reg);

    const auto run = run_dataset(index, config, Backends{*a, *b},
                                 o_.keep_going ? FailurePolicy::keep_going : FailurePolicy::fail_fast);
    const fs::path dir = out_dir() / "detections";
    for (const auto& [id, dets] : run.detections) {
      const ImageRecord* rec = index.find(id);
      DetectionDocument doc{id, {RegionDetections{rec->frame(), dets}}};
      write_file_atomic(dir / (id + ".json"), dump(to_json(doc, reg)));
    }
    if (!run.failures.empty()) {
      Json failures = Json::object();
      for (const auto& [id, msg] : run.failures) {
        failures[id] = msg;
        err_ << "error: " << msg << "\n";
      }
      write_file_atomic(out_dir() / "failures.json",
                        dump({{"version", kFormatVersion}, {"failures", failures}}));
    }
    out_ << fmt::format("wrote detections for {} images to {}\n", run.detections.size(),
                        dir.string());
    return run.failures.empty() ? kExitOk : kExitDomainError;
  }

  EvalConfig eval_config() const {
    EvalConfig c;
    c.iou_threshold = o_.iou;
    try {
      c.interpolation = parse_interpolation(o_.interp);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return c;
  }

  int eval() {
    const auto reg = registry();
    DatasetIndex index = load(reg);
    auto dets = to_detection_map(read_detection_documents(o_.detections, reg));
    for (const auto& [id, _] : dets)
      if (!index.find(id)) throw EvalError(fmt::format("detections reference unknown image_id '{}'", id));
    if (!o_.test_ids.empty()) {
      const Json manifest = parse_json_file(o_.test_ids);
      const auto ids = manifest.at("test").get<std::vector<std::string>>();
      index = index.subset(ids);
      std::erase_if(dets, [&](const auto& kv) { return !index.find(kv.first); });
    }
    const auto report = evaluate(index, dets, eval_config());
    const std::string table = format_eval_table(report);
    out_ << table;
    if (!o_.global.out.empty()) {
      write_file_atomic(out_dir() / "eval.txt", table);
      write_file_atomic(out_dir() / "eval.json", dump(to_json(report, o_.curves)));
    }
    return kExitOk;
  }

  int cv() {
    const auto reg = registry();
    const auto index = load(reg);
    CVSpec spec;
    spec.k = o_.k;
    spec.base = SplitSpec{o_.train_frac, o_.global.seed};
    ExperimentArms arms;
    arms.original = make_pipeline_config(o_.pipeline, reg, PipelineMode::resize_only);
    arms.mspad = make_pipeline_config(o_.pipeline, reg, PipelineMode::mspad);
    arms.original_backend = parse_backend(o_.original_backend, "--original-backend");
    arms.mspad_resized_backend = parse_backend(o_.mspad_branch_a, "--mspad-branch-a");
    arms.mspad_tiled_backend = parse_backend(o_.mspad_branch_b, "--mspad-branch-b");

    const auto result = run_monte_carlo(index, spec, arms, eval_config());
    const fs::path dir = out_dir();
    for (const auto& s : result.splits)
      write_file_atomic(dir / "splits" / fmt::format("run_{}.json", s.run + 1), dump(to_json(s)));
    const std::string tables = format_comparison_tables(result.original, result.mspad);
    write_file_atomic(dir / "cv_report.txt", tables);
    write_file_atomic(dir / "cv_report.json", dump(to_json(result)));
    out_ << tables;
    return kExitOk;
  }

 private:
  const Options& o_;
  std::ostream& out_;
  std::ostream& err_;
};

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Multi-size tiled detection pipeline and evaluation toolkit", "mspad"};
  app.set_version_flag("--version", fmt::format("mspad {} (format version {})", kToolkitVersion,
                                                kFormatVersion));
  app.set_config("--config", "", "Re-run from a resolved_config.toml written by an earlier run");
  app.require_subcommand(1);
  app.add_option("--dataset", o.global.dataset, "Default dataset root")->envname("MSPAD_DATASET_ROOT");
  app.add_option("--registry", o.global.registry, "Class registry file (one label per line)");
  app.add_option("--out", o.global.out, "Output directory");
  app.add_flag("-v,--verbose", o.global.verbose, "Increase log verbosity");
  app.add_option("--seed", o.global.seed, "Master seed")->capture_default_str();
  app.add_option("--threads", o.global.threads, "Worker thread cap (0 = all available)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  app.add_option("--annotation-subdir", o.global.annotation_subdir,
                 "Annotation directory under the root (default: Annotations/ if present)");
  app.add_flag("--recursive", o.global.recursive, "Search annotation files recursively");

  auto* stats = app.add_subcommand("stats", "Dataset statistics table")->configurable();
  stats->add_option("root", o.root, "Dataset root");

  auto* slice = app.add_subcommand("slice", "Write per-image tile manifests")->configurable();
  slice->add_option("root", o.root, "Dataset root");
  slice->add_option("--grid", o.pipeline.grid, "Tile grid as ROWSxCOLS")->capture_default_str();
  slice->add_option("--overlap", o.pipeline.overlap, "Tile overlap in pixels")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  slice->add_option("--classes", o.slice_classes, "Comma-separated labels to project (default: all)");
  slice->add_option("--min-visible", o.min_visible, "Minimum visible area fraction")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));

  auto* detect = app.add_subcommand("detect", "Run the detection pipeline")->configurable();
  detect->add_option("root", o.root, "Dataset root");
  detect->add_option("--mode", o.mode, "mspad or resize-only")->capture_default_str();
  detect->add_option("--branch-a", o.branch_a, "Backend of the resized branch")->capture_default_str();
  detect->add_option("--branch-b", o.branch_b, "Backend of the tiled branch")->capture_default_str();
  detect->add_flag("--keep-going", o.keep_going, "Continue past per-image failures");
  add_pipeline_flags(detect, o.pipeline);

  auto* eval = app.add_subcommand("eval", "Evaluate detections against ground truth")->configurable();
  eval->add_option("root", o.root, "Ground-truth dataset root");
  eval->add_option("--detections", o.detections, "Detection document file or directory")->required();
  eval->add_option("--test-ids", o.test_ids, "Split manifest; evaluate only its test ids");
  eval->add_option("--iou", o.iou, "IoU matching threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  eval->add_option("--interp", o.interp, "all-points or eleven-point")->capture_default_str();
  eval->add_flag("--curves", o.curves, "Include PR curves in eval.json");

  auto* cv = app.add_subcommand("cv", "Monte Carlo cross-validation of both pipelines")->configurable();
  cv->add_option("root", o.root, "Dataset root");
  cv->add_option("--k", o.k, "Number of random splits")->capture_default_str()->check(CLI::PositiveNumber);
  cv->add_option("--train-frac", o.train_frac, "Training fraction")->capture_default_str();
  cv->add_option("--original-backend", o.original_backend, "Backend of the resize-only pipeline")
      ->capture_default_str();
  cv->add_option("--mspad-branch-a", o.mspad_branch_a, "Resized-branch backend")->capture_default_str();
  cv->add_option("--mspad-branch-b", o.mspad_branch_b, "Tiled-branch backend")->capture_default_str();
  cv->add_option("--iou", o.iou, "IoU matching threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  cv->add_option("--interp", o.interp, "all-points or eleven-point")->capture_default_str();
  add_pipeline_flags(cv, o.pipeline);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    err << app.help();
    return kExitUsage;
  }

  set_thread_limit(o.global.threads);
  Runner runner(o, out, err);
  try {
    if (!o.global.out.empty())
      write_file_atomic(fs::path(o.global.out) / "resolved_config.toml", app.config_to_str(true, false));
    if (*stats) return runner.stats();
    if (*slice) return runner.slice();
    if (*detect) return runner.detect();
    if (*eval) return runner.eval();
    if (*cv) return runner.cv();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomainError;
  } catch (const Json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomainError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomainError;
  }
  return kExitUsage;
}

}  // namespace mspad
