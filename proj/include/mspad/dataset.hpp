#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mspad/geometry.hpp"

namespace mspad {

/**
 * Ordered set of class labels; a label's position is its ClassId.
 *
 * Lookup is case-insensitive and ignores surrounding whitespace, so
 * "Damper " and "damper" name the same class.
 */
class ClassRegistry {
 public:
  /// Throws DatasetError on empty or duplicate labels.
  explicit ClassRegistry(std::vector<std::string> labels);

  /// tower, insulator, spacer, plate, damper.
  static ClassRegistry plad();

  /// One label per line; blank lines and '#' comments are ignored.
  static ClassRegistry from_file(const std::filesystem::path& path);

  std::size_t size() const { return labels_.size(); }
  const std::string& label(ClassId id) const;
  std::optional<ClassId> find(std::string_view label) const;
  /// Like find() but throws DatasetError for unknown labels.
  ClassId at(std::string_view label) const;
  std::vector<ClassId> ids() const;
  const std::vector<std::string>& labels() const { return labels_; }

  bool operator==(const ClassRegistry&) const = default;

 private:
  std::vector<std::string> labels_;
};

struct Annotation {
  ClassId class_id;
  BBox box;

  bool operator==(const Annotation&) const = default;
};

struct ImageRecord {
  std::string image_id;
  double width = 0.0;
  double height = 0.0;
  std::vector<Annotation> annotations;
  std::string source_path;

  BBox frame() const { return {0.0, 0.0, width, height}; }

  bool operator==(const ImageRecord&) const = default;
};

struct ParsedAnnotation {
  ImageRecord record;
  std::vector<std::string> warnings;
};

/**
 * Parses one Pascal-VOC style annotation document.
 *
 * image_id is the stem of <filename>. Boxes overshooting the frame are
 * clamped and reported; labels missing from the registry are skipped and
 * reported.
 *
 * Throws ParseError (malformed XML or number), StructuralError (missing
 * <annotation> or <size>, non-positive size) or AnnotationError (inverted
 * box).
 */
ParsedAnnotation parse_annotation_file(std::string_view content,
                                       const ClassRegistry& registry,
                                       std::string source_path = {});

/// Writes a VOC document that parses back to an identical record (apart
/// from source_path, which is not part of the document).
std::string serialize_annotation(const ImageRecord& record,
                                 const ClassRegistry& registry);

/// Immutable, id-sorted collection of image records.
class DatasetIndex {
 public:
  DatasetIndex() : registry_(ClassRegistry::plad()) {}
  /// Sorts by image_id; throws DatasetError on duplicate ids.
  DatasetIndex(ClassRegistry registry, std::vector<ImageRecord> images);

  const ClassRegistry& registry() const { return registry_; }
  const std::vector<ImageRecord>& images() const { return images_; }
  std::size_t size() const { return images_.size(); }
  bool empty() const { return images_.empty(); }
  std::size_t annotation_count() const;

  const ImageRecord* find(std::string_view image_id) const;
  /// Records whose ids are listed; throws DatasetError for unknown ids.
  DatasetIndex subset(std::span<const std::string> image_ids) const;
  std::vector<std::string> ids() const;

 private:
  ClassRegistry registry_;
  std::vector<ImageRecord> images_;
};

/// Where load_dataset() looks for annotation files under the root.
struct LoaderOptions {
  /// Sub-directory holding the XML files. Empty means: use "Annotations"
  /// when it exists, else the root itself.
  std::string annotation_subdir;
  std::string extension = ".xml";
  bool recursive = false;
};

struct LoadResult {
  DatasetIndex index;
  std::vector<std::string> warnings;
};

/// Loads every annotation file; image_id is the file stem. Files are parsed
/// in parallel. Throws DatasetError for an unreadable root or duplicate
/// stems; parse errors are rethrown with the file path prepended.
LoadResult load_dataset(const std::filesystem::path& root,
                        const ClassRegistry& registry,
                        const LoaderOptions& options = {});

struct ClassStats {
  ClassId class_id;
  std::string label;
  std::size_t instances = 0;
  double instances_per_image = 0.0;
  double mean_area = 0.0;
  /// Population standard deviation (divide by N).
  double stddev_area = 0.0;
};

struct DatasetStats {
  std::vector<ClassStats> classes;
  std::size_t total_instances = 0;
  std::size_t images = 0;
  double instances_per_image = 0.0;
};

/// Per-class counts, density and box-area moments. Throws DatasetError for
/// an empty index.
DatasetStats compute_stats(const DatasetIndex& index);

/// Plain-text table with the columns Instances, Instances per image,
/// Average Area (px), Standard Deviation (px).
std::string format_stats_table(const DatasetStats& stats);

}  // namespace mspad
