#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mspad/dataset.hpp"
#include "mspad/geometry.hpp"

namespace mspad {

inline constexpr const char* kToolkitVersion = "1.0.0";
/// Version stamped into every machine-readable document.
inline constexpr int kFormatVersion = 1;

using Json = nlohmann::json;

/// Detections for one image, grouped by the region they were produced for.
/// Boxes are region-local.
struct RegionDetections {
  BBox region;
  std::vector<ScoredBox> detections;
};

struct DetectionDocument {
  std::string image_id;
  std::vector<RegionDetections> regions;
};

/// Canonical "x_min,y_min,x_max,y_max" key (shortest round-trip decimals).
std::string region_key(const BBox& region);
/// Inverse of region_key(); throws Error on malformed keys.
BBox parse_region_key(const std::string& key);

Json box_to_json(const BBox& box);
BBox box_from_json(const Json& j);

Json detection_to_json(const ScoredBox& d, const ClassRegistry& registry);
/// Throws Error for unknown labels, malformed boxes or scores outside [0,1].
ScoredBox detection_from_json(const Json& j, const ClassRegistry& registry);

Json to_json(const DetectionDocument& doc, const ClassRegistry& registry);
DetectionDocument detection_document_from_json(const Json& j, const ClassRegistry& registry);

/// Reads one document file or every *.json in a directory. Throws Error
/// on I/O or schema problems (the message names the file).
std::vector<DetectionDocument> read_detection_documents(const std::filesystem::path& path,
                                                        const ClassRegistry& registry);

/// Flattens documents into image_id -> global-coordinate detections.
/// Throws Error when two documents name the same image.
std::map<std::string, std::vector<ScoredBox>> to_detection_map(
    const std::vector<DetectionDocument>& docs);

/// Pretty-printed JSON with a trailing newline.
std::string dump(const Json& j);

Json parse_json_file(const std::filesystem::path& path);

/// Writes via a sibling temp file and rename(), creating parent
/// directories. Readers never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

Json to_json(const DatasetStats& stats);

}  // namespace mspad
