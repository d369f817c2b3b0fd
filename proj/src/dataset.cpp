#include "mspad/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <fmt/format.h>

#include "mspad/errors.hpp"
#include "mspad/parallel.hpp"

namespace mspad {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::string_view trim(std::string_view s) {
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string fold(std::string_view s) {
  std::string out(trim(s));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

double parse_number(const pt::ptree& parent, const std::string& key,
                    const std::string& context) {
  const auto child = parent.get_child_optional(key);
  if (!child) throw StructuralError(fmt::format("missing element <{}> in {}", key, context));
  const std::string raw = child->get_value<std::string>();
  const std::string_view text = trim(raw);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
    throw ParseError(fmt::format("{}/{}: '{}' is not a number", context, key, raw), 0,
                     context + "/" + key);
  }
  return value;
}

}  // namespace

// ---------------------------------------------------------------------------
// ClassRegistry

ClassRegistry::ClassRegistry(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) throw DatasetError("class registry must not be empty");
  std::vector<std::string> folded;
  for (auto& l : labels_) {
    l = std::string(trim(l));
    if (l.empty()) throw DatasetError("class registry contains an empty label");
    folded.push_back(fold(l));
  }
  std::sort(folded.begin(), folded.end());
  if (auto dup = std::adjacent_find(folded.begin(), folded.end()); dup != folded.end())
    throw DatasetError(fmt::format("duplicate class label '{}'", *dup));
}

ClassRegistry ClassRegistry::plad() {
  return ClassRegistry({"tower", "insulator", "spacer", "plate", "damper"});
}

ClassRegistry ClassRegistry::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError(fmt::format("cannot read registry file '{}'", path.string()));
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    const auto body = trim(std::string_view(line).substr(0, hash));
    if (!body.empty()) labels.emplace_back(body);
  }
  return ClassRegistry(std::move(labels));
}

const std::string& ClassRegistry::label(ClassId id) const {
  if (id.value < 0 || static_cast<std::size_t>(id.value) >= labels_.size())
    throw DatasetError(fmt::format("class id {} outside registry", id.value));
  return labels_[static_cast<std::size_t>(id.value)];
}

std::optional<ClassId> ClassRegistry::find(std::string_view label) const {
  const std::string key = fold(label);
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (fold(labels_[i]) == key) return ClassId{static_cast<int>(i)};
  return std::nullopt;
}

ClassId ClassRegistry::at(std::string_view label) const {
  if (auto id = find(label)) return *id;
  throw DatasetError(fmt::format("unknown class label '{}'", label));
}

std::vector<ClassId> ClassRegistry::ids() const {
  std::vector<ClassId> out;
  for (std::size_t i = 0; i < labels_.size(); ++i) out.push_back(ClassId{static_cast<int>(i)});
  return out;
}

// ---------------------------------------------------------------------------
// VOC documents

ParsedAnnotation parse_annotation_file(std::string_view content,
                                       const ClassRegistry& registry,
                                       std::string source_path) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(content)};
    pt::read_xml(in, tree, pt::xml_parser::trim_whitespace);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError(fmt::format("malformed XML at line {}: {}", e.line(), e.message()),
                     static_cast<int>(e.line()), "annotation");
  }

  const auto root = tree.get_child_optional("annotation");
  if (!root) throw StructuralError("document has no <annotation> root element");

  ParsedAnnotation out;
  ImageRecord& rec = out.record;
  rec.source_path = std::move(source_path);
  const std::string filename{trim(root->get<std::string>("filename", ""))};
  rec.image_id = fs::path(filename).stem().string();

  const auto size = root->get_child_optional("size");
  if (!size) throw StructuralError("missing <size> element");
  rec.width = parse_number(*size, "width", "annotation/size");
  rec.height = parse_number(*size, "height", "annotation/size");
  if (!(rec.width > 0.0) || !(rec.height > 0.0))
    throw StructuralError(fmt::format("image size must be positive, got {}x{}", rec.width,
                                      rec.height));
  const BBox frame = rec.frame();

  std::size_t index = 0;
  for (const auto& [tag, node] : *root) {
    if (tag != "object") continue;
    const std::size_t object_index = index++;
    const std::string context = fmt::format("annotation/object[{}]", object_index);
    const std::string name = node.get<std::string>("name", "");
    const auto bnd = node.get_child_optional("bndbox");
    if (!bnd) throw StructuralError(fmt::format("{} has no <bndbox>", context));
    const std::string bctx = context + "/bndbox";
    BBox box{parse_number(*bnd, "xmin", bctx), parse_number(*bnd, "ymin", bctx),
             parse_number(*bnd, "xmax", bctx), parse_number(*bnd, "ymax", bctx)};
    if (!box.valid()) {
      throw AnnotationError(
          fmt::format("object {} ('{}'): inverted box ({}, {}, {}, {})", object_index, name,
                      box.x_min, box.y_min, box.x_max, box.y_max),
          object_index);
    }
    const auto cls = registry.find(name);
    if (!cls) {
      out.warnings.push_back(fmt::format("{}: object {}: unknown class label '{}' skipped",
                                         rec.image_id, object_index, name));
      continue;
    }
    const BBox clamped = clamp(box, frame);
    if (clamped != box) {
      out.warnings.push_back(fmt::format(
          "{}: object {} ('{}'): box ({}, {}, {}, {}) clamped to {}x{} frame", rec.image_id,
          object_index, name, box.x_min, box.y_min, box.x_max, box.y_max, rec.width,
          rec.height));
    }
    rec.annotations.push_back({*cls, clamped});
  }
  return out;
}

std::string serialize_annotation(const ImageRecord& record, const ClassRegistry& registry) {
  std::string out;
  out += "<annotation>\n";
  out += fmt::format("\t<filename>{}.jpg</filename>\n", xml_escape(record.image_id));
  out += "\t<size>\n";
  out += fmt::format("\t\t<width>{}</width>\n\t\t<height>{}</height>\n\t\t<depth>3</depth>\n",
                     record.width, record.height);
  out += "\t</size>\n";
  for (const auto& a : record.annotations) {
    out += "\t<object>\n";
    out += fmt::format("\t\t<name>{}</name>\n", xml_escape(registry.label(a.class_id)));
    out += "\t\t<bndbox>\n";
    out += fmt::format(
        "\t\t\t<xmin>{}</xmin>\n\t\t\t<ymin>{}</ymin>\n\t\t\t<xmax>{}</xmax>\n\t\t\t<ymax>{}</ymax>\n",
        a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max);
    out += "\t\t</bndbox>\n";
    out += "\t</object>\n";
  }
  out += "</annotation>\n";
  return out;
}

// ---------------------------------------------------------------------------
// DatasetIndex

DatasetIndex::DatasetIndex(ClassRegistry registry, std::vector<ImageRecord> images)
    : registry_(std::move(registry)), images_(std::move(images)) {
  std::sort(images_.begin(), images_.end(),
            [](const ImageRecord& a, const ImageRecord& b) { return a.image_id < b.image_id; });
  for (std::size_t i = 1; i < images_.size(); ++i) {
    if (images_[i].image_id == images_[i - 1].image_id) {
      throw DatasetError(fmt::format("duplicate image_id '{}' ({} and {})", images_[i].image_id,
                                     images_[i - 1].source_path, images_[i].source_path));
    }
  }
}

std::size_t DatasetIndex::annotation_count() const {
  std::size_t n = 0;
  for (const auto& r : images_) n += r.annotations.size();
  return n;
}

const ImageRecord* DatasetIndex::find(std::string_view image_id) const {
  auto it = std::lower_bound(
      images_.begin(), images_.end(), image_id,
      [](const ImageRecord& r, std::string_view id) { return r.image_id < id; });
  if (it == images_.end() || it->image_id != image_id) return nullptr;
  return &*it;
}

DatasetIndex DatasetIndex::subset(std::span<const std::string> image_ids) const {
  std::vector<ImageRecord> picked;
  picked.reserve(image_ids.size());
  for (const auto& id : image_ids) {
    const ImageRecord* r = find(id);
    if (!r) throw DatasetError(fmt::format("unknown image_id '{}'", id));
    picked.push_back(*r);
  }
  return DatasetIndex(registry_, std::move(picked));
}

std::vector<std::string> DatasetIndex::ids() const {
  std::vector<std::string> out;
  out.reserve(images_.size());
  for (const auto& r : images_) out.push_back(r.image_id);
  return out;
}

// ---------------------------------------------------------------------------
// Loading

LoadResult load_dataset(const fs::path& root, const ClassRegistry& registry,
                        const LoaderOptions& options) {
  std::error_code ec;
  if (!fs::is_directory(root, ec))
    throw DatasetError(fmt::format("dataset root '{}' is not a readable directory", root.string()));

  fs::path dir = root;
  if (!options.annotation_subdir.empty()) {
    dir = root / options.annotation_subdir;
    if (!fs::is_directory(dir, ec))
      throw DatasetError(fmt::format("annotation directory '{}' not found", dir.string()));
  } else if (fs::is_directory(root / "Annotations", ec)) {
    dir = root / "Annotations";
  }

  std::vector<fs::path> files;
  auto consider = [&](const fs::directory_entry& e) {
    if (e.is_regular_file() && fold(e.path().extension().string()) == fold(options.extension))
      files.push_back(e.path());
  };
  try {
    if (options.recursive) {
      for (const auto& e : fs::recursive_directory_iterator(dir)) consider(e);
    } else {
      for (const auto& e : fs::directory_iterator(dir)) consider(e);
    }
  } catch (const fs::filesystem_error& e) {
    throw DatasetError(fmt::format("cannot enumerate '{}': {}", dir.string(), e.what()));
  }
  std::sort(files.begin(), files.end());

  std::vector<ParsedAnnotation> parsed(files.size());
  parallel_for(files.size(), [&](std::size_t i) {
    std::ifstream in(files[i], std::ios::binary);
    if (!in) throw DatasetError(fmt::format("cannot read '{}'", files[i].string()));
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
      parsed[i] = parse_annotation_file(buf.str(), registry, files[i].string());
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("{}: {}", files[i].string(), e.what()), e.line(), e.element());
    } catch (const AnnotationError& e) {
      throw AnnotationError(fmt::format("{}: {}", files[i].string(), e.what()),
                            e.object_index());
    } catch (const StructuralError& e) {
      throw StructuralError(fmt::format("{}: {}", files[i].string(), e.what()));
    }
    parsed[i].record.image_id = files[i].stem().string();
  });

  LoadResult out;
  std::vector<ImageRecord> records;
  records.reserve(parsed.size());
  for (auto& p : parsed) {
    for (auto& w : p.warnings) out.warnings.push_back(std::move(w));
    records.push_back(std::move(p.record));
  }
  out.index = DatasetIndex(registry, std::move(records));
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

DatasetStats compute_stats(const DatasetIndex& index) {
  if (index.empty()) throw DatasetError("cannot compute statistics of an empty dataset");
  const auto& registry = index.registry();
  const std::size_t k = registry.size();
  std::vector<std::vector<double>> areas(k);
  for (const auto& rec : index.images())
    for (const auto& a : rec.annotations) areas[static_cast<std::size_t>(a.class_id.value)].push_back(a.box.area());

  DatasetStats stats;
  stats.images = index.size();
  const auto n_images = static_cast<double>(stats.images);
  for (std::size_t c = 0; c < k; ++c) {
    ClassStats cs;
    cs.class_id = ClassId{static_cast<int>(c)};
    cs.label = registry.labels()[c];
    cs.instances = areas[c].size();
    cs.instances_per_image = static_cast<double>(cs.instances) / n_images;
    if (!areas[c].empty()) {
      const auto n = static_cast<double>(areas[c].size());
      double sum = 0.0;
      for (double a : areas[c]) sum += a;
      cs.mean_area = sum / n;
      double ss = 0.0;
      for (double a : areas[c]) ss += (a - cs.mean_area) * (a - cs.mean_area);
      cs.stddev_area = std::sqrt(ss / n);
    }
    stats.total_instances += cs.instances;
    stats.classes.push_back(std::move(cs));
  }
  stats.instances_per_image = static_cast<double>(stats.total_instances) / n_images;
  return stats;
}

std::string format_stats_table(const DatasetStats& stats) {
  std::string out;
  out += fmt::format("{:<12} {:>10} {:>20} {:>20} {:>24}\n", "Label", "Instances",
                     "Instances per image", "Average Area (px)", "Standard Deviation (px)");
  for (const auto& c : stats.classes) {
    out += fmt::format("{:<12} {:>10} {:>20.1f} {:>20.2e} {:>24.2e}\n", c.label, c.instances,
                       c.instances_per_image, c.mean_area, c.stddev_area);
  }
  out += fmt::format("{:<12} {:>10} {:>20.1f}\n", "total", stats.total_instances,
                     stats.instances_per_image);
  out += fmt::format("images: {}\n", stats.images);
  return out;
}

}  // namespace mspad
