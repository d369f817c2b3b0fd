#include "mspad/io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

#include <unistd.h>

#include <fmt/format.h>

#include "mspad/errors.hpp"

namespace mspad {

namespace fs = std::filesystem;

std::string region_key(const BBox& r) {
  return fmt::format("{},{},{},{}", r.x_min, r.y_min, r.x_max, r.y_max);
}

BBox parse_region_key(const std::string& key) {
  double v[4];
  const char* p = key.data();
  const char* end = key.data() + key.size();
  for (int i = 0; i < 4; ++i) {
    auto [next, ec] = std::from_chars(p, end, v[i]);
    if (ec != std::errc{}) throw Error(fmt::format("malformed region key '{}'", key));
    p = next;
    if (i < 3) {
      if (p == end || *p != ',') throw Error(fmt::format("malformed region key '{}'", key));
      ++p;
    }
  }
  if (p != end) throw Error(fmt::format("malformed region key '{}'", key));
  return {v[0], v[1], v[2], v[3]};
}

Json box_to_json(const BBox& b) { return Json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

BBox box_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4 ||
      !std::all_of(j.begin(), j.end(), [](const Json& v) { return v.is_number(); }))
    throw Error(fmt::format("box must be [x_min, y_min, x_max, y_max], got {}", j.dump()));
  BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!b.valid()) throw Error(fmt::format("inverted box {}", j.dump()));
  return b;
}

namespace {

const char* branch_name(Branch b) {
  switch (b) {
    case Branch::resized: return "resized";
    case Branch::tiled: return "tiled";
    case Branch::none: break;
  }
  return "none";
}

Branch branch_from_name(const std::string& s) {
  if (s == "resized") return Branch::resized;
  if (s == "tiled") return Branch::tiled;
  if (s == "none") return Branch::none;
  throw Error(fmt::format("unknown branch '{}'", s));
}

}  // namespace

Json detection_to_json(const ScoredBox& d, const ClassRegistry& registry) {
  Json j{{"label", registry.label(d.class_id)}, {"score", d.score}, {"box", box_to_json(d.box)}};
  if (d.provenance.branch != Branch::none) {
    Json prov{{"branch", branch_name(d.provenance.branch)}};
    if (d.provenance.tile.row >= 0) prov["tile"] = {d.provenance.tile.row, d.provenance.tile.col};
    j["provenance"] = std::move(prov);
  }
  return j;
}

ScoredBox detection_from_json(const Json& j, const ClassRegistry& registry) {
  if (!j.is_object() || !j.contains("label") || !j.contains("score") || !j.contains("box"))
    throw Error(fmt::format("detection needs label, score and box: {}", j.dump()));
  const auto label = j.at("label").get<std::string>();
  const auto cls = registry.find(label);
  if (!cls) throw Error(fmt::format("detection has unknown label '{}'", label));
  ScoredBox d;
  d.class_id = *cls;
  d.score = j.at("score").get<double>();
  if (!(d.score >= 0.0 && d.score <= 1.0))
    throw Error(fmt::format("detection score {} outside [0, 1]", d.score));
  d.box = box_from_json(j.at("box"));
  if (const auto it = j.find("provenance"); it != j.end()) {
    d.provenance.branch = branch_from_name(it->at("branch").get<std::string>());
    if (const auto t = it->find("tile"); t != it->end())
      d.provenance.tile = TileId{(*t)[0].get<int>(), (*t)[1].get<int>()};
  }
  return d;
}

Json to_json(const DetectionDocument& doc, const ClassRegistry& registry) {
  Json regions = Json::object();
  for (const auto& r : doc.regions) {
    Json list = Json::array();
    for (const auto& d : r.detections) list.push_back(detection_to_json(d, registry));
    regions[region_key(r.region)] = std::move(list);
  }
  return Json{{"version", kFormatVersion}, {"image_id", doc.image_id}, {"regions", regions}};
}

DetectionDocument detection_document_from_json(const Json& j, const ClassRegistry& registry) {
  try {
    if (!j.is_object()) throw Error("detection document must be a JSON object");
    const int version = j.value("version", 0);
    if (version != kFormatVersion)
      throw Error(fmt::format("unsupported detection document version {}", version));
    DetectionDocument doc;
    doc.image_id = j.at("image_id").get<std::string>();
    for (const auto& [key, list] : j.at("regions").items()) {
      RegionDetections r{parse_region_key(key), {}};
      for (const auto& d : list) r.detections.push_back(detection_from_json(d, registry));
      doc.regions.push_back(std::move(r));
    }
    return doc;
  } catch (const Json::exception& e) {
    throw Error(fmt::format("malformed detection document: {}", e.what()));
  }
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot read '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Json parse_json_file(const fs::path& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw Error(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<DetectionDocument> read_detection_documents(const fs::path& path,
                                                        const ClassRegistry& registry) {
  std::vector<fs::path> files;
  std::error_code ec;
  if (fs::is_directory(path, ec)) {
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(path, ec)) {
    files.push_back(path);
  } else {
    throw Error(fmt::format("detections path '{}' does not exist", path.string()));
  }
  std::vector<DetectionDocument> docs;
  for (const auto& f : files) {
    try {
      docs.push_back(detection_document_from_json(parse_json_file(f), registry));
    } catch (const Error& e) {
      throw Error(fmt::format("{}: {}", f.string(), e.what()));
    }
  }
  return docs;
}

std::map<std::string, std::vector<ScoredBox>> to_detection_map(
    const std::vector<DetectionDocument>& docs) {
  std::map<std::string, std::vector<ScoredBox>> out;
  for (const auto& doc : docs) {
    auto [it, fresh] = out.try_emplace(doc.image_id);
    if (!fresh) throw Error(fmt::format("image '{}' appears in two detection documents", doc.image_id));
    for (const auto& r : doc.regions)
      for (const auto& d : r.detections) {
        ScoredBox g = d;
        g.box = translate(d.box, r.region.x_min, r.region.y_min);
        it->second.push_back(g);
      }
  }
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += fmt::format(".tmp.{}", ::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", tmp.string()));
    out << content;
    out.flush();
    if (!out) throw Error(fmt::format("short write to '{}'", tmp.string()));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error(fmt::format("cannot move '{}' into place: {}", path.string(), ec.message()));
  }
}

Json to_json(const DatasetStats& stats) {
  Json classes = Json::array();
  for (const auto& c : stats.classes) {
    classes.push_back({{"label", c.label},
                       {"instances", c.instances},
                       {"instances_per_image", c.instances_per_image},
                       {"average_area_px", c.mean_area},
                       {"stddev_area_px", c.stddev_area}});
  }
  return Json{{"version", kFormatVersion},
              {"classes", classes},
              {"totals",
               {{"instances", stats.total_instances},
                {"images", stats.images},
                {"instances_per_image", stats.instances_per_image}}}};
}

}  // namespace mspad
