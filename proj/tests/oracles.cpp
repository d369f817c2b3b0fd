#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include <boost/multiprecision/cpp_int.hpp>
#include <fmt/format.h>

namespace oracle {

using mspad::ClassId;
using Rational = boost::multiprecision::cpp_rational;

double raster_iou(const BBox& a, const BBox& b, double step) {
  const double x0 = std::min(a.x_min, b.x_min), y0 = std::min(a.y_min, b.y_min);
  const double x1 = std::max(a.x_max, b.x_max), y1 = std::max(a.y_max, b.y_max);
  long in_a = 0, in_b = 0, in_both = 0;
  auto inside = [](const BBox& r, double x, double y) {
    return x > r.x_min && x < r.x_max && y > r.y_min && y < r.y_max;
  };
  for (double y = y0 + step / 2; y < y1; y += step) {
    for (double x = x0 + step / 2; x < x1; x += step) {
      const bool ia = inside(a, x, y), ib = inside(b, x, y);
      in_a += ia;
      in_b += ib;
      in_both += ia && ib;
    }
  }
  const long uni = in_a + in_b - in_both;
  return uni == 0 ? 0.0 : static_cast<double>(in_both) / static_cast<double>(uni);
}

std::optional<BBox> raster_clip(const BBox& b, const BBox& region, double step) {
  bool any = false;
  BBox out{1e300, 1e300, -1e300, -1e300};
  for (double y = std::min(b.y_min, region.y_min) + step / 2; y < std::max(b.y_max, region.y_max); y += step) {
    for (double x = std::min(b.x_min, region.x_min) + step / 2; x < std::max(b.x_max, region.x_max);
         x += step) {
      const bool in = x > b.x_min && x < b.x_max && y > b.y_min && y < b.y_max &&
                      x > region.x_min && x < region.x_max && y > region.y_min && y < region.y_max;
      if (!in) continue;
      any = true;
      out.x_min = std::min(out.x_min, x - step / 2);
      out.y_min = std::min(out.y_min, y - step / 2);
      out.x_max = std::max(out.x_max, x + step / 2);
      out.y_max = std::max(out.y_max, y + step / 2);
    }
  }
  if (!any) return std::nullopt;
  return out;
}

namespace {

long double overlap_area(const BBox& a, const BBox& b) {
  const long double w = static_cast<long double>(std::min(a.x_max, b.x_max)) - std::max(a.x_min, b.x_min);
  const long double h = static_cast<long double>(std::min(a.y_max, b.y_max)) - std::max(a.y_min, b.y_min);
  return (w > 0 && h > 0) ? w * h : 0.0L;
}

long double box_area(const BBox& b) {
  return static_cast<long double>(b.x_max - b.x_min) * (b.y_max - b.y_min);
}

// iou(a, b) >= t with a positive overlap, by cross-multiplication.
bool overlaps_at_least(const BBox& a, const BBox& b, double t) {
  const long double inter = overlap_area(a, b);
  if (inter <= 0) return false;
  const long double uni = box_area(a) + box_area(b) - inter;
  return inter >= static_cast<long double>(t) * uni;
}

}  // namespace

std::vector<ScoredBox> brute_nms(const std::vector<ScoredBox>& boxes, double threshold) {
  std::vector<std::size_t> idx(boxes.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto key = [&](std::size_t i) {
    const auto& b = boxes[i];
    return std::make_tuple(-b.score, b.box.x_min, b.box.y_min, b.box.x_max, b.box.y_max,
                           b.class_id.value, i);
  };
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });

  std::vector<bool> keep(boxes.size(), false);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& cand = boxes[idx[r]];
    if (!(box_area(cand.box) > 0)) continue;
    bool survive = true;
    for (std::size_t q = 0; q < r && survive; ++q) {
      const auto& prior = boxes[idx[q]];
      if (keep[idx[q]] && prior.class_id == cand.class_id &&
          overlaps_at_least(prior.box, cand.box, threshold))
        survive = false;
    }
    keep[idx[r]] = survive;
  }
  std::vector<ScoredBox> out;
  for (auto i : idx)
    if (keep[i]) out.push_back(boxes[i]);
  return out;
}

EvalResult brute_evaluate(const mspad::DatasetIndex& gt,
                          const std::map<std::string, std::vector<ScoredBox>>& detections,
                          double iou_threshold, mspad::ApInterpolation interp) {
  const auto& images = gt.images();
  const std::size_t k = gt.registry().size();
  EvalResult result;
  Rational map_sum = 0;

  for (std::size_t c = 0; c < k; ++c) {
    const ClassId cls{static_cast<int>(c)};
    struct Entry {
      double score;
      std::size_t image;
      std::size_t det;
      BBox box;
    };
    std::vector<Entry> pool;
    std::vector<std::vector<BBox>> truth(images.size());
    std::size_t npos = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      for (const auto& a : images[i].annotations) {
        if (a.class_id != cls) continue;
        truth[i].push_back(a.box);
        if (box_area(a.box) > 0) ++npos;
      }
      const auto it = detections.find(images[i].image_id);
      if (it == detections.end()) continue;
      std::size_t j = 0;
      for (const auto& d : it->second)
        if (d.class_id == cls) pool.push_back({d.score, i, j++, d.box});
    }
    std::sort(pool.begin(), pool.end(), [](const Entry& a, const Entry& b) {
      return std::make_tuple(-a.score, a.image, a.det) < std::make_tuple(-b.score, b.image, b.det);
    });

    std::vector<std::vector<bool>> used(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) used[i].assign(truth[i].size(), false);
    std::vector<bool> hit;
    for (const auto& e : pool) {
      // Best unmatched GT by exact comparison of overlap ratios.
      int best = -1;
      long double best_inter = 0, best_union = 1;
      for (std::size_t g = 0; g < truth[e.image].size(); ++g) {
        if (used[e.image][g]) continue;
        const long double inter = overlap_area(truth[e.image][g], e.box);
        const long double uni = box_area(truth[e.image][g]) + box_area(e.box) - inter;
        if (inter <= 0 || uni <= 0) continue;
        if (best < 0 || inter * best_union > best_inter * uni) {
          best = static_cast<int>(g);
          best_inter = inter;
          best_union = uni;
        }
      }
      const bool tp = best >= 0 && best_inter >= static_cast<long double>(iou_threshold) * best_union;
      if (tp) used[e.image][static_cast<std::size_t>(best)] = true;
      hit.push_back(tp);
    }

    ClassResult cr;
    cr.num_gt = npos;
    for (bool h : hit) (h ? cr.tp : cr.fp) += 1;

    Rational ap = 0;
    if (npos == 0) {
      ap = pool.empty() ? 1 : 0;
    } else {
      const std::size_t n = hit.size();
      std::vector<Rational> precision(n);
      std::vector<std::size_t> tps(n);
      std::size_t tp = 0;
      for (std::size_t j = 0; j < n; ++j) {
        tp += hit[j];
        tps[j] = tp;
        precision[j] = Rational(tp, j + 1);
      }
      if (interp == mspad::ApInterpolation::all_points) {
        for (std::size_t j = 0; j < n; ++j) {
          if (!hit[j]) continue;
          Rational best = 0;
          for (std::size_t q = j; q < n; ++q) best = std::max(best, precision[q]);
          ap += best / npos;
        }
      } else {
        for (std::size_t t = 0; t <= 10; ++t) {
          Rational best = 0;
          for (std::size_t q = 0; q < n; ++q)
            if (tps[q] * 10 >= t * npos) best = std::max(best, precision[q]);
          ap += best;
        }
        ap /= 11;
      }
    }
    cr.ap = static_cast<double>(ap);
    map_sum += ap;
    result.classes.push_back(cr);
  }
  result.map = static_cast<double>(map_sum / static_cast<long>(k));
  return result;
}

std::vector<ScoredBox> random_boxes(std::mt19937_64& rng, int n, int classes) {
  std::uniform_int_distribution<int> coord(0, 40), size(0, 20), cls(0, classes - 1), sc(1, 8);
  std::vector<ScoredBox> out;
  for (int i = 0; i < n; ++i) {
    const double x = coord(rng), y = coord(rng);
    out.push_back({{x, y, x + size(rng), y + size(rng)}, ClassId{cls(rng)}, sc(rng) / 8.0, {}});
  }
  return out;
}

Instance random_instance(std::mt19937_64& rng, const mspad::ClassRegistry& registry) {
  std::uniform_int_distribution<int> n_images(1, 5), n_gt(0, 10), n_det(0, 15), coord(0, 60),
      size(0, 25), jitter(-4, 4), sc(0, 10), coin(0, 3);
  const int k = static_cast<int>(registry.size());
  std::vector<mspad::ImageRecord> records;
  Instance inst;
  const int images = n_images(rng);
  for (int i = 0; i < images; ++i) {
    mspad::ImageRecord rec;
    rec.image_id = fmt::format("img{:02}", i);
    rec.width = 100;
    rec.height = 100;
    std::vector<ScoredBox> dets;
    for (int c = 0; c < k; ++c) {
      const int g = n_gt(rng);
      std::vector<BBox> gts;
      for (int j = 0; j < g; ++j) {
        const double x = coord(rng), y = coord(rng);
        gts.push_back({x, y, x + size(rng), y + size(rng)});
        rec.annotations.push_back({ClassId{c}, gts.back()});
      }
      const int d = n_det(rng);
      for (int j = 0; j < d; ++j) {
        BBox b;
        if (!gts.empty() && coin(rng) != 0) {
          // Near a GT box so that true positives and duplicates occur.
          const BBox& t = gts[static_cast<std::size_t>(rng() % gts.size())];
          const double x0 = t.x_min + jitter(rng), y0 = t.y_min + jitter(rng);
          const double x1 = std::max(x0, t.x_max + jitter(rng)), y1 = std::max(y0, t.y_max + jitter(rng));
          b = {x0, y0, x1, y1};
        } else {
          const double x = coord(rng), y = coord(rng);
          b = {x, y, x + size(rng), y + size(rng)};
        }
        dets.push_back({b, ClassId{c}, sc(rng) / 10.0, {}});
      }
    }
    std::shuffle(dets.begin(), dets.end(), rng);
    if (!dets.empty() || coin(rng) == 0) inst.detections[rec.image_id] = std::move(dets);
    records.push_back(std::move(rec));
  }
  inst.index = mspad::DatasetIndex(registry, std::move(records));
  return inst;
}

mspad::DatasetIndex synthetic_plad(std::uint64_t seed, int images, int per_class_max) {
  std::mt19937_64 rng(seed);
  const auto registry = mspad::ClassRegistry::plad();
  // (min side, max side) per class in registry order.
  const std::pair<int, int> sizes[] = {{900, 2400}, {150, 500}, {100, 300}, {60, 150}, {30, 90}};
  const int max_count[] = {2, per_class_max, per_class_max, per_class_max / 2 + 1, per_class_max * 3};
  std::vector<mspad::ImageRecord> records;
  for (int i = 0; i < images; ++i) {
    mspad::ImageRecord rec;
    rec.image_id = fmt::format("DJI_{:04}", i);
    rec.width = 5472;
    rec.height = (rng() & 1) ? 3648 : 3078;
    for (int c = 0; c < 5; ++c) {
      std::uniform_int_distribution<int> count(c == 0 ? 1 : 0, max_count[c]);
      std::uniform_int_distribution<int> side(sizes[c].first, sizes[c].second);
      const int n = count(rng);
      std::vector<BBox> placed;
      for (int j = 0, tries = 0; j < n && tries < 200; ++tries) {
        const int w = side(rng), h = side(rng);
        std::uniform_int_distribution<int> xs(0, static_cast<int>(rec.width) - w);
        std::uniform_int_distribution<int> ys(0, static_cast<int>(rec.height) - h);
        const double x = xs(rng), y = ys(rng);
        const BBox b{x, y, x + w, y + h};
        if (std::any_of(placed.begin(), placed.end(), [&](const BBox& p) { return overlap_area(p, b) > 0; }))
          continue;
        placed.push_back(b);
        rec.annotations.push_back({ClassId{c}, b});
        ++j;
      }
    }
    records.push_back(std::move(rec));
  }
  return mspad::DatasetIndex(registry, std::move(records));
}

}  // namespace oracle
