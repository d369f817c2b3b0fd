#include "mspad/splits.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mspad/errors.hpp"
#include "mspad/rng.hpp"

namespace mspad {

std::uint64_t run_seed(std::uint64_t master, int run) {
  return combine_seed(master, static_cast<std::uint64_t>(run));
}

std::size_t train_count(std::size_t n, double train_fraction) {
  const auto raw = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(raw, 1, n - 1);
}

SplitAssignment make_split(const DatasetIndex& index, const SplitSpec& spec, int run) {
  if (index.size() < 2)
    throw SplitError(fmt::format("need at least 2 images to split, have {}", index.size()));
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw SplitError(fmt::format("train fraction {} outside (0, 1)", spec.train_fraction));

  std::vector<std::string> ids = index.ids();
  Rng rng(spec.seed);
  for (std::size_t i = ids.size() - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(i + 1)]);

  const auto n_train = static_cast<std::ptrdiff_t>(train_count(ids.size(), spec.train_fraction));
  SplitAssignment s;
  s.run = run;
  s.seed = spec.seed;
  s.train.assign(ids.begin(), ids.begin() + n_train);
  s.test.assign(ids.begin() + n_train, ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

Json to_json(const SplitAssignment& s) {
  return Json{{"version", kFormatVersion},
              {"run", s.run},
              {"seed", s.seed},
              {"train", s.train},
              {"test", s.test}};
}

CrossValidationResult run_monte_carlo(const DatasetIndex& index, const CVSpec& cv,
                                      const ExperimentArms& arms, const EvalConfig& eval) {
  if (cv.k < 1) throw SplitError(fmt::format("k must be >= 1, got {}", cv.k));
  const auto& registry = index.registry();
  auto original_backend = make_backend(arms.original_backend, registry);
  auto resized_backend = make_backend(arms.mspad_resized_backend, registry);
  auto tiled_backend = make_backend(arms.mspad_tiled_backend, registry);

  CrossValidationResult result;
  std::vector<EvalReport> original_runs, mspad_runs;
  for (int run = 0; run < cv.k; ++run) {
    try {
      SplitSpec spec = cv.base;
      spec.seed = run_seed(cv.base.seed, run);
      SplitAssignment split = make_split(index, spec, run);
      const DatasetIndex test = index.subset(split.test);

      const auto original = run_dataset(test, arms.original,
                                        Backends{*original_backend, *original_backend});
      const auto ours = run_dataset(test, arms.mspad, Backends{*resized_backend, *tiled_backend});
      original_runs.push_back(evaluate(test, original.detections, eval));
      mspad_runs.push_back(evaluate(test, ours.detections, eval));
      result.splits.push_back(std::move(split));
    } catch (const Error& e) {
      throw Error(fmt::format("run {}: {}", run + 1, e.what()));
    }
  }
  result.original = aggregate(original_runs);
  result.mspad = aggregate(mspad_runs);
  return result;
}

Json to_json(const CrossValidationResult& r) {
  Json splits = Json::array();
  for (const auto& s : r.splits)
    splits.push_back({{"run", s.run}, {"seed", s.seed}, {"test", s.test}});
  return Json{{"version", kFormatVersion},
              {"k", r.splits.size()},
              {"splits", splits},
              {"original", to_json(r.original)},
              {"mspad", to_json(r.mspad)}};
}

}  // namespace mspad
