#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mspad/backend.hpp"
#include "mspad/dataset.hpp"
#include "mspad/evaluation.hpp"
#include "mspad/io.hpp"
#include "mspad/pipeline.hpp"

namespace mspad {

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct CVSpec {
  int k = 5;
  /// seed here is the master seed; run i uses run_seed(seed, i).
  SplitSpec base{};
};

struct SplitAssignment {
  int run = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> train;  // sorted
  std::vector<std::string> test;   // sorted

  bool operator==(const SplitAssignment&) const = default;
};

/// Seed of Monte Carlo run `run` derived from the master seed (splitmix64).
std::uint64_t run_seed(std::uint64_t master, int run);

/// Number of training images: round(fraction * n) clamped to [1, n - 1].
std::size_t train_count(std::size_t n, double train_fraction);

/**
 * Image-level random split. The ids are shuffled by Fisher-Yates driven by
 * mt19937_64(spec.seed) with rejection-sampled indices, and the first
 * train_count() go to train. Same seed, same split on every platform.
 * Throws SplitError when the index has fewer than two images or the
 * fraction is outside (0, 1).
 */
SplitAssignment make_split(const DatasetIndex& index, const SplitSpec& spec, int run = 0);

Json to_json(const SplitAssignment& split);

/// The two pipeline set-ups compared on every split.
struct ExperimentArms {
  PipelineConfig original;  // resize-only
  BackendDescriptor original_backend;
  PipelineConfig mspad;
  BackendDescriptor mspad_resized_backend;
  BackendDescriptor mspad_tiled_backend;
};

struct CrossValidationResult {
  std::vector<SplitAssignment> splits;
  AggregateReport original;
  AggregateReport mspad;
};

/**
 * k Monte Carlo runs. Each run draws one split and evaluates both arms on
 * its test images, so the two modes always see the same test set. Errors
 * are rethrown as Error prefixed with the run index.
 */
CrossValidationResult run_monte_carlo(const DatasetIndex& index, const CVSpec& cv,
                                      const ExperimentArms& arms, const EvalConfig& eval);

Json to_json(const CrossValidationResult& result);

}  // namespace mspad
