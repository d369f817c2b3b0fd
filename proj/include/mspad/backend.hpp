#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mspad/dataset.hpp"
#include "mspad/geometry.hpp"

namespace mspad {

struct InputSize {
  int width = 0;
  int height = 0;

  bool operator==(const InputSize&) const = default;
};

/// Parses "WxH" (e.g. "512x512"); throws std::invalid_argument.
InputSize parse_input_size(std::string_view text);

/// One crop handed to a detector.
struct InferenceRequest {
  std::string image_id;
  BBox region;           // global coordinates of the crop
  InputSize resize_to;   // what the model should see; oracle/replay ignore it
  std::vector<ClassId> allowed_classes;
};

/**
 * Perturbation applied by the jittered oracle.
 *
 * A kept truth box gets N(0, sigma) noise on each coordinate and a score of
 * 1 - u * score_spread (u uniform in [0,1)). Each truth box is dropped with
 * probability miss_rate; Poisson(false_positive_rate) spurious boxes with
 * uniform scores are added per request. Per-class overrides are keyed by
 * label and resolved against the registry when the backend is built.
 */
struct JitterModel {
  double coordinate_noise_sigma = 0.0;
  double score_spread = 0.0;
  double miss_rate = 0.0;
  double false_positive_rate = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, double> class_sigma;
  std::map<std::string, double> class_miss_rate;

  bool operator==(const JitterModel&) const = default;
};

enum class BackendKind { oracle, jittered_oracle, file_replay, external_process };

/**
 * Declarative backend choice. Text form (CLI flags, logged configs):
 *
 *   oracle
 *   jitter:sigma=2,spread=0.3,miss=0.1,fp=0.5,seed=7,sigma@damper=15,miss@damper=0.4
 *   replay:<directory of detection documents>
 *   exec:<shell command speaking the line protocol>
 */
struct BackendDescriptor {
  BackendKind kind = BackendKind::oracle;
  JitterModel jitter;
  std::string replay_path;
  std::string command;

  /// Throws std::invalid_argument on malformed text or out-of-range values.
  static BackendDescriptor parse(std::string_view text);
  std::string to_string() const;

  bool operator==(const BackendDescriptor&) const = default;
};

/// A detector. Implementations either tolerate concurrent infer() calls or
/// report single_flight(), in which case callers serialise.
class Backend {
 public:
  virtual ~Backend() = default;

  /// Detections in region-local coordinates, restricted to the request's
  /// allowed classes. `truth` holds the image's annotations in global
  /// coordinates and is required by the oracle kinds.
  virtual std::vector<ScoredBox> infer(const InferenceRequest& request,
                                       std::optional<std::span<const Annotation>> truth) = 0;

  /// Several requests for one image. The default loops over infer().
  virtual std::vector<std::vector<ScoredBox>> infer_batch(
      std::span<const InferenceRequest> requests,
      std::optional<std::span<const Annotation>> truth);

  virtual bool single_flight() const { return false; }
};

/// Throws BackendError when the descriptor cannot be realised (unreadable
/// replay directory, class override naming an unknown label).
std::unique_ptr<Backend> make_backend(const BackendDescriptor& descriptor,
                                      const ClassRegistry& registry);

/// One-shot convenience: build the backend and run a single request.
std::vector<ScoredBox> infer(const BackendDescriptor& descriptor, const ClassRegistry& registry,
                             const InferenceRequest& request,
                             std::optional<std::span<const Annotation>> truth);

}  // namespace mspad
