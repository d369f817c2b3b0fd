#include "mspad/backend.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <mutex>
#include <stdexcept>
#include <unordered_map>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>

#include "mspad/errors.hpp"
#include "mspad/io.hpp"
#include "mspad/rng.hpp"

extern char** environ;

namespace mspad {

InputSize parse_input_size(std::string_view text) {
  const auto x = text.find_first_of("xX");
  if (x == std::string_view::npos) throw std::invalid_argument(fmt::format("expected WxH, got '{}'", text));
  InputSize s;
  auto parse = [&](std::string_view part, int& out) {
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    if (ec != std::errc{} || p != part.data() + part.size() || out <= 0)
      throw std::invalid_argument(fmt::format("expected WxH with positive integers, got '{}'", text));
  };
  parse(text.substr(0, x), s.width);
  parse(text.substr(x + 1), s.height);
  return s;
}

// ---------------------------------------------------------------------------
// Descriptor text form

namespace {

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw std::invalid_argument(fmt::format("jitter parameter {}: '{}' is not a number", key, v));
  return out;
}

void check_probability(std::string_view key, double p, bool allow_one) {
  if (!(p >= 0.0) || (allow_one ? p > 1.0 : p >= 1.0))
    throw std::invalid_argument(fmt::format("jitter parameter {}={} out of range", key, p));
}

void validate(const JitterModel& m) {
  if (!(m.coordinate_noise_sigma >= 0.0)) throw std::invalid_argument("jitter sigma must be >= 0");
  check_probability("spread", m.score_spread, true);
  check_probability("miss", m.miss_rate, false);
  if (!(m.false_positive_rate >= 0.0)) throw std::invalid_argument("jitter fp must be >= 0");
  for (const auto& [label, s] : m.class_sigma)
    if (!(s >= 0.0)) throw std::invalid_argument(fmt::format("sigma@{} must be >= 0", label));
  for (const auto& [label, p] : m.class_miss_rate) check_probability("miss@" + label, p, false);
}

}  // namespace

BackendDescriptor BackendDescriptor::parse(std::string_view text) {
  const auto colon = text.find(':');
  const std::string_view kind = text.substr(0, colon);
  const std::string_view rest = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  BackendDescriptor d;
  if (kind == "oracle") {
    if (!rest.empty()) throw std::invalid_argument("oracle backend takes no parameters");
    d.kind = BackendKind::oracle;
  } else if (kind == "jitter") {
    d.kind = BackendKind::jittered_oracle;
    std::size_t pos = 0;
    while (pos < rest.size()) {
      auto comma = rest.find(',', pos);
      if (comma == std::string_view::npos) comma = rest.size();
      const auto item = rest.substr(pos, comma - pos);
      pos = comma + 1;
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string_view::npos)
        throw std::invalid_argument(fmt::format("jitter parameter '{}' lacks '='", item));
      const auto key = item.substr(0, eq);
      const auto value = item.substr(eq + 1);
      if (key == "seed") {
        auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), d.jitter.seed);
        if (ec != std::errc{} || p != value.data() + value.size())
          throw std::invalid_argument(fmt::format("jitter seed '{}' is not an unsigned integer", value));
      } else if (key == "sigma") {
        d.jitter.coordinate_noise_sigma = parse_double(key, value);
      } else if (key == "spread") {
        d.jitter.score_spread = parse_double(key, value);
      } else if (key == "miss") {
        d.jitter.miss_rate = parse_double(key, value);
      } else if (key == "fp") {
        d.jitter.false_positive_rate = parse_double(key, value);
      } else if (key.starts_with("sigma@")) {
        d.jitter.class_sigma[std::string(key.substr(6))] = parse_double(key, value);
      } else if (key.starts_with("miss@")) {
        d.jitter.class_miss_rate[std::string(key.substr(5))] = parse_double(key, value);
      } else {
        throw std::invalid_argument(fmt::format("unknown jitter parameter '{}'", key));
      }
    }
    validate(d.jitter);
  } else if (kind == "replay") {
    if (rest.empty()) throw std::invalid_argument("replay backend needs a path: replay:<dir>");
    d.kind = BackendKind::file_replay;
    d.replay_path = std::string(rest);
  } else if (kind == "exec") {
    if (rest.empty()) throw std::invalid_argument("exec backend needs a command: exec:<cmd>");
    d.kind = BackendKind::external_process;
    d.command = std::string(rest);
  } else {
    throw std::invalid_argument(fmt::format(
        "unknown backend '{}' (expected oracle, jitter:..., replay:<dir>, exec:<cmd>)", text));
  }
  return d;
}

std::string BackendDescriptor::to_string() const {
  switch (kind) {
    case BackendKind::oracle:
      return "oracle";
    case BackendKind::jittered_oracle: {
      std::string s = fmt::format("jitter:sigma={},spread={},miss={},fp={},seed={}",
                                  jitter.coordinate_noise_sigma, jitter.score_spread,
                                  jitter.miss_rate, jitter.false_positive_rate, jitter.seed);
      for (const auto& [label, v] : jitter.class_sigma) s += fmt::format(",sigma@{}={}", label, v);
      for (const auto& [label, v] : jitter.class_miss_rate) s += fmt::format(",miss@{}={}", label, v);
      return s;
    }
    case BackendKind::file_replay:
      return "replay:" + replay_path;
    case BackendKind::external_process:
      return "exec:" + command;
  }
  return {};
}

std::vector<std::vector<ScoredBox>> Backend::infer_batch(
    std::span<const InferenceRequest> requests, std::optional<std::span<const Annotation>> truth) {
  std::vector<std::vector<ScoredBox>> out;
  out.reserve(requests.size());
  for (const auto& r : requests) out.push_back(infer(r, truth));
  return out;
}

namespace {

bool allowed(const InferenceRequest& r, ClassId id) {
  return std::find(r.allowed_classes.begin(), r.allowed_classes.end(), id) != r.allowed_classes.end();
}

// Half-open ownership: each non-degenerate box inside the frame belongs to
// exactly one tile of a partition.
bool owns(const BBox& region, const BBox& box) {
  const double cx = box.center_x();
  const double cy = box.center_y();
  return cx >= region.x_min && cx < region.x_max && cy >= region.y_min && cy < region.y_max;
}

void check_request(const InferenceRequest& r) {
  if (r.region.degenerate())
    throw BackendError(fmt::format("{}: request region {} has no area", r.image_id, region_key(r.region)));
}

std::span<const Annotation> require_truth(const InferenceRequest& r,
                                          std::optional<std::span<const Annotation>> truth) {
  if (!truth) throw BackendError(fmt::format("{}: oracle backend needs ground truth", r.image_id));
  return *truth;
}

// ---------------------------------------------------------------------------

class OracleBackend final : public Backend {
 public:
  std::vector<ScoredBox> infer(const InferenceRequest& r,
                               std::optional<std::span<const Annotation>> truth) override {
    check_request(r);
    std::vector<ScoredBox> out;
    for (const auto& a : require_truth(r, truth)) {
      if (!allowed(r, a.class_id) || a.box.degenerate() || !owns(r.region, a.box)) continue;
      out.push_back({translate(a.box, -r.region.x_min, -r.region.y_min), a.class_id, 1.0, {}});
    }
    return out;
  }
};

class JitteredOracleBackend final : public Backend {
 public:
  JitteredOracleBackend(const JitterModel& model, const ClassRegistry& registry)
      : model_(model),
        sigma_(registry.size(), model.coordinate_noise_sigma),
        miss_(registry.size(), model.miss_rate) {
    for (const auto& [label, s] : model.class_sigma) sigma_[index(registry, label)] = s;
    for (const auto& [label, p] : model.class_miss_rate) miss_[index(registry, label)] = p;
  }

  std::vector<ScoredBox> infer(const InferenceRequest& r,
                               std::optional<std::span<const Annotation>> truth) override {
    check_request(r);
    const auto& reg = r.region;
    std::uint64_t seed = combine_seed(model_.seed, hash_string(r.image_id));
    seed = combine_seed(seed, hash_string(region_key(reg)));
    Rng rng(seed);

    std::vector<ScoredBox> out;
    for (const auto& a : require_truth(r, truth)) {
      if (!allowed(r, a.class_id) || a.box.degenerate() || !owns(reg, a.box)) continue;
      // Draw the full set for every box so the stream does not depend on
      // the noise level or on earlier misses.
      const double u_miss = rng.uniform();
      const double n[4] = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
      const double u_score = rng.uniform();
      const auto c = static_cast<std::size_t>(a.class_id.value);
      if (u_miss < miss_[c]) continue;
      const double s = sigma_[c];
      const BBox local = translate(a.box, -reg.x_min, -reg.y_min);
      const double x0 = local.x_min + s * n[0], y0 = local.y_min + s * n[1];
      const double x1 = local.x_max + s * n[2], y1 = local.y_max + s * n[3];
      const BBox noisy{std::min(x0, x1), std::min(y0, y1), std::max(x0, x1), std::max(y0, y1)};
      out.push_back({noisy, a.class_id, 1.0 - u_score * model_.score_spread, {}});
    }

    if (!r.allowed_classes.empty()) {
      const std::uint64_t spurious = rng.poisson(model_.false_positive_rate);
      const double w = reg.width(), h = reg.height();
      for (std::uint64_t i = 0; i < spurious; ++i) {
        const ClassId cls = r.allowed_classes[rng.below(r.allowed_classes.size())];
        const double bw = std::max(1.0, (0.02 + 0.08 * rng.uniform()) * w);
        const double bh = std::max(1.0, (0.02 + 0.08 * rng.uniform()) * h);
        const double x = rng.uniform() * std::max(0.0, w - bw);
        const double y = rng.uniform() * std::max(0.0, h - bh);
        out.push_back({{x, y, x + bw, y + bh}, cls, rng.uniform(), {}});
      }
    }
    return out;
  }

 private:
  static std::size_t index(const ClassRegistry& registry, const std::string& label) {
    const auto id = registry.find(label);
    if (!id) throw BackendError(fmt::format("jitter override names unknown class '{}'", label));
    return static_cast<std::size_t>(id->value);
  }

  JitterModel model_;
  std::vector<double> sigma_;
  std::vector<double> miss_;
};

class ReplayBackend final : public Backend {
 public:
  ReplayBackend(const std::string& path, const ClassRegistry& registry) {
    std::vector<DetectionDocument> docs;
    try {
      docs = read_detection_documents(path, registry);
    } catch (const Error& e) {
      throw BackendError(fmt::format("replay backend: {}", e.what()));
    }
    for (auto& doc : docs)
      for (auto& r : doc.regions)
        table_[key(doc.image_id, r.region)] = std::move(r.detections);
  }

  std::vector<ScoredBox> infer(const InferenceRequest& r,
                               std::optional<std::span<const Annotation>>) override {
    check_request(r);
    const auto it = table_.find(key(r.image_id, r.region));
    if (it == table_.end())
      throw BackendError(fmt::format("replay miss: no stored response for {}", key(r.image_id, r.region)));
    std::vector<ScoredBox> out;
    for (const auto& d : it->second)
      if (allowed(r, d.class_id)) out.push_back({d.box, d.class_id, d.score, {}});
    return out;
  }

 private:
  static std::string key(const std::string& image_id, const BBox& region) {
    return image_id + "@" + region_key(region);
  }

  std::unordered_map<std::string, std::vector<ScoredBox>> table_;
};

// ---------------------------------------------------------------------------
// External process: one JSON request per line on stdin, one response per
// line on stdout, correlated by request_id.

class ExternalProcessBackend final : public Backend {
 public:
  ExternalProcessBackend(std::string command, const ClassRegistry& registry)
      : command_(std::move(command)), registry_(registry) {}

  ~ExternalProcessBackend() override { shutdown(); }

  bool single_flight() const override { return true; }

  std::vector<ScoredBox> infer(const InferenceRequest& r,
                               std::optional<std::span<const Annotation>> truth) override {
    return infer_batch(std::span(&r, 1), truth).front();
  }

  std::vector<std::vector<ScoredBox>> infer_batch(
      std::span<const InferenceRequest> requests,
      std::optional<std::span<const Annotation>>) override {
    std::lock_guard lock(mutex_);
    for (const auto& r : requests) check_request(r);
    if (pid_ <= 0) start();

    std::string pending;
    std::unordered_map<std::uint64_t, std::size_t> slot;
    for (std::size_t i = 0; i < requests.size(); ++i) {
      const auto& r = requests[i];
      const std::uint64_t id = next_id_++;
      slot[id] = i;
      Json labels = Json::array();
      for (auto c : r.allowed_classes) labels.push_back(registry_.label(c));
      const Json line{{"request_id", id},
                      {"image_id", r.image_id},
                      {"region", box_to_json(r.region)},
                      {"resize_to", {r.resize_to.width, r.resize_to.height}},
                      {"allowed_classes", labels}};
      pending += line.dump() + "\n";
    }

    std::vector<std::vector<ScoredBox>> out(requests.size());
    std::vector<bool> done(requests.size(), false);
    std::size_t remaining = requests.size();
    std::size_t written = 0;

    while (remaining > 0) {
      pollfd fds[3];
      nfds_t n = 0;
      const bool want_write = written < pending.size();
      if (want_write) fds[n++] = {in_fd_, POLLOUT, 0};
      fds[n++] = {out_fd_, POLLIN, 0};
      const bool want_err = err_fd_ >= 0;
      if (want_err) fds[n++] = {err_fd_, POLLIN, 0};
      if (::poll(fds, n, -1) < 0) {
        if (errno == EINTR) continue;
        fail("poll failed");
      }
      nfds_t k = 0;
      if (want_write) {
        if (fds[k].revents & (POLLERR | POLLHUP)) fail("process closed its stdin");
        if (fds[k].revents & POLLOUT) {
          const ssize_t w = ::write(in_fd_, pending.data() + written, pending.size() - written);
          if (w < 0 && errno != EAGAIN && errno != EINTR) fail("write to process failed");
          if (w > 0) written += static_cast<std::size_t>(w);
        }
        ++k;
      }
      if (fds[k].revents & (POLLIN | POLLHUP)) {
        char buf[4096];
        const ssize_t got = ::read(out_fd_, buf, sizeof buf);
        if (got == 0) fail("process exited before answering every request");
        if (got > 0) stdout_buf_.append(buf, static_cast<std::size_t>(got));
      }
      ++k;
      if (want_err && (fds[k].revents & (POLLIN | POLLHUP))) drain_stderr();

      std::size_t nl;
      while ((nl = stdout_buf_.find('\n')) != std::string::npos) {
        const std::string line = stdout_buf_.substr(0, nl);
        stdout_buf_.erase(0, nl + 1);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto [id, dets] = parse_response(line);
        const auto it = slot.find(id);
        if (it == slot.end()) fail(fmt::format("response for unknown request_id {}", id));
        const std::size_t i = it->second;
        if (done[i]) fail(fmt::format("duplicate response for request_id {}", id));
        for (const auto& d : dets)
          if (allowed(requests[i], d.class_id)) out[i].push_back(d);
        done[i] = true;
        --remaining;
      }
    }
    return out;
  }

 private:
  void start() {
    int in_pipe[2], out_pipe[2], err_pipe[2];
    if (::pipe(in_pipe) || ::pipe(out_pipe) || ::pipe(err_pipe))
      throw BackendError("cannot create pipes for external backend");
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
    posix_spawn_file_actions_adddup2(&actions, err_pipe[1], STDERR_FILENO);
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1]})
      posix_spawn_file_actions_addclose(&actions, fd);
    std::string cmd = command_;
    char sh[] = "/bin/sh";
    char flag[] = "-c";
    char* argv[] = {sh, flag, cmd.data(), nullptr};
    const int rc = ::posix_spawn(&pid_, "/bin/sh", &actions, nullptr, argv, environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    in_fd_ = in_pipe[1];
    out_fd_ = out_pipe[0];
    err_fd_ = err_pipe[0];
    if (rc != 0) {
      pid_ = -1;
      shutdown();
      throw BackendError(fmt::format("cannot spawn '{}': {}", command_, std::strerror(rc)));
    }
    ::signal(SIGPIPE, SIG_IGN);
    ::fcntl(in_fd_, F_SETFL, ::fcntl(in_fd_, F_GETFL) | O_NONBLOCK);
  }

  void drain_stderr() {
    char buf[4096];
    const ssize_t got = ::read(err_fd_, buf, sizeof buf);
    if (got == 0) {
      ::close(err_fd_);
      err_fd_ = -1;
    } else if (got > 0 && stderr_buf_.size() < 65536) {
      stderr_buf_.append(buf, static_cast<std::size_t>(got));
    }
  }

  std::pair<std::uint64_t, std::vector<ScoredBox>> parse_response(const std::string& line) {
    try {
      const Json j = Json::parse(line);
      std::vector<ScoredBox> dets;
      for (const auto& d : j.at("detections")) dets.push_back(detection_from_json(d, registry_));
      return {j.at("request_id").get<std::uint64_t>(), std::move(dets)};
    } catch (const Json::exception& e) {
      fail(fmt::format("malformed response line '{}': {}", line, e.what()));
    } catch (const Error& e) {
      fail(fmt::format("bad response line '{}': {}", line, e.what()));
    }
  }

  [[noreturn]] void fail(const std::string& why) {
    // Collect whatever diagnostics the child left, then report its status.
    if (err_fd_ >= 0) {
      ::fcntl(err_fd_, F_SETFL, ::fcntl(err_fd_, F_GETFL) | O_NONBLOCK);
      for (int i = 0; i < 16 && err_fd_ >= 0; ++i) drain_stderr();
    }
    const int status = shutdown();
    std::string msg = fmt::format("external backend '{}': {}", command_, why);
    if (status >= 0) {
      if (WIFEXITED(status)) msg += fmt::format(" (exit status {})", WEXITSTATUS(status));
      else if (WIFSIGNALED(status)) msg += fmt::format(" (killed by signal {})", WTERMSIG(status));
    }
    if (!stderr_buf_.empty()) msg += "; stderr: " + stderr_buf_;
    stderr_buf_.clear();
    stdout_buf_.clear();
    throw BackendError(msg);
  }

  // Closes the pipes and reaps the child. Returns its wait status or -1.
  int shutdown() {
    for (int* fd : {&in_fd_, &out_fd_, &err_fd_}) {
      if (*fd >= 0) ::close(*fd);
      *fd = -1;
    }
    int status = -1;
    if (pid_ > 0) {
      while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
      }
      pid_ = -1;
    }
    return status;
  }

  std::string command_;
  ClassRegistry registry_;
  std::mutex mutex_;
  pid_t pid_ = -1;
  int in_fd_ = -1, out_fd_ = -1, err_fd_ = -1;
  std::uint64_t next_id_ = 0;
  std::string stdout_buf_, stderr_buf_;
};

}  // namespace

std::unique_ptr<Backend> make_backend(const BackendDescriptor& d, const ClassRegistry& registry) {
  switch (d.kind) {
    case BackendKind::oracle:
      return std::make_unique<OracleBackend>();
    case BackendKind::jittered_oracle:
      return std::make_unique<JitteredOracleBackend>(d.jitter, registry);
    case BackendKind::file_replay:
      return std::make_unique<ReplayBackend>(d.replay_path, registry);
    case BackendKind::external_process:
      return std::make_unique<ExternalProcessBackend>(d.command, registry);
  }
  throw BackendError("unknown backend kind");
}

std::vector<ScoredBox> infer(const BackendDescriptor& descriptor, const ClassRegistry& registry,
                             const InferenceRequest& request,
                             std::optional<std::span<const Annotation>> truth) {
  return make_backend(descriptor, registry)->infer(request, truth);
}

}  // namespace mspad
