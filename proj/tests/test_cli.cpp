#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include <unistd.h>

#include <fmt/format.h>

#include "mspad/cli.hpp"
#include "mspad/io.hpp"
#include "oracles.hpp"

using namespace mspad;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "mspad");
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    static int counter = 0;
    root_ = fs::temp_directory_path() / fmt::format("mspad_cli_{}_{}", ::getpid(), counter++);
    fs::remove_all(root_);
    const auto reg = ClassRegistry::plad();
    index_ = oracle::synthetic_plad(40, 12);
    for (const auto& r : index_.images())
      write_file_atomic(data() / "Annotations" / (r.image_id + ".xml"), serialize_annotation(r, reg));
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path data() const { return root_ / "data"; }
  fs::path out(const std::string& name) const { return root_ / name; }

  fs::path root_;
  DatasetIndex index_;
};

}  // namespace

TEST_F(CliTest, VersionAndUsage) {
  auto r = run({"--version"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("1.0.0"), std::string::npos);
  EXPECT_NE(r.out.find("format version 1"), std::string::npos);

  r = run({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"eval", data().string()}).code, 2);  // --detections missing
  EXPECT_EQ(run({"cv", data().string(), "--k", "0"}).code, 2);
}

TEST_F(CliTest, StatsTableAndJson) {
  const auto r = run({"--out", out("s").string(), "stats", data().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("damper"), std::string::npos);
  EXPECT_TRUE(fs::exists(out("s") / "stats.txt"));
  const auto j = parse_json_file(out("s") / "stats.json");
  EXPECT_EQ(j.at("version"), kFormatVersion);
  EXPECT_EQ(j.at("totals").at("instances").get<std::size_t>(), index_.annotation_count());
}

TEST_F(CliTest, MissingDatasetIsDomainError) {
  const auto r = run({"stats", (root_ / "nope").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nope"), std::string::npos);
}

TEST_F(CliTest, SliceWritesManifests) {
  const auto r = run({"--out", out("sl").string(), "slice", data().string(), "--classes", "damper"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = parse_json_file(out("sl") / "slices" / (index_.ids()[0] + ".json"));
  EXPECT_EQ(j.at("tiles").size(), 16u);
}

TEST_F(CliTest, DetectThenEvalWithOracleGivesOne) {
  ASSERT_EQ(run({"--out", out("d").string(), "detect", data().string()}).code, 0);
  const auto r = run({"--out", out("e").string(), "eval", data().string(), "--detections",
                      (out("d") / "detections").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = parse_json_file(out("e") / "eval.json");
  EXPECT_EQ(j.at("map").get<double>(), 1.0);
  EXPECT_EQ(j.at("config").at("interpolation"), "all-points");
}

TEST_F(CliTest, EvalUnknownImageIsDomainError) {
  const DetectionDocument doc{"DJI_9999", {{{0, 0, 100, 100}, {{{1, 1, 5, 5}, ClassId{4}, 0.5, {}}}}}};
  write_file_atomic(out("dets") / "DJI_9999.json", dump(to_json(doc, ClassRegistry::plad())));
  const auto r = run({"eval", data().string(), "--detections", out("dets").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("DJI_9999"), std::string::npos) << r.err;
}

TEST_F(CliTest, DetectFailuresReported) {
  const auto r = run({"--out", out("f").string(), "detect", data().string(), "--branch-b",
                      std::string("exec:") + MSPAD_FAKE_DETECTOR + " fail", "--keep-going"});
  EXPECT_EQ(r.code, 1);
  const auto j = parse_json_file(out("f") / "failures.json");
  EXPECT_FALSE(j.empty());
}

TEST_F(CliTest, CvIsByteIdenticalAcrossRuns) {
  const std::vector<std::string> common{"--seed", "123", "cv", data().string(), "--k", "3",
                                        "--original-backend", "jitter:sigma=3,seed=1,sigma@damper=25",
                                        "--mspad-branch-b", "jitter:sigma=3,seed=2"};
  auto a = common, b = common;
  a.insert(a.begin(), {"--out", out("cv1").string()});
  b.insert(b.begin(), {"--out", out("cv2").string()});
  ASSERT_EQ(run(a).code, 0);
  ASSERT_EQ(run(b).code, 0);
  for (const char* f : {"cv_report.json", "cv_report.txt", "splits/run_1.json", "splits/run_3.json"})
    EXPECT_EQ(read_file(out("cv1") / f), read_file(out("cv2") / f)) << f;
}

TEST_F(CliTest, ResolvedConfigReproducesRun) {
  ASSERT_EQ(run({"--out", out("c1").string(), "--seed", "9", "cv", data().string(), "--k", "2",
                 "--mspad-branch-b", "jitter:sigma=4,seed=5"})
                .code,
            0);
  const auto cfg = out("c1") / "resolved_config.toml";
  ASSERT_TRUE(fs::exists(cfg));
  const auto r = run({"--config", cfg.string(), "--out", out("c2").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(out("c1") / "cv_report.json"), read_file(out("c2") / "cv_report.json"));
  EXPECT_EQ(read_file(out("c1") / "splits" / "run_2.json"), read_file(out("c2") / "splits" / "run_2.json"));
}

TEST_F(CliTest, DatasetFromEnvironment) {
  ::setenv("MSPAD_DATASET_ROOT", data().c_str(), 1);
  const auto r = run({"stats"});
  ::unsetenv("MSPAD_DATASET_ROOT");
  EXPECT_EQ(r.code, 0) << r.err;
}
