#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "mspad/errors.hpp"
#include "mspad/io.hpp"
#include "mspad/splits.hpp"
#include "oracles.hpp"

using namespace mspad;

namespace {

DatasetIndex ids_only(int n) {
  std::vector<ImageRecord> recs;
  for (int i = 0; i < n; ++i) recs.push_back({fmt::format("img{:04}", i), 10, 10, {}, {}});
  return DatasetIndex(ClassRegistry::plad(), recs);
}

ExperimentArms arms(const std::string& original, const std::string& resized, const std::string& tiled) {
  const auto reg = ClassRegistry::plad();
  ExperimentArms a;
  a.original.mode = PipelineMode::resize_only;
  a.original.routing = ClassRouting::plad_default(reg);
  a.mspad.mode = PipelineMode::mspad;
  a.mspad.routing = ClassRouting::plad_default(reg);
  a.original_backend = BackendDescriptor::parse(original);
  a.mspad_resized_backend = BackendDescriptor::parse(resized);
  a.mspad_tiled_backend = BackendDescriptor::parse(tiled);
  return a;
}

}  // namespace

TEST(Split, PladSizes) {
  EXPECT_EQ(train_count(133, 0.8), 106u);
  const auto s = make_split(ids_only(133), {0.8, 42});
  EXPECT_EQ(s.train.size(), 106u);
  EXPECT_EQ(s.test.size(), 27u);
}

TEST(Split, DeterministicForSeed) {
  const auto idx = ids_only(10);
  EXPECT_EQ(make_split(idx, {0.8, 7}), make_split(idx, {0.8, 7}));
  bool differs = false;
  for (std::uint64_t s = 8; s < 20 && !differs; ++s) differs = make_split(idx, {0.8, s}).test != make_split(idx, {0.8, 7}).test;
  EXPECT_TRUE(differs);
}

TEST(Split, PartitionForManySeedsAndFractions) {
  const auto idx = ids_only(57);
  const auto all = idx.ids();
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    for (double f : {0.1, 0.5, 0.8, 0.99}) {
      const auto s = make_split(idx, {f, seed});
      EXPECT_TRUE(std::is_sorted(s.train.begin(), s.train.end()));
      EXPECT_TRUE(std::is_sorted(s.test.begin(), s.test.end()));
      EXPECT_FALSE(s.train.empty());
      EXPECT_FALSE(s.test.empty());
      std::vector<std::string> merged;
      std::merge(s.train.begin(), s.train.end(), s.test.begin(), s.test.end(), std::back_inserter(merged));
      EXPECT_EQ(merged, all);
      EXPECT_EQ(s.train.size(), train_count(57, f));
    }
  }
}

TEST(Split, Errors) {
  EXPECT_THROW(make_split(ids_only(1), {0.8, 0}), SplitError);
  EXPECT_THROW(make_split(ids_only(10), {1.0, 0}), SplitError);
  EXPECT_THROW(make_split(ids_only(10), {0.0, 0}), SplitError);
}

TEST(Split, RunSeedsDistinct) {
  std::set<std::uint64_t> seen;
  for (int r = 0; r < 100; ++r) seen.insert(run_seed(2024, r));
  EXPECT_EQ(seen.size(), 100u);
  const auto j = to_json(make_split(ids_only(5), {0.8, 3}, 2));
  EXPECT_EQ(j.at("run"), 2);
  EXPECT_EQ(j.at("version"), kFormatVersion);
}

TEST(MonteCarlo, OracleArmsScoreOne) {
  const auto idx = oracle::synthetic_plad(15, 10);
  const auto res = run_monte_carlo(idx, {1, {0.8, 1}}, arms("oracle", "oracle", "oracle"), {});
  EXPECT_EQ(res.original.mean_map, 1.0);
  EXPECT_EQ(res.mspad.mean_map, 1.0);
  ASSERT_EQ(res.splits.size(), 1u);
}

TEST(MonteCarlo, BothArmsSeeSameTestSet) {
  const auto idx = oracle::synthetic_plad(16, 20);
  const auto res = run_monte_carlo(idx, {3, {0.8, 9}}, arms("oracle", "oracle", "oracle"), {});
  ASSERT_EQ(res.original.runs.size(), 3u);
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(res.splits[r].test.size(), 4u);
    EXPECT_EQ(res.original.runs[r].classes[4].num_gt, res.mspad.runs[r].classes[4].num_gt);
  }
}

TEST(MonteCarlo, HeavyDamperJitterFavoursTiledArm) {
  const auto idx = oracle::synthetic_plad(17, 30);
  const auto res = run_monte_carlo(
      idx, {5, {0.8, 11}},
      arms("jitter:sigma=2,spread=0.3,seed=1,sigma@damper=40,miss@damper=0.5",
           "jitter:sigma=2,spread=0.3,seed=2", "jitter:sigma=2,spread=0.3,seed=3"),
      {});
  EXPECT_GT(res.mspad.mean_map, res.original.mean_map);
  EXPECT_GT(res.mspad.mean_ap[4], res.original.mean_ap[4]);
}

TEST(MonteCarlo, SameSeedSameReport) {
  const auto idx = oracle::synthetic_plad(18, 15);
  const auto a = arms("jitter:sigma=5,spread=0.5,fp=1,seed=4", "jitter:sigma=3,seed=5", "jitter:sigma=3,fp=0.5,seed=6");
  const auto r1 = dump(to_json(run_monte_carlo(idx, {3, {0.8, 77}}, a, {})));
  const auto r2 = dump(to_json(run_monte_carlo(idx, {3, {0.8, 77}}, a, {})));
  EXPECT_EQ(r1, r2);
  const auto r3 = dump(to_json(run_monte_carlo(idx, {3, {0.8, 78}}, a, {})));
  EXPECT_NE(r1, r3);
}
