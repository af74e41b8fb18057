#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "saii/config.hpp"
#include "saii/error.hpp"

using namespace saii;
using namespace saii::config;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / ("saii_cfg_" + std::to_string(::getpid()) + "_" + name);
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST(Config, DefaultsRoundTripAndValidate) {
  const ExperimentConfig c = ExperimentConfig::from_json(defaults());
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.to_json(), defaults());
  EXPECT_EQ(ExperimentConfig::from_json(c.to_json()).hash(), c.hash());
  EXPECT_EQ(c.hash().size(), 64u);
}

TEST(Config, UnknownKeysAndWrongTypesRejected) {
  EXPECT_THROW(check_keys(defaults(), {{"sampler", {{"gama", 3}}}}), ValidationError);
  EXPECT_THROW(check_keys(defaults(), {{"bogus", 1}}), ValidationError);
  EXPECT_THROW(check_keys(defaults(), {{"sampler", {{"num_steps", "many"}}}}), ValidationError);
  EXPECT_THROW(check_keys(defaults(), {{"sampler", 5}}), ValidationError);
  EXPECT_NO_THROW(check_keys(defaults(), {{"sampler", {{"gamma", 10}}}}));
  EXPECT_THROW(resolve(std::nullopt, {"sampler.gama=3"}, std::nullopt), ValidationError);
}

TEST(Config, MergeReplacesScalarsAndArrays) {
  const json base{{"a", {{"b", 1}, {"c", {1, 2, 3}}}}, {"d", "x"}};
  const json over{{"a", {{"c", {9}}}}, {"d", "y"}};
  const json m = merge(base, over);
  EXPECT_EQ(m.at("a").at("b"), 1);
  EXPECT_EQ(m.at("a").at("c"), json({9}));
  EXPECT_EQ(m.at("d"), "y");
}

TEST(Config, OverrideParsing) {
  EXPECT_EQ(parse_override("sampler.gamma=12.5"), json({{"sampler", {{"gamma", 12.5}}}}));
  EXPECT_EQ(parse_override("paths.out=runs/x"), json({{"paths", {{"out", "runs/x"}}}}));
  EXPECT_EQ(parse_override("test.seeds=[1,2]"), json({{"test", {{"seeds", {1, 2}}}}}));
  EXPECT_THROW(parse_override("novalue"), ValidationError);
}

TEST(Config, PrecedenceFileSeedOverride) {
  const fs::path f = write_temp("p.json", R"({"seed": 3, "sampler": {"num_steps": 12}, "tv": {"mu2": 0.5}})");
  const auto c = resolve(f, {"tv.mu2=0.25"}, 9);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.sampler.num_steps, 12);
  EXPECT_EQ(c.tv.mu2, 0.25);
  const auto d = resolve(f, {"seed=11"}, 9);
  EXPECT_EQ(d.seed, 11u);
  fs::remove(f);
}

TEST(Config, GlobalSeedPropagatesUnlessExplicit) {
  const fs::path f = write_temp("s.json", R"({"seed": 42, "diffusion": {"seed": 7}})");
  const auto c = resolve(f, {}, std::nullopt);
  EXPECT_EQ(c.codec.seed, 42u);
  EXPECT_EQ(c.sampler.seed, 42u);
  EXPECT_EQ(c.sdl.seed, 42u);
  EXPECT_EQ(c.dataset.training.seed, 42u);
  EXPECT_EQ(c.diffusion.seed, 7u);
  fs::remove(f);
}

TEST(Config, YamlEquivalentToJson) {
  const fs::path y = write_temp("c.yaml", "seed: 5\nsampler:\n  num_steps: 20\n  gamma: 10.0\ntest:\n  seeds: [1, 2]\n");
  const fs::path j =
      write_temp("c.json", R"({"seed": 5, "sampler": {"num_steps": 20, "gamma": 10.0}, "test": {"seeds": [1, 2]}})");
  EXPECT_EQ(load_file(y), load_file(j));
  EXPECT_EQ(resolve(y, {}, std::nullopt).hash(), resolve(j, {}, std::nullopt).hash());
  fs::remove(y);
  fs::remove(j);
}

TEST(Config, ModuleValidationSurfaces) {
  EXPECT_THROW(resolve(std::nullopt, {"sampler.eta=2"}, std::nullopt), ValidationError);
  EXPECT_THROW(resolve(std::nullopt, {"test.snr_db=\"loud\""}, std::nullopt), ValidationError);
  EXPECT_THROW(load_file("/nonexistent/cfg.json"), Error);
}

TEST(Config, CacheDirResolution) {
  auto c = ExperimentConfig::from_json(defaults());
  c.paths.cache = "/tmp/explicit";
  EXPECT_EQ(c.cache_dir(), fs::path("/tmp/explicit"));
  c.paths.cache.clear();
  ::setenv("SAII_CACHE", "/tmp/envcache", 1);
  EXPECT_EQ(c.cache_dir(), fs::path("/tmp/envcache"));
  ::unsetenv("SAII_CACHE");
  EXPECT_EQ(c.cache_dir(), fs::path(c.paths.out) / "cache");
}
