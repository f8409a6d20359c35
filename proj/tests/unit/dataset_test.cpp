#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dcda/dataset/dataset.hpp"
#include "dcda/dataset/manifest.hpp"
#include "dcda/error.hpp"

namespace dcda {
namespace {

namespace fs = std::filesystem;

SynthConfig small_config() {
  SynthConfig c;
  c.n_attrs = 4;
  c.n_objs = 5;
  c.n_seen = 12;
  c.n_unseen = 4;
  c.images_per_comp = 3;
  c.val_images_per_comp = 2;
  c.test_images_per_comp = 2;
  return c;
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("dcda_dataset_test_" + name);
  fs::remove_all(p);
  return p;
}

TEST(Synthesize, TwoByTwoLeavesTheMissingPairUnseen) {
  SynthConfig c;
  c.n_attrs = 2;
  c.n_objs = 2;
  c.n_seen = 3;
  c.n_unseen = 1;
  c.images_per_comp = 5;
  Dataset d = synthesize(c, 17);
  EXPECT_EQ(d.train.size(), 15u);
  ASSERT_EQ(d.unseen.size(), 1u);
  std::set<Composition> all(d.seen.begin(), d.seen.end());
  EXPECT_FALSE(all.count(d.unseen[0]));
  all.insert(d.unseen[0]);
  EXPECT_EQ(all.size(), 4u);
}

TEST(Synthesize, ToyCountsAndCoverage) {
  SynthConfig c;  // 8 attrs, 10 objs, 60 seen, 20 unseen, 50 per comp
  Dataset d = synthesize(c, 3);
  EXPECT_EQ(d.train.size(), 3000u);
  EXPECT_EQ(d.seen.size(), 60u);
  EXPECT_EQ(d.unseen.size(), 20u);
  std::set<std::size_t> attrs, objs;
  for (const auto& s : d.seen) {
    attrs.insert(s.attr);
    objs.insert(s.obj);
  }
  EXPECT_EQ(attrs.size(), 8u);
  EXPECT_EQ(objs.size(), 10u);
  for (const auto& img : d.train) {
    EXPECT_TRUE(d.is_seen(img.label));
    EXPECT_EQ(img.tokens.rows(), c.image_tokens);
    EXPECT_EQ(img.tokens.cols(), c.raw_dim);
  }
  std::size_t unseen_test = 0;
  for (const auto& img : d.test) unseen_test += d.is_unseen(img.label);
  EXPECT_EQ(unseen_test, 20u * c.test_images_per_comp);
}

TEST(Synthesize, MitStatesShapeConstants) {
  // 115 attributes, 245 objects, 1262 seen training compositions.
  SynthConfig c;
  c.n_attrs = 115;
  c.n_objs = 245;
  c.n_seen = 1262;
  c.n_unseen = 700;
  c.images_per_comp = 1;
  c.val_images_per_comp = 0;
  c.test_images_per_comp = 0;
  c.image_tokens = 2;
  c.raw_dim = 2;
  c.latent_dim = 2;
  Dataset d = synthesize(c, 1);
  EXPECT_EQ(d.vocab.n_attrs(), 115u);
  EXPECT_EQ(d.vocab.n_objs(), 245u);
  EXPECT_EQ(d.seen.size(), 1262u);
  EXPECT_EQ(d.train.size(), 1262u);
}

TEST(Synthesize, IsDeterministic) {
  EXPECT_EQ(synthesize(small_config(), 9), synthesize(small_config(), 9));
  EXPECT_FALSE(synthesize(small_config(), 9) == synthesize(small_config(), 10));
}

TEST(Synthesize, EntangledAttributesLookDifferentAcrossObjects) {
  SynthConfig c;
  c.entanglement_strength = 1.0;
  Dataset d = synthesize(c, 5);
  const auto stats = entanglement_statistic(d.test, c.attr_token_count());
  EXPECT_GT(stats.across_objects, stats.within_object);
  c.entanglement_strength = 0.0;
  const auto flat = entanglement_statistic(synthesize(c, 5).test, c.attr_token_count());
  EXPECT_LT(flat.across_objects - flat.within_object,
            stats.across_objects - stats.within_object);
}

TEST(Synthesize, ZipfProfileIsHeavyTailed) {
  SynthConfig c = small_config();
  c.images_per_comp = 40;
  c.imbalance.kind = ImbalanceKind::zipf;
  c.imbalance.exponent = 1.0;
  c.imbalance.min_images = 2;
  Dataset d = synthesize(c, 4);
  std::size_t lo = 1000, hi = 0;
  for (const auto& [comp, n] : d.image_counts()) {
    lo = std::min(lo, n);
    hi = std::max(hi, n);
  }
  EXPECT_EQ(hi, 40u);
  EXPECT_LE(lo, 4u);
}

TEST(Synthesize, RejectsBadConfigs) {
  SynthConfig c = small_config();
  c.n_seen = 19;
  c.n_unseen = 2;
  EXPECT_THROW(synthesize(c, 1), ConfigError);
  c = small_config();
  c.n_seen = 4;  // cannot cover 5 objects
  EXPECT_THROW(synthesize(c, 1), GenerationError);
  c = small_config();
  c.n_attrs = 1;
  EXPECT_THROW(synthesize(c, 1), ConfigError);
}

TEST(Manifest, RoundTripIsBitExact) {
  Dataset d = synthesize(small_config(), 21);
  const auto dir = temp_dir("roundtrip");
  save_manifest(d, dir);
  EXPECT_EQ(load_manifest(dir), d);
  fs::remove_all(dir);
}

TEST(Manifest, TruncatedFilesAreParseErrors) {
  Dataset d = synthesize(small_config(), 22);
  const auto dir = temp_dir("truncated");
  save_manifest(d, dir);
  fs::resize_file(dir / "train.bin", fs::file_size(dir / "train.bin") - 8);
  EXPECT_THROW(load_manifest(dir), ParseError);

  save_manifest(d, dir);
  fs::resize_file(dir / "meta.json", fs::file_size(dir / "meta.json") / 2);
  try {
    load_manifest(dir);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_GT(e.byte_offset(), 0u);
  }
  fs::remove_all(dir);
}

nlohmann::json read_meta(const fs::path& dir) {
  std::ifstream in(dir / "meta.json");
  return nlohmann::json::parse(in);
}

void write_meta(const fs::path& dir, const nlohmann::json& j) {
  std::ofstream(dir / "meta.json") << j.dump();
}

TEST(Manifest, VersionMismatch) {
  const auto dir = temp_dir("version");
  save_manifest(synthesize(small_config(), 23), dir);
  auto meta = read_meta(dir);
  meta["version"] = kManifestVersion + 1;
  write_meta(dir, meta);
  EXPECT_THROW(load_manifest(dir), VersionError);
  fs::remove_all(dir);
}

TEST(Manifest, UnseenCompositionAlsoSeenIsRejected) {
  const auto dir = temp_dir("overlap");
  Dataset d = synthesize(small_config(), 24);
  save_manifest(d, dir);
  auto meta = read_meta(dir);
  meta["unseen"].push_back(meta["seen"][0]);
  // Keep the unseen list sorted so the overlap check is what fires.
  auto unseen = meta["unseen"].get<std::vector<std::vector<std::size_t>>>();
  std::sort(unseen.begin(), unseen.end());
  meta["unseen"] = unseen;
  write_meta(dir, meta);
  try {
    load_manifest(dir);
    FAIL() << "expected InvariantError";
  } catch (const InvariantError& e) {
    EXPECT_NE(std::string(e.what()).find("both seen and unseen"), std::string::npos);
  }
  fs::remove_all(dir);
}

}  // namespace
}  // namespace dcda
