#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "weakstrong/synthdata.hpp"
#include "weakstrong/verify.hpp"

using namespace weakstrong;

namespace {

GenConfig small_config(std::uint64_t seed) {
  GenConfig cfg = default_gen_config();
  cfg.n_bags = 40;
  cfg.instances_per_bag = 12;
  cfg.n_strong = 200;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(Generator, BagInvariantSuiteOver10kBags) {
  GenConfig cfg = default_gen_config();
  cfg.n_bags = 10000;
  cfg.instances_per_bag = 6;
  cfg.n_strong = 1;
  cfg.seed = 2024;
  const std::vector<Bag> bags = generate_weak_dataset(cfg);
  ASSERT_EQ(bags.size(), 10000u);
  for (const Bag& bag : bags) {
    ASSERT_EQ(bag.gleason_score, bag.primary_pattern + bag.secondary_pattern);
    ASSERT_EQ(bag.weak_label == kLabelLow, bag.gleason_score <= 7);
    // group consistency with (primary, secondary)
    if (bag.gleason_score <= 6) {
      ASSERT_EQ(bag.group, GleasonGroup::g6);
    } else if (bag.gleason_score == 7) {
      ASSERT_EQ(bag.group,
                bag.primary_pattern == 3 ? GleasonGroup::g7_34 : GleasonGroup::g7_43);
    } else if (bag.gleason_score == 8) {
      ASSERT_EQ(bag.group, GleasonGroup::g8);
    } else {
      ASSERT_EQ(bag.group, GleasonGroup::g9_10);
    }
    ASSERT_EQ(bag.instances.size(), 6u);
    bool has_secondary = false;
    for (const Instance& inst : bag.instances) {
      ASSERT_TRUE(inst.weak_label.has_value());
      ASSERT_EQ(*inst.weak_label, bag.weak_label);
      ASSERT_FALSE(inst.strong_label.has_value());
      ASSERT_EQ(inst.bag_id, bag.bag_id);
      if (inst.true_pattern == bag.secondary_pattern) has_secondary = true;
    }
    ASSERT_TRUE(has_secondary);
  }
}

TEST(Generator, StructuralNoiseIn7Plus34Bags) {
  GenConfig cfg = default_gen_config();
  cfg.n_bags = 500;
  cfg.seed = 11;
  std::size_t mixed_bags = 0;
  for (const Bag& bag : generate_weak_dataset(cfg)) {
    if (bag.group != GleasonGroup::g7_34) continue;
    ++mixed_bags;
    std::size_t discordant = 0;
    for (const Instance& inst : bag.instances) {
      // pattern-4 instances in a low bag carry a structurally wrong weak label
      if (is_high_pattern(inst.true_pattern)) {
        ASSERT_EQ(*inst.weak_label, kLabelLow);
        ++discordant;
      }
    }
    ASSERT_GE(discordant, 1u);
  }
  ASSERT_GT(mixed_bags, 0u);
}

TEST(Generator, SecondaryProportionsMatchConfig) {
  GenConfig cfg = default_gen_config();
  cfg.n_bags = 2000;
  cfg.seed = 21;
  // expected pattern-4 fraction inside 7=3+4 bags: the secondary share
  const double expected =
      1.0 - cfg.benign_fraction -
      static_cast<double>(cfg.primary_count()) / static_cast<double>(cfg.instances_per_bag);
  std::size_t total = 0, pattern4 = 0;
  for (const Bag& bag : generate_weak_dataset(cfg)) {
    if (bag.group != GleasonGroup::g7_34) continue;
    for (const Instance& inst : bag.instances) {
      ++total;
      if (inst.true_pattern == 4) ++pattern4;
    }
  }
  ASSERT_GT(total, 10000u);
  EXPECT_NEAR(static_cast<double>(pattern4) / static_cast<double>(total), expected, 0.02);
}

TEST(Generator, DeterministicCorpora) {
  const GenConfig cfg = small_config(77);
  const std::vector<Bag> a = generate_weak_dataset(cfg);
  const std::vector<Bag> b = generate_weak_dataset(cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].gleason_score, b[i].gleason_score);
    ASSERT_EQ(a[i].instances.size(), b[i].instances.size());
    for (std::size_t j = 0; j < a[i].instances.size(); ++j) {
      ASSERT_EQ(a[i].instances[j].features, b[i].instances[j].features);
      ASSERT_EQ(a[i].instances[j].true_pattern, b[i].instances[j].true_pattern);
    }
  }
  const std::vector<Instance> sa = generate_strong_dataset(cfg);
  const std::vector<Instance> sb = generate_strong_dataset(cfg);
  for (std::size_t i = 0; i < sa.size(); ++i) ASSERT_EQ(sa[i].features, sb[i].features);
}

TEST(Generator, StrongLabelsFollowPatterns) {
  GenConfig cfg = small_config(31);
  cfg.strong_pattern_weights = {0.0, 0.0, 0.0, 1.0};  // pure pattern 5
  for (const Instance& inst : generate_strong_dataset(cfg)) {
    ASSERT_EQ(inst.true_pattern, 5);
    ASSERT_EQ(*inst.strong_label, kLabelHigh);
    ASSERT_FALSE(inst.weak_label.has_value());
  }
}

TEST(Generator, IdentityShiftMatchesWeakDistribution) {
  GenConfig cfg = default_gen_config();
  cfg.shift = AffineShift{};  // identity
  cfg.n_strong = 10000;
  cfg.strong_pattern_weights = {0.0, 1.0, 0.0, 0.0};  // pattern 3 only
  cfg.seed = 5;
  double mean0 = 0.0;
  for (const Instance& inst : generate_strong_dataset(cfg)) mean0 += inst.features[0];
  mean0 /= 10000.0;
  EXPECT_NEAR(mean0, cfg.pattern_stats[1].mean[0], 0.05);
}

TEST(Generator, ConfiguredShiftDisplacesMeans) {
  GenConfig cfg = default_gen_config();
  cfg.n_strong = 10000;
  cfg.strong_pattern_weights = {0.0, 0.0, 1.0, 0.0};  // pattern 4 only
  cfg.seed = 9;
  // expected mean: A mu + b
  const std::vector<double>& mu = cfg.pattern_stats[2].mean;
  std::vector<double> expected(cfg.input_dim, 0.0);
  for (std::size_t i = 0; i < cfg.input_dim; ++i) {
    expected[i] = cfg.shift.b[i];
    for (std::size_t j = 0; j < cfg.input_dim; ++j) expected[i] += cfg.shift.a.at(i, j) * mu[j];
  }
  std::vector<double> mean(cfg.input_dim, 0.0);
  for (const Instance& inst : generate_strong_dataset(cfg)) {
    for (std::size_t d = 0; d < cfg.input_dim; ++d) mean[d] += inst.features[d];
  }
  for (std::size_t d = 0; d < cfg.input_dim; ++d) {
    mean[d] /= 10000.0;
    EXPECT_NEAR(mean[d], expected[d], 0.05) << "dim " << d;
  }
}

TEST(BlueRatio, WorkedPixelValues) {
  Image px(1, 1);
  px.data = {0, 0, 0};
  EXPECT_EQ(blue_ratio(px).data[0], 0.0);
  px.data = {0, 0, 255};
  EXPECT_EQ(blue_ratio(px).data[0], 25500.0);
  px.data = {255, 255, 255};
  EXPECT_NEAR(blue_ratio(px).data[0], 16.6783, 1e-3);
}

TEST(BlueRatio, PermutationInvarianceOfMeanScore) {
  Rng rng(41);
  StainParams stain;
  Image img = render_synthetic_patch(rng, 0.5, stain);
  const double score = blue_ratio_score(img);
  // permute pixels (keep channel triples together)
  std::vector<std::size_t> order(img.pixel_count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  Image shuffled(img.height, img.width);
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) shuffled.data[i * 3 + c] = img.data[order[i] * 3 + c];
  }
  EXPECT_NEAR(blue_ratio_score(shuffled), score, 1e-9);
}

TEST(SelectTopPatches, AllWhenFewerThanN) {
  Rng rng(43);
  StainParams stain;
  std::vector<Image> patches;
  for (int i = 0; i < 3; ++i) patches.push_back(render_synthetic_patch(rng, 0.2 * i, stain));
  const auto idx = select_top_patches(patches, 10);
  ASSERT_EQ(idx.size(), 3u);
  // returned in score order
  EXPECT_GE(blue_ratio_score(patches[idx[0]]), blue_ratio_score(patches[idx[1]]));
  EXPECT_GE(blue_ratio_score(patches[idx[1]]), blue_ratio_score(patches[idx[2]]));
}

TEST(SelectTopPatches, BlueBlobDominates) {
  std::vector<Image> patches;
  for (int i = 0; i < 5; ++i) patches.push_back(Image(8, 8, 128.0));  // gray
  Image blob(8, 8, 128.0);
  for (std::size_t p = 20; p < 28; ++p) {
    blob.data[p * 3 + 0] = 30.0;
    blob.data[p * 3 + 1] = 30.0;
    blob.data[p * 3 + 2] = 220.0;
  }
  patches.insert(patches.begin() + 2, blob);
  EXPECT_EQ(select_top_patches(patches, 1).front(), 2u);
}

TEST(SelectTopPatches, MatchesSortOracle) {
  Rng rng(47);
  StainParams stain;
  std::vector<Image> patches;
  std::vector<double> scores;
  for (int i = 0; i < 20; ++i) {
    patches.push_back(render_synthetic_patch(rng, rng.uniform(), stain));
    scores.push_back(blue_ratio_score(patches.back()));
  }
  std::vector<std::size_t> expected(20);
  std::iota(expected.begin(), expected.end(), std::size_t{0});
  std::sort(expected.begin(), expected.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  expected.resize(5);
  EXPECT_EQ(select_top_patches(patches, 5), expected);
}

TEST(SelectTopPatches, Errors) {
  EXPECT_THROW(select_top_patches({}, 3), ValueError);
  std::vector<Image> one{Image(4, 4, 10.0)};
  EXPECT_THROW(select_top_patches(one, 0), ValueError);
}

TEST(Renderer, DensityMonotoneBlueRatio) {
  StainParams stain;
  Rng r0(99), r1(99), r2(99);
  const double s0 = blue_ratio_score(render_synthetic_patch(r0, 0.0, stain));
  const double s1 = blue_ratio_score(render_synthetic_patch(r1, 0.3, stain));
  const double s2 = blue_ratio_score(render_synthetic_patch(r2, 0.7, stain));
  EXPECT_LT(s0, s1);
  EXPECT_LT(s1, s2);
}

TEST(Renderer, SeededDeterminismAndDensityZero) {
  StainParams stain;
  Rng a(7), b(7);
  const Image ia = render_synthetic_patch(a, 0.55, stain);
  const Image ib = render_synthetic_patch(b, 0.55, stain);
  EXPECT_EQ(ia.data, ib.data);
  Rng d(8);
  EXPECT_THROW(render_synthetic_patch(d, 1.5, stain), ValueError);
}

TEST(ImageMode, FeaturesAreProjectedImages) {
  GenConfig cfg = small_config(13);
  cfg.substrate = Substrate::images;
  cfg.shift = AffineShift{};
  cfg.n_bags = 4;
  cfg.instances_per_bag = 6;
  cfg.n_strong = 8;
  const std::vector<Bag> bags = generate_weak_dataset(cfg);
  const Tensor2D proj = make_projection(cfg.seed, cfg.image.patch_size, cfg.input_dim);
  for (const Bag& bag : bags) {
    for (const Instance& inst : bag.instances) {
      ASSERT_FALSE(inst.image.empty());
      ASSERT_EQ(inst.features, project_image(inst.image, proj));
    }
  }
}

TEST(ImageMode, CandidateSelectionKeepsTopByBlueRatio) {
  GenConfig cfg = small_config(17);
  cfg.substrate = Substrate::images;
  cfg.shift = AffineShift{};
  cfg.n_bags = 3;
  cfg.instances_per_bag = 6;
  cfg.image.candidate_patches = 12;
  const std::vector<Bag> bags = generate_weak_dataset(cfg);
  for (const Bag& bag : bags) ASSERT_EQ(bag.instances.size(), 6u);
}

TEST(GenConfig, ValidationErrors) {
  GenConfig cfg = default_gen_config();
  cfg.primary_fraction = 1.2;
  EXPECT_THROW(cfg.validate(), ConfigError);

  cfg = default_gen_config();
  cfg.benign_fraction = 0.5;
  cfg.primary_fraction = 0.6;
  EXPECT_THROW(cfg.validate(), ConfigError);  // fractions sum > 1

  cfg = default_gen_config();
  cfg.shift.a = Tensor2D(8, 8, 0.0);  // singular
  EXPECT_THROW(cfg.validate(), ConfigError);

  cfg = default_gen_config();
  cfg.pattern_stats[0].mean = {1.0};  // wrong length
  EXPECT_THROW(cfg.validate(), ConfigError);
}
