#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "deiqt/data.hpp"

using namespace deiqt;
namespace fs = std::filesystem;

namespace {

double variance(const Image& img) {
  double m = 0.0;
  for (double v : img.data) m += v;
  m /= static_cast<double>(img.numel());
  double s = 0.0;
  for (double v : img.data) s += (v - m) * (v - m);
  return s / static_cast<double>(img.numel());
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("deiqt_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(BaseImages, DeterministicInRangeAndDistinct) {
  Rng a(1), b(1);
  const auto x = gen_base_images(100, 64, a);
  const auto y = gen_base_images(100, 64, b);
  ASSERT_EQ(x.size(), 100u);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].data, y[i].data);
    EXPECT_EQ(x[i].shape, (Shape{3, 64, 64}));
    for (double v : x[i].data) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < x[i].numel(); ++k) d = std::max(d, std::abs(x[i].data[k] - x[j].data[k]));
      EXPECT_GT(d, 0.01) << i << " vs " << j;
    }
  }
}

TEST(Distortion, LevelZeroIsIdentityForEveryKind) {
  Rng rng(2);
  const Image img = gen_base_images(1, 32, rng)[0];
  for (DistortionKind k : all_kinds()) {
    EXPECT_EQ(apply_distortion(img, {k, 0}, rng).data, img.data) << kind_name(k);
    EXPECT_EQ(parse_kind(kind_name(k)), k);
  }
  EXPECT_THROW(parse_kind("jpeg"), ConfigError);
}

TEST(Distortion, StrengthIncreasesWithLevel) {
  for (DistortionKind k : all_kinds()) {
    for (int level = 1; level < 6; ++level) {
      const DistortionSpec lo{k, level - 1}, hi{k, level};
      if (k == DistortionKind::kContrastReduction) {
        EXPECT_LT(hi.strength(), lo.strength());  // factor toward the mean shrinks
      } else {
        EXPECT_GT(hi.strength(), lo.strength());
      }
    }
  }
}

TEST(Distortion, BlurContractsVariance) {
  Rng rng(3);
  for (const Image& img : gen_base_images(10, 32, rng)) {
    for (int level = 1; level < 5; ++level) {
      EXPECT_LE(variance(apply_distortion(img, {DistortionKind::kGaussianBlur, level}, rng)), variance(img));
    }
  }
}

TEST(Distortion, NoiseDeviationGrowsWithLevel) {
  Rng base_rng(4);
  const Image img = gen_base_images(1, 32, base_rng)[0];
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    double prev = 0.0;
    for (int level = 1; level < 5; ++level) {
      Rng rng(seed);
      const Image out = apply_distortion(img, {DistortionKind::kWhiteNoise, level}, rng);
      double mad = 0.0;
      for (std::size_t i = 0; i < img.numel(); ++i) mad += std::abs(out.data[i] - img.data[i]);
      mad /= static_cast<double>(img.numel());
      EXPECT_GT(mad, prev) << "seed " << seed << " level " << level;
      prev = mad;
    }
  }
}

TEST(Dataset, CountsLabelsAndGroups) {
  Rng rng(5);
  const std::vector<DistortionKind> one{DistortionKind::kGaussianBlur};
  const Manifest m = gen_synthetic_dataset(100, 5, one, rng, 16);
  EXPECT_EQ(m.size(), 500u);
  EXPECT_NO_THROW(m.validate());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Sample& s = m.samples[i];
    if (s.distortion->level == 0) {
      EXPECT_EQ(s.score, 1.0);
    } else {
      EXPECT_LT(s.score, m.samples[i - 1].score);
      EXPECT_EQ(s.group_id, m.samples[i - 1].group_id);
    }
  }
  Rng rng2(5);
  const auto kinds = all_kinds();
  EXPECT_EQ(gen_synthetic_dataset(3, 5, kinds, rng2, 16).size(), 60u);
  EXPECT_THROW(gen_synthetic_dataset(3, 1, kinds, rng2, 16), ContractError);
}

TEST(Split, GroupAwarePartition) {
  Rng rng(6);
  const std::vector<DistortionKind> one{DistortionKind::kWhiteNoise};
  const Manifest m = gen_synthetic_dataset(100, 2, one, rng, 8);
  const SplitResult s = split(m, 0.8, 11);
  std::set<std::string> train_groups, test_groups, refs;
  for (const auto& x : s.train.samples) {
    train_groups.insert(x.group_id);
    refs.insert(x.image_ref);
  }
  for (const auto& x : s.test.samples) {
    test_groups.insert(x.group_id);
    EXPECT_EQ(train_groups.count(x.group_id), 0u);
    EXPECT_TRUE(refs.insert(x.image_ref).second);
  }
  EXPECT_EQ(train_groups.size(), 80u);
  EXPECT_EQ(test_groups.size(), 20u);
  EXPECT_EQ(refs.size(), m.size());

  const SplitResult again = split(m, 0.8, 11);
  EXPECT_EQ(again.test.samples.front().image_ref, s.test.samples.front().image_ref);
  const SplitResult other = split(m, 0.8, 12);
  std::set<std::string> other_groups;
  for (const auto& x : other.test.samples) other_groups.insert(x.group_id);
  EXPECT_NE(other_groups, test_groups);
}

TEST(Split, RejectsDegenerateInput) {
  Rng rng(7);
  const std::vector<DistortionKind> one{DistortionKind::kWhiteNoise};
  const Manifest m = gen_synthetic_dataset(1, 2, one, rng, 8);
  EXPECT_ANY_THROW(split(m, 0.8, 1));
  const Manifest ok = gen_synthetic_dataset(4, 2, one, rng, 8);
  EXPECT_ANY_THROW(split(ok, 0.0, 1));
  EXPECT_ANY_THROW(split(ok, 1.0, 1));
}

TEST(Split, TakeGroupsKeepsWholeGroups) {
  Rng rng(8);
  const std::vector<DistortionKind> one{DistortionKind::kBlockiness};
  const Manifest m = gen_synthetic_dataset(10, 3, one, rng, 8);
  const Manifest t = take_groups(m, 4, 3);
  EXPECT_EQ(t.size(), 12u);
  EXPECT_EQ(group_ids(t).size(), 4u);
}

TEST(Files, PnmRoundTripIsEightBitExact) {
  const fs::path dir = temp_dir("pnm");
  Rng rng(9);
  const Image img = gen_base_images(1, 16, rng)[0];
  write_pnm(dir / "a.ppm", img);
  const Image back = read_pnm(dir / "a.ppm");
  ASSERT_EQ(back.shape, img.shape);
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 0.5 / 255.0 + 1e-12);
  for (double v : back.data) EXPECT_EQ(v, std::round(v * 255.0) / 255.0);
}

TEST(Files, GreyscaleExpandsToThreeChannels) {
  const fs::path dir = temp_dir("pgm");
  {
    std::ofstream f(dir / "g.pgm", std::ios::binary);
    f << "P5\n# comment\n2 1\n255\n";
    f.put(static_cast<char>(0));
    f.put(static_cast<char>(255));
  }
  const Image img = read_pnm(dir / "g.pgm");
  EXPECT_EQ(img.shape, (Shape{3, 1, 2}));
  EXPECT_EQ(img.data, (std::vector<double>{0, 1, 0, 1, 0, 1}));
  EXPECT_THROW(read_pnm(dir / "missing.ppm"), IoError);
}

TEST(Files, ManifestRoundTripAndErrors) {
  const fs::path dir = temp_dir("manifest");
  Rng rng(10);
  const std::vector<DistortionKind> one{DistortionKind::kGaussianBlur};
  Manifest m = gen_synthetic_dataset(2, 3, one, rng, 8);
  for (auto& s : m.samples) write_pnm(dir / s.image_ref, *s.image);
  write_manifest(dir / "m.csv", m);
  Manifest back = read_manifest(dir / "m.csv");
  ASSERT_EQ(back.size(), m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(back.samples[i].image_ref, m.samples[i].image_ref);
    EXPECT_EQ(back.samples[i].score, m.samples[i].score);
    EXPECT_EQ(back.samples[i].group_id, m.samples[i].group_id);
  }
  load_images(back, dir);
  EXPECT_EQ(back.samples[0].image->shape, (Shape{3, 8, 8}));

  {
    std::ofstream f(dir / "bad.csv");
    f << "path,score,group\na.ppm,notanumber,g\n";
  }
  EXPECT_THROW(read_manifest(dir / "bad.csv"), IoError);
  {
    std::ofstream f(dir / "dup.csv");
    f << "path,score,group\na.ppm,1,g\na.ppm,2,g\n";
  }
  EXPECT_THROW(read_manifest(dir / "dup.csv").validate(), ConfigError);
}

TEST(Files, CropCopiesWindow) {
  Image img({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) img.data[i] = static_cast<double>(i);
  EXPECT_EQ(crop(img, 1, 2, 2).data, (std::vector<double>{6, 7, 10, 11}));
  EXPECT_THROW(crop(img, 3, 0, 2), ShapeError);
  const auto x = to_model_input<float>(img);
  EXPECT_EQ(x.data[0], -1.0f);
}
