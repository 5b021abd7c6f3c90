#include <gtest/gtest.h>

#include <fstream>

#include "uacanet/augment.hpp"
#include "uacanet/dataset.hpp"

using namespace uacanet;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("uacanet_test_data_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << bytes;
}

std::string pgm(int w, int h, std::initializer_list<unsigned char> px) {
  std::string s = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (auto v : px) s.push_back(static_cast<char>(v));
  return s;
}

Sample square_sample(std::int64_t side, std::int64_t lo, std::int64_t hi) {
  Sample s{Tensor<float>::zeros({3, side, side}), Tensor<float>::zeros({1, side, side}), "square"};
  for (std::int64_t y = lo; y < hi; ++y)
    for (std::int64_t x = lo; x < hi; ++x) s.mask[y * side + x] = 1.0f;
  for (std::int64_t i = 0; i < 3 * side * side; ++i) s.image[i] = static_cast<float>(i % 17) / 16.0f;
  return s;
}

double mask_area(const Tensor<float>& m) {
  double a = 0;
  for (float v : m.values()) a += v;
  return a;
}

}  // namespace

TEST(Pnm, MaskThresholdAt128) {
  const auto d = scratch_dir("mask");
  write_bytes(d / "m.pgm", pgm(2, 2, {0, 255, 128, 127}));
  EXPECT_EQ(read_mask(d / "m.pgm").values(), (std::vector<float>{0, 1, 1, 0}));
}

TEST(Pnm, WhiteP6IsOnes) {
  const auto d = scratch_dir("p6");
  write_bytes(d / "w.ppm", std::string("P6\n# comment\n1 1\n255\n") + "\xff\xff\xff");
  const auto img = read_image(d / "w.ppm");
  EXPECT_EQ(img.shape(), (Shape{3, 1, 1}));
  for (float v : img.values()) EXPECT_EQ(v, 1.0f);
}

TEST(Pnm, SixteenBitSamples) {
  const auto d = scratch_dir("p16");
  write_bytes(d / "a.pgm", std::string("P5 1 1 65535\n") + "\xff\xff");
  EXPECT_EQ(read_pnm(d / "a.pgm").samples[0], 1.0f);
}

TEST(Pnm, MaskRoundTrip) {
  const auto d = scratch_dir("roundtrip");
  const auto s = synth_blobs(1, 32, 3)[0];
  write_mask(d / "m.pgm", s.mask);
  EXPECT_EQ(read_mask(d / "m.pgm").values(), s.mask.values());
  write_image(d / "i.ppm", s.image);
  const auto back = read_image(d / "i.ppm");
  for (std::int64_t i = 0; i < back.numel(); ++i) EXPECT_NEAR(back[i], s.image[i], 0.5 / 255.0 + 1e-6);
}

TEST(Pnm, ErrorsCarryByteOffset) {
  const auto d = scratch_dir("errors");
  write_bytes(d / "magic.pgm", "P2\n1 1\n255\n0");
  write_bytes(d / "short.pgm", "P5\n4 4\n255\n0123");
  write_bytes(d / "header.pgm", "P5\n4 x\n255\n");
  try {
    read_pnm(d / "magic.pgm");
    FAIL();
  } catch (const PnmError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  try {
    read_pnm(d / "short.pgm");
    FAIL();
  } catch (const PnmError& e) {
    EXPECT_EQ(e.offset(), 15u);
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
  try {
    read_pnm(d / "header.pgm");
    FAIL();
  } catch (const PnmError& e) {
    EXPECT_EQ(e.offset(), 5u);
  }
  EXPECT_THROW(read_pnm(d / "missing.pgm"), PnmError);
}

TEST(Dataset, PairsByStemInLexicographicOrder) {
  const auto d = scratch_dir("pairs");
  for (const char* stem : {"c", "a", "b"}) {
    write_bytes(d / "images" / (std::string(stem) + ".ppm"), std::string("P6 1 1 255\n") + "abc");
    write_bytes(d / "masks" / (std::string(stem) + ".pgm"), pgm(1, 1, {255}));
  }
  write_bytes(d / "images" / "orphan.ppm", std::string("P6 1 1 255\n") + "abc");
  write_bytes(d / "masks" / "lonely.pgm", pgm(1, 1, {0}));
  write_bytes(d / "images" / "notes.txt", "ignored");
  const auto idx = list_dataset(d);
  ASSERT_EQ(idx.entries.size(), 3u);
  EXPECT_EQ(idx.entries[0].stem, "a");
  EXPECT_EQ(idx.entries[1].stem, "b");
  EXPECT_EQ(idx.entries[2].stem, "c");
  EXPECT_EQ(idx.unmatched, (std::vector<std::string>{"images/orphan", "masks/lonely"}));
  EXPECT_EQ(load_dataset(d).size(), 3u);
}

TEST(Dataset, EmptyAndMissingRootsAreErrors) {
  const auto d = scratch_dir("empty");
  EXPECT_THROW(list_dataset(d), DatasetError);
  fs::create_directories(d / "images");
  fs::create_directories(d / "masks");
  EXPECT_THROW(list_dataset(d), DatasetError);
}

TEST(Dataset, SizeMismatchIsRejected) {
  const auto d = scratch_dir("mismatch");
  write_bytes(d / "images" / "a.ppm", std::string("P6 1 1 255\n") + "abc");
  write_bytes(d / "masks" / "a.pgm", pgm(2, 1, {0, 0}));
  EXPECT_THROW(load_dataset(d), DatasetError);
}

TEST(Dataset, WriteThenLoadRoundTrip) {
  const auto d = scratch_dir("write");
  const auto samples = synth_blobs(3, 32, 5);
  write_dataset(d, samples);
  const auto back = load_dataset(d);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back[i].mask.values(), samples[i].mask.values());
}

TEST(Synth, DeterministicBinaryAndBounded) {
  const auto a = synth_blobs(6, 64, 42), b = synth_blobs(6, 64, 42);
  const auto tail = synth_blobs(2, 64, 42, 4);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(a[i].image.values(), b[i].image.values());
    EXPECT_EQ(a[i].mask.values(), b[i].mask.values());
    const double f = foreground_fraction(a[i].mask);
    EXPECT_GE(f, 0.01);
    EXPECT_LE(f, 0.5);
    for (float v : a[i].mask.values()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
    for (float v : a[i].image.values()) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
  }
  EXPECT_EQ(tail[0].mask.values(), a[4].mask.values());
  EXPECT_NE(synth_blobs(1, 64, 43)[0].mask.values(), a[0].mask.values());
}

TEST(Augment, NoneIsIdentity) {
  const auto s = synth_blobs(1, 32, 1)[0];
  std::mt19937_64 rng(1);
  const auto out = augment(s, AugmentConfig::none(), rng);
  EXPECT_EQ(out.image.values(), s.image.values());
  EXPECT_EQ(out.mask.values(), s.mask.values());
}

TEST(Augment, FlipsAreInvolutions) {
  const auto s = synth_blobs(1, 32, 2)[0];
  EXPECT_EQ(flip_horizontal(flip_horizontal(s)).image.values(), s.image.values());
  EXPECT_EQ(flip_vertical(flip_vertical(s)).mask.values(), s.mask.values());
  EXPECT_NE(flip_horizontal(s).mask.values(), s.mask.values());
}

TEST(Augment, DilationOfSinglePixelIsPlus) {
  Tensor<float> m = Tensor<float>::zeros({1, 5, 5});
  m[12] = 1.0f;
  const auto d = morph_disk(m, 1, true);
  EXPECT_EQ(mask_area(d), 5.0);
  for (int i : {7, 11, 12, 13, 17}) EXPECT_EQ(d[i], 1.0f);
  EXPECT_EQ(mask_area(morph_disk(d, 1, false)), 1.0);
  EXPECT_EQ(morph_disk(m, 0, true).values(), m.values());
}

TEST(Augment, RotationPreservesAreaOfCentredDisk) {
  Sample s{Tensor<float>::zeros({3, 64, 64}), Tensor<float>::zeros({1, 64, 64}), "disk"};
  for (std::int64_t y = 0; y < 64; ++y)
    for (std::int64_t x = 0; x < 64; ++x)
      if ((y - 31.5) * (y - 31.5) + (x - 31.5) * (x - 31.5) <= 144.0) s.mask[y * 64 + x] = 1.0f;
  const double before = mask_area(s.mask);
  for (double deg = 0.0; deg < 360.0; deg += 7.5) {
    const double a = mask_area(rotate_about_center(s, deg).mask);
    EXPECT_LT(std::abs(a - before) / before, 0.05) << deg;
  }
}

TEST(Augment, ScaleChangesAreaByFactorSquared) {
  const auto s = square_sample(64, 22, 42);
  const double a = mask_area(scale_about_center(s, 1.2).mask);
  EXPECT_NEAR(a / 400.0, 1.44, 0.1);
}

TEST(Augment, OutputsStayValid) {
  const auto s = synth_blobs(1, 32, 4)[0];
  std::mt19937_64 rng(4);
  for (int k = 0; k < 10; ++k) {
    const auto out = augment(s, AugmentConfig{}, rng);
    EXPECT_EQ(out.image.shape(), s.image.shape());
    for (float v : out.mask.values()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
    for (float v : out.image.values()) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}
