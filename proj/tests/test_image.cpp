#include <gtest/gtest.h>
#include <png.h>

#include <cstdint>
#include <vector>

#include "scratch.hpp"
#include "semsurf/image.hpp"

using namespace semsurf;
using semsurf::testing::scratch_dir;
using semsurf::testing::spit;

TEST(ReadGrayscale, BinaryPgmScaledToUnitRange) {
  const auto dir = scratch_dir("pgm");
  spit(dir / "a.pgm", std::string("P5\n2 2\n255\n") + std::string("\x00\xff\x80\x40", 4));
  const Grid g = read_grayscale(dir / "a.pgm");
  ASSERT_EQ(g.width, 2);
  ASSERT_EQ(g.height, 2);
  EXPECT_DOUBLE_EQ(g(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(g(1, 0), 1.0);
  EXPECT_NEAR(g(0, 1), 0.50196, 1e-5);
  EXPECT_NEAR(g(1, 1), 0.25098, 1e-5);
}

TEST(ReadGrayscale, AsciiPgmWithComments) {
  const auto dir = scratch_dir("pgm_ascii");
  spit(dir / "a.pgm", "P2\n# comment\n3 1\n# another\n10\n0 5 10\n");
  const Grid g = read_grayscale(dir / "a.pgm");
  EXPECT_DOUBLE_EQ(g(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(g(2, 0), 1.0);
}

TEST(ReadGrayscale, SixteenBitPgmRejected) {
  const auto dir = scratch_dir("pgm16");
  spit(dir / "a.pgm", std::string("P5\n1 1\n65535\n") + std::string("\x12\x34", 2));
  try {
    read_grayscale(dir / "a.pgm");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported bit depth"), std::string::npos);
  }
}

TEST(ReadGrayscale, TruncatedPgmRejected) {
  const auto dir = scratch_dir("pgm_trunc");
  spit(dir / "a.pgm", "P5\n4 4\n255\nab");
  EXPECT_THROW(read_grayscale(dir / "a.pgm"), InputError);
}

TEST(ReadGrayscale, RgbPngUsesLuma) {
  const auto dir = scratch_dir("png_rgb");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = 2;
  img.height = 1;
  img.format = PNG_FORMAT_RGB;
  const unsigned char px[6] = {255, 0, 0, 0, 0, 255};
  ASSERT_TRUE(png_image_write_to_file(&img, (dir / "a.png").c_str(), 0, px, 0, nullptr));
  const Grid g = read_grayscale(dir / "a.png");
  EXPECT_NEAR(g(0, 0), 0.299, 1e-12);
  EXPECT_NEAR(g(1, 0), 0.114, 1e-12);
}

TEST(ReadGrayscale, SixteenBitPngRejected) {
  const auto dir = scratch_dir("png16");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = 2;
  img.height = 2;
  img.format = PNG_FORMAT_LINEAR_Y;
  const std::uint16_t px[4] = {0, 1000, 40000, 65535};
  ASSERT_TRUE(png_image_write_to_file(&img, (dir / "a.png").c_str(), 0, px, 0, nullptr));
  try {
    read_grayscale(dir / "a.png");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported bit depth"), std::string::npos);
  }
}

TEST(ReadGrayscale, PngRoundTrip) {
  const auto dir = scratch_dir("png_rt");
  Grid g(5, 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) g(x, y) = (x * 3 + y * 17) / 255.0;
  save_png(g, dir / "a.png");
  const Grid r = read_grayscale(dir / "a.png");
  for (std::size_t i = 0; i < g.data.size(); ++i) EXPECT_NEAR(r.data[i], g.data[i], 1e-12);
}

TEST(ReadGrayscale, MissingFile) { EXPECT_THROW(read_grayscale("/nonexistent/x.pgm"), InputError); }

namespace {

std::filesystem::path write_sequence(const std::string& name, int n, const std::string& extra_frames = "") {
  const auto dir = scratch_dir(name);
  std::string frames;
  for (int i = 0; i < n; ++i) {
    save_pgm(Grid(8, 8, 0.5), dir / ("f" + std::to_string(i) + ".pgm"));
    if (i) frames += ",";
    frames += R"({"index": )" + std::to_string(i) + R"(, "path": "f)" + std::to_string(i) +
              R"(.pgm", "timestamp_min": )" + std::to_string(80 * i) + R"(, "cycles": )" +
              std::to_string(500000 * i) + "}";
  }
  frames += extra_frames;
  spit(dir / "frames.json", R"({"um_per_px": 0.05, "frames": [)" + frames + "]}");
  return dir / "frames.json";
}

}  // namespace

TEST(LoadManifest, FifteenFrames) {
  const auto seq = load_manifest(write_sequence("seq15", 15));
  ASSERT_EQ(seq.size(), 15u);
  EXPECT_DOUBLE_EQ(seq.um_per_px(), 0.05);
  EXPECT_EQ(seq.frames[14].meta.cycles, 7000000);
  EXPECT_DOUBLE_EQ(seq.frames[3].meta.timestamp_min, 240.0);
}

TEST(LoadManifest, EmptySequence) {
  const auto dir = scratch_dir("seq_empty");
  spit(dir / "frames.json", R"({"um_per_px": 0.05, "frames": []})");
  try {
    load_manifest(dir / "frames.json");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("empty sequence"), std::string::npos);
  }
}

TEST(LoadManifest, DuplicateFrameIndex) {
  const auto p = write_sequence("seq_dup", 2, R"(, {"index": 1, "path": "f1.pgm", "timestamp_min": 90, "cycles": 1})");
  try {
    load_manifest(p);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate frame_index"), std::string::npos);
  }
}

TEST(LoadManifest, MixedScaleRejected) {
  const auto p = write_sequence(
      "seq_mixed", 1, R"(, {"index": 1, "path": "f0.pgm", "timestamp_min": 90, "cycles": 1, "um_per_px": 0.1})");
  EXPECT_THROW(load_manifest(p), InputError);
}

TEST(LoadManifest, MissingImageNamesPath) {
  const auto dir = scratch_dir("seq_missing");
  spit(dir / "frames.json",
       R"({"um_per_px": 0.05, "frames": [{"index": 0, "path": "nope.pgm", "timestamp_min": 0, "cycles": 0}]})");
  try {
    load_manifest(dir / "frames.json");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.pgm"), std::string::npos);
  }
}

TEST(ValidateSequence, NonMonotoneTimestamps) {
  FrameSequence s;
  s.frames.push_back({Grid(4, 4), {0, 10.0, 0, 0.05}});
  s.frames.push_back({Grid(4, 4), {1, 5.0, 1, 0.05}});
  EXPECT_THROW(validate_sequence(s), InputError);
}

TEST(ValidateSequence, MixedDimensions) {
  FrameSequence s;
  s.frames.push_back({Grid(4, 4), {0, 0, 0, 0.05}});
  s.frames.push_back({Grid(5, 4), {1, 1, 1, 0.05}});
  EXPECT_THROW(validate_sequence(s), InputError);
}

TEST(GaussianPyramid, HalvesDimensions) {
  const auto p = gaussian_pyramid(Grid(64, 64), 3);
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p[1].width, 32);
  EXPECT_EQ(p[2].width, 16);
  EXPECT_EQ(p[2].height, 16);
}

TEST(GaussianPyramid, ConstantStaysConstant) {
  const auto p = gaussian_pyramid(Grid(20, 14, 0.5), 2);
  for (double v : p[1].data) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(GaussianPyramid, TooSmall) {
  try {
    gaussian_pyramid(Grid(4, 4), 4);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("image too small"), std::string::npos);
  }
}

TEST(ImageGradients, ConstantHasZeroGradient) {
  const auto g = image_gradients(Grid(9, 7, 0.3));
  for (double v : g.ix.data) EXPECT_EQ(v, 0.0);
  for (double v : g.iy.data) EXPECT_EQ(v, 0.0);
}

TEST(ImageGradients, Ramps) {
  Grid gx(10, 8), gy(10, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 10; ++x) {
      gx(x, y) = 0.01 * x;
      gy(x, y) = 0.02 * y;
    }
  const auto a = image_gradients(gx), b = image_gradients(gy);
  for (int y = 1; y < 7; ++y)
    for (int x = 1; x < 9; ++x) {
      EXPECT_NEAR(a.ix(x, y), 0.01, 1e-15);
      EXPECT_NEAR(a.iy(x, y), 0.0, 1e-15);
      EXPECT_NEAR(b.iy(x, y), 0.02, 1e-15);
      EXPECT_NEAR(b.ix(x, y), 0.0, 1e-15);
    }
}

TEST(Grid, BilinearInterpolatesExactlyOnRamps) {
  Grid g(6, 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) g(x, y) = 2.0 * x - 0.5 * y;
  EXPECT_NEAR(g.bilinear(2.25, 3.5), 2.0 * 2.25 - 0.5 * 3.5, 1e-12);
}
