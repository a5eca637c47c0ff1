#pragma once

// Image ingestion, frame sequences, Gaussian pyramids and Sobel gradients.
//
// Intensities are doubles in [0,1], row-major. Every border access uses edge
// replication.

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "semsurf/error.hpp"

namespace semsurf {

struct Grid {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Grid() = default;
  Grid(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
    if (w <= 0 || h <= 0) throw InputError("grid dimensions must be positive");
  }

  double& operator()(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double operator()(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

  double clamped(int x, int y) const {
    x = std::clamp(x, 0, width - 1);
    y = std::clamp(y, 0, height - 1);
    return (*this)(x, y);
  }

  // Bilinear sample with replicated borders.
  double bilinear(double x, double y) const {
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    const double ax = x - fx;
    const double ay = y - fy;
    const double top = (1.0 - ax) * clamped(x0, y0) + ax * clamped(x0 + 1, y0);
    const double bot = (1.0 - ax) * clamped(x0, y0 + 1) + ax * clamped(x0 + 1, y0 + 1);
    return (1.0 - ay) * top + ay * bot;
  }

  bool same_shape(const Grid& o) const { return width == o.width && height == o.height; }
};

struct FrameMeta {
  int frame_index = 0;
  double timestamp_min = 0.0;
  std::int64_t cycles = 0;
  double um_per_px = 1.0;
};

struct ImageFrame {
  Grid pixels;
  FrameMeta meta;

  int width() const { return pixels.width; }
  int height() const { return pixels.height; }
};

struct FrameSequence {
  std::vector<ImageFrame> frames;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
  double um_per_px() const { return frames.empty() ? 0.0 : frames.front().meta.um_per_px; }
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open image: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Reads the next whitespace-delimited PNM header token, skipping comments.
inline std::string pnm_token(const std::vector<unsigned char>& bytes, std::size_t& pos) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::string tok;
  while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#')
    tok.push_back(static_cast<char>(bytes[pos++]));
  return tok;
}

inline int pnm_int(const std::vector<unsigned char>& bytes, std::size_t& pos, const char* what) {
  const std::string tok = pnm_token(bytes, pos);
  try {
    std::size_t used = 0;
    const long v = std::stol(tok, &used);
    if (used != tok.size() || v < 0 || v > (1L << 30)) throw std::invalid_argument(tok);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw InputError(std::string("malformed PGM header field '") + what + "'");
  }
}

inline Grid decode_pgm(const std::vector<unsigned char>& bytes, const std::string& name) {
  std::size_t pos = 0;
  const std::string magic = pnm_token(bytes, pos);
  const bool ascii = magic == "P2";
  if (!ascii && magic != "P5") throw InputError("not a grayscale PGM: " + name);
  const int w = pnm_int(bytes, pos, "width");
  const int h = pnm_int(bytes, pos, "height");
  const int maxval = pnm_int(bytes, pos, "maxval");
  if (w == 0 || h == 0) throw InputError("zero-dimension image: " + name);
  if (maxval == 0 || maxval > 255) throw InputError("unsupported bit depth: " + name);

  Grid g(w, h);
  const std::size_t n = g.data.size();
  if (ascii) {
    for (std::size_t i = 0; i < n; ++i) {
      const int v = pnm_int(bytes, pos, "pixel");
      if (v > maxval) throw InputError("PGM pixel exceeds maxval: " + name);
      g.data[i] = static_cast<double>(v) / maxval;
    }
  } else {
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + n) throw InputError("truncated PGM raster: " + name);
    for (std::size_t i = 0; i < n; ++i) g.data[i] = static_cast<double>(bytes[pos + i]) / maxval;
  }
  return g;
}

inline std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

inline Grid decode_png(const std::vector<unsigned char>& bytes, const std::string& name) {
  // IHDR is always the first chunk: 8-byte signature, 8-byte chunk header.
  if (bytes.size() < 33) throw InputError("truncated PNG: " + name);
  const std::uint32_t w = be32(&bytes[16]);
  const std::uint32_t h = be32(&bytes[20]);
  const int bit_depth = bytes[24];
  const int color_type = bytes[25];
  if (w == 0 || h == 0) throw InputError("zero-dimension image: " + name);
  if (bit_depth != 8) throw InputError("unsupported bit depth: " + name);

  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw InputError("cannot decode PNG " + name + ": " + img.message);
  const bool gray = (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA);
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> raster(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, raster.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw InputError("cannot decode PNG " + name + ": " + msg);
  }

  Grid g(static_cast<int>(w), static_cast<int>(h));
  if (gray) {
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = raster[i] / 255.0;
  } else {
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      const double r = raster[3 * i], gr = raster[3 * i + 1], b = raster[3 * i + 2];
      g.data[i] = (0.299 * r + 0.587 * gr + 0.114 * b) / 255.0;
    }
  }
  return g;
}

inline unsigned char quantize(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

// Reads an 8-bit PGM (P2/P5) or PNG raster. RGB is reduced with ITU-R 601 luma.
inline Grid read_grayscale(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("missing file: " + path.string());
  const auto bytes = detail::read_file_bytes(path);
  static constexpr std::array<unsigned char, 8> png_sig{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(png_sig.begin(), png_sig.end(), bytes.begin()))
    return detail::decode_png(bytes, path.string());
  if (bytes.size() >= 2 && bytes[0] == 'P') return detail::decode_pgm(bytes, path.string());
  throw InputError("unsupported image format: " + path.string());
}

inline ImageFrame load_image(const std::filesystem::path& path, const FrameMeta& meta) {
  if (!(meta.um_per_px > 0.0)) throw InputError("um_per_px must be positive");
  return ImageFrame{read_grayscale(path), meta};
}

// Binary P5, values quantized to 8 bits.
inline void save_pgm(const Grid& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write image: " + path.string());
  out << "P5\n" << g.width << ' ' << g.height << "\n255\n";
  std::vector<unsigned char> raster(g.data.size());
  std::transform(g.data.begin(), g.data.end(), raster.begin(), detail::quantize);
  out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
}

inline void save_png(const Grid& g, const std::filesystem::path& path) {
  std::vector<unsigned char> raster(g.data.size());
  std::transform(g.data.begin(), g.data.end(), raster.begin(), detail::quantize);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(g.width);
  img.height = static_cast<png_uint_32>(g.height);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, raster.data(), 0, nullptr))
    throw InputError("cannot write PNG " + path.string() + ": " + img.message);
}

// Enforces the ordering and homogeneity rules of a frame sequence.
inline void validate_sequence(const FrameSequence& seq) {
  if (seq.empty()) throw InputError("empty sequence");
  const auto& first = seq.frames.front();
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto& f = seq.frames[i];
    if (!(f.meta.um_per_px > 0.0)) throw InputError("um_per_px must be positive");
    if (f.meta.um_per_px != first.meta.um_per_px) throw InputError("mixed um_per_px");
    if (!f.pixels.same_shape(first.pixels)) throw InputError("mixed frame dimensions");
    if (f.meta.timestamp_min < 0.0 || f.meta.cycles < 0)
      throw InputError("negative timestamp or cycle count");
    if (i == 0) continue;
    const auto& p = seq.frames[i - 1];
    if (f.meta.frame_index == p.meta.frame_index) throw InputError("duplicate frame_index");
    if (f.meta.frame_index < p.meta.frame_index) throw InputError("frame_index not increasing");
    if (f.meta.timestamp_min < p.meta.timestamp_min) throw InputError("non-monotone timestamps");
    if (f.meta.cycles < p.meta.cycles) throw InputError("non-monotone cycles");
  }
}

// Loads a frames.json manifest. Relative image paths resolve against the
// manifest's directory.
inline FrameSequence load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("missing file: " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("malformed manifest " + path.string() + ": " + e.what());
  }

  FrameSequence seq;
  try {
    const double um_per_px = doc.at("um_per_px").get<double>();
    const auto& entries = doc.at("frames");
    if (!entries.is_array() || entries.empty()) throw InputError("empty sequence");

    std::set<int> seen;
    std::vector<std::pair<FrameMeta, std::filesystem::path>> metas;
    for (const auto& e : entries) {
      FrameMeta m;
      m.frame_index = e.at("index").get<int>();
      m.timestamp_min = e.at("timestamp_min").get<double>();
      m.cycles = e.at("cycles").get<std::int64_t>();
      m.um_per_px = e.contains("um_per_px") ? e.at("um_per_px").get<double>() : um_per_px;
      if (m.um_per_px != um_per_px) throw InputError("mixed um_per_px");
      if (!seen.insert(m.frame_index).second) throw InputError("duplicate frame_index");
      std::filesystem::path img = e.at("path").get<std::string>();
      if (img.is_relative()) img = path.parent_path() / img;
      metas.emplace_back(m, img);
    }
    std::sort(metas.begin(), metas.end(),
              [](const auto& a, const auto& b) { return a.first.frame_index < b.first.frame_index; });
    for (const auto& [m, img] : metas) seq.frames.push_back(load_image(img, m));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed manifest " + path.string() + ": " + e.what());
  }
  validate_sequence(seq);
  return seq;
}

namespace detail {

// Separable (1,4,6,4,1)/16 blur with replicated borders.
inline Grid binomial_blur(const Grid& src) {
  static constexpr std::array<double, 5> k{1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  Grid tmp(src.width, src.height);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      double s = 0.0;
      for (int i = -2; i <= 2; ++i) s += k[i + 2] * src.clamped(x + i, y);
      tmp(x, y) = s;
    }
  Grid out(src.width, src.height);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      double s = 0.0;
      for (int i = -2; i <= 2; ++i) s += k[i + 2] * tmp.clamped(x, y + i);
      out(x, y) = s;
    }
  return out;
}

}  // namespace detail

// Level k has dimensions floor(dim / 2^k).
inline std::vector<Grid> gaussian_pyramid(const Grid& img, int levels) {
  if (levels < 1) throw InputError("pyramid levels must be >= 1");
  const long need = 1L << (levels - 1);
  if (img.width < need || img.height < need) throw InputError("image too small for requested levels");
  std::vector<Grid> pyr;
  pyr.reserve(static_cast<std::size_t>(levels));
  pyr.push_back(img);
  for (int l = 1; l < levels; ++l) {
    const Grid blurred = detail::binomial_blur(pyr.back());
    Grid down(blurred.width / 2, blurred.height / 2);
    for (int y = 0; y < down.height; ++y)
      for (int x = 0; x < down.width; ++x) down(x, y) = blurred(2 * x, 2 * y);
    pyr.push_back(std::move(down));
  }
  return pyr;
}

inline std::vector<Grid> gaussian_pyramid(const ImageFrame& img, int levels) {
  return gaussian_pyramid(img.pixels, levels);
}

struct Gradients {
  Grid ix;
  Grid iy;
};

// 3x3 Sobel scaled by 1/8: a unit-slope ramp has gradient exactly 1.
inline Gradients image_gradients(const Grid& img) {
  if (img.width < 3 || img.height < 3) throw InputError("image smaller than 3x3");
  Gradients g{Grid(img.width, img.height), Grid(img.width, img.height)};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double a = img.clamped(x - 1, y - 1), b = img.clamped(x, y - 1), c = img.clamped(x + 1, y - 1);
      const double d = img.clamped(x - 1, y), f = img.clamped(x + 1, y);
      const double p = img.clamped(x - 1, y + 1), q = img.clamped(x, y + 1), r = img.clamped(x + 1, y + 1);
      g.ix(x, y) = ((c + 2.0 * f + r) - (a + 2.0 * d + p)) / 8.0;
      g.iy(x, y) = ((p + 2.0 * q + r) - (a + 2.0 * b + c)) / 8.0;
    }
  return g;
}

}  // namespace semsurf
