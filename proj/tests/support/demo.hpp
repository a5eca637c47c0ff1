#pragma once

// Small end-to-end dataset: annotated cube edges in two views, point
// correspondences on a rough surface, and a 15-frame sequence whose texture
// drifts with a smooth field that steps across a diagonal crack.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "semsurf/formats.hpp"
#include "synthetic.hpp"

namespace semsurf::testing::demo {

constexpr int kWidth = 320, kHeight = 240, kFrames = 15;
constexpr double kUmPerPx = 0.05;
constexpr std::uint64_t kSeed = 7;

inline Eigen::Matrix3d view_a_rotation() { return tilted_pose(); }
inline Eigen::Matrix3d view_b_rotation() { return rot_y(deg2rad(12.0)) * rot_x(deg2rad(4.0)) * tilted_pose(); }
inline Eigen::Matrix3d intrinsics() { return make_K(520.0, 163.0, 118.0); }

inline double round1(double v) { return std::round(v * 10.0) / 10.0; }

// The twelve edges of a cube, grouped by direction.
inline std::vector<LineSegment> cube_edges(const PinholeCamera& cam, View view, Rng& rng) {
  constexpr double h = 0.4;
  std::vector<LineSegment> out;
  for (int axis = 0; axis < 3; ++axis)
    for (int s = 0; s < 4; ++s) {
      Eigen::Vector3d p0, p1;
      const int u = (axis + 1) % 3, v = (axis + 2) % 3;
      p0[axis] = -h;
      p1[axis] = h;
      p0[u] = p1[u] = (s & 1) ? h : -h;
      p0[v] = p1[v] = (s & 2) ? h : -h;
      const Eigen::Vector2d a = cam.project(p0), b = cam.project(p1);
      LineSegment l;
      l.plane_id = axis;
      l.view = view;
      l.x0 = round1(a.x() + rng.normal(0.15));
      l.y0 = round1(a.y() + rng.normal(0.15));
      l.x1 = round1(b.x() + rng.normal(0.15));
      l.y1 = round1(b.y() + rng.normal(0.15));
      out.push_back(l);
    }
  return out;
}

// Surface height in um above the mean plane at a view-A pixel.
inline double height_um(double x_px, double y_px) {
  return RoughSurface{0.35}.height(x_px * kUmPerPx - 8.0, y_px * kUmPerPx - 6.0);
}

// Final-frame displacement in px of the material at a view-A pixel.
inline Eigen::Vector2d drift_px(double x, double y) {
  const double side = 0.5 * (1.0 + std::tanh((x - 160.0 - 0.4 * (y - 120.0)) / 6.0));
  const double s = height_um(x, y) / 0.35;
  return {-1.0 + 2.2 * side + 0.8 * s, 2.0 + 1.2 * side + 0.6 * s};
}

inline std::vector<Correspondence> surface_correspondences(Rng& rng) {
  const Eigen::Matrix3d rel = view_b_rotation() * view_a_rotation().transpose();
  const Eigen::Vector3d centre(160.0 * kUmPerPx, 120.0 * kUmPerPx, 10.0);
  std::vector<Correspondence> out;
  for (int i = 0; i < 50; ++i) {
    const double x = 40.0 + 24.0 * (i % 10) + rng.uniform(2, 22);
    const double y = 40.0 + 32.0 * (i / 10) + rng.uniform(2, 30);
    const Eigen::Vector3d p(x * kUmPerPx, y * kUmPerPx, 10.0 - height_um(x, y));
    const Eigen::Vector3d pb = rel * (p - centre) + centre;
    Correspondence c;
    c.id = "p" + std::to_string(1000 + i + 1).substr(1);
    c.xa = round1(x + rng.normal(0.2));
    c.ya = round1(y + rng.normal(0.2));
    c.xb = round1(pb.x() / kUmPerPx - 6.0 + rng.normal(0.2));
    c.yb = round1(pb.y() / kUmPerPx + 4.0 + rng.normal(0.2));
    out.push_back(c);
  }
  return out;
}

inline Grid frame(int k) {
  const double t = static_cast<double>(k) / (kFrames - 1);
  const Texture tex{0.6 + 0.4 * t};
  return render(kWidth, kHeight, [&](double x, double y) {
    // fixed-point inverse of the forward warp
    Eigen::Vector2d src(x, y);
    for (int it = 0; it < 3; ++it) src = Eigen::Vector2d(x, y) - t * drift_px(src.x(), src.y());
    return tex(src.x(), src.y());
  });
}

// Writes the dataset into `dir`; returns the config path.
inline std::filesystem::path write_demo(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "frames");
  Rng rng(kSeed);

  const PinholeCamera a = look_at_origin(intrinsics(), view_a_rotation(), 3.5);
  const PinholeCamera b = look_at_origin(intrinsics(), view_b_rotation(), 3.5);
  auto lines = cube_edges(a, View::A, rng);
  const auto lb = cube_edges(b, View::B, rng);
  lines.insert(lines.end(), lb.begin(), lb.end());
  write_lines_csv(dir / "lines.csv", lines);
  write_correspondences_csv(dir / "correspondences.csv", surface_correspondences(rng));

  ojson frames = ojson::array();
  for (int k = 0; k < kFrames; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "frames/f%02d.pgm", k);
    save_pgm(frame(k), dir / name);
    frames.push_back({{"index", k}, {"timestamp_min", 80.0 * k}, {"cycles", 500000 * k}, {"path", name}});
  }
  write_json(dir / "frames.json", ojson{{"um_per_px", kUmPerPx}, {"frames", frames}});
  save_png(frame(0), dir / "view_a.png");
  save_pgm(render(kWidth, kHeight, [](double x, double y) { return Texture{}(x + 6.0, y - 4.0); }), dir / "view_b.pgm");

  const ojson cfg{{"lines", "lines.csv"},
                  {"correspondences", "correspondences.csv"},
                  {"manifest", "frames.json"},
                  {"view_a", "view_a.png"},
                  {"view_b", "view_b.pgm"},
                  {"um_per_px", kUmPerPx},
                  {"out_dir", "out"},
                  {"seed", kSeed},
                  {"flow", {{"window", 21}, {"levels", 3}, {"max_iter", 30}, {"eps", 0.01}, {"fb_threshold", 1.0}}},
                  {"shi_tomasi", {{"quality_level", 0.35}, {"min_distance", 7.0}, {"block_size", 7}, {"max_corners", 60}}},
                  {"analysis", {{"bin_width_um", 0.02}, {"exclude_suspect", false}}},
                  {"stability", {{"subset_sizes", {10, 20, 30, 40, 50}}, {"trials", 200}}},
                  {"profiles", ojson::array({{{"name", "crack"}, {"anchor_um", {8.0, 6.0}}, {"angle_deg", 35.0}, {"corridor_um", 1.0}}})}};
  write_json(dir / "config.json", cfg);
  return dir / "config.json";
}

}  // namespace semsurf::testing::demo
