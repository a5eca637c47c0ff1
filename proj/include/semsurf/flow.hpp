#pragma once

// Shi-Tomasi corners and pyramidal Lucas-Kanade tracking, including the
// reverse-chronological propagation used to follow end-state points back to
// the undeformed sample.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "semsurf/error.hpp"
#include "semsurf/image.hpp"

namespace semsurf {

struct Corner {
  double x = 0, y = 0;
  double response = 0;  // minimum eigenvalue of the block-weighted structure tensor
};

struct ShiTomasiParams {
  double quality_level = 0.35;
  double min_distance = 7.0;
  int block_size = 7;
  int max_corners = 0;  // 0 keeps every corner
};

namespace detail {

inline double min_eig_2x2(double a, double b, double c) {
  const double half_tr = 0.5 * (a + c);
  const double disc = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
  return std::max(0.0, half_tr - disc);
}

inline bool stronger(const Corner& a, const Corner& b) {
  if (a.response != b.response) return a.response > b.response;
  if (a.y != b.y) return a.y < b.y;
  return a.x < b.x;
}

}  // namespace detail

// Greedy suppression: walk corners in canonical order (response desc, y, x)
// and keep those at least min_distance from every kept corner.
inline std::vector<Corner> suppress_non_maxima(std::vector<Corner> cands, double min_distance, int max_corners = 0) {
  std::stable_sort(cands.begin(), cands.end(), detail::stronger);
  std::vector<Corner> kept;
  const double d2 = min_distance * min_distance;
  for (const auto& c : cands) {
    const bool clear = std::none_of(kept.begin(), kept.end(), [&](const Corner& k) {
      const double dx = k.x - c.x, dy = k.y - c.y;
      return dx * dx + dy * dy < d2;
    });
    if (!clear) continue;
    kept.push_back(c);
    if (max_corners > 0 && static_cast<int>(kept.size()) == max_corners) break;
  }
  return kept;
}

// Minimum eigenvalue of the structure tensor averaged over a block_size
// window with binomial weights (summing to 1).
inline Grid min_eigen_response(const Grid& img, int block_size) {
  const auto grad = image_gradients(img);
  const int w = img.width, h = img.height, r = block_size / 2;
  std::vector<double> wt(static_cast<std::size_t>(block_size), 1.0);
  for (int n = 1; n < block_size; ++n)
    for (int k = n; k > 0; --k) wt[static_cast<std::size_t>(k)] += wt[static_cast<std::size_t>(k - 1)];
  const double total = std::ldexp(1.0, block_size - 1);
  for (double& v : wt) v /= total;

  // Separable weighted sums of Ix^2, IxIy, Iy^2 with replicated borders.
  std::array<Grid, 3> prod{Grid(w, h), Grid(w, h), Grid(w, h)};
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    prod[0].data[i] = grad.ix.data[i] * grad.ix.data[i];
    prod[1].data[i] = grad.ix.data[i] * grad.iy.data[i];
    prod[2].data[i] = grad.iy.data[i] * grad.iy.data[i];
  }
  for (auto& g : prod) {
    Grid tmp(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int d = -r; d <= r; ++d) acc += wt[static_cast<std::size_t>(d + r)] * g.clamped(x + d, y);
        tmp(x, y) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int d = -r; d <= r; ++d) acc += wt[static_cast<std::size_t>(d + r)] * tmp.clamped(x, y + d);
        g(x, y) = acc;
      }
  }
  Grid resp(w, h);
  for (std::size_t i = 0; i < resp.data.size(); ++i)
    resp.data[i] = detail::min_eig_2x2(prod[0].data[i], prod[1].data[i], prod[2].data[i]);
  return resp;
}

inline std::vector<Corner> shi_tomasi(const Grid& img, const ShiTomasiParams& p) {
  if (p.block_size < 3 || p.block_size % 2 == 0) throw InputError("block_size must be odd and >= 3");
  if (!(p.quality_level > 0 && p.quality_level <= 1)) throw InputError("quality_level must be in (0, 1]");
  if (p.min_distance < 0) throw InputError("min_distance must be non-negative");
  if (img.width < p.block_size || img.height < p.block_size) throw InputError("image smaller than block_size");

  const Grid resp = min_eigen_response(img, p.block_size);
  const double rmax = *std::max_element(resp.data.begin(), resp.data.end());
  if (!(rmax > 1e-15)) return {};
  const double thresh = p.quality_level * rmax;

  std::vector<Corner> cands;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (resp(x, y) >= thresh) cands.push_back({static_cast<double>(x), static_cast<double>(y), resp(x, y)});
  auto picked = suppress_non_maxima(std::move(cands), p.min_distance);

  // Parabolic sub-pixel refinement of each survivor along x and y.
  auto offset = [](double lm, double c0, double lp) {
    const double den = lm - 2.0 * c0 + lp;
    if (!(den < 0)) return 0.0;
    return std::clamp(0.5 * (lm - lp) / den, -0.5, 0.5);
  };
  for (auto& c : picked) {
    const int x = static_cast<int>(c.x), y = static_cast<int>(c.y);
    c.x += offset(resp.clamped(x - 1, y), resp(x, y), resp.clamped(x + 1, y));
    c.y += offset(resp.clamped(x, y - 1), resp(x, y), resp.clamped(x, y + 1));
  }
  // Refinement can pull two survivors together; re-impose the spacing.
  return suppress_non_maxima(std::move(picked), p.min_distance, p.max_corners);
}

enum class TrackStatus { tracked, lost, suspect };

inline const char* to_string(TrackStatus s) {
  switch (s) {
    case TrackStatus::tracked: return "tracked";
    case TrackStatus::lost: return "lost";
    case TrackStatus::suspect: return "suspect";
  }
  return "lost";
}

struct FlowParams {
  int window = 21;
  int levels = 3;
  int max_iter = 30;
  double eps = 0.01;
  double min_eig_threshold = 1e-4;
  double fb_threshold = 1.0;

  void validate() const {
    if (window < 3 || window % 2 == 0) throw InputError("window must be odd and >= 3");
    if (levels < 1) throw InputError("levels must be >= 1");
    if (max_iter < 1) throw InputError("max_iter must be >= 1");
    if (!(eps > 0)) throw InputError("eps must be positive");
    if (!(min_eig_threshold >= 0)) throw InputError("min_eig_threshold must be non-negative");
    if (!(fb_threshold > 0)) throw InputError("fb_threshold must be positive");
  }
};

// Pyramid plus gradients of one frame, reusable across frame pairs.
struct PreparedFrame {
  std::vector<Grid> pyramid;
  std::vector<Gradients> gradients;

  PreparedFrame(const Grid& img, int levels) : pyramid(gaussian_pyramid(img, levels)) {
    gradients.reserve(pyramid.size());
    for (const auto& g : pyramid) gradients.push_back(image_gradients(g));
  }
  int width() const { return pyramid.front().width; }
  int height() const { return pyramid.front().height; }
};

struct LkResult {
  std::vector<Eigen::Vector2d> points;
  std::vector<TrackStatus> status;
};

namespace detail {

inline bool window_inside(const Eigen::Vector2d& p, int half, int w, int h) {
  return p.x() - half >= 0 && p.y() - half >= 0 && p.x() + half <= w - 1 && p.y() + half <= h - 1;
}

inline TrackStatus lk_point(const PreparedFrame& prev, const PreparedFrame& next, const Eigen::Vector2d& pt,
                            const FlowParams& prm, Eigen::Vector2d& out) {
  const int half = prm.window / 2;
  const auto n = static_cast<std::size_t>(prm.window) * prm.window;
  const int levels = static_cast<int>(prev.pyramid.size());
  if (!window_inside(pt, half, prev.width(), prev.height())) return TrackStatus::lost;

  std::vector<double> iv(n), gx(n), gy(n);
  Eigen::Vector2d guess = Eigen::Vector2d::Zero();
  for (int lvl = levels - 1; lvl >= 0; --lvl) {
    const double scale = std::ldexp(1.0, lvl);
    const Eigen::Vector2d p = pt / scale;
    const Grid& i0 = prev.pyramid[static_cast<std::size_t>(lvl)];
    const Grid& j0 = next.pyramid[static_cast<std::size_t>(lvl)];
    const Gradients& gr = prev.gradients[static_cast<std::size_t>(lvl)];

    double gxx = 0, gxy = 0, gyy = 0;
    std::size_t k = 0;
    for (int dy = -half; dy <= half; ++dy)
      for (int dx = -half; dx <= half; ++dx, ++k) {
        const double sx = p.x() + dx, sy = p.y() + dy;
        iv[k] = i0.bilinear(sx, sy);
        gx[k] = gr.ix.bilinear(sx, sy);
        gy[k] = gr.iy.bilinear(sx, sy);
        gxx += gx[k] * gx[k];
        gxy += gx[k] * gy[k];
        gyy += gy[k] * gy[k];
      }
    const double det = gxx * gyy - gxy * gxy;
    const double min_eig = min_eig_2x2(gxx, gxy, gyy) / static_cast<double>(n);
    if (min_eig < prm.min_eig_threshold || !(det > 0)) {
      // Too little structure at this scale; coarse levels pass the guess on.
      if (lvl == 0) return TrackStatus::lost;
      guess *= 2.0;
      continue;
    }

    Eigen::Vector2d d = Eigen::Vector2d::Zero();
    bool converged = false;
    for (int it = 0; it < prm.max_iter; ++it) {
      const Eigen::Vector2d q = p + guess + d;
      if (!std::isfinite(q.x()) || !std::isfinite(q.y())) return TrackStatus::lost;
      double bx = 0, by = 0;
      k = 0;
      for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx, ++k) {
          const double diff = iv[k] - j0.bilinear(q.x() + dx, q.y() + dy);
          bx += diff * gx[k];
          by += diff * gy[k];
        }
      const Eigen::Vector2d step((gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det);
      d += step;
      if (step.norm() < prm.eps) {
        converged = true;
        break;
      }
    }
    if (lvl > 0) {
      guess = 2.0 * (guess + d);
    } else {
      if (!converged) return TrackStatus::lost;
      out = p + guess + d;
      if (!window_inside(out, half, next.width(), next.height())) return TrackStatus::lost;
    }
  }
  return TrackStatus::tracked;
}

}  // namespace detail

inline LkResult lk_track(const PreparedFrame& prev, const PreparedFrame& next, std::span<const Eigen::Vector2d> points,
                         const FlowParams& prm) {
  prm.validate();
  if (prev.width() != next.width() || prev.height() != next.height())
    throw InputError("frame dimension mismatch");
  if (prev.pyramid.size() != static_cast<std::size_t>(prm.levels) || next.pyramid.size() != prev.pyramid.size())
    throw InputError("prepared frames do not match the requested pyramid depth");
  LkResult r;
  r.points.resize(points.size());
  r.status.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    r.points[i] = points[i];
    r.status[i] = detail::lk_point(prev, next, points[i], prm, r.points[i]);
  }
  return r;
}

inline LkResult lk_track(const Grid& prev, const Grid& next, std::span<const Eigen::Vector2d> points,
                         const FlowParams& prm) {
  prm.validate();
  if (!prev.same_shape(next)) throw InputError("frame dimension mismatch");
  return lk_track(PreparedFrame(prev, prm.levels), PreparedFrame(next, prm.levels), points, prm);
}

inline LkResult lk_track(const ImageFrame& prev, const ImageFrame& next, std::span<const Eigen::Vector2d> points,
                         const FlowParams& prm) {
  return lk_track(prev.pixels, next.pixels, points, prm);
}

struct FbResult {
  LkResult forward;
  std::vector<double> fb_error;  // +inf where either direction lost the point
};

// Tracks prev -> next -> prev. Forward status becomes `suspect` where the
// round trip misses the start point by more than fb_threshold.
inline FbResult forward_backward_check(const PreparedFrame& prev, const PreparedFrame& next,
                                       std::span<const Eigen::Vector2d> points, const FlowParams& prm) {
  FbResult r;
  r.forward = lk_track(prev, next, points, prm);
  const LkResult back = lk_track(next, prev, r.forward.points, prm);
  r.fb_error.resize(points.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (r.forward.status[i] == TrackStatus::lost) continue;
    if (back.status[i] != TrackStatus::lost) r.fb_error[i] = (back.points[i] - points[i]).norm();
    if (!(r.fb_error[i] <= prm.fb_threshold)) r.forward.status[i] = TrackStatus::suspect;
  }
  return r;
}

inline FbResult forward_backward_check(const Grid& prev, const Grid& next, std::span<const Eigen::Vector2d> points,
                                       const FlowParams& prm) {
  prm.validate();
  if (!prev.same_shape(next)) throw InputError("frame dimension mismatch");
  return forward_backward_check(PreparedFrame(prev, prm.levels), PreparedFrame(next, prm.levels), points, prm);
}

struct SeedPoint {
  std::string id;
  double x = 0, y = 0;
};

struct TrackStep {
  int frame_index = 0;
  double x = 0, y = 0;  // NaN for the `lost` step
  TrackStatus status = TrackStatus::tracked;
};

struct Track {
  std::string id;
  std::vector<TrackStep> steps;  // traversal order: final frame first

  bool any_suspect() const {
    return std::any_of(steps.begin(), steps.end(), [](const auto& s) { return s.status == TrackStatus::suspect; });
  }
};

struct TrackSet {
  std::vector<Track> tracks;
  bool reverse = true;
};

// Chains lk_track from the last frame back to the first. A lost point gets
// one `lost` step and no positions after it.
inline TrackSet reverse_propagate(const FrameSequence& seq, std::span<const SeedPoint> seeds, const FlowParams& prm) {
  prm.validate();
  if (seq.empty()) throw InputError("empty sequence");
  const auto& last = seq.frames.back();
  for (const auto& s : seeds)
    if (!(s.x >= 0 && s.y >= 0 && s.x <= last.width() - 1 && s.y <= last.height() - 1))
      throw InputError("seed out of bounds: " + s.id);

  TrackSet ts;
  ts.tracks.reserve(seeds.size());
  std::vector<Eigen::Vector2d> pos;
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    ts.tracks.push_back({seeds[i].id, {{last.meta.frame_index, seeds[i].x, seeds[i].y, TrackStatus::tracked}}});
    active.push_back(i);
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto next_prepared = std::make_unique<PreparedFrame>(last.pixels, prm.levels);
  for (std::size_t k = seq.size() - 1; k > 0 && !active.empty(); --k) {
    const auto cur = std::move(next_prepared);
    const auto& earlier = seq.frames[k - 1];
    next_prepared = std::make_unique<PreparedFrame>(earlier.pixels, prm.levels);

    pos.clear();
    for (const auto i : active) {
      const auto& st = ts.tracks[i].steps.back();
      pos.emplace_back(st.x, st.y);
    }
    const FbResult fb = forward_backward_check(*cur, *next_prepared, pos, prm);
    std::vector<std::size_t> still;
    for (std::size_t a = 0; a < active.size(); ++a) {
      auto& tr = ts.tracks[active[a]];
      const auto status = fb.forward.status[a];
      if (status == TrackStatus::lost) {
        tr.steps.push_back({earlier.meta.frame_index, nan, nan, TrackStatus::lost});
        continue;
      }
      tr.steps.push_back({earlier.meta.frame_index, fb.forward.points[a].x(), fb.forward.points[a].y(), status});
      still.push_back(active[a]);
    }
    active = std::move(still);
  }
  return ts;
}

}  // namespace semsurf
