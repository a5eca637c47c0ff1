#pragma once

// Summary statistics over tracks and depths: net displacements, histograms,
// the two-population split and depth-versus-lateral correlations.
//
// Axis convention is the image one: +x right, +y down.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semsurf/error.hpp"
#include "semsurf/flow.hpp"
#include "semsurf/sfm.hpp"

namespace semsurf {

struct DisplacementRecord {
  std::string id;
  double dx_um = 0, dy_um = 0, dist_um = 0;
  bool suspect = false;
};

struct NetDisplacements {
  std::vector<DisplacementRecord> records;
  int excluded_single_position = 0;
};

// Start-to-finish displacement: (position at the final frame) minus (earliest
// tracked position). Tracks with a single position are skipped and counted.
inline NetDisplacements net_displacements(const TrackSet& tracks, double um_per_px) {
  if (!(um_per_px > 0)) throw InputError("um_per_px must be positive");
  NetDisplacements out;
  for (const auto& t : tracks.tracks) {
    const TrackStep* final_pos = nullptr;
    const TrackStep* earliest = nullptr;
    int n = 0;
    for (const auto& s : t.steps) {
      if (s.status == TrackStatus::lost) break;
      if (!final_pos) final_pos = &s;
      earliest = &s;
      ++n;
    }
    if (!tracks.reverse) std::swap(final_pos, earliest);
    if (n < 2) {
      ++out.excluded_single_position;
      continue;
    }
    DisplacementRecord r;
    r.id = t.id;
    r.dx_um = (final_pos->x - earliest->x) * um_per_px;
    r.dy_um = (final_pos->y - earliest->y) * um_per_px;
    r.dist_um = std::hypot(r.dx_um, r.dy_um);
    r.suspect = t.any_suspect();
    out.records.push_back(std::move(r));
  }
  return out;
}

// Bins [k w, (k+1) w) for integer k; edges.size() == counts.size() + 1.
struct Histogram {
  double bin_width = 0;
  std::vector<double> edges;
  std::vector<long> counts;

  long total() const {
    long s = 0;
    for (long c : counts) s += c;
    return s;
  }
};

inline Histogram histogram(std::span<const double> values, double bin_width) {
  if (!(bin_width > 0)) throw InputError("bin_width must be positive");
  if (values.empty()) throw InputError("histogram of no values");
  auto bin_of = [&](double v) {
    auto k = static_cast<long>(std::floor(v / bin_width));
    while (v < static_cast<double>(k) * bin_width) --k;
    while (v >= static_cast<double>(k + 1) * bin_width) ++k;
    return k;
  };
  std::vector<long> bins;
  bins.reserve(values.size());
  for (double v : values) {
    if (!std::isfinite(v)) throw InputError("histogram value is not finite");
    bins.push_back(bin_of(v));
  }
  const auto [lo, hi] = std::minmax_element(bins.begin(), bins.end());
  Histogram h;
  h.bin_width = bin_width;
  for (long k = *lo; k <= *hi + 1; ++k) h.edges.push_back(static_cast<double>(k) * bin_width);
  h.counts.assign(static_cast<std::size_t>(*hi - *lo + 1), 0);
  for (long k : bins) ++h.counts[static_cast<std::size_t>(k - *lo)];
  return h;
}

struct BimodalSplit {
  double threshold_um = 0;
  double lower_mean_um = 0, upper_mean_um = 0;
  int lower_count = 0, upper_count = 0;
};

// 1D two-means seeded at min and max, iterated until the assignment is stable.
inline BimodalSplit two_means_split(std::span<const double> values) {
  if (values.size() < 2) throw InputError("two-means split needs at least 2 values");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  if (*mn == *mx) throw DegenerateError("degenerate: identical values");

  double lo = *mn, hi = *mx;
  std::vector<char> upper(values.size(), 0);
  for (int iter = 0; iter < 10000; ++iter) {
    bool changed = iter == 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const char u = std::abs(values[i] - hi) < std::abs(values[i] - lo) ? 1 : 0;
      if (u != upper[i]) changed = true;
      upper[i] = u;
    }
    if (!changed) break;
    double sl = 0, su = 0;
    int nl = 0, nu = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (upper[i]) {
        su += values[i];
        ++nu;
      } else {
        sl += values[i];
        ++nl;
      }
    }
    lo = sl / nl;
    hi = su / nu;
  }
  BimodalSplit s;
  s.lower_mean_um = lo;
  s.upper_mean_um = hi;
  s.threshold_um = 0.5 * (lo + hi);
  s.upper_count = static_cast<int>(std::count(upper.begin(), upper.end(), 1));
  s.lower_count = static_cast<int>(values.size()) - s.upper_count;
  return s;
}

struct DisplacementStats {
  double mean_dx_um = 0, mean_dy_um = 0, mean_dist_um = 0;
  Histogram hist_dx, hist_dy, hist_dist;
  int n_points = 0;
  int n_suspect = 0;
};

inline DisplacementStats displacement_stats(std::span<const DisplacementRecord> recs, double bin_width,
                                            bool exclude_suspect = false) {
  std::vector<double> dx, dy, dist;
  DisplacementStats st;
  for (const auto& r : recs) {
    if (r.suspect) ++st.n_suspect;
    if (r.suspect && exclude_suspect) continue;
    dx.push_back(r.dx_um);
    dy.push_back(r.dy_um);
    dist.push_back(r.dist_um);
  }
  if (dx.empty()) throw InputError("no displacement records to summarize");
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  st.n_points = static_cast<int>(dx.size());
  st.mean_dx_um = mean(dx);
  st.mean_dy_um = mean(dy);
  st.mean_dist_um = mean(dist);
  st.hist_dx = histogram(dx, bin_width);
  st.hist_dy = histogram(dy, bin_width);
  st.hist_dist = histogram(dist, bin_width);
  return st;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 3) throw InputError("pearson needs at least 3 paired values");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0) || !(syy > 0)) throw DegenerateError("zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct ScatterSeries {
  std::vector<double> lateral;  // x axis of the panel
  std::vector<double> depth;    // z (or |z|)
  std::optional<double> r;      // nullopt when either series is constant
};

struct DepthLateralCorrelation {
  std::vector<std::string> ids;  // joined ids, sorted
  ScatterSeries z_vs_dist, absz_vs_dist, z_vs_dx, z_vs_dy;
};

inline DepthLateralCorrelation correlate_depth_lateral(const SurfacePointCloud& cloud,
                                                       std::span<const DisplacementRecord> recs) {
  std::map<std::string, double> depth;
  for (const auto& p : cloud.points) depth[p.id] = p.z_um;
  std::map<std::string, const DisplacementRecord*> joined;
  for (const auto& r : recs)
    if (depth.count(r.id)) joined[r.id] = &r;
  if (joined.empty()) throw InputError("no joined points");
  if (joined.size() < 3) throw InputError("fewer than 3 joined points");

  DepthLateralCorrelation c;
  for (const auto& [id, r] : joined) {
    const double z = depth.at(id);
    c.ids.push_back(id);
    c.z_vs_dist.lateral.push_back(r->dist_um);
    c.z_vs_dist.depth.push_back(z);
    c.absz_vs_dist.lateral.push_back(r->dist_um);
    c.absz_vs_dist.depth.push_back(std::abs(z));
    c.z_vs_dx.lateral.push_back(r->dx_um);
    c.z_vs_dx.depth.push_back(z);
    c.z_vs_dy.lateral.push_back(r->dy_um);
    c.z_vs_dy.depth.push_back(z);
  }
  for (auto* s : {&c.z_vs_dist, &c.absz_vs_dist, &c.z_vs_dx, &c.z_vs_dy}) {
    try {
      s->r = pearson(s->lateral, s->depth);
    } catch (const DegenerateError&) {
      s->r.reset();
    }
  }
  return c;
}

}  // namespace semsurf
