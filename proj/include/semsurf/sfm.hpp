#pragma once

// Affine (Tomasi-Kanade) factorization of tracked points, metric upgrade,
// plane-relative depth in microns, crack profiles and axis projections.
//
// Frames: the metric structure lives in view-A camera coordinates (x right,
// y down, z away from the camera). Depth reported to users is positive toward
// the camera.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semsurf/calib.hpp"
#include "semsurf/epipolar.hpp"
#include "semsurf/error.hpp"

namespace semsurf {

// Observations of one point in every view; nullopt marks a missing one.
struct PointTrack {
  std::string id;
  std::vector<std::optional<Eigen::Vector2d>> views;
};

inline std::vector<PointTrack> tracks_from_correspondences(std::span<const Correspondence> corrs) {
  std::vector<PointTrack> out;
  out.reserve(corrs.size());
  for (const auto& c : corrs) out.push_back({c.id, {c.a(), c.b()}});
  return out;
}

// Registered 2V x P matrix: rows 0..V-1 hold x, rows V..2V-1 hold y.
struct MeasurementMatrix {
  Eigen::MatrixXd W;
  std::vector<Eigen::Vector2d> centroids;  // per view
  std::vector<std::string> ids;

  int views() const { return static_cast<int>(W.rows() / 2); }
  int points() const { return static_cast<int>(W.cols()); }
};

inline MeasurementMatrix build_measurement_matrix(std::span<const PointTrack> tracks) {
  if (tracks.empty()) throw InputError("P < 3 distinct points");
  const std::size_t v = tracks.front().views.size();
  if (v < 2) throw InputError("factorization needs at least 2 views");

  std::set<std::vector<double>> distinct;
  for (const auto& t : tracks) {
    if (t.views.size() != v) throw InputError("track " + t.id + " has an inconsistent view count");
    std::vector<double> key;
    for (const auto& o : t.views) {
      if (!o) throw InputError("missing observation for point " + t.id);
      key.push_back(o->x());
      key.push_back(o->y());
    }
    distinct.insert(std::move(key));
  }
  if (distinct.size() < 3) throw InputError("P < 3 distinct points");

  const auto nv = static_cast<Eigen::Index>(v);
  const auto np = static_cast<Eigen::Index>(tracks.size());
  MeasurementMatrix m;
  m.W.resize(2 * nv, np);
  for (Eigen::Index p = 0; p < np; ++p) {
    const auto& t = tracks[static_cast<std::size_t>(p)];
    m.ids.push_back(t.id);
    for (Eigen::Index k = 0; k < nv; ++k) {
      const auto& o = *t.views[static_cast<std::size_t>(k)];
      m.W(k, p) = o.x();
      m.W(nv + k, p) = o.y();
    }
  }
  for (Eigen::Index k = 0; k < nv; ++k) {
    const double cx = m.W.row(k).mean();
    const double cy = m.W.row(nv + k).mean();
    m.W.row(k).array() -= cx;
    m.W.row(nv + k).array() -= cy;
    m.centroids.emplace_back(cx, cy);
  }
  return m;
}

struct AffineStructure {
  Eigen::MatrixXd M;   // 2V x 3
  Eigen::Matrix3Xd S;  // 3 x P
  MeasurementMatrix measurements;
  Eigen::VectorXd singular_values;
  double residual = 0.0;  // ||W - M S||_F
  bool metric = false;
  std::vector<std::string> warnings;

  int views() const { return measurements.views(); }
  double relative_residual() const {
    const double w = measurements.W.norm();
    return w > 0 ? residual / w : 0.0;
  }
};

// Rank-3 truncated SVD, M = U3 sqrt(S3), S = sqrt(S3) V3^T.
inline AffineStructure factorize(const MeasurementMatrix& w, double rank_tol = 1e-9) {
  if (w.points() < 3 || w.views() < 2) throw InputError("measurement matrix too small");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(w.W, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv.size() < 3 || sv(2) <= rank_tol * sv(0))
    throw DegenerateError("rank-deficient: scene is planar (measurement matrix has rank 2)");

  AffineStructure out;
  const Eigen::Vector3d root = sv.head<3>().cwiseSqrt();
  out.M = svd.matrixU().leftCols<3>() * root.asDiagonal();
  out.S = root.asDiagonal() * svd.matrixV().leftCols<3>().transpose();
  out.measurements = w;
  out.singular_values = sv;
  out.residual = std::sqrt(sv.tail(sv.size() - 3).squaredNorm());
  return out;
}

namespace detail {

inline Eigen::Matrix<double, 1, 6> gram_row(const Eigen::RowVector3d& a, const Eigen::RowVector3d& b) {
  Eigen::Matrix<double, 1, 6> r;
  r << a(0) * b(0), a(0) * b(1) + a(1) * b(0), a(0) * b(2) + a(2) * b(0), a(1) * b(1), a(1) * b(2) + a(2) * b(1),
      a(2) * b(2);
  return r;
}

inline Eigen::Matrix3d gram_from(const Eigen::Matrix<double, 6, 1>& l) {
  Eigen::Matrix3d g;
  g << l(0), l(1), l(2), l(1), l(3), l(4), l(2), l(4), l(5);
  return g;
}

inline double min_eigenvalue(const Eigen::Matrix3d& g) {
  return Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(g, Eigen::EigenvaluesOnly).eigenvalues()(0);
}

// Q with Q Q^T = L. Small negative eigenvalues (rounding) are clamped to a
// tiny positive floor so that Q stays invertible.
inline Eigen::Matrix3d gram_factor(const Eigen::Matrix3d& l) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(l);
  Eigen::Vector3d lam = es.eigenvalues();
  const double lmax = lam(2);
  if (!(lmax > 0)) throw DegenerateError("metric upgrade: Gram matrix has no positive eigenvalue");
  if (lam(0) < -1e-6 * lmax) throw DegenerateError("metric upgrade: Gram matrix not positive semidefinite (inconsistent or noisy motion)");
  for (int i = 0; i < 3; ++i) lam(i) = std::max(lam(i), 1e-12 * lmax);
  return es.eigenvectors() * lam.cwiseSqrt().asDiagonal();
}

struct Upgraded {
  Eigen::MatrixXd M;
  Eigen::Matrix3d to_metric;  // S_metric = to_metric * S_affine
};

// Applies Q, then rotates so that view A's rows become [I | 0].
inline Upgraded apply_gauge(const Eigen::MatrixXd& m, const Eigen::Matrix3d& q, bool flip_depth) {
  const Eigen::Index v = m.rows() / 2;
  const Eigen::MatrixXd mq = m * q;
  const Eigen::Vector3d i = mq.row(0).transpose();
  const Eigen::Vector3d j = mq.row(v).transpose();
  Eigen::Matrix3d ra;
  ra.row(0) = i.transpose();
  ra.row(1) = j.transpose();
  ra.row(2) = i.cross(j).transpose();
  const Eigen::Matrix3d r = nearest_rotation(ra);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if (flip_depth) d(2, 2) = -1.0;
  return {mq * r.transpose() * d, d * r * q.inverse()};
}

inline Eigen::Matrix<double, 2, 3> view_rows(const Eigen::MatrixXd& m, Eigen::Index k) {
  const Eigen::Index v = m.rows() / 2;
  Eigen::Matrix<double, 2, 3> out;
  out.row(0) = m.row(k);
  out.row(1) = m.row(v + k);
  return out;
}

// Maximizes a unimodal function on [lo, hi].
inline double golden_max(const std::function<double(double)>& fn, double lo, double hi, int iters = 200) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = fn(c), fd = fn(d);
  for (int it = 0; it < iters && (b - a) > 1e-15 * (1.0 + std::abs(a) + std::abs(b)); ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = fn(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = fn(d);
    }
  }
  return 0.5 * (a + b);
}

// Feasible interval of t where lambda_min(L0 + t N) >= 0 (a concave function).
inline std::pair<double, double> psd_interval(const Eigen::Matrix3d& l0, const Eigen::Matrix3d& n) {
  auto g = [&](double t) { return min_eigenvalue(l0 + t * n); };
  // Bracket the maximum of g by geometric expansion.
  double step = std::max(1e-6, l0.norm());
  double lo = -step, hi = step;
  auto expand = [&](double t) {
    for (int guard = 0; g(t) > g(0.5 * t); ++guard) {
      if (guard >= 200) throw DegenerateError("metric upgrade: unbounded two-view family");
      t *= 2.0;
    }
    return t;
  };
  lo = expand(lo);
  hi = expand(hi);
  const double tstar = golden_max(g, lo, hi);
  if (g(tstar) <= 0) throw DegenerateError("metric upgrade: no positive definite Gram matrix in the two-view family");

  auto root = [&](double inside, double outside) {
    for (int guard = 0; g(outside) > 0; ++guard) {
      if (guard >= 200) throw DegenerateError("metric upgrade: unbounded two-view family");
      outside = inside + 2.0 * (outside - inside);
    }
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (inside + outside);
      (g(mid) > 0 ? inside : outside) = mid;
    }
    return inside;
  };
  return {root(tstar, lo), root(tstar, hi)};
}

}  // namespace detail

// Metric upgrade from the orthographic row constraints |i|=|j|=1, i.j=0.
//
// With two views the constraints leave a one-parameter family (depth scale
// traded against the out-of-plane rotation angle). `view_b_rotations`,
// candidate rotations taking view-A camera coordinates to view-B camera
// coordinates (e.g. from vanishing-point calibration), select the member whose
// view-B rows are closest to any of them; they also select the depth-reversal
// branch. Without them the best-conditioned family member is taken, depth sign
// follows the convention M(view 1, x-row, z) >= 0, and a warning is recorded.
inline AffineStructure metric_upgrade(const AffineStructure& in, std::span<const Eigen::Matrix3d> view_b_rotations) {
  const Eigen::Index v = in.M.rows() / 2;
  if (v < 2) throw InputError("metric upgrade needs at least 2 views");

  Eigen::MatrixXd g(3 * v, 6);
  Eigen::VectorXd rhs(3 * v);
  for (Eigen::Index k = 0; k < v; ++k) {
    const Eigen::RowVector3d i = in.M.row(k);
    const Eigen::RowVector3d j = in.M.row(v + k);
    g.row(3 * k) = detail::gram_row(i, i);
    g.row(3 * k + 1) = detail::gram_row(j, j);
    g.row(3 * k + 2) = detail::gram_row(i, j);
    rhs(3 * k) = 1.0;
    rhs(3 * k + 1) = 1.0;
    rhs(3 * k + 2) = 0.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const bool family = v == 2 || sv(5) <= 1e-9 * sv(0);

  AffineStructure out = in;
  const bool hinted = !view_b_rotations.empty();
  auto cost_for = [&](const detail::Upgraded& u) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : view_b_rotations)
      best = std::min(best, (detail::view_rows(u.M, 1) - r.topRows<2>()).squaredNorm());
    return best;
  };
  // Picks the depth-reversal branch for a given Q.
  auto choose_branch = [&](const Eigen::Matrix3d& q) {
    const detail::Upgraded keep = detail::apply_gauge(in.M, q, false);
    const detail::Upgraded flip = detail::apply_gauge(in.M, q, true);
    if (hinted) return cost_for(keep) <= cost_for(flip) ? keep : flip;
    return keep.M(1, 2) >= 0 ? keep : flip;
  };

  detail::Upgraded best;
  if (!family) {
    Eigen::VectorXd inv = sv.cwiseInverse();
    const Eigen::Matrix<double, 6, 1> l = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * rhs;
    best = choose_branch(detail::gram_factor(detail::gram_from(l)));
  } else {
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(6);
    for (int i = 0; i < 5; ++i) inv(i) = 1.0 / sv(i);
    const Eigen::Matrix<double, 6, 1> lp = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * rhs;
    const Eigen::Matrix<double, 6, 1> ln = svd.matrixV().col(5);
    const Eigen::Matrix3d l0 = detail::gram_from(lp);
    const Eigen::Matrix3d n = detail::gram_from(ln);
    const auto [lo, hi] = detail::psd_interval(l0, n);

    if (!hinted) {
      const double t = detail::golden_max([&](double s) { return detail::min_eigenvalue(l0 + s * n); }, lo, hi);
      best = choose_branch(detail::gram_factor(l0 + t * n));
      out.warnings.push_back("two-view depth scale ambiguity unresolved (no view-B rotation given)");
    } else {
      auto eval = [&](double t) { return -cost_for(choose_branch(detail::gram_factor(l0 + t * n))); };
      constexpr int samples = 512;
      double best_t = 0.5 * (lo + hi), best_v = -1e300;
      for (int s = 1; s < samples; ++s) {
        const double t = lo + (hi - lo) * s / samples;
        const double val = eval(t);
        if (val > best_v) {
          best_v = val;
          best_t = t;
        }
      }
      const double h = (hi - lo) / samples;
      const double t = detail::golden_max(eval, std::max(lo, best_t - h), std::min(hi, best_t + h));
      best = choose_branch(detail::gram_factor(l0 + t * n));
    }
  }

  out.M = best.M;
  out.S = best.to_metric * in.S;
  out.metric = true;
  return out;
}

inline AffineStructure metric_upgrade(const AffineStructure& in,
                                      const std::optional<Eigen::Matrix3d>& view_b_rotation = std::nullopt) {
  if (!view_b_rotation) return metric_upgrade(in, std::span<const Eigen::Matrix3d>{});
  return metric_upgrade(in, std::span<const Eigen::Matrix3d>(&*view_b_rotation, 1));
}

struct SurfacePoint {
  std::string id;
  double x_um = 0, y_um = 0, z_um = 0;
};

struct SurfacePointCloud {
  std::vector<SurfacePoint> points;
  Eigen::Vector3d plane_normal = Eigen::Vector3d::UnitZ();  // unit, oriented toward camera A
  double plane_offset = 0.0;                                // n.p + offset = 0 for points p on the plane (um)
};

// Scales the metric shape to microns, fits the least-squares plane and
// reports signed distances to it (positive toward camera A). x_um/y_um are
// the view-A image positions scaled to microns.
inline SurfacePointCloud scale_and_depth(const AffineStructure& st, double um_per_px) {
  if (!(um_per_px > 0)) throw InputError("um_per_px must be positive");
  const auto np = st.S.cols();
  if (np < 3) throw DegenerateError("plane undefined: fewer than 3 points");

  const Eigen::Matrix3Xd p = st.S * um_per_px;
  const Eigen::Vector3d c = p.rowwise().mean();
  const Eigen::Matrix3Xd d = p.colwise() - c;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(d * d.transpose());
  const Eigen::Vector3d lam = es.eigenvalues();
  if (lam(1) <= 1e-12 * lam(2)) throw DegenerateError("plane undefined: points are collinear");
  Eigen::Vector3d n = es.eigenvectors().col(0);
  if (n.z() > 0) n = -n;

  SurfacePointCloud cloud;
  cloud.plane_normal = n;
  cloud.plane_offset = -n.dot(c);
  const auto& m = st.measurements;
  const Eigen::Index v = m.views();
  for (Eigen::Index k = 0; k < np; ++k) {
    SurfacePoint sp;
    sp.id = m.ids[static_cast<std::size_t>(k)];
    sp.x_um = (m.W(0, k) + m.centroids[0].x()) * um_per_px;
    sp.y_um = (m.W(v, k) + m.centroids[0].y()) * um_per_px;
    sp.z_um = n.dot(d.col(k));
    cloud.points.push_back(std::move(sp));
  }
  return cloud;
}

struct CrackProfile {
  struct Sample {
    std::string id;
    double s_um = 0;
    double z_um = 0;
  };
  std::vector<Sample> samples;
  Eigen::Vector2d anchor_um = Eigen::Vector2d::Zero();
  double angle_deg = 0;
  double corridor_um = 0;
};

// Points within corridor_um of the line through `anchor` with direction
// (cos a, sin a) in image axes (+y down), ordered by arclength then id.
inline CrackProfile crack_profile(const SurfacePointCloud& cloud, const Eigen::Vector2d& anchor_um, double angle_deg,
                                  double corridor_um) {
  if (cloud.points.empty()) throw InputError("empty cloud");
  if (!(corridor_um > 0)) throw InputError("corridor_um must be positive");
  const Eigen::Vector2d dir(std::cos(deg2rad(angle_deg)), std::sin(deg2rad(angle_deg)));

  CrackProfile prof;
  prof.anchor_um = anchor_um;
  prof.angle_deg = angle_deg;
  prof.corridor_um = corridor_um;
  for (const auto& p : cloud.points) {
    const Eigen::Vector2d r = Eigen::Vector2d(p.x_um, p.y_um) - anchor_um;
    const double perp = std::abs(r.x() * dir.y() - r.y() * dir.x());
    if (perp <= corridor_um) prof.samples.push_back({p.id, r.dot(dir), p.z_um});
  }
  if (prof.samples.empty()) throw InputError("no points within corridor");
  std::sort(prof.samples.begin(), prof.samples.end(), [](const auto& a, const auto& b) {
    return a.s_um != b.s_um ? a.s_um < b.s_um : a.id < b.id;
  });
  return prof;
}

struct DepthProjections {
  std::vector<std::pair<double, double>> xz;
  std::vector<std::pair<double, double>> yz;
  std::optional<double> slope_zx;  // nullopt when all x are identical
  std::optional<double> slope_zy;
};

namespace detail {

inline std::optional<double> ols_slope(const std::vector<std::pair<double, double>>& pts) {
  double mx = 0, my = 0;
  for (const auto& [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double sxx = 0, sxy = 0;
  for (const auto& [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (!(sxx > 0)) return std::nullopt;
  return sxy / sxx;
}

}  // namespace detail

inline DepthProjections depth_projections(const SurfacePointCloud& cloud) {
  if (cloud.points.size() < 2) throw InputError("depth projections need at least 2 points");
  DepthProjections out;
  for (const auto& p : cloud.points) {
    out.xz.emplace_back(p.x_um, p.z_um);
    out.yz.emplace_back(p.y_um, p.z_um);
  }
  out.slope_zx = detail::ols_slope(out.xz);
  out.slope_zy = detail::ols_slope(out.yz);
  return out;
}

// build -> factorize -> metric upgrade -> depth, for two annotated views.
inline SurfacePointCloud reconstruct_surface(std::span<const Correspondence> corrs, double um_per_px,
                                             std::span<const Eigen::Matrix3d> view_b_rotations,
                                             std::vector<std::string>* warnings = nullptr) {
  require_unique_ids(corrs);
  const auto tracks = tracks_from_correspondences(corrs);
  const auto up = metric_upgrade(factorize(build_measurement_matrix(tracks)), view_b_rotations);
  if (warnings) warnings->insert(warnings->end(), up.warnings.begin(), up.warnings.end());
  return scale_and_depth(up, um_per_px);
}

}  // namespace semsurf
