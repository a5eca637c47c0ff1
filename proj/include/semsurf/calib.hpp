#pragma once

// Camera intrinsics and orientation from vanishing points of three mutually
// orthogonal scene directions.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semsurf/error.hpp"

namespace semsurf {

enum class View { A, B };

inline char view_char(View v) { return v == View::A ? 'A' : 'B'; }

struct LineSegment {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int plane_id = 0;
  View view = View::A;

  double length() const { return std::hypot(x1 - x0, y1 - y0); }
};

struct VanishingPoint {
  Eigen::Vector3d v = Eigen::Vector3d::UnitZ();  // unit norm

  // Pixel position, or nullopt for a point at infinity.
  std::optional<Eigen::Vector2d> finite(double eps = 1e-12) const {
    if (std::abs(v.z()) <= eps) return std::nullopt;
    return Eigen::Vector2d(v.x() / v.z(), v.y() / v.z());
  }
};

// Zero skew, unit aspect ratio.
struct Intrinsics {
  double f = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  Eigen::Matrix3d K() const {
    Eigen::Matrix3d k;
    k << f, 0, cx, 0, f, cy, 0, 0, 1;
    return k;
  }
};

inline bool principal_point_inside(const Intrinsics& k, int width, int height) {
  return k.cx >= 0 && k.cy >= 0 && k.cx <= width && k.cy <= height;
}

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

inline Eigen::Matrix3d rot_x(double rad) {
  return Eigen::AngleAxisd(rad, Eigen::Vector3d::UnitX()).toRotationMatrix();
}
inline Eigen::Matrix3d rot_y(double rad) {
  return Eigen::AngleAxisd(rad, Eigen::Vector3d::UnitY()).toRotationMatrix();
}
inline Eigen::Matrix3d rot_z(double rad) {
  return Eigen::AngleAxisd(rad, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

// Extrinsic Z-Y-X: R = Rx(x) * Ry(y) * Rz(z).
inline Eigen::Matrix3d euler_zyx_to_matrix(double z_deg, double y_deg, double x_deg) {
  return rot_x(deg2rad(x_deg)) * rot_y(deg2rad(y_deg)) * rot_z(deg2rad(z_deg));
}

struct RotationEstimate {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  double euler_z_deg = 0.0;
  double euler_y_deg = 0.0;
  double euler_x_deg = 0.0;

  static RotationEstimate from_matrix(const Eigen::Matrix3d& r) {
    RotationEstimate out;
    out.R = r;
    const double sy = std::clamp(r(0, 2), -1.0, 1.0);
    const double y = std::asin(sy);
    double x = 0.0, z = 0.0;
    if (std::abs(sy) < 1.0 - 1e-12) {
      x = std::atan2(-r(1, 2), r(2, 2));
      z = std::atan2(-r(0, 1), r(0, 0));
    } else {
      // Gimbal lock: only x + z (or x - z) is observable; put it all in x.
      x = std::atan2(r(2, 1), r(1, 1));
    }
    out.euler_z_deg = rad2deg(z);
    out.euler_y_deg = rad2deg(y);
    out.euler_x_deg = rad2deg(x);
    return out;
  }
};

// Nearest rotation in the Frobenius sense.
inline Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

namespace detail {

// Flips v so that its first coordinate with |c| > eps, in `order`, is positive.
inline Eigen::Vector3d orient(Eigen::Vector3d v, std::array<int, 3> order, double eps = 1e-12) {
  for (int i : order)
    if (std::abs(v[i]) > eps) return v[i] < 0 ? Eigen::Vector3d(-v) : v;
  return v;
}

inline Eigen::Vector3d sign_largest_positive(Eigen::Vector3d v) {
  int imax = 0;
  v.cwiseAbs().maxCoeff(&imax);
  return v[imax] < 0 ? Eigen::Vector3d(-v) : v;
}

}  // namespace detail

// Least-squares intersection of the segments' supporting lines.
inline VanishingPoint vanishing_point(std::span<const LineSegment> segs) {
  if (segs.size() < 2) throw InputError("vanishing point needs at least 2 segments");
  for (const auto& s : segs) {
    if (s.plane_id != segs[0].plane_id || s.view != segs[0].view)
      throw InputError("segments must share plane_id and view");
    if (s.length() <= 1.0) throw InputError("segment endpoints must be more than 1 px apart");
  }

  // Condition endpoint coordinates to zero centroid and RMS radius sqrt(2).
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& s : segs) c += Eigen::Vector2d(s.x0 + s.x1, s.y0 + s.y1);
  c /= 2.0 * static_cast<double>(segs.size());
  double ss = 0.0;
  for (const auto& s : segs)
    ss += (Eigen::Vector2d(s.x0, s.y0) - c).squaredNorm() + (Eigen::Vector2d(s.x1, s.y1) - c).squaredNorm();
  const double scale = std::sqrt(2.0) / std::sqrt(ss / (2.0 * static_cast<double>(segs.size())));

  Eigen::MatrixXd lines(static_cast<Eigen::Index>(std::max<std::size_t>(segs.size(), 3)), 3);
  lines.setZero();
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const Eigen::Vector3d p0((segs[i].x0 - c.x()) * scale, (segs[i].y0 - c.y()) * scale, 1.0);
    const Eigen::Vector3d p1((segs[i].x1 - c.x()) * scale, (segs[i].y1 - c.y()) * scale, 1.0);
    Eigen::Vector3d l = p0.cross(p1);
    l /= l.head<2>().norm();  // l.p is then the point-line distance
    lines.row(static_cast<Eigen::Index>(i)) = l.transpose();
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(lines, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(1) <= 1e-12 * sv(0)) throw DegenerateError("all segments collinear");

  const Eigen::Vector3d vn = svd.matrixV().col(2);
  // Undo conditioning: p' = T p  =>  v = T^-1 v'.
  Eigen::Vector3d v(vn.x() / scale + c.x() * vn.z(), vn.y() / scale + c.y() * vn.z(), vn.z());
  return VanishingPoint{detail::sign_largest_positive(v.normalized())};
}

namespace detail {

// Coefficients of v^T w u for w = [[w1,0,w2],[0,w1,w3],[w2,w3,w4]].
inline Eigen::RowVector4d iac_row(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return {a.x() * b.x() + a.y() * b.y(), a.x() * b.z() + a.z() * b.x(), a.y() * b.z() + a.z() * b.y(),
          a.z() * b.z()};
}

}  // namespace detail

// Solves the orthogonality constraints of one or more VP triples (one per
// view, same camera) for (f, cx, cy).
inline Intrinsics intrinsics_from_vp_triples(std::span<const std::array<VanishingPoint, 3>> triples) {
  if (triples.empty()) throw InputError("no vanishing point triples");

  // Rough pixel scale so that the conditioned IAC entries are O(1).
  std::vector<double> radii;
  for (const auto& t : triples)
    for (const auto& vp : t) {
      const Eigen::Vector3d v = vp.v.normalized();
      if (std::abs(v.z()) > 1e-9) radii.push_back(v.head<2>().norm() / std::abs(v.z()));
    }
  double s = 1.0;
  if (!radii.empty()) {
    std::nth_element(radii.begin(), radii.begin() + static_cast<long>(radii.size() / 2), radii.end());
    s = radii[radii.size() / 2];
    if (!(s > 1e-9)) s = 1.0;
  }

  Eigen::MatrixXd a(static_cast<Eigen::Index>(std::max<std::size_t>(3 * triples.size(), 4)), 4);
  a.setZero();
  Eigen::Index row = 0;
  for (const auto& t : triples) {
    std::array<Eigen::Vector3d, 3> v;
    for (int i = 0; i < 3; ++i) v[i] = Eigen::Vector3d(t[i].v.x() / s, t[i].v.y() / s, t[i].v.z()).normalized();
    a.row(row++) = detail::iac_row(v[0], v[1]);
    a.row(row++) = detail::iac_row(v[0], v[2]);
    a.row(row++) = detail::iac_row(v[1], v[2]);
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(0) > 0) || sv(2) <= 1e-10 * sv(0)) throw DegenerateError("degenerate configuration");
  const Eigen::Vector4d w = svd.matrixV().col(3);
  if (std::abs(w(0)) <= 1e-15 * w.norm()) throw DegenerateError("degenerate configuration");

  const double cx = -w(1) / w(0);
  const double cy = -w(2) / w(0);
  const double f2 = w(3) / w(0) - cx * cx - cy * cy;
  if (!(f2 > 0)) throw DegenerateError("negative f^2: inconsistent annotation");
  return Intrinsics{s * std::sqrt(f2), s * cx, s * cy};
}

inline Intrinsics intrinsics_from_orthogonal_vps(const VanishingPoint& v1, const VanishingPoint& v2,
                                                 const VanishingPoint& v3) {
  const std::array<std::array<VanishingPoint, 3>, 1> t{{{v1, v2, v3}}};
  return intrinsics_from_vp_triples(t);
}

// Camera orientation whose columns are the back-projected vanishing
// directions. Column signs: r3 has positive z, r1 has positive x (first
// nonzero of x, y, z), r2 completes det = +1.
inline RotationEstimate rotation_from_vps(const Intrinsics& k, const VanishingPoint& v1, const VanishingPoint& v2,
                                          const VanishingPoint& v3) {
  if (!(k.f > 0)) throw InputError("focal length must be positive");
  const Eigen::Matrix3d kinv = k.K().inverse();
  Eigen::Vector3d r1 = (kinv * v1.v).normalized();
  Eigen::Vector3d r2 = (kinv * v2.v).normalized();
  Eigen::Vector3d r3 = (kinv * v3.v).normalized();
  r3 = detail::orient(r3, {2, 0, 1});
  r1 = detail::orient(r1, {0, 1, 2});

  Eigen::Matrix3d m;
  m.col(0) = r1;
  m.col(1) = r2;
  m.col(2) = r3;
  if (m.determinant() < 0) m.col(1) = -r2;

  const Eigen::Matrix3d r = nearest_rotation(m);
  if ((m - r).norm() > 0.2) throw DegenerateError("vanishing directions are not orthogonal: inconsistent annotations");
  return RotationEstimate::from_matrix(r);
}

// Rotation taking view-A camera coordinates to view-B camera coordinates.
inline RotationEstimate relative_rotation(const RotationEstimate& ra, const RotationEstimate& rb) {
  return RotationEstimate::from_matrix(rb.R * ra.R.transpose());
}

// Vanishing directions are unsigned, so each view's axes are only known up to
// the sign patterns that keep det = +1. These are the four relative rotations
// consistent with the two estimates; the first is relative_rotation().
inline std::array<Eigen::Matrix3d, 4> relative_rotation_candidates(const RotationEstimate& ra,
                                                                   const RotationEstimate& rb) {
  std::array<Eigen::Matrix3d, 4> out;
  const std::array<Eigen::Vector3d, 4> signs{Eigen::Vector3d(1, 1, 1), Eigen::Vector3d(1, -1, -1),
                                             Eigen::Vector3d(-1, 1, -1), Eigen::Vector3d(-1, -1, 1)};
  for (std::size_t i = 0; i < 4; ++i) out[i] = rb.R * signs[i].asDiagonal() * ra.R.transpose();
  return out;
}

struct CalibrationResult {
  Intrinsics intrinsics;
  std::map<View, std::array<VanishingPoint, 3>> vps;
  std::map<View, RotationEstimate> orientation;
  std::optional<RotationEstimate> relative;  // present when both views are annotated
};

// Full calibration from annotated segments. Every annotated view must carry
// all three plane groups; the intrinsics are shared across views.
inline CalibrationResult calibrate(std::span<const LineSegment> segments) {
  std::map<View, std::array<std::vector<LineSegment>, 3>> groups;
  for (const auto& s : segments) {
    if (s.plane_id < 0 || s.plane_id > 2) throw InputError("plane_id must be 0, 1 or 2");
    groups[s.view][static_cast<std::size_t>(s.plane_id)].push_back(s);
  }
  if (groups.empty()) throw InputError("no line segments");

  CalibrationResult out;
  std::vector<std::array<VanishingPoint, 3>> triples;
  for (const auto& [view, planes] : groups) {
    std::array<VanishingPoint, 3> t;
    for (std::size_t p = 0; p < 3; ++p) {
      if (planes[p].size() < 2)
        throw InputError(std::string("view ") + view_char(view) + " plane " + std::to_string(p) +
                         " needs at least 2 segments");
      t[p] = vanishing_point(planes[p]);
    }
    out.vps[view] = t;
    triples.push_back(t);
  }
  out.intrinsics = intrinsics_from_vp_triples(triples);
  for (const auto& [view, t] : out.vps) out.orientation[view] = rotation_from_vps(out.intrinsics, t[0], t[1], t[2]);
  if (out.orientation.count(View::A) && out.orientation.count(View::B))
    out.relative = relative_rotation(out.orientation.at(View::A), out.orientation.at(View::B));
  return out;
}

}  // namespace semsurf
