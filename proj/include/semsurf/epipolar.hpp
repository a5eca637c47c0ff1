#pragma once

// Fundamental matrix estimation (normalized eight-point), epipoles, Sampson
// residuals and the epipole-stability harness.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semsurf/calib.hpp"
#include "semsurf/error.hpp"

namespace semsurf {

struct Correspondence {
  std::string id;
  double xa = 0, ya = 0;
  double xb = 0, yb = 0;

  Eigen::Vector2d a() const { return {xa, ya}; }
  Eigen::Vector2d b() const { return {xb, yb}; }
};

inline void require_unique_ids(std::span<const Correspondence> corrs) {
  std::set<std::string> seen;
  for (const auto& c : corrs)
    if (!seen.insert(c.id).second) throw InputError("duplicate correspondence id: " + c.id);
}

struct NormalizationTransform {
  Eigen::Matrix3d T = Eigen::Matrix3d::Identity();

  double scale() const { return T(0, 0); }
  Eigen::Vector2d apply(const Eigen::Vector2d& p) const { return (T * p.homogeneous()).hnormalized(); }
};

struct NormalizedPoints {
  NormalizationTransform transform;
  std::vector<Eigen::Vector2d> points;
};

// Similarity taking the points to zero centroid and RMS radius sqrt(2).
inline NormalizedPoints hartley_normalize(std::span<const Eigen::Vector2d> pts) {
  if (pts.size() < 2) throw InputError("normalization needs at least 2 points");
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double ss = 0.0;
  for (const auto& p : pts) ss += (p - c).squaredNorm();
  const double rms = std::sqrt(ss / static_cast<double>(pts.size()));
  if (!(rms > 1e-12 * (1.0 + c.norm()))) throw DegenerateError("all points coincident");

  const double s = std::sqrt(2.0) / rms;
  NormalizedPoints out;
  out.transform.T << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  out.points.reserve(pts.size());
  for (const auto& p : pts) out.points.emplace_back(s * (p - c));
  return out;
}

// Unit Frobenius norm, largest-magnitude entry positive, rank 2.
struct FundamentalMatrix {
  Eigen::Matrix3d F = Eigen::Matrix3d::Zero();
};

struct Epipoles {
  Eigen::Vector3d e_a = Eigen::Vector3d::UnitZ();  // right null vector (image A)
  Eigen::Vector3d e_b = Eigen::Vector3d::UnitZ();  // left null vector (image B)
};

namespace detail {

inline Eigen::Matrix3d canonical_fundamental(Eigen::Matrix3d f) {
  f /= f.norm();
  Eigen::Index r = 0, c = 0;
  f.cwiseAbs().maxCoeff(&r, &c);
  if (f(r, c) < 0) f = -f;
  return f;
}

inline void require_spread(std::span<const Eigen::Vector2d> pts, const char* view) {
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  for (const auto& p : pts) cov += (p - c) * (p - c).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  if (es.eigenvalues()(0) <= 1e-12 * es.eigenvalues()(1))
    throw DegenerateError(std::string("points collinear in view ") + view);
}

}  // namespace detail

inline FundamentalMatrix fundamental_from_matrix(const Eigen::Matrix3d& f) {
  return FundamentalMatrix{detail::canonical_fundamental(f)};
}

// Normalized eight-point estimate with x_b^T F x_a = 0.
inline FundamentalMatrix eight_point(std::span<const Correspondence> corrs) {
  if (corrs.size() < 8) throw InputError("insufficient correspondences");
  require_unique_ids(corrs);

  std::vector<Eigen::Vector2d> pa, pb;
  pa.reserve(corrs.size());
  pb.reserve(corrs.size());
  for (const auto& c : corrs) {
    pa.push_back(c.a());
    pb.push_back(c.b());
  }
  const auto na = hartley_normalize(pa);
  const auto nb = hartley_normalize(pb);
  detail::require_spread(na.points, "A");
  detail::require_spread(nb.points, "B");

  const auto n = static_cast<Eigen::Index>(corrs.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(std::max<Eigen::Index>(n, 9), 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = na.points[static_cast<std::size_t>(i)];
    const auto& q = nb.points[static_cast<std::size_t>(i)];
    a.row(i) << q.x() * p.x(), q.x() * p.y(), q.x(), q.y() * p.x(), q.y() * p.y(), q.y(), p.x(), p.y(), 1.0;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(7) <= 1e-12 * sv(0)) throw DegenerateError("degenerate configuration: constraint matrix rank deficient");

  const Eigen::VectorXd fv = svd.matrixV().col(8);
  Eigen::Matrix3d fhat;
  fhat << fv(0), fv(1), fv(2), fv(3), fv(4), fv(5), fv(6), fv(7), fv(8);

  Eigen::JacobiSVD<Eigen::Matrix3d> fs(fhat, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = fs.singularValues();
  s(2) = 0.0;
  fhat = fs.matrixU() * s.asDiagonal() * fs.matrixV().transpose();

  return fundamental_from_matrix(nb.transform.T.transpose() * fhat * na.transform.T);
}

inline Epipoles epipoles(const FundamentalMatrix& f) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(f.F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Epipoles e;
  e.e_a = detail::orient(svd.matrixV().col(2), {2, 1, 0}, 1e-10);
  e.e_b = detail::orient(svd.matrixU().col(2), {2, 1, 0}, 1e-10);
  return e;
}

// First-order geometric (Sampson) distance of each correspondence, in pixels.
inline std::vector<double> epipolar_residuals(const FundamentalMatrix& f, std::span<const Correspondence> corrs) {
  std::vector<double> out;
  out.reserve(corrs.size());
  for (const auto& c : corrs) {
    const Eigen::Vector3d xa = c.a().homogeneous();
    const Eigen::Vector3d xb = c.b().homogeneous();
    const Eigen::Vector3d fa = f.F * xa;
    const Eigen::Vector3d fb = f.F.transpose() * xb;
    const double num = xb.dot(fa);
    const double den = fa.head<2>().squaredNorm() + fb.head<2>().squaredNorm();
    out.push_back(den > 0 ? std::abs(num) / std::sqrt(den) : 0.0);
  }
  return out;
}

struct StabilityReport {
  int subset_size = 0;
  int trials = 0;
  double epipole_spread_deg = 0.0;
  std::vector<Eigen::Vector3d> epipoles;  // e_a per successful trial, in trial order
  int degenerate_trials = 0;
};

namespace detail {

// Unbiased draw in [0, n).
inline std::uint64_t bounded_draw(std::mt19937_64& g, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  for (;;) {
    const std::uint64_t x = g();
    if (x < limit) return x % n;
  }
}

// RMS angle (degrees) of unit axes about their principal axis; sign-blind.
inline double angular_spread_deg(std::span<const Eigen::Vector3d> axes) {
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const auto& e : axes) scatter += e * e.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(scatter);
  const Eigen::Vector3d mean = es.eigenvectors().col(2);
  double ss = 0.0;
  for (const auto& e : axes) {
    const double ang = std::acos(std::clamp(std::abs(e.normalized().dot(mean)), 0.0, 1.0));
    ss += ang * ang;
  }
  return rad2deg(std::sqrt(ss / static_cast<double>(axes.size())));
}

}  // namespace detail

// Epipole spread versus correspondence count. Trial t of subset size k draws
// its subset from an mt19937_64 stream seeded with (seed, k, t).
inline std::vector<StabilityReport> epipole_stability(std::span<const Correspondence> corrs,
                                                      std::span<const int> subset_sizes, int trials,
                                                      std::uint64_t seed) {
  if (trials < 2) throw InputError("stability needs at least 2 trials");
  require_unique_ids(corrs);
  const int n = static_cast<int>(corrs.size());

  std::vector<StabilityReport> reports;
  for (const int k : subset_sizes) {
    if (k < 8 || k > n) throw InputError("subset size out of range: " + std::to_string(k));
    StabilityReport rep;
    rep.subset_size = k;
    rep.trials = trials;

    std::vector<int> idx(static_cast<std::size_t>(n));
    std::vector<Correspondence> subset(static_cast<std::size_t>(k));
    for (int t = 0; t < trials; ++t) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(t)};
      std::mt19937_64 gen(seq);
      std::iota(idx.begin(), idx.end(), 0);
      for (int i = 0; i < k; ++i) {
        const auto j = i + static_cast<int>(detail::bounded_draw(gen, static_cast<std::uint64_t>(n - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        subset[static_cast<std::size_t>(i)] = corrs[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
      }
      try {
        rep.epipoles.push_back(epipoles(eight_point(subset)).e_a);
      } catch (const DegenerateError&) {
        ++rep.degenerate_trials;
      }
    }
    if (rep.epipoles.size() < 2)
      throw DegenerateError("fewer than 2 non-degenerate trials at subset size " + std::to_string(k));
    rep.epipole_spread_deg = detail::angular_spread_deg(rep.epipoles);
    reports.push_back(std::move(rep));
  }
  return reports;
}

}  // namespace semsurf
