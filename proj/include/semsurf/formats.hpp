#pragma once

// On-disk formats. CSV files are UTF-8, LF line endings, one header row,
// dot-decimal; floats use the shortest representation that round-trips.

#include <charconv>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "semsurf/analysis.hpp"
#include "semsurf/calib.hpp"
#include "semsurf/epipolar.hpp"
#include "semsurf/error.hpp"
#include "semsurf/flow.hpp"
#include "semsurf/sfm.hpp"

namespace semsurf {

using ojson = nlohmann::ordered_json;

// Shortest round-trip decimal; NaN/inf become an empty field.
inline std::string fmt_double(double v) {
  if (!std::isfinite(v)) return {};
  if (v == 0.0) v = 0.0;  // drop the sign of -0
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

struct CsvRow {
  int line = 0;
  std::vector<std::string> fields;
};

struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<CsvRow> rows;

  [[noreturn]] void fail(int line, int col, const std::string& msg) const {
    throw InputError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
  }

  double number(const CsvRow& r, std::size_t col) const {
    const std::string& s = r.fields[col];
    double v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
      fail(r.line, static_cast<int>(col) + 1, "expected a number in column '" + header[col] + "', got '" + s + "'");
    return v;
  }

  long integer(const CsvRow& r, std::size_t col) const {
    const std::string& s = r.fields[col];
    long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
      fail(r.line, static_cast<int>(col) + 1, "expected an integer in column '" + header[col] + "', got '" + s + "'");
    return v;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string join_header(const std::vector<std::string>& h) {
  std::string s;
  for (std::size_t i = 0; i < h.size(); ++i) s += (i ? "," : "") + h[i];
  return s;
}

}  // namespace detail

inline CsvTable parse_csv(std::istream& in, const std::string& source, const std::vector<std::string>& expected) {
  CsvTable t;
  t.source = source;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      t.header = detail::split_csv_line(line);
      if (t.header != expected)
        t.fail(1, 1, "expected header '" + detail::join_header(expected) + "', got '" + line + "'");
      continue;
    }
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != expected.size())
      t.fail(lineno, static_cast<int>(std::min(fields.size(), expected.size())) + 1,
             "expected " + std::to_string(expected.size()) + " fields, got " + std::to_string(fields.size()));
    t.rows.push_back({lineno, std::move(fields)});
  }
  if (lineno == 0) t.fail(1, 1, "empty file (missing header)");
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("missing file: " + path.string());
  return parse_csv(in, path.string(), expected);
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
      : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw InputError("cannot write: " + path.string());
    out_ << detail::join_header(header) << '\n';
  }

  template <class... Fields>
  void row(const Fields&... f) {
    bool first = true;
    ((out_ << (first ? "" : ",") << field(f), first = false), ...);
    out_ << '\n';
  }

 private:
  static std::string field(double v) { return fmt_double(v); }
  static std::string field(int v) { return std::to_string(v); }
  static std::string field(long v) { return std::to_string(v); }
  static std::string field(const std::string& s) { return s; }
  static std::string field(const char* s) { return s; }
  static std::string field(char c) { return std::string(1, c); }

  std::ofstream out_;
};

inline void write_json(const std::filesystem::path& path, const ojson& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write: " + path.string());
  out << j.dump(2) << '\n';
}

inline ojson read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("missing file: " + path.string());
  try {
    return ojson::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("malformed JSON " + path.string() + ": " + e.what());
  }
}

// lines.csv: plane_id,view,x0,y0,x1,y1
inline const std::vector<std::string> kLinesHeader{"plane_id", "view", "x0", "y0", "x1", "y1"};

inline std::vector<LineSegment> read_lines_csv(const std::filesystem::path& path) {
  const auto t = read_csv(path, kLinesHeader);
  std::vector<LineSegment> out;
  for (const auto& r : t.rows) {
    LineSegment s;
    const long pid = t.integer(r, 0);
    if (pid < 0 || pid > 2) t.fail(r.line, 1, "plane_id must be 0, 1 or 2");
    s.plane_id = static_cast<int>(pid);
    if (r.fields[1] == "A") s.view = View::A;
    else if (r.fields[1] == "B") s.view = View::B;
    else t.fail(r.line, 2, "view must be A or B");
    s.x0 = t.number(r, 2);
    s.y0 = t.number(r, 3);
    s.x1 = t.number(r, 4);
    s.y1 = t.number(r, 5);
    if (s.length() <= 1.0) t.fail(r.line, 3, "segment endpoints must be more than 1 px apart");
    out.push_back(s);
  }
  return out;
}

inline void write_lines_csv(const std::filesystem::path& path, std::span<const LineSegment> segs) {
  CsvWriter w(path, kLinesHeader);
  for (const auto& s : segs) w.row(s.plane_id, view_char(s.view), s.x0, s.y0, s.x1, s.y1);
}

// correspondences.csv: id,x_a,y_a,x_b,y_b
inline const std::vector<std::string> kCorrespondencesHeader{"id", "x_a", "y_a", "x_b", "y_b"};

inline std::vector<Correspondence> read_correspondences_csv(const std::filesystem::path& path) {
  const auto t = read_csv(path, kCorrespondencesHeader);
  std::vector<Correspondence> out;
  std::set<std::string> seen;
  for (const auto& r : t.rows) {
    if (r.fields[0].empty()) t.fail(r.line, 1, "empty id");
    if (!seen.insert(r.fields[0]).second) t.fail(r.line, 1, "duplicate id '" + r.fields[0] + "'");
    out.push_back({r.fields[0], t.number(r, 1), t.number(r, 2), t.number(r, 3), t.number(r, 4)});
  }
  return out;
}

inline void write_correspondences_csv(const std::filesystem::path& path, std::span<const Correspondence> corrs) {
  CsvWriter w(path, kCorrespondencesHeader);
  for (const auto& c : corrs) w.row(c.id, c.xa, c.ya, c.xb, c.yb);
}

// cloud.csv: id,x_um,y_um,z_um
inline const std::vector<std::string> kCloudHeader{"id", "x_um", "y_um", "z_um"};

inline void write_cloud_csv(const std::filesystem::path& path, const SurfacePointCloud& cloud) {
  CsvWriter w(path, kCloudHeader);
  for (const auto& p : cloud.points) w.row(p.id, p.x_um, p.y_um, p.z_um);
}

inline SurfacePointCloud read_cloud_csv(const std::filesystem::path& path) {
  const auto t = read_csv(path, kCloudHeader);
  SurfacePointCloud c;
  for (const auto& r : t.rows) c.points.push_back({r.fields[0], t.number(r, 1), t.number(r, 2), t.number(r, 3)});
  return c;
}

// profile_<name>.csv: id,s_um,z_um
inline void write_profile_csv(const std::filesystem::path& path, const CrackProfile& prof) {
  CsvWriter w(path, {"id", "s_um", "z_um"});
  for (const auto& s : prof.samples) w.row(s.id, s.s_um, s.z_um);
}

// corners.csv: id,x_px,y_px,response
inline const std::vector<std::string> kCornersHeader{"id", "x_px", "y_px", "response"};

inline std::string corner_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%03zu", i + 1);
  return buf;
}

inline void write_corners_csv(const std::filesystem::path& path, std::span<const Corner> corners) {
  CsvWriter w(path, kCornersHeader);
  for (std::size_t i = 0; i < corners.size(); ++i) w.row(corner_id(i), corners[i].x, corners[i].y, corners[i].response);
}

// Seeds from either cloud.csv (converted with um_per_px) or corners.csv.
inline std::vector<SeedPoint> read_seeds(const std::filesystem::path& path, double um_per_px) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("missing file: " + path.string());
  std::string first;
  std::getline(in, first);
  if (!first.empty() && first.back() == '\r') first.pop_back();
  std::vector<SeedPoint> seeds;
  if (first == detail::join_header(kCloudHeader)) {
    if (!(um_per_px > 0)) throw InputError("um_per_px must be positive");
    for (const auto& p : read_cloud_csv(path).points) seeds.push_back({p.id, p.x_um / um_per_px, p.y_um / um_per_px});
  } else if (first == detail::join_header(kCornersHeader)) {
    const auto t = read_csv(path, kCornersHeader);
    for (const auto& r : t.rows) seeds.push_back({r.fields[0], t.number(r, 1), t.number(r, 2)});
  } else {
    throw InputError(path.string() + ":1:1: seed file must have a cloud.csv or corners.csv header");
  }
  return seeds;
}

// tracks.csv: id,frame_index,x_px,y_px,status (x/y empty on `lost` rows)
inline const std::vector<std::string> kTracksHeader{"id", "frame_index", "x_px", "y_px", "status"};

inline void write_tracks_csv(const std::filesystem::path& path, const TrackSet& ts) {
  CsvWriter w(path, kTracksHeader);
  for (const auto& t : ts.tracks)
    for (const auto& s : t.steps) w.row(t.id, s.frame_index, s.x, s.y, to_string(s.status));
}

inline TrackSet read_tracks_csv(const std::filesystem::path& path) {
  const auto t = read_csv(path, kTracksHeader);
  TrackSet ts;
  std::map<std::string, std::size_t> index;
  for (const auto& r : t.rows) {
    TrackStep s;
    s.frame_index = static_cast<int>(t.integer(r, 1));
    const std::string& st = r.fields[4];
    if (st == "tracked") s.status = TrackStatus::tracked;
    else if (st == "suspect") s.status = TrackStatus::suspect;
    else if (st == "lost") s.status = TrackStatus::lost;
    else t.fail(r.line, 5, "status must be tracked, lost or suspect");
    if (s.status == TrackStatus::lost && r.fields[2].empty() && r.fields[3].empty()) {
      s.x = s.y = std::numeric_limits<double>::quiet_NaN();
    } else {
      s.x = t.number(r, 2);
      s.y = t.number(r, 3);
    }
    auto [it, inserted] = index.try_emplace(r.fields[0], ts.tracks.size());
    if (inserted) ts.tracks.push_back({r.fields[0], {}});
    ts.tracks[it->second].steps.push_back(s);
  }
  for (const auto& tr : ts.tracks)
    if (tr.steps.size() >= 2) {
      ts.reverse = tr.steps[0].frame_index > tr.steps[1].frame_index;
      break;
    }
  return ts;
}

// stability.csv: subset_size,trials,epipole_spread_deg
inline void write_stability_csv(const std::filesystem::path& path, std::span<const StabilityReport> reps) {
  CsvWriter w(path, {"subset_size", "trials", "epipole_spread_deg"});
  for (const auto& r : reps) w.row(r.subset_size, r.trials, r.epipole_spread_deg);
}

// histogram_<axis>.csv: bin_lo_um,bin_hi_um,count
inline void write_histogram_csv(const std::filesystem::path& path, const Histogram& h) {
  CsvWriter w(path, {"bin_lo_um", "bin_hi_um", "count"});
  for (std::size_t i = 0; i < h.counts.size(); ++i) w.row(h.edges[i], h.edges[i + 1], h.counts[i]);
}

inline ojson vec_json(const Eigen::VectorXd& v) {
  ojson a = ojson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline ojson matrix_row_major_json(const Eigen::Matrix3d& m) {
  ojson a = ojson::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  return a;
}

inline Eigen::Matrix3d matrix_from_json(const ojson& a, const std::string& what) {
  if (!a.is_array() || a.size() != 9) throw InputError(what + " must be an array of 9 numbers");
  Eigen::Matrix3d m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = a.at(static_cast<std::size_t>(i)).get<double>();
  return m;
}

inline ojson intrinsics_json(const Intrinsics& k) { return {{"f_px", k.f}, {"cx_px", k.cx}, {"cy_px", k.cy}}; }

inline ojson rotation_json(const RotationEstimate& r) {
  return {{"R", matrix_row_major_json(r.R)}, {"euler_zyx_deg", {r.euler_z_deg, r.euler_y_deg, r.euler_x_deg}}};
}

// Reads rotation.json (key `R`, row-major).
inline RotationEstimate read_rotation_json(const std::filesystem::path& path) {
  const auto j = read_json(path);
  try {
    const Eigen::Matrix3d r = matrix_from_json(j.at("R"), "R");
    if ((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() > 1e-6 || r.determinant() < 0)
      throw InputError(path.string() + ": R is not a rotation");
    return RotationEstimate::from_matrix(r);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed rotation file " + path.string() + ": " + e.what());
  }
}

// Candidate view-A -> view-B rotations from rotation.json: all sign-consistent
// variants when per-view orientations are present, else just `R`.
inline std::vector<Eigen::Matrix3d> read_relative_rotation_candidates(const std::filesystem::path& path) {
  const auto j = read_json(path);
  if (j.contains("view_A") && j.contains("view_B")) {
    try {
      const auto ra = RotationEstimate::from_matrix(matrix_from_json(j.at("view_A").at("R"), "view_A.R"));
      const auto rb = RotationEstimate::from_matrix(matrix_from_json(j.at("view_B").at("R"), "view_B.R"));
      const auto c = relative_rotation_candidates(ra, rb);
      return {c.begin(), c.end()};
    } catch (const nlohmann::json::exception& e) {
      throw InputError("malformed rotation file " + path.string() + ": " + e.what());
    }
  }
  return {read_rotation_json(path).R};
}

inline ojson histogram_json(const Histogram& h) {
  return {{"bin_width_um", h.bin_width}, {"edges_um", h.edges}, {"counts", h.counts}};
}

inline ojson stats_json(const DisplacementStats& s) {
  return {{"mean_dx_um", s.mean_dx_um},
          {"mean_dy_um", s.mean_dy_um},
          {"mean_dist_um", s.mean_dist_um},
          {"n_points", s.n_points},
          {"n_suspect", s.n_suspect},
          {"histograms", {{"dx", histogram_json(s.hist_dx)}, {"dy", histogram_json(s.hist_dy)},
                          {"dist", histogram_json(s.hist_dist)}}}};
}

inline ojson split_json(const BimodalSplit& s) {
  return {{"threshold_um", s.threshold_um}, {"lower_mean_um", s.lower_mean_um}, {"upper_mean_um", s.upper_mean_um},
          {"lower_count", s.lower_count},   {"upper_count", s.upper_count}};
}

inline ojson correlation_json(const DepthLateralCorrelation& c) {
  auto series = [](const ScatterSeries& s) { return ojson{{"r", s.r ? ojson(*s.r) : ojson(nullptr)}, {"lateral_um", s.lateral}, {"depth_um", s.depth}}; };
  return {{"ids", c.ids},
          {"z_vs_dist", series(c.z_vs_dist)},
          {"absz_vs_dist", series(c.absz_vs_dist)},
          {"z_vs_dx", series(c.z_vs_dx)},
          {"z_vs_dy", series(c.z_vs_dy)}};
}

}  // namespace semsurf
