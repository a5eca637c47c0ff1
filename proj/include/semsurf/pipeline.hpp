#pragma once

// Stage runners shared by the CLI subcommands, and the end-to-end pipeline
// with its run report.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "semsurf/analysis.hpp"
#include "semsurf/calib.hpp"
#include "semsurf/epipolar.hpp"
#include "semsurf/error.hpp"
#include "semsurf/flow.hpp"
#include "semsurf/formats.hpp"
#include "semsurf/image.hpp"
#include "semsurf/sfm.hpp"

#ifndef SEMSURF_VERSION
#define SEMSURF_VERSION "dev"
#endif

namespace semsurf {

namespace fs = std::filesystem;

// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitInput = 2, kExitDegenerate = 3, kExitInternal = 4 };

struct ProfileSpec {
  std::string name;
  double anchor_x_um = 0, anchor_y_um = 0;
  double angle_deg = 35.0;
  double corridor_um = 1.0;
};

struct StabilitySpec {
  std::vector<int> subset_sizes;
  int trials = 200;
};

struct AnalysisOptions {
  double bin_width_um = 0.1;
  bool exclude_suspect = false;
};

struct PipelineConfig {
  fs::path lines, correspondences, manifest, view_a, view_b;
  double um_per_px = 0;
  FlowParams flow;
  ShiTomasiParams shi_tomasi;
  AnalysisOptions analysis;
  std::optional<StabilitySpec> stability;
  std::vector<ProfileSpec> profiles;
  fs::path out_dir = "out";
  std::uint64_t seed = 0;
};

// Tracks warnings and written files for the run report.
struct StageLog {
  std::vector<std::string> warnings;
  std::vector<std::string> outputs;  // file names relative to the output directory

  void wrote(const fs::path& p) { outputs.push_back(p.filename().string()); }
};

// ---- individual stages --------------------------------------------------

struct CalibrateOutputs {
  fs::path intrinsics = "intrinsics.json";
  fs::path rotation = "rotation.json";
};

inline CalibrationResult run_calibrate(const fs::path& lines_csv, const CalibrateOutputs& out,
                                       std::optional<std::pair<int, int>> view_a_size, StageLog& log) {
  const auto segs = read_lines_csv(lines_csv);
  const auto cal = calibrate(segs);
  ojson intr = intrinsics_json(cal.intrinsics);
  if (view_a_size && !principal_point_inside(cal.intrinsics, view_a_size->first, view_a_size->second)) {
    log.warnings.push_back("principal point (" + fmt_double(cal.intrinsics.cx) + ", " + fmt_double(cal.intrinsics.cy) +
                           ") lies outside the view-A image");
    intr["principal_point_outside_image"] = true;
  }
  write_json(out.intrinsics, intr);
  log.wrote(out.intrinsics);

  ojson rot;
  if (cal.relative) {
    rot = rotation_json(*cal.relative);
  } else {
    rot = rotation_json(cal.orientation.begin()->second);
    log.warnings.push_back("only one view annotated: rotation.json holds that view's orientation");
  }
  for (const auto& [view, r] : cal.orientation) rot[std::string("view_") + view_char(view)] = rotation_json(r);
  write_json(out.rotation, rot);
  log.wrote(out.rotation);
  return cal;
}

struct FundamentalResult {
  FundamentalMatrix F;
  Epipoles e;
  std::vector<double> residuals;
  std::vector<StabilityReport> stability;
};

inline FundamentalResult run_fundamental(const fs::path& corr_csv, const fs::path& out_dir,
                                         const std::optional<StabilitySpec>& stability, std::uint64_t seed,
                                         StageLog& log) {
  const auto corrs = read_correspondences_csv(corr_csv);
  FundamentalResult r;
  r.F = eight_point(corrs);
  r.e = epipoles(r.F);
  r.residuals = epipolar_residuals(r.F, corrs);

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(r.F.F);
  write_json(out_dir / "fundamental.json",
             ojson{{"F", matrix_row_major_json(r.F.F)}, {"singular_values", vec_json(svd.singularValues())},
                   {"n_correspondences", corrs.size()}});
  log.wrote(out_dir / "fundamental.json");

  auto epi = [](const Eigen::Vector3d& e) {
    ojson j{{"h", vec_json(e)}};
    if (std::abs(e.z()) > 1e-12) j["px"] = {e.x() / e.z(), e.y() / e.z()};
    else j["px"] = nullptr;
    return j;
  };
  write_json(out_dir / "epipoles.json", ojson{{"e_a", epi(r.e.e_a)}, {"e_b", epi(r.e.e_b)}});
  log.wrote(out_dir / "epipoles.json");

  {
    CsvWriter w(out_dir / "residuals.csv", {"id", "sampson_px"});
    for (std::size_t i = 0; i < corrs.size(); ++i) w.row(corrs[i].id, r.residuals[i]);
  }
  log.wrote(out_dir / "residuals.csv");

  if (stability && !stability->subset_sizes.empty()) {
    r.stability = epipole_stability(corrs, stability->subset_sizes, stability->trials, seed);
    for (const auto& rep : r.stability)
      if (rep.degenerate_trials > 0)
        log.warnings.push_back(std::to_string(rep.degenerate_trials) + " degenerate trials at subset size " +
                               std::to_string(rep.subset_size));
    write_stability_csv(out_dir / "stability.csv", r.stability);
    log.wrote(out_dir / "stability.csv");
  }
  return r;
}

inline SurfacePointCloud run_reconstruct(const fs::path& corr_csv, double um_per_px,
                                         const std::vector<Eigen::Matrix3d>& view_b_rotations,
                                         const fs::path& cloud_csv, const std::vector<ProfileSpec>& profiles,
                                         StageLog& log) {
  const auto corrs = read_correspondences_csv(corr_csv);
  const auto cloud = reconstruct_surface(corrs, um_per_px, view_b_rotations, &log.warnings);
  write_cloud_csv(cloud_csv, cloud);
  log.wrote(cloud_csv);

  const fs::path dir = cloud_csv.parent_path();
  const auto proj = depth_projections(cloud);
  auto slope = [](const std::optional<double>& s) { return s ? ojson(*s) : ojson(nullptr); };
  write_json(dir / "projections.json",
             ojson{{"slope_zx", slope(proj.slope_zx)},
                   {"slope_zy", slope(proj.slope_zy)},
                   {"plane_normal", vec_json(cloud.plane_normal)},
                   {"plane_offset_um", cloud.plane_offset}});
  log.wrote(dir / "projections.json");

  for (const auto& p : profiles) {
    const auto prof = crack_profile(cloud, {p.anchor_x_um, p.anchor_y_um}, p.angle_deg, p.corridor_um);
    const fs::path path = dir / ("profile_" + p.name + ".csv");
    write_profile_csv(path, prof);
    log.wrote(path);
  }
  return cloud;
}

inline TrackSet run_track(const FrameSequence& seq, const std::vector<SeedPoint>& seeds, const FlowParams& prm,
                          const fs::path& tracks_csv, StageLog& log) {
  auto ts = reverse_propagate(seq, seeds, prm);
  int suspect = 0, lost = 0;
  for (const auto& t : ts.tracks) {
    suspect += t.any_suspect() ? 1 : 0;
    lost += t.steps.back().status == TrackStatus::lost ? 1 : 0;
  }
  if (suspect) log.warnings.push_back(tracks_csv.filename().string() + ": " + std::to_string(suspect) + " suspect tracks");
  if (lost) log.warnings.push_back(tracks_csv.filename().string() + ": " + std::to_string(lost) + " lost tracks");
  write_tracks_csv(tracks_csv, ts);
  log.wrote(tracks_csv);
  return ts;
}

// Writes stats/split/histograms (and correlation when a cloud is given).
// `suffix` distinguishes several seed sets in one directory.
inline DisplacementStats run_analyze(const TrackSet& ts, double um_per_px, const SurfacePointCloud* cloud,
                                     const fs::path& out_dir, const AnalysisOptions& opt, StageLog& log,
                                     const std::string& suffix = "") {
  const auto net = net_displacements(ts, um_per_px);
  if (net.excluded_single_position)
    log.warnings.push_back(std::to_string(net.excluded_single_position) + " tracks with a single position excluded" +
                           (suffix.empty() ? "" : " (" + suffix + ")"));
  const auto stats = displacement_stats(net.records, opt.bin_width_um, opt.exclude_suspect);
  if (stats.n_suspect)
    log.warnings.push_back(std::to_string(stats.n_suspect) + " suspect displacement records" +
                           (opt.exclude_suspect ? " excluded" : " included") + (suffix.empty() ? "" : " (" + suffix + ")"));

  const std::string sfx = suffix.empty() ? "" : "_" + suffix;
  auto path = [&](const std::string& stem, const char* ext) { return out_dir / (stem + sfx + ext); };

  write_json(path("stats", ".json"), stats_json(stats));
  log.wrote(path("stats", ".json"));
  write_histogram_csv(path("histogram_dx", ".csv"), stats.hist_dx);
  write_histogram_csv(path("histogram_dy", ".csv"), stats.hist_dy);
  write_histogram_csv(path("histogram_dist", ".csv"), stats.hist_dist);
  log.wrote(path("histogram_dx", ".csv"));
  log.wrote(path("histogram_dy", ".csv"));
  log.wrote(path("histogram_dist", ".csv"));

  std::vector<double> dist;
  for (const auto& r : net.records)
    if (!(r.suspect && opt.exclude_suspect)) dist.push_back(r.dist_um);
  try {
    write_json(path("split", ".json"), split_json(two_means_split(dist)));
    log.wrote(path("split", ".json"));
  } catch (const Error& e) {
    log.warnings.push_back(std::string("two-means split skipped: ") + e.what());
  }

  if (cloud) {
    std::vector<DisplacementRecord> used;
    for (const auto& r : net.records)
      if (!(r.suspect && opt.exclude_suspect)) used.push_back(r);
    write_json(path("correlation", ".json"), correlation_json(correlate_depth_lateral(*cloud, used)));
    log.wrote(path("correlation", ".json"));
  }
  return stats;
}

// ---- configuration ------------------------------------------------------

inline PipelineConfig load_pipeline_config(const fs::path& path) {
  const auto j = read_json(path);
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& s) {
    fs::path p = s;
    return p.is_relative() ? base / p : p;
  };
  PipelineConfig c;
  try {
    c.lines = resolve(j.at("lines").get<std::string>());
    c.correspondences = resolve(j.at("correspondences").get<std::string>());
    c.manifest = resolve(j.at("manifest").get<std::string>());
    c.view_a = resolve(j.at("view_a").get<std::string>());
    c.view_b = resolve(j.at("view_b").get<std::string>());
    c.um_per_px = j.at("um_per_px").get<double>();
    c.out_dir = resolve(j.value("out_dir", std::string("out")));
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("flow")) {
      const auto& f = j.at("flow");
      c.flow.window = f.value("window", c.flow.window);
      c.flow.levels = f.value("levels", c.flow.levels);
      c.flow.max_iter = f.value("max_iter", c.flow.max_iter);
      c.flow.eps = f.value("eps", c.flow.eps);
      c.flow.min_eig_threshold = f.value("min_eig_threshold", c.flow.min_eig_threshold);
      c.flow.fb_threshold = f.value("fb_threshold", c.flow.fb_threshold);
    }
    if (j.contains("shi_tomasi")) {
      const auto& s = j.at("shi_tomasi");
      c.shi_tomasi.quality_level = s.value("quality_level", c.shi_tomasi.quality_level);
      c.shi_tomasi.min_distance = s.value("min_distance", c.shi_tomasi.min_distance);
      c.shi_tomasi.block_size = s.value("block_size", c.shi_tomasi.block_size);
      c.shi_tomasi.max_corners = s.value("max_corners", c.shi_tomasi.max_corners);
    }
    if (j.contains("analysis")) {
      const auto& a = j.at("analysis");
      c.analysis.bin_width_um = a.value("bin_width_um", c.analysis.bin_width_um);
      c.analysis.exclude_suspect = a.value("exclude_suspect", c.analysis.exclude_suspect);
    }
    if (j.contains("stability")) {
      const auto& s = j.at("stability");
      c.stability = StabilitySpec{s.at("subset_sizes").get<std::vector<int>>(), s.value("trials", 200)};
    }
    if (j.contains("profiles"))
      for (const auto& p : j.at("profiles")) {
        ProfileSpec ps;
        ps.name = p.at("name").get<std::string>();
        const auto a = p.at("anchor_um").get<std::vector<double>>();
        if (a.size() != 2) throw InputError("profile anchor_um must have 2 entries");
        ps.anchor_x_um = a[0];
        ps.anchor_y_um = a[1];
        ps.angle_deg = p.value("angle_deg", ps.angle_deg);
        ps.corridor_um = p.value("corridor_um", ps.corridor_um);
        c.profiles.push_back(ps);
      }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed config " + path.string() + ": " + e.what());
  }
  return c;
}

inline ojson config_json(const PipelineConfig& c) {
  ojson j{{"lines", c.lines.string()},
          {"correspondences", c.correspondences.string()},
          {"manifest", c.manifest.string()},
          {"view_a", c.view_a.string()},
          {"view_b", c.view_b.string()},
          {"um_per_px", c.um_per_px},
          {"seed", c.seed},
          {"flow",
           {{"window", c.flow.window},
            {"levels", c.flow.levels},
            {"max_iter", c.flow.max_iter},
            {"eps", c.flow.eps},
            {"min_eig_threshold", c.flow.min_eig_threshold},
            {"fb_threshold", c.flow.fb_threshold}}},
          {"shi_tomasi",
           {{"quality_level", c.shi_tomasi.quality_level},
            {"min_distance", c.shi_tomasi.min_distance},
            {"block_size", c.shi_tomasi.block_size},
            {"max_corners", c.shi_tomasi.max_corners}}},
          {"analysis", {{"bin_width_um", c.analysis.bin_width_um}, {"exclude_suspect", c.analysis.exclude_suspect}}}};
  if (c.stability) j["stability"] = {{"subset_sizes", c.stability->subset_sizes}, {"trials", c.stability->trials}};
  return j;
}

// ---- end-to-end ---------------------------------------------------------

struct PipelineOutcome {
  int exit_code = kExitOk;
  ojson report;
};

inline int exit_code_for(const std::exception_ptr& ep, std::string& message) {
  try {
    std::rethrow_exception(ep);
  } catch (const InputError& e) {
    message = e.what();
    return kExitInput;
  } catch (const DegenerateError& e) {
    message = e.what();
    return kExitDegenerate;
  } catch (const std::exception& e) {
    message = e.what();
    return kExitInternal;
  } catch (...) {
    message = "unknown error";
    return kExitInternal;
  }
}

// calibrate -> fundamental -> reconstruct -> track (depth seeds and Shi-Tomasi
// seeds) -> analyze. Writes run_report.json into out_dir in every case.
inline PipelineOutcome run_pipeline(const PipelineConfig& cfg) {
  PipelineOutcome res;
  ojson stages = ojson::array();
  StageLog log;
  std::string failed_stage;
  std::string failure;

  fs::create_directories(cfg.out_dir);
  const fs::path& out = cfg.out_dir;

  auto stage = [&](const std::string& name, const std::function<void()>& body) {
    if (!failed_stage.empty()) return;
    const std::size_t first_output = log.outputs.size();
    const auto t0 = std::chrono::steady_clock::now();
    try {
      body();
    } catch (...) {
      res.exit_code = exit_code_for(std::current_exception(), failure);
      failed_stage = name;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ojson s{{"name", name}, {"status", failed_stage.empty() ? "ok" : "FAILED"}, {"seconds", secs}};
    s["outputs"] = std::vector<std::string>(log.outputs.begin() + static_cast<long>(first_output), log.outputs.end());
    if (!failed_stage.empty()) s["error"] = failure;
    stages.push_back(s);
  };

  std::optional<std::pair<int, int>> view_a_size;
  FrameSequence seq;
  CalibrationResult cal;
  SurfacePointCloud cloud;

  stage("validate", [&] {
    if (!(cfg.um_per_px > 0)) throw InputError("um_per_px must be positive");
    for (const auto& p : {cfg.lines, cfg.correspondences, cfg.manifest, cfg.view_a, cfg.view_b})
      if (!fs::exists(p)) throw InputError("missing file: " + p.string());
    cfg.flow.validate();
    const Grid a = read_grayscale(cfg.view_a);
    read_grayscale(cfg.view_b);
    view_a_size = std::pair{a.width, a.height};
  });
  stage("calibrate", [&] {
    cal = run_calibrate(cfg.lines, {out / "intrinsics.json", out / "rotation.json"}, view_a_size, log);
  });
  stage("fundamental", [&] { run_fundamental(cfg.correspondences, out, cfg.stability, cfg.seed, log); });
  stage("reconstruct", [&] {
    std::vector<Eigen::Matrix3d> hint;
    if (cal.relative) {
      const auto c = relative_rotation_candidates(cal.orientation.at(View::A), cal.orientation.at(View::B));
      hint.assign(c.begin(), c.end());
    }
    cloud = run_reconstruct(cfg.correspondences, cfg.um_per_px, hint, out / "cloud.csv", cfg.profiles, log);
  });
  TrackSet depth_tracks, corner_tracks;
  stage("track", [&] {
    seq = load_manifest(cfg.manifest);
    std::vector<SeedPoint> seeds;
    for (const auto& p : cloud.points) seeds.push_back({p.id, p.x_um / seq.um_per_px(), p.y_um / seq.um_per_px()});
    depth_tracks = run_track(seq, seeds, cfg.flow, out / "tracks.csv", log);

    const auto corners = shi_tomasi(seq.frames.back().pixels, cfg.shi_tomasi);
    write_corners_csv(out / "corners.csv", corners);
    log.wrote(out / "corners.csv");
    std::vector<SeedPoint> cseeds;
    for (std::size_t i = 0; i < corners.size(); ++i) cseeds.push_back({corner_id(i), corners[i].x, corners[i].y});
    corner_tracks = run_track(seq, cseeds, cfg.flow, out / "tracks_corners.csv", log);
  });
  stage("analyze", [&] {
    run_analyze(depth_tracks, seq.um_per_px(), &cloud, out, cfg.analysis, log);
    if (!corner_tracks.tracks.empty())
      run_analyze(corner_tracks, seq.um_per_px(), nullptr, out, cfg.analysis, log, "corners");
  });

  res.report = ojson{{"tool", "semsurf"},
                     {"version", SEMSURF_VERSION},
                     {"status", failed_stage.empty() ? "OK" : "FAILED"}};
  if (!failed_stage.empty()) {
    res.report["failed_stage"] = failed_stage;
    res.report["error"] = failure;
  }
  res.report["seed"] = cfg.seed;
  res.report["parameters"] = config_json(cfg);
  res.report["warnings"] = log.warnings;
  res.report["stages"] = stages;
  res.report["outputs"] = log.outputs;
  write_json(out / "run_report.json", res.report);
  return res;
}

}  // namespace semsurf
