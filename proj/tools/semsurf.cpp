#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "semsurf/pipeline.hpp"

namespace {

using namespace semsurf;

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InputError("bad integer list '" + s + "'");
    }
  }
  return out;
}

void print_warnings(const StageLog& log) {
  for (const auto& w : log.warnings) std::cerr << "warning: " << w << "\n";
}

void add_flow_options(CLI::App* cmd, FlowParams& f) {
  cmd->add_option("--window", f.window, "LK window size (odd)")->capture_default_str();
  cmd->add_option("--levels", f.levels, "pyramid levels")->capture_default_str();
  cmd->add_option("--max-iter", f.max_iter)->capture_default_str();
  cmd->add_option("--eps", f.eps, "convergence threshold in px")->capture_default_str();
  cmd->add_option("--min-eig", f.min_eig_threshold)->capture_default_str();
  cmd->add_option("--fb-threshold", f.fb_threshold, "forward-backward error limit in px")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surface reconstruction and displacement tracking for SEM image pairs"};
  app.set_version_flag("--version", std::string(SEMSURF_VERSION));
  app.require_subcommand(1);

  // calibrate
  fs::path cal_lines, cal_out = "intrinsics.json", cal_rot_out, cal_image;
  auto* cal = app.add_subcommand("calibrate", "intrinsics and rotation from annotated line segments");
  cal->add_option("--lines", cal_lines)->required();
  cal->add_option("--out", cal_out, "intrinsics output")->capture_default_str();
  cal->add_option("--rotation-out", cal_rot_out, "defaults to rotation.json next to --out");
  cal->add_option("--view-a", cal_image, "view-A image, used to check the principal point");

  // fundamental
  fs::path fun_corr, fun_out = ".";
  std::string fun_stab;
  int fun_trials = 200;
  std::uint64_t fun_seed = 0;
  auto* fun = app.add_subcommand("fundamental", "fundamental matrix, epipoles and residuals");
  fun->add_option("--correspondences", fun_corr)->required();
  fun->add_option("--out-dir", fun_out)->capture_default_str();
  fun->add_option("--stability", fun_stab, "comma-separated subset sizes");
  fun->add_option("--trials", fun_trials)->capture_default_str();
  fun->add_option("--seed", fun_seed)->capture_default_str();

  // reconstruct
  fs::path rec_corr, rec_rot, rec_out = "cloud.csv";
  double rec_scale = 0;
  std::vector<double> rec_anchor;
  double rec_angle = 35.0, rec_corridor = 1.0;
  std::string rec_profile = "profile";
  auto* rec = app.add_subcommand("reconstruct", "depth map from two-view correspondences");
  rec->add_option("--correspondences", rec_corr)->required();
  rec->add_option("--um-per-px", rec_scale)->required();
  rec->add_option("--rotation", rec_rot, "rotation.json selecting the metric solution");
  rec->add_option("--out", rec_out)->capture_default_str();
  rec->add_option("--profile-anchor", rec_anchor, "x_um y_um")->expected(2);
  rec->add_option("--profile-angle", rec_angle)->capture_default_str();
  rec->add_option("--profile-corridor", rec_corridor)->capture_default_str();
  rec->add_option("--profile-name", rec_profile)->capture_default_str();

  // track
  fs::path trk_manifest, trk_seeds, trk_out = "tracks.csv";
  bool trk_reverse = true;
  FlowParams trk_flow;
  auto* trk = app.add_subcommand("track", "track seed points through the frame sequence");
  trk->add_option("--manifest", trk_manifest)->required();
  trk->add_option("--seeds", trk_seeds, "cloud.csv or corners.csv")->required();
  trk->add_flag("--reverse,!--forward", trk_reverse, "propagate from the last frame to the first (default)");
  trk->add_option("--out", trk_out)->capture_default_str();
  add_flow_options(trk, trk_flow);

  // corners
  fs::path cor_image, cor_out = "corners.csv";
  ShiTomasiParams cor_prm;
  auto* cor = app.add_subcommand("corners", "Shi-Tomasi corners of one image");
  cor->add_option("--image", cor_image)->required();
  cor->add_option("--out", cor_out)->capture_default_str();
  cor->add_option("--quality", cor_prm.quality_level)->capture_default_str();
  cor->add_option("--min-distance", cor_prm.min_distance)->capture_default_str();
  cor->add_option("--block-size", cor_prm.block_size)->capture_default_str();
  cor->add_option("--max-corners", cor_prm.max_corners)->capture_default_str();

  // analyze
  fs::path ana_tracks, ana_cloud, ana_out = ".";
  double ana_scale = 0;
  AnalysisOptions ana_opt;
  auto* ana = app.add_subcommand("analyze", "displacement statistics and depth correlations");
  ana->add_option("--tracks", ana_tracks)->required();
  ana->add_option("--um-per-px", ana_scale)->required();
  ana->add_option("--cloud", ana_cloud, "cloud.csv to correlate with");
  ana->add_option("--out-dir", ana_out)->capture_default_str();
  ana->add_option("--bin-width", ana_opt.bin_width_um, "histogram bin width in um")->capture_default_str();
  ana->add_flag("--exclude-suspect", ana_opt.exclude_suspect);

  // pipeline
  fs::path pip_config, pip_out;
  std::optional<std::uint64_t> pip_seed;
  auto* pip = app.add_subcommand("pipeline", "run every stage from a JSON config");
  pip->add_option("--config", pip_config)->required();
  pip->add_option("--out-dir", pip_out, "overrides out_dir of the config");
  pip->add_option("--seed", pip_seed, "overrides seed of the config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  StageLog log;
  const char* stage = "";
  try {
    if (*cal) {
      stage = "calibrate";
      std::optional<std::pair<int, int>> size;
      if (!cal_image.empty()) {
        const Grid g = read_grayscale(cal_image);
        size = std::pair{g.width, g.height};
      }
      if (cal_rot_out.empty()) cal_rot_out = cal_out.parent_path() / "rotation.json";
      run_calibrate(cal_lines, {cal_out, cal_rot_out}, size, log);
    } else if (*fun) {
      stage = "fundamental";
      std::optional<StabilitySpec> st;
      if (!fun_stab.empty()) st = StabilitySpec{parse_int_list(fun_stab), fun_trials};
      fs::create_directories(fun_out);
      run_fundamental(fun_corr, fun_out, st, fun_seed, log);
    } else if (*rec) {
      stage = "reconstruct";
      std::vector<Eigen::Matrix3d> hint;
      if (!rec_rot.empty()) hint = read_relative_rotation_candidates(rec_rot);
      std::vector<ProfileSpec> profiles;
      if (!rec_anchor.empty()) profiles.push_back({rec_profile, rec_anchor[0], rec_anchor[1], rec_angle, rec_corridor});
      run_reconstruct(rec_corr, rec_scale, hint, rec_out, profiles, log);
    } else if (*trk) {
      stage = "track";
      if (!trk_reverse) throw InputError("only reverse propagation is supported");
      trk_flow.validate();
      const auto seq = load_manifest(trk_manifest);
      const auto seeds = read_seeds(trk_seeds, seq.um_per_px());
      run_track(seq, seeds, trk_flow, trk_out, log);
    } else if (*cor) {
      stage = "corners";
      write_corners_csv(cor_out, shi_tomasi(read_grayscale(cor_image), cor_prm));
    } else if (*ana) {
      stage = "analyze";
      const auto ts = read_tracks_csv(ana_tracks);
      std::optional<SurfacePointCloud> cloud;
      if (!ana_cloud.empty()) cloud = read_cloud_csv(ana_cloud);
      fs::create_directories(ana_out);
      run_analyze(ts, ana_scale, cloud ? &*cloud : nullptr, ana_out, ana_opt, log);
    } else if (*pip) {
      stage = "pipeline";
      auto cfg = load_pipeline_config(pip_config);
      if (!pip_out.empty()) cfg.out_dir = pip_out;
      if (pip_seed) cfg.seed = *pip_seed;
      const auto res = run_pipeline(cfg);
      for (const auto& w : res.report.at("warnings")) std::cerr << "warning: " << w.get<std::string>() << "\n";
      if (res.exit_code != kExitOk)
        std::cerr << "semsurf: " << res.report.at("failed_stage").get<std::string>() << ": "
                  << res.report.at("error").get<std::string>() << "\n";
      return res.exit_code;
    }
  } catch (...) {
    std::string msg;
    const int code = exit_code_for(std::current_exception(), msg);
    print_warnings(log);
    std::cerr << "semsurf: " << stage << ": " << msg << "\n";
    return code;
  }
  print_warnings(log);
  return kExitOk;
}
