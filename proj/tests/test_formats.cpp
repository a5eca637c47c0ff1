#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "scratch.hpp"
#include "semsurf/formats.hpp"

using namespace semsurf;
using semsurf::testing::scratch_dir;
using semsurf::testing::slurp;
using semsurf::testing::spit;

namespace {

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const InputError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(fmt_double(0.1), "0.1");
  EXPECT_EQ(fmt_double(88.0), "88");
  EXPECT_EQ(fmt_double(-0.0), "0");
  EXPECT_EQ(fmt_double(1e-7), "1e-07");
  EXPECT_EQ(fmt_double(std::nan("")), "");
  EXPECT_EQ(fmt_double(0.1 + 0.2), "0.30000000000000004");
  for (double v : {1.0 / 3.0, 2.0 / 7.0 * 1e5, -123.456e-9}) EXPECT_EQ(std::stod(fmt_double(v)), v);
}

TEST(CorrespondencesCsv, AnnotatorRowParses) {
  const auto dir = scratch_dir("corr_golden");
  spit(dir / "c.csv", "id,x_a,y_a,x_b,y_b\np001,120.5,88.0,131.2,74.6\n");
  const auto c = read_correspondences_csv(dir / "c.csv");
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].id, "p001");
  EXPECT_EQ(c[0].ya, 88.0);
  EXPECT_EQ(c[0].yb, 74.6);
  write_correspondences_csv(dir / "out.csv", c);
  EXPECT_EQ(slurp(dir / "out.csv"), "id,x_a,y_a,x_b,y_b\np001,120.5,88,131.2,74.6\n");
}

TEST(CorrespondencesCsv, RoundTripIsByteStable) {
  const auto dir = scratch_dir("corr_rt");
  std::vector<Correspondence> c;
  for (int i = 0; i < 50; ++i) c.push_back({"p" + std::to_string(i), i / 3.0, i * 1.1, -i / 7.0, 1e3 + i});
  write_correspondences_csv(dir / "a.csv", c);
  const auto back = read_correspondences_csv(dir / "a.csv");
  ASSERT_EQ(back.size(), 50u);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(back[i].xa, c[i].xa);
  write_correspondences_csv(dir / "b.csv", back);
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
}

TEST(CorrespondencesCsv, CrlfAccepted) {
  const auto dir = scratch_dir("corr_crlf");
  spit(dir / "c.csv", "id,x_a,y_a,x_b,y_b\r\np1,1,2,3,4\r\n");
  EXPECT_EQ(read_correspondences_csv(dir / "c.csv").size(), 1u);
}

TEST(CorrespondencesCsv, ErrorsReportLineAndColumn) {
  const auto dir = scratch_dir("corr_err");
  spit(dir / "bad.csv", "id,x_a,y_a,x_b,y_b\np1,1,2,3,4\np2,1,abc,3,4\n");
  EXPECT_NE(error_of([&] { read_correspondences_csv(dir / "bad.csv"); }).find("bad.csv:3:3"), std::string::npos);

  spit(dir / "dup.csv", "id,x_a,y_a,x_b,y_b\np1,1,2,3,4\np1,1,2,3,4\n");
  EXPECT_NE(error_of([&] { read_correspondences_csv(dir / "dup.csv"); }).find("duplicate id"), std::string::npos);

  spit(dir / "hdr.csv", "id,xa,ya,xb,yb\np1,1,2,3,4\n");
  EXPECT_NE(error_of([&] { read_correspondences_csv(dir / "hdr.csv"); }).find("hdr.csv:1:1"), std::string::npos);

  spit(dir / "short.csv", "id,x_a,y_a,x_b,y_b\np1,1,2,3\n");
  EXPECT_NE(error_of([&] { read_correspondences_csv(dir / "short.csv"); }).find("short.csv:2:"), std::string::npos);

  EXPECT_NE(error_of([&] { read_correspondences_csv(dir / "none.csv"); }).find("none.csv"), std::string::npos);
}

TEST(LinesCsv, RoundTripAndValidation) {
  const auto dir = scratch_dir("lines");
  std::vector<LineSegment> s;
  for (int p = 0; p < 3; ++p)
    for (int k = 0; k < 2; ++k) {
      LineSegment l;
      l.plane_id = p;
      l.view = k ? View::B : View::A;
      l.x0 = 10.5 * p;
      l.y0 = k;
      l.x1 = 100 + p;
      l.y1 = 50.25;
      s.push_back(l);
    }
  write_lines_csv(dir / "lines.csv", s);
  const auto back = read_lines_csv(dir / "lines.csv");
  ASSERT_EQ(back.size(), 6u);
  EXPECT_EQ(back[3].view, View::B);
  EXPECT_EQ(back[5].plane_id, 2);
  EXPECT_EQ(slurp(dir / "lines.csv").substr(0, 29), "plane_id,view,x0,y0,x1,y1\n0,A");

  spit(dir / "p3.csv", "plane_id,view,x0,y0,x1,y1\n3,A,0,0,10,10\n");
  EXPECT_NE(error_of([&] { read_lines_csv(dir / "p3.csv"); }).find(":2:1"), std::string::npos);
  spit(dir / "vc.csv", "plane_id,view,x0,y0,x1,y1\n1,C,0,0,10,10\n");
  EXPECT_NE(error_of([&] { read_lines_csv(dir / "vc.csv"); }).find(":2:2"), std::string::npos);
  spit(dir / "short.csv", "plane_id,view,x0,y0,x1,y1\n1,A,0,0,0.5,0\n");
  EXPECT_FALSE(error_of([&] { read_lines_csv(dir / "short.csv"); }).empty());
}

TEST(TracksCsv, LostRowsHaveEmptyCoordinates) {
  const auto dir = scratch_dir("tracks");
  TrackSet ts;
  ts.tracks.push_back({"p1", {{14, 10.5, 20.25, TrackStatus::tracked},
                              {13, 10.0, 20.0, TrackStatus::suspect},
                              {12, std::nan(""), std::nan(""), TrackStatus::lost}}});
  ts.tracks.push_back({"p2", {{14, 1, 2, TrackStatus::tracked}, {13, 1, 2.5, TrackStatus::tracked}}});
  write_tracks_csv(dir / "t.csv", ts);
  EXPECT_EQ(slurp(dir / "t.csv"),
            "id,frame_index,x_px,y_px,status\n"
            "p1,14,10.5,20.25,tracked\n"
            "p1,13,10,20,suspect\n"
            "p1,12,,,lost\n"
            "p2,14,1,2,tracked\n"
            "p2,13,1,2.5,tracked\n");
  const auto back = read_tracks_csv(dir / "t.csv");
  EXPECT_TRUE(back.reverse);
  ASSERT_EQ(back.tracks.size(), 2u);
  EXPECT_TRUE(std::isnan(back.tracks[0].steps[2].x));
  EXPECT_EQ(back.tracks[0].steps[1].status, TrackStatus::suspect);
}

TEST(TracksCsv, BadStatus) {
  const auto dir = scratch_dir("tracks_bad");
  spit(dir / "t.csv", "id,frame_index,x_px,y_px,status\np1,1,2,3,moved\n");
  EXPECT_NE(error_of([&] { read_tracks_csv(dir / "t.csv"); }).find(":2:5"), std::string::npos);
}

TEST(Seeds, FromCloudAndCorners) {
  const auto dir = scratch_dir("seeds");
  SurfacePointCloud c;
  c.points.push_back({"p1", 1.0, 2.0, 0.1});
  write_cloud_csv(dir / "cloud.csv", c);
  const auto s = read_seeds(dir / "cloud.csv", 0.05);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s[0].x, 20.0);
  EXPECT_DOUBLE_EQ(s[0].y, 40.0);

  write_corners_csv(dir / "corners.csv", std::vector<Corner>{{3.5, 4.5, 0.2}});
  const auto k = read_seeds(dir / "corners.csv", 0.05);
  EXPECT_EQ(k[0].id, "c001");
  EXPECT_EQ(k[0].x, 3.5);

  spit(dir / "other.csv", "a,b\n1,2\n");
  EXPECT_THROW(read_seeds(dir / "other.csv", 0.05), InputError);
}

TEST(Json, SchemaKeys) {
  const auto k = intrinsics_json({1704, 1300, -1604});
  EXPECT_EQ(k.at("f_px"), 1704.0);
  EXPECT_TRUE(k.contains("cx_px") && k.contains("cy_px"));

  const auto r = rotation_json(RotationEstimate::from_matrix(euler_zyx_to_matrix(46.1, 3.2, -62.1)));
  EXPECT_EQ(r.at("R").size(), 9u);
  EXPECT_NEAR(r.at("euler_zyx_deg")[0].get<double>(), 46.1, 1e-12);
  EXPECT_NEAR(r.at("euler_zyx_deg")[2].get<double>(), -62.1, 1e-12);

  std::vector<DisplacementRecord> recs{{"a", 0.1, 0.2, 0.3}, {"b", 0.2, 0.1, 0.4}};
  const auto s = stats_json(displacement_stats(recs, 0.1));
  for (const char* key : {"mean_dx_um", "mean_dy_um", "mean_dist_um", "n_points", "n_suspect", "histograms"})
    EXPECT_TRUE(s.contains(key)) << key;
}

TEST(Json, RotationFileRoundTrip) {
  const auto dir = scratch_dir("rotjson");
  const Eigen::Matrix3d m = euler_zyx_to_matrix(10, -20, 30);
  write_json(dir / "r.json", rotation_json(RotationEstimate::from_matrix(m)));
  EXPECT_LT((read_rotation_json(dir / "r.json").R - m).norm(), 1e-15);

  spit(dir / "bad.json", R"({"R": [1,0,0, 0,1,0, 0,0,2]})");
  EXPECT_THROW(read_rotation_json(dir / "bad.json"), InputError);
  spit(dir / "broken.json", "{");
  EXPECT_THROW(read_rotation_json(dir / "broken.json"), InputError);
}

TEST(Json, RotationCandidatesFromPerViewOrientations) {
  const auto dir = scratch_dir("rotcand");
  const auto ra = RotationEstimate::from_matrix(euler_zyx_to_matrix(46.1, 3.2, -62.1));
  const auto rb = RotationEstimate::from_matrix(euler_zyx_to_matrix(40, 10, -55));
  ojson j = rotation_json(relative_rotation(ra, rb));
  j["view_A"] = rotation_json(ra);
  j["view_B"] = rotation_json(rb);
  write_json(dir / "r.json", j);
  const auto c = read_relative_rotation_candidates(dir / "r.json");
  ASSERT_EQ(c.size(), 4u);
  EXPECT_LT((c[0] - relative_rotation(ra, rb).R).norm(), 1e-12);
}
