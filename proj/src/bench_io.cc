#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pram/error.h"
#include "pram/synth_bench.h"

namespace pram {
namespace {

using json = nlohmann::json;

json Finite(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json PoseJson(const Pose& pose) {
  const auto q = pose.Quaternion();
  return {{"q", {q[0], q[1], q[2], q[3]}},
          {"t", {pose.translation.x(), pose.translation.y(), pose.translation.z()}}};
}

Pose ParsePose(const json& j) {
  const auto q = j.at("q").get<std::vector<double>>();
  const auto t = j.at("t").get<std::vector<double>>();
  if (q.size() != 4 || t.size() != 3) {
    throw Error(ErrorCode::kParseError, "pose needs q[4] and t[3]");
  }
  return Pose::FromQuaternion({q[0], q[1], q[2], q[3]}, {t[0], t[1], t[2]});
}

json CameraJson(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx},
          {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

CameraIntrinsics ParseCamera(const json& j) {
  return {j.at("fx").get<double>(),    j.at("fy").get<double>(),
          j.at("cx").get<double>(),    j.at("cy").get<double>(),
          j.at("width").get<double>(), j.at("height").get<double>()};
}

template <typename Fn>
auto Parsing(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
}

std::string ReadText(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string MapStatsToJson(const MapStats& s) {
  const json j = {{"num_points_before", s.num_points_before},
                  {"num_points_filtered", s.num_points_filtered},
                  {"num_points_after", s.num_points_after},
                  {"num_ref_frames_before", s.num_ref_frames_before},
                  {"num_vrfs", s.num_vrfs},
                  {"serialized_bytes", s.serialized_bytes},
                  {"mean_track_length", s.mean_track_length}};
  return j.dump(2);
}

std::string EvalReportToJson(const EvalReport& r) {
  json ratios = json::array();
  for (const auto& [t, ratio] : r.success_ratios) {
    ratios.push_back({{"position_cm", t.position_cm}, {"rotation_deg", t.rotation_deg},
                      {"ratio", ratio}});
  }
  json records = json::array();
  for (const QueryRecord& q : r.records) {
    records.push_back({{"index", q.index},
                       {"localized", q.localized},
                       {"position_error_cm", Finite(q.position_error_cm)},
                       {"orientation_error_deg", Finite(q.orientation_error_deg)},
                       {"candidates_tried", q.candidates_tried},
                       {"num_inliers", q.num_inliers},
                       {"refined", q.refined}});
  }
  json j = {{"median_position_error_cm", Finite(r.median_position_error_cm)},
            {"median_orientation_error_deg", Finite(r.median_orientation_error_deg)},
            {"failure_rate", r.failure_rate},
            {"success_ratios", ratios},
            {"matcher_invocations",
             {{"mean", r.matcher.mean}, {"median", r.matcher.median}, {"max", r.matcher.max}}},
            {"queries", records}};
  if (r.map_stats) j["map_stats"] = json::parse(MapStatsToJson(*r.map_stats));
  return j.dump(2);
}

std::string ResultToJsonLine(size_t index, const LocalizationResult& r) {
  json j = {{"query", index},
            {"status", r.localized() ? "Localized" : "Failed"},
            {"pose", r.localized() ? PoseJson(r.pose) : json(nullptr)},
            {"used_landmark", r.used_landmark},
            {"num_inliers", r.num_inliers},
            {"candidates_tried", r.candidates_tried},
            {"refined", r.refined}};
  return j.dump();
}

LocalizationResult ParseResultJsonLine(const std::string& line) {
  return Parsing([&] {
    const json j = json::parse(line);
    LocalizationResult r;
    const auto status = j.at("status").get<std::string>();
    if (status == "Localized") {
      r.status = LocalizationStatus::kLocalized;
      r.pose = r.initial_pose = ParsePose(j.at("pose"));
    } else if (status != "Failed") {
      throw Error(ErrorCode::kParseError, "unknown status '" + status + "'");
    }
    r.used_landmark = j.at("used_landmark").get<std::uint32_t>();
    r.num_inliers = j.at("num_inliers").get<std::uint64_t>();
    r.candidates_tried = j.at("candidates_tried").get<std::uint64_t>();
    r.refined = j.at("refined").get<bool>();
    return r;
  });
}

std::vector<LocalizationResult> LoadResults(const std::filesystem::path& path) {
  std::istringstream in(ReadText(path));
  std::vector<LocalizationResult> out;
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(ParseResultJsonLine(line));
  }
  return out;
}

std::string QuerySetToJson(const QuerySet& set) {
  json queries = json::array();
  for (size_t i = 0; i < set.size(); ++i) {
    json kps = json::array();
    for (const Keypoint2D& kp : set.keypoints[i]) {
      kps.push_back({{"u", kp.u},
                     {"v", kp.v},
                     {"desc", std::vector<float>(kp.descriptor.data(),
                                                 kp.descriptor.data() + kp.descriptor.size())}});
    }
    queries.push_back({{"gt_pose", PoseJson(set.gt_poses[i])}, {"keypoints", std::move(kps)}});
  }
  return json{{"camera", CameraJson(set.camera)}, {"queries", std::move(queries)}}.dump();
}

QuerySet ParseQuerySet(const std::string& text) {
  return Parsing([&] {
    const json doc = json::parse(text);
    QuerySet set;
    set.camera = ParseCamera(doc.at("camera"));
    for (const json& q : doc.at("queries")) {
      set.gt_poses.push_back(ParsePose(q.at("gt_pose")));
      std::vector<Keypoint2D> kps;
      for (const json& jk : q.at("keypoints")) {
        Keypoint2D kp;
        kp.u = jk.at("u").get<double>();
        kp.v = jk.at("v").get<double>();
        const auto d = jk.at("desc").get<std::vector<float>>();
        kp.descriptor = Eigen::Map<const Eigen::VectorXf>(d.data(), Eigen::Index(d.size()));
        kps.push_back(std::move(kp));
      }
      set.keypoints.push_back(std::move(kps));
    }
    return set;
  });
}

QuerySet LoadQuerySet(const std::filesystem::path& path) { return ParseQuerySet(ReadText(path)); }

void SaveQuerySet(const QuerySet& queries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << QuerySetToJson(queries) << '\n';
}

std::string SceneSpecToJson(const SceneSpec& s) {
  const json j = {{"num_clusters", s.num_clusters},
                  {"points_per_cluster", s.points_per_cluster},
                  {"cluster_spread_m", s.cluster_spread_m},
                  {"cluster_height_m", s.cluster_height_m},
                  {"cluster_relief_m", s.cluster_relief_m},
                  {"scene_extent_m", s.scene_extent_m},
                  {"num_ref_frames", s.num_ref_frames},
                  {"descriptor_dim", s.descriptor_dim},
                  {"descriptor_noise_sigma", s.descriptor_noise_sigma},
                  {"descriptor_correlation", s.descriptor_correlation},
                  {"outlier_keypoint_fraction", s.outlier_keypoint_fraction},
                  {"detection_rate", s.detection_rate},
                  {"view_cone_deg", s.view_cone_deg},
                  {"max_view_distance_m", s.max_view_distance_m},
                  {"camera_azimuth_deg", s.camera_azimuth_deg},
                  {"camera_min_distance_m", s.camera_min_distance_m},
                  {"camera_max_distance_m", s.camera_max_distance_m},
                  {"camera", CameraJson(s.camera)},
                  {"seed", s.seed}};
  return j.dump(2);
}

}  // namespace pram
