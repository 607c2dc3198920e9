#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pram/error.h"
#include "pram/map_model.h"

namespace pram {
namespace {

using nlohmann::json;

constexpr double kRenormalizeTolerance = 1e-3;

[[noreturn]] void Linkage(const std::string& what) {
  throw Error(ErrorCode::kLinkageError, what);
}

template <typename T>
T Field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error(ErrorCode::kParseError, std::string("missing field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError,
                std::string("field '") + key + "': " + e.what());
  }
}

Descriptor ParseDescriptor(const json& j, int dim) {
  const auto values = Field<std::vector<double>>(j, "desc");
  if (static_cast<int>(values.size()) != dim) {
    throw Error(ErrorCode::kDescriptorDimMismatch,
                "descriptor of length " + std::to_string(values.size()) +
                    ", expected " + std::to_string(dim));
  }
  Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(values.data(), dim);
  const double norm = d.norm();
  if (!(std::abs(norm - 1.0) <= kRenormalizeTolerance)) {
    throw Error(ErrorCode::kParseError,
                "descriptor norm " + std::to_string(norm) + " is not unit");
  }
  Descriptor out = d.cast<float>();
  // Exactly-unit float descriptors are left untouched.
  const double fnorm = out.cast<double>().norm();
  if (std::abs(fnorm - 1.0) > 1e-7) out = (d / norm).cast<float>();
  return out;
}

std::array<double, 4> ParseQuaternion(const json& j) {
  const auto q = Field<std::vector<double>>(j, "q");
  if (q.size() != 4) throw Error(ErrorCode::kParseError, "q must have 4 entries");
  return {q[0], q[1], q[2], q[3]};
}

Eigen::Vector3d ParseVec3(const json& j, const char* key) {
  const auto v = Field<std::vector<double>>(j, key);
  if (v.size() != 3) {
    throw Error(ErrorCode::kParseError, std::string(key) + " must have 3 entries");
  }
  return {v[0], v[1], v[2]};
}

}  // namespace

void Reconstruction::Link() {
  frame_index_.clear();
  point_index_.clear();
  for (size_t i = 0; i < frames.size(); ++i) {
    if (!frame_index_.emplace(frames[i].id, i).second) {
      Linkage("duplicate frame id " + std::to_string(frames[i].id));
    }
    if (!cameras.contains(frames[i].camera_id)) {
      Linkage("frame " + std::to_string(frames[i].id) +
              " references missing camera " + std::to_string(frames[i].camera_id));
    }
  }
  for (size_t i = 0; i < points.size(); ++i) {
    if (!point_index_.emplace(points[i].id, i).second) {
      Linkage("duplicate point id " + std::to_string(points[i].id));
    }
  }
  for (const Frame& f : frames) {
    for (const Keypoint2D& kp : f.keypoints) {
      if (kp.descriptor.size() != descriptor_dim) {
        throw Error(ErrorCode::kDescriptorDimMismatch,
                    "frame " + std::to_string(f.id) + " has a descriptor of length " +
                        std::to_string(kp.descriptor.size()));
      }
    }
  }
  // Track -> keypoint direction.
  for (const ReconPoint& p : points) {
    if (p.track.empty()) Linkage("point " + std::to_string(p.id) + " has an empty track");
    for (const TrackEntry& t : p.track) {
      const auto it = frame_index_.find(t.frame_id);
      if (it == frame_index_.end()) {
        Linkage("point " + std::to_string(p.id) + " tracks missing frame " +
                std::to_string(t.frame_id));
      }
      const Frame& f = frames[it->second];
      if (t.keypoint_index >= f.keypoints.size()) {
        Linkage("point " + std::to_string(p.id) + " tracks keypoint " +
                std::to_string(t.keypoint_index) + " beyond frame " +
                std::to_string(f.id));
      }
      const auto& ref = f.keypoints[t.keypoint_index].point3d_id;
      if (!ref || *ref != p.id) {
        Linkage("keypoint " + std::to_string(t.keypoint_index) + " of frame " +
                std::to_string(f.id) + " does not point back to point " +
                std::to_string(p.id));
      }
    }
  }
  // Keypoint -> track direction.
  for (const Frame& f : frames) {
    for (size_t k = 0; k < f.keypoints.size(); ++k) {
      const auto& ref = f.keypoints[k].point3d_id;
      if (!ref) continue;
      const auto it = point_index_.find(*ref);
      if (it == point_index_.end()) {
        Linkage("keypoint " + std::to_string(k) + " of frame " +
                std::to_string(f.id) + " references missing point " +
                std::to_string(*ref));
      }
      const auto& track = points[it->second].track;
      const TrackEntry entry{f.id, k};
      if (std::find(track.begin(), track.end(), entry) == track.end()) {
        Linkage("point " + std::to_string(*ref) + " track lacks keypoint " +
                std::to_string(k) + " of frame " + std::to_string(f.id));
      }
    }
  }
}

const Frame& Reconstruction::FrameById(std::uint64_t id) const {
  const auto it = frame_index_.find(id);
  if (it == frame_index_.end()) Linkage("unknown frame " + std::to_string(id));
  return frames[it->second];
}

const ReconPoint& Reconstruction::PointById(std::uint64_t id) const {
  return points[PointIndex(id)];
}

size_t Reconstruction::PointIndex(std::uint64_t id) const {
  const auto it = point_index_.find(id);
  if (it == point_index_.end()) Linkage("unknown point " + std::to_string(id));
  return it->second;
}

const CameraIntrinsics& Reconstruction::CameraOf(const Frame& frame) const {
  return cameras.at(frame.camera_id);
}

const Keypoint2D& Reconstruction::KeypointAt(const TrackEntry& entry) const {
  return FrameById(entry.frame_id).keypoints.at(entry.keypoint_index);
}

Reconstruction ParseReconstruction(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::kParseError, "top level must be an object");
  const int version = Field<int>(doc, "version");
  if (version != 1) {
    throw Error(ErrorCode::kParseError,
                "unsupported reconstruction version " + std::to_string(version));
  }

  Reconstruction recon;
  recon.descriptor_dim = Field<int>(doc, "descriptor_dim");
  if (recon.descriptor_dim <= 0) {
    throw Error(ErrorCode::kParseError, "descriptor_dim must be positive");
  }

  for (const json& c : Field<json>(doc, "cameras")) {
    CameraIntrinsics k;
    k.fx = Field<double>(c, "fx");
    k.fy = Field<double>(c, "fy");
    k.cx = Field<double>(c, "cx");
    k.cy = Field<double>(c, "cy");
    k.width = Field<double>(c, "width");
    k.height = Field<double>(c, "height");
    if (!k.IsValid()) throw Error(ErrorCode::kParseError, "invalid camera intrinsics");
    if (!recon.cameras.emplace(Field<std::uint64_t>(c, "id"), k).second) {
      throw Error(ErrorCode::kParseError, "duplicate camera id");
    }
  }

  for (const json& jf : Field<json>(doc, "frames")) {
    Frame f;
    f.id = Field<std::uint64_t>(jf, "id");
    f.camera_id = Field<std::uint64_t>(jf, "camera_id");
    f.pose = Pose::FromQuaternion(ParseQuaternion(jf), ParseVec3(jf, "t"));
    for (const json& jk : Field<json>(jf, "keypoints")) {
      Keypoint2D kp;
      kp.u = Field<double>(jk, "u");
      kp.v = Field<double>(jk, "v");
      kp.score = Field<float>(jk, "score");
      if (!(kp.score >= 0.0f && kp.score <= 1.0f)) {
        throw Error(ErrorCode::kParseError, "keypoint score outside [0, 1]");
      }
      kp.descriptor = ParseDescriptor(jk, recon.descriptor_dim);
      if (jk.contains("point3d_id") && !jk.at("point3d_id").is_null()) {
        kp.point3d_id = Field<std::uint64_t>(jk, "point3d_id");
      }
      f.keypoints.push_back(std::move(kp));
    }
    recon.frames.push_back(std::move(f));
  }

  for (const json& jp : Field<json>(doc, "points")) {
    ReconPoint p;
    p.id = Field<std::uint64_t>(jp, "id");
    p.position = ParseVec3(jp, "xyz");
    for (const auto& t : Field<std::vector<std::vector<std::uint64_t>>>(jp, "track")) {
      if (t.size() != 2) {
        throw Error(ErrorCode::kParseError, "track entries are [frame_id, kp_idx]");
      }
      p.track.push_back({t[0], t[1]});
    }
    recon.points.push_back(std::move(p));
  }

  recon.Link();
  return recon;
}

Reconstruction LoadReconstruction(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ParseReconstruction(buffer.str());
}

std::string ReconstructionToJson(const Reconstruction& recon) {
  json doc;
  doc["version"] = 1;
  doc["descriptor_dim"] = recon.descriptor_dim;

  std::vector<std::uint64_t> camera_ids;
  for (const auto& [id, _] : recon.cameras) camera_ids.push_back(id);
  std::sort(camera_ids.begin(), camera_ids.end());
  json cameras = json::array();
  for (std::uint64_t id : camera_ids) {
    const CameraIntrinsics& k = recon.cameras.at(id);
    cameras.push_back({{"id", id}, {"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx},
                       {"cy", k.cy}, {"width", k.width}, {"height", k.height}});
  }
  doc["cameras"] = std::move(cameras);

  json frames = json::array();
  for (const Frame& f : recon.frames) {
    const auto q = f.pose.Quaternion();
    json kps = json::array();
    for (const Keypoint2D& kp : f.keypoints) {
      json jk = {{"u", kp.u}, {"v", kp.v}, {"score", kp.score},
                 {"desc", std::vector<float>(kp.descriptor.data(),
                                             kp.descriptor.data() + kp.descriptor.size())}};
      if (kp.point3d_id) jk["point3d_id"] = *kp.point3d_id;
      kps.push_back(std::move(jk));
    }
    frames.push_back({{"id", f.id},
                      {"camera_id", f.camera_id},
                      {"q", {q[0], q[1], q[2], q[3]}},
                      {"t", {f.pose.translation.x(), f.pose.translation.y(),
                             f.pose.translation.z()}},
                      {"keypoints", std::move(kps)}});
  }
  doc["frames"] = std::move(frames);

  json points = json::array();
  for (const ReconPoint& p : recon.points) {
    json track = json::array();
    for (const TrackEntry& t : p.track) track.push_back({t.frame_id, t.keypoint_index});
    points.push_back({{"id", p.id},
                      {"xyz", {p.position.x(), p.position.y(), p.position.z()}},
                      {"track", std::move(track)}});
  }
  doc["points"] = std::move(points);
  return doc.dump();
}

void SaveReconstruction(const Reconstruction& recon,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << ReconstructionToJson(recon);
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path.string());
}

}  // namespace pram
