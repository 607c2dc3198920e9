#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "pram/geometry.h"

namespace pram {

using Descriptor = Eigen::VectorXf;

inline constexpr int kDefaultDescriptorDim = 128;

struct Keypoint2D {
  double u = 0.0;
  double v = 0.0;
  Descriptor descriptor;
  float score = 1.0f;
  // Absent for keypoints without a reconstructed 3D point (label 0).
  std::optional<std::uint64_t> point3d_id;
};

struct TrackEntry {
  std::uint64_t frame_id = 0;
  std::uint64_t keypoint_index = 0;

  friend auto operator<=>(const TrackEntry&, const TrackEntry&) = default;
};

// ---------------------------------------------------------------------------
// Reconstruction import schema.

struct Frame {
  std::uint64_t id = 0;
  std::uint64_t camera_id = 0;
  Pose pose;
  std::vector<Keypoint2D> keypoints;
};

struct ReconPoint {
  std::uint64_t id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  std::vector<TrackEntry> track;
};

struct Reconstruction {
  int descriptor_dim = kDefaultDescriptorDim;
  std::unordered_map<std::uint64_t, CameraIntrinsics> cameras;
  std::vector<Frame> frames;
  std::vector<ReconPoint> points;

  // Rebuilds id lookups and checks cross-links. Throws kLinkageError or
  // kDescriptorDimMismatch.
  void Link();

  const Frame& FrameById(std::uint64_t id) const;
  const ReconPoint& PointById(std::uint64_t id) const;
  const CameraIntrinsics& CameraOf(const Frame& frame) const;
  bool HasFrame(std::uint64_t id) const { return frame_index_.contains(id); }
  bool HasPoint(std::uint64_t id) const { return point_index_.contains(id); }
  size_t PointIndex(std::uint64_t id) const;
  const Keypoint2D& KeypointAt(const TrackEntry& entry) const;

 private:
  std::unordered_map<std::uint64_t, size_t> frame_index_;
  std::unordered_map<std::uint64_t, size_t> point_index_;
};

// Parses the JSON import format. Descriptors within 1e-3 of unit norm are
// renormalized, others rejected. Throws kParseError, kLinkageError,
// kDescriptorDimMismatch or kIoError.
Reconstruction ParseReconstruction(const std::string& json_text);
Reconstruction LoadReconstruction(const std::filesystem::path& path);
std::string ReconstructionToJson(const Reconstruction& recon);
void SaveReconstruction(const Reconstruction& recon,
                        const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Landmark map.

enum class UpAxis : std::uint8_t { kX = 0, kY = 1, kZ = 2 };

struct BuilderConfig {
  std::uint64_t lambda_l = 16;  // number of landmarks
  std::uint64_t lambda_n = 20;  // neighbors for spatial filtering
  double lambda_v = 0.2;        // neighbor covariance trace threshold, m^2
  double lambda_o = 25.0;       // pruning radius, px
  UpAxis up_axis = UpAxis::kZ;
  bool enable_pruning = true;
  std::uint64_t seed = 0;

  // Throws kInvalidArgument.
  void Validate() const;

  friend bool operator==(const BuilderConfig&, const BuilderConfig&) = default;
};

struct VirtualReferenceFrame {
  CameraIntrinsics intrinsics;
  Pose pose;
  std::uint64_t source_frame_id = 0;
};

struct Point3D {
  std::uint64_t id = 0;
  Eigen::Vector3f position = Eigen::Vector3f::Zero();
  Descriptor descriptor;
  // Observations retained after pruning.
  std::vector<TrackEntry> track;
  std::uint32_t landmark_label = 0;
};

struct Landmark {
  std::uint32_t label = 0;
  std::vector<std::uint64_t> point_ids;
  VirtualReferenceFrame vrf;
  Eigen::Vector2f centroid2d = Eigen::Vector2f::Zero();
};

class SceneMap {
 public:
  int descriptor_dim = kDefaultDescriptorDim;
  BuilderConfig build_config;
  // landmarks[i].label == i + 1.
  std::vector<Landmark> landmarks;
  std::vector<Point3D> points;
  // Indexed by label; entry 0 is unused. Sorted, symmetric, irreflexive.
  std::vector<std::vector<std::uint32_t>> covisibility;

  size_t NumLandmarks() const { return landmarks.size(); }
  const Landmark& LandmarkByLabel(std::uint32_t label) const {
    return landmarks.at(label - 1);
  }
  const std::vector<std::uint32_t>& Neighbors(std::uint32_t label) const {
    return covisibility.at(label);
  }
  const Point3D& PointById(std::uint64_t id) const;
  bool HasPoint(std::uint64_t id) const { return point_index_.contains(id); }

  // Rebuilds the id lookup; call after mutating `points`.
  void Reindex();
  // Throws kInvariantViolation naming the first violated invariant.
  void Validate() const;

 private:
  std::unordered_map<std::uint64_t, size_t> point_index_;
};

// Field-by-field comparison, floats compared by bit pattern.
bool BitIdentical(const SceneMap& a, const SceneMap& b);

// Binary container "PRAMMAP1". Integers are u64 little-endian; descriptors,
// positions and centroids float32; camera, pose and config reals float64.
// A CRC-32 over everything after the magic closes the stream.
std::vector<std::uint8_t> SerializeMap(const SceneMap& map);
// Throws kBadMagic, kUnsupportedVersion, kChecksumMismatch or
// kInvariantViolation.
SceneMap DeserializeMap(std::span<const std::uint8_t> bytes);

void SaveMap(const SceneMap& map, const std::filesystem::path& path);
SceneMap LoadMap(const std::filesystem::path& path);

}  // namespace pram
