#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace pram {

// Rigid world-to-camera transform: x_cam = rotation * x_world + translation.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose Identity() { return {}; }

  // Quaternion is (w, x, y, z); normalized on the way in.
  static Pose FromQuaternion(const std::array<double, 4>& wxyz,
                             const Eigen::Vector3d& translation);
  // Canonical sign: w >= 0.
  std::array<double, 4> Quaternion() const;

  Eigen::Vector3d Transform(const Eigen::Vector3d& x_world) const {
    return rotation * x_world + translation;
  }
  // Camera center in world coordinates.
  Eigen::Vector3d Center() const { return -rotation.transpose() * translation; }
  Pose Inverse() const;

  bool IsFinite() const {
    return rotation.allFinite() && translation.allFinite();
  }
};

// a ∘ b: apply b first, then a.
Pose Compose(const Pose& a, const Pose& b);

// Rotation from an axis-angle vector (Rodrigues).
Eigen::Matrix3d RotationFromAxisAngle(const Eigen::Vector3d& omega);
Eigen::Vector3d AxisAngleFromRotation(const Eigen::Matrix3d& rotation);

// Geodesic angle between two rotations, radians in [0, pi].
double RotationAngleBetween(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);

// Camera looking from `eye` towards `target` with world `up` pointing up in
// the image (image y axis points down).
Pose LookAt(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
            const Eigen::Vector3d& up = Eigen::Vector3d::UnitZ());

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double width = 0.0;
  double height = 0.0;

  bool IsValid() const {
    return fx > 0.0 && fy > 0.0 && cx > 0.0 && cx < width && cy > 0.0 &&
           cy < height;
  }
  Eigen::Vector2d ImageSize() const { return {width, height}; }

  friend bool operator==(const CameraIntrinsics&,
                         const CameraIntrinsics&) = default;
};

struct Correspondence2D3D {
  Eigen::Vector2d point2d = Eigen::Vector2d::Zero();
  Eigen::Vector3d point3d = Eigen::Vector3d::Zero();
  double weight = 1.0;
};

inline constexpr double kMinProjectionDepth = 1e-6;

// Pinhole projection; nullopt when behind the camera or outside the image.
std::optional<Eigen::Vector2d> Project(const Pose& pose,
                                       const CameraIntrinsics& camera,
                                       const Eigen::Vector3d& x_world);

// Projection without visibility checks; depth must be nonzero.
Eigen::Vector2d ProjectUnchecked(const Pose& pose,
                                 const CameraIntrinsics& camera,
                                 const Eigen::Vector3d& x_world);

// Inverse of Project at a known camera-frame depth.
Eigen::Vector3d Unproject(const Pose& pose, const CameraIntrinsics& camera,
                          const Eigen::Vector2d& pixel, double depth);

double ReprojectionError(const Pose& pose, const CameraIntrinsics& camera,
                         const Correspondence2D3D& corr);

// ---------------------------------------------------------------------------
// Pose solvers.

// Efficient PnP with Gauss-Newton polishing of the control-point betas.
// Throws kMinimalSampleUnavailable (< 4) or kDegenerateConfiguration.
Pose EPnP(std::span<const Correspondence2D3D> corrs,
          const CameraIntrinsics& camera);

struct RansacParams {
  int max_iters = 2048;
  double inlier_px_threshold = 8.0;
  double confidence = 0.9999;
  std::uint64_t seed = 0;
};

struct RansacResult {
  Pose pose;
  std::vector<bool> inlier_mask;
  int num_inliers = 0;
  int iterations = 0;
};

// Throws kMinimalSampleUnavailable or kNoConsensus.
RansacResult RansacPnP(std::span<const Correspondence2D3D> corrs,
                       const CameraIntrinsics& camera,
                       const RansacParams& params);

struct RefineParams {
  int max_iters = 50;
  double huber_px = 2.0;
  double convergence_eps = 1e-12;
};

struct RefineResult {
  Pose pose;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
  // Normal equations could not be solved; pose is the unchanged init.
  bool degenerate = false;
};

// Huber-robust cost summed over correspondences, weighted.
double RobustReprojectionCost(const Pose& pose, const CameraIntrinsics& camera,
                              std::span<const Correspondence2D3D> corrs,
                              double huber_px);

// Damped Gauss-Newton on the Huber reprojection cost. Only cost-decreasing
// steps are accepted. Throws kMinimalSampleUnavailable (< 4) or
// kInvalidArgument for a non-finite init.
RefineResult RefinePose(const Pose& init,
                        std::span<const Correspondence2D3D> corrs,
                        const CameraIntrinsics& camera,
                        const RefineParams& params = {});

}  // namespace pram
