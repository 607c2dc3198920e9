#include "pram/geometry.h"

#include <algorithm>
#include <cmath>

#include "pram/error.h"

namespace pram {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMinimalSampleUnavailable:
      return "MinimalSampleUnavailable";
    case ErrorCode::kDegenerateConfiguration:
      return "DegenerateConfiguration";
    case ErrorCode::kNoConsensus:
      return "NoConsensus";
    case ErrorCode::kBadMagic:
      return "BadMagic";
    case ErrorCode::kUnsupportedVersion:
      return "UnsupportedVersion";
    case ErrorCode::kChecksumMismatch:
      return "ChecksumMismatch";
    case ErrorCode::kInvariantViolation:
      return "InvariantViolation";
    case ErrorCode::kParseError:
      return "ParseError";
    case ErrorCode::kLinkageError:
      return "LinkageError";
    case ErrorCode::kDescriptorDimMismatch:
      return "DescriptorDimMismatch";
    case ErrorCode::kTooFewPoints:
      return "TooFewPoints";
    case ErrorCode::kShapeMismatch:
      return "ShapeMismatch";
    case ErrorCode::kLengthMismatch:
      return "LengthMismatch";
    case ErrorCode::kInvalidArgument:
      return "InvalidArgument";
    case ErrorCode::kIoError:
      return "IoError";
  }
  return "Unknown";
}

Pose Pose::FromQuaternion(const std::array<double, 4>& wxyz,
                          const Eigen::Vector3d& translation) {
  Eigen::Quaterniond q(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
  if (q.norm() == 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "zero quaternion");
  }
  q.normalize();
  Pose pose;
  pose.rotation = q.toRotationMatrix();
  pose.translation = translation;
  return pose;
}

std::array<double, 4> Pose::Quaternion() const {
  Eigen::Quaterniond q(rotation);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return {q.w(), q.x(), q.y(), q.z()};
}

Pose Pose::Inverse() const {
  Pose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Pose Compose(const Pose& a, const Pose& b) {
  Pose out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

Eigen::Matrix3d RotationFromAxisAngle(const Eigen::Vector3d& omega) {
  const double angle = omega.norm();
  if (angle < 1e-12) {
    // First-order expansion, re-orthonormalized through the quaternion.
    Eigen::Quaterniond q(1.0, 0.5 * omega.x(), 0.5 * omega.y(),
                         0.5 * omega.z());
    return q.normalized().toRotationMatrix();
  }
  return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

Eigen::Vector3d AxisAngleFromRotation(const Eigen::Matrix3d& rotation) {
  const Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

double RotationAngleBetween(const Eigen::Matrix3d& a,
                            const Eigen::Matrix3d& b) {
  // Quaternion form is better conditioned near 0 and pi than acos(trace).
  Eigen::Quaterniond q(a.transpose() * b);
  q.normalize();
  const double s = q.vec().norm();
  return 2.0 * std::atan2(s, std::abs(q.w()));
}

Pose LookAt(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
            const Eigen::Vector3d& up) {
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = z.cross(up);
  if (x.norm() < 1e-9) x = z.unitOrthogonal();
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  Pose pose;
  pose.rotation.row(0) = x.transpose();
  pose.rotation.row(1) = y.transpose();
  pose.rotation.row(2) = z.transpose();
  pose.translation = -pose.rotation * eye;
  return pose;
}

Eigen::Vector2d ProjectUnchecked(const Pose& pose,
                                 const CameraIntrinsics& camera,
                                 const Eigen::Vector3d& x_world) {
  const Eigen::Vector3d xc = pose.Transform(x_world);
  return {camera.fx * xc.x() / xc.z() + camera.cx,
          camera.fy * xc.y() / xc.z() + camera.cy};
}

std::optional<Eigen::Vector2d> Project(const Pose& pose,
                                       const CameraIntrinsics& camera,
                                       const Eigen::Vector3d& x_world) {
  const Eigen::Vector3d xc = pose.Transform(x_world);
  if (!(xc.z() > kMinProjectionDepth)) return std::nullopt;
  const double u = camera.fx * xc.x() / xc.z() + camera.cx;
  const double v = camera.fy * xc.y() / xc.z() + camera.cy;
  if (!(u >= 0.0 && u < camera.width && v >= 0.0 && v < camera.height)) {
    return std::nullopt;
  }
  return Eigen::Vector2d(u, v);
}

Eigen::Vector3d Unproject(const Pose& pose, const CameraIntrinsics& camera,
                          const Eigen::Vector2d& pixel, double depth) {
  const Eigen::Vector3d xc((pixel.x() - camera.cx) / camera.fx * depth,
                           (pixel.y() - camera.cy) / camera.fy * depth, depth);
  return pose.rotation.transpose() * (xc - pose.translation);
}

double ReprojectionError(const Pose& pose, const CameraIntrinsics& camera,
                         const Correspondence2D3D& corr) {
  const Eigen::Vector3d xc = pose.Transform(corr.point3d);
  if (!(xc.z() > kMinProjectionDepth)) {
    return std::numeric_limits<double>::infinity();
  }
  const Eigen::Vector2d uv(camera.fx * xc.x() / xc.z() + camera.cx,
                           camera.fy * xc.y() / xc.z() + camera.cy);
  return (uv - corr.point2d).norm();
}

}  // namespace pram
