#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "pram/error.h"
#include "pram/geometry.h"

namespace pram {
namespace {

// Cost charged for a correspondence that falls behind the camera, in pixels.
constexpr double kBehindCameraPenaltyPx = 1e6;
constexpr int kMaxDampingTries = 12;

double Huber(double e, double k) {
  return e <= k ? 0.5 * e * e : k * (e - 0.5 * k);
}

struct NormalEquations {
  Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
  Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
};

// Linearization around `pose` with the left-multiplied update
// R' = exp(dw) R, t' = exp(dw) t + dt.
NormalEquations Linearize(const Pose& pose, const CameraIntrinsics& camera,
                          std::span<const Correspondence2D3D> corrs,
                          double huber_px) {
  NormalEquations ne;
  for (const auto& c : corrs) {
    if (c.weight <= 0.0) continue;
    const Eigen::Vector3d xc = pose.Transform(c.point3d);
    if (!(xc.z() > kMinProjectionDepth)) continue;
    const double iz = 1.0 / xc.z();
    const Eigen::Vector2d r(camera.fx * xc.x() * iz + camera.cx - c.point2d.x(),
                            camera.fy * xc.y() * iz + camera.cy - c.point2d.y());
    const double e = r.norm();
    const double irls = e <= huber_px ? 1.0 : huber_px / e;
    const double w = c.weight * irls;

    Eigen::Matrix<double, 2, 3> dproj;
    dproj << camera.fx * iz, 0.0, -camera.fx * xc.x() * iz * iz, 0.0,
        camera.fy * iz, -camera.fy * xc.y() * iz * iz;
    Eigen::Matrix3d skew;
    skew << 0.0, -xc.z(), xc.y(), xc.z(), 0.0, -xc.x(), -xc.y(), xc.x(), 0.0;
    Eigen::Matrix<double, 2, 6> j;
    j.leftCols<3>() = -dproj * skew;
    j.rightCols<3>() = dproj;
    ne.h.noalias() += w * j.transpose() * j;
    ne.g.noalias() += w * j.transpose() * r;
  }
  return ne;
}

Pose ApplyUpdate(const Pose& pose, const Eigen::Matrix<double, 6, 1>& delta) {
  const Eigen::Matrix3d dr = RotationFromAxisAngle(delta.head<3>());
  Pose out;
  out.rotation = dr * pose.rotation;
  out.translation = dr * pose.translation + delta.tail<3>();
  return out;
}

}  // namespace

double RobustReprojectionCost(const Pose& pose, const CameraIntrinsics& camera,
                              std::span<const Correspondence2D3D> corrs,
                              double huber_px) {
  double cost = 0.0;
  for (const auto& c : corrs) {
    if (c.weight <= 0.0) continue;
    const double e = ReprojectionError(pose, camera, c);
    cost += c.weight * Huber(std::isfinite(e) ? e : kBehindCameraPenaltyPx,
                             huber_px);
  }
  return cost;
}

RefineResult RefinePose(const Pose& init,
                        std::span<const Correspondence2D3D> corrs,
                        const CameraIntrinsics& camera,
                        const RefineParams& params) {
  if (corrs.size() < 4) {
    throw Error(ErrorCode::kMinimalSampleUnavailable,
                "refinement needs at least 4 correspondences");
  }
  if (!init.IsFinite()) {
    throw Error(ErrorCode::kInvalidArgument, "initial pose is not finite");
  }

  RefineResult result;
  result.pose = init;
  result.initial_cost =
      RobustReprojectionCost(init, camera, corrs, params.huber_px);
  double cost = result.initial_cost;
  double damping = 0.0;

  for (int iter = 0; iter < params.max_iters; ++iter) {
    result.iterations = iter + 1;
    const NormalEquations ne =
        Linearize(result.pose, camera, corrs, params.huber_px);
    const double diag_scale = ne.h.diagonal().maxCoeff();
    if (!(diag_scale > 0.0) || !std::isfinite(diag_scale)) {
      result.degenerate = true;
      break;
    }

    bool accepted = false;
    bool tiny_step = false;
    for (int attempt = 0; attempt < kMaxDampingTries; ++attempt) {
      Eigen::Matrix<double, 6, 6> a = ne.h;
      a.diagonal().array() += damping * (ne.h.diagonal().array() + 1e-12 * diag_scale);
      const Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(a);
      Eigen::Matrix<double, 6, 1> delta;
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        delta = ldlt.solve(-ne.g);
      }
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
          !delta.allFinite()) {
        damping = damping == 0.0 ? 1e-6 : damping * 10.0;
        continue;
      }
      if (delta.norm() < params.convergence_eps) {
        tiny_step = true;
        break;
      }
      const Pose candidate = ApplyUpdate(result.pose, delta);
      const double candidate_cost =
          RobustReprojectionCost(candidate, camera, corrs, params.huber_px);
      if (candidate_cost < cost) {
        result.pose = candidate;
        cost = candidate_cost;
        damping *= 0.1;
        if (damping < 1e-9) damping = 0.0;
        accepted = true;
        break;
      }
      damping = damping == 0.0 ? 1e-6 : damping * 10.0;
    }
    if (tiny_step) {
      result.converged = true;
      break;
    }
    if (!accepted) {
      // No decreasing step at any damping level: a stationary point.
      result.converged = true;
      break;
    }
  }

  result.final_cost = cost;
  return result;
}

}  // namespace pram
