// EPnP: camera-frame control points expressed in the null space of the
// projection system, with the null-space combination solved from
// control-point distance constraints and polished by Gauss-Newton.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "pram/error.h"
#include "pram/geometry.h"

namespace pram {
namespace {

// Relative singular-value thresholds on the centered 3D point cloud.
constexpr double kCollinearRatio = 1e-8;
constexpr double kPlanarRatio = 1e-5;
constexpr int kBetaIterations = 10;

struct ControlFrame {
  int num_controls = 4;  // 3 for planar input
  std::vector<Eigen::Vector3d> controls;
  Eigen::MatrixXd alphas;  // n x num_controls
};

ControlFrame ChooseControlPoints(std::span<const Correspondence2D3D> corrs) {
  const int n = static_cast<int>(corrs.size());
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& c : corrs) centroid += c.point3d;
  centroid /= n;

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& c : corrs) {
    const Eigen::Vector3d d = c.point3d - centroid;
    cov += d * d.transpose();
  }
  cov /= n;

  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  // Eigen returns ascending eigenvalues.
  const Eigen::Vector3d values = eig.eigenvalues().cwiseMax(0.0);
  const double s0 = std::sqrt(values(2));
  const double s1 = std::sqrt(values(1));
  const double s2 = std::sqrt(values(0));
  if (!(s0 > 0.0) || s1 < kCollinearRatio * s0) {
    throw Error(ErrorCode::kDegenerateConfiguration,
                "3D points are coincident or collinear");
  }

  ControlFrame frame;
  frame.num_controls = s2 < kPlanarRatio * s0 ? 3 : 4;
  const int axes = frame.num_controls - 1;
  frame.controls.push_back(centroid);
  std::vector<Eigen::Vector3d> dirs;
  std::vector<double> scales;
  for (int k = 0; k < axes; ++k) {
    const int col = 2 - k;
    dirs.push_back(eig.eigenvectors().col(col));
    scales.push_back(std::sqrt(values(col)));
    frame.controls.push_back(centroid + scales.back() * dirs.back());
  }

  frame.alphas.resize(n, frame.num_controls);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d d = corrs[i].point3d - centroid;
    double rest = 1.0;
    for (int k = 0; k < axes; ++k) {
      const double a = dirs[k].dot(d) / scales[k];
      frame.alphas(i, k + 1) = a;
      rest -= a;
    }
    frame.alphas(i, 0) = rest;
  }
  return frame;
}

struct Candidate {
  Pose pose;
  double error = std::numeric_limits<double>::infinity();
};

// Rigid alignment (no scale) mapping world points onto camera points.
Pose AlignRigid(const std::vector<Eigen::Vector3d>& world,
                const std::vector<Eigen::Vector3d>& cam) {
  const size_t n = world.size();
  Eigen::Vector3d pw = Eigen::Vector3d::Zero();
  Eigen::Vector3d pc = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    pw += world[i];
    pc += cam[i];
  }
  pw /= static_cast<double>(n);
  pc /= static_cast<double>(n);
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    h += (world[i] - pw) * (cam[i] - pc).transpose();
  }
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d fix = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) {
    fix(2, 2) = -1.0;
  }
  Pose pose;
  pose.rotation = svd.matrixV() * fix * svd.matrixU().transpose();
  pose.translation = pc - pose.rotation * pw;
  return pose;
}

class EPnPSolver {
 public:
  EPnPSolver(std::span<const Correspondence2D3D> corrs,
             const CameraIntrinsics& camera)
      : corrs_(corrs), camera_(camera), frame_(ChooseControlPoints(corrs)) {}

  Pose Solve() {
    const int nc = frame_.num_controls;
    const int dim = 3 * nc;
    const int n = static_cast<int>(corrs_.size());

    Eigen::MatrixXd m(2 * n, dim);
    for (int i = 0; i < n; ++i) {
      const double w = std::sqrt(std::max(corrs_[i].weight, 0.0));
      const double xn = (corrs_[i].point2d.x() - camera_.cx) / camera_.fx;
      const double yn = (corrs_[i].point2d.y() - camera_.cy) / camera_.fy;
      for (int j = 0; j < nc; ++j) {
        const double a = w * frame_.alphas(i, j);
        m.block<2, 3>(2 * i, 3 * j) << a, 0.0, -a * xn, 0.0, a, -a * yn;
      }
    }
    const Eigen::MatrixXd mtm = m.transpose() * m;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(mtm);
    // Columns 0..nc-1 of the ascending basis span the approximate kernel.
    kernel_ = eig.eigenvectors().leftCols(nc);

    for (int a = 0; a < nc; ++a) {
      for (int b = a + 1; b < nc; ++b) {
        pairs_.emplace_back(a, b);
        world_dist2_.push_back(
            (frame_.controls[a] - frame_.controls[b]).squaredNorm());
      }
    }

    Candidate best;
    const auto consider = [&](Eigen::VectorXd betas) {
      if (!betas.allFinite()) return;
      RefineBetas(betas);
      Candidate c = Evaluate(betas);
      if (c.error < best.error) best = c;
    };
    consider(ApproxOne());
    consider(ApproxTwo());
    if (nc == 4) {
      consider(ApproxThree());
      consider(ApproxFour());
    }
    if (!std::isfinite(best.error)) {
      throw Error(ErrorCode::kDegenerateConfiguration,
                  "no finite EPnP solution");
    }
    return best.pose;
  }

 private:
  Eigen::Vector3d KernelBlock(int k, int control) const {
    return kernel_.col(k).segment<3>(3 * control);
  }
  Eigen::Vector3d KernelDiff(int k, int pair) const {
    return KernelBlock(k, pairs_[pair].first) -
           KernelBlock(k, pairs_[pair].second);
  }

  // b11 |d1|^2 = D, least squares in b11.
  Eigen::VectorXd ApproxOne() const {
    double num = 0.0, den = 0.0;
    for (size_t p = 0; p < pairs_.size(); ++p) {
      const double d2 = KernelDiff(0, static_cast<int>(p)).squaredNorm();
      num += d2 * world_dist2_[p];
      den += d2 * d2;
    }
    Eigen::VectorXd betas = Eigen::VectorXd::Zero(frame_.num_controls);
    betas(0) = den > 0.0 ? std::sqrt(std::max(num / den, 0.0)) : 0.0;
    return betas;
  }

  // [b11, b12, b22] linearization.
  Eigen::VectorXd ApproxTwo() const {
    const int np = static_cast<int>(pairs_.size());
    Eigen::MatrixXd l(np, 3);
    Eigen::VectorXd rhs(np);
    for (int p = 0; p < np; ++p) {
      const Eigen::Vector3d d1 = KernelDiff(0, p);
      const Eigen::Vector3d d2 = KernelDiff(1, p);
      l.row(p) << d1.squaredNorm(), 2.0 * d1.dot(d2), d2.squaredNorm();
      rhs(p) = world_dist2_[p];
    }
    const Eigen::Vector3d b = l.colPivHouseholderQr().solve(rhs);
    Eigen::VectorXd betas = Eigen::VectorXd::Zero(frame_.num_controls);
    betas(0) = std::sqrt(std::abs(b(0)));
    betas(1) = std::sqrt(std::abs(b(2))) * (b(1) < 0.0 ? -1.0 : 1.0);
    return betas;
  }

  // [b11, b12, b13, b22, b23, b33] linearization (4 controls, 6 pairs).
  Eigen::VectorXd ApproxThree() const {
    Eigen::Matrix<double, 6, 6> l;
    Eigen::Matrix<double, 6, 1> rhs;
    for (int p = 0; p < 6; ++p) {
      const Eigen::Vector3d d1 = KernelDiff(0, p);
      const Eigen::Vector3d d2 = KernelDiff(1, p);
      const Eigen::Vector3d d3 = KernelDiff(2, p);
      l.row(p) << d1.squaredNorm(), 2.0 * d1.dot(d2), 2.0 * d1.dot(d3),
          d2.squaredNorm(), 2.0 * d2.dot(d3), d3.squaredNorm();
      rhs(p) = world_dist2_[p];
    }
    const Eigen::Matrix<double, 6, 1> b = l.colPivHouseholderQr().solve(rhs);
    Eigen::VectorXd betas = Eigen::VectorXd::Zero(4);
    betas(0) = std::sqrt(std::abs(b(0)));
    betas(1) = std::sqrt(std::abs(b(3))) * (b(1) < 0.0 ? -1.0 : 1.0);
    betas(2) = std::sqrt(std::abs(b(5))) * (b(2) < 0.0 ? -1.0 : 1.0);
    return betas;
  }

  // [b11, b12, b13, b14] from the six pair equations, other products dropped.
  Eigen::VectorXd ApproxFour() const {
    Eigen::Matrix<double, 6, 4> l;
    Eigen::Matrix<double, 6, 1> rhs;
    for (int p = 0; p < 6; ++p) {
      const Eigen::Vector3d d1 = KernelDiff(0, p);
      l.row(p) << d1.squaredNorm(), 2.0 * d1.dot(KernelDiff(1, p)),
          2.0 * d1.dot(KernelDiff(2, p)), 2.0 * d1.dot(KernelDiff(3, p));
      rhs(p) = world_dist2_[p];
    }
    const Eigen::Vector4d b = l.colPivHouseholderQr().solve(rhs);
    Eigen::VectorXd betas = Eigen::VectorXd::Zero(4);
    const double b1 = std::sqrt(std::abs(b(0)));
    if (b1 == 0.0) return betas;
    const double sign = b(0) < 0.0 ? -1.0 : 1.0;
    betas(0) = b1;
    for (int k = 1; k < 4; ++k) betas(k) = sign * b(k) / b1;
    return betas;
  }

  // Gauss-Newton on |sum_k beta_k d_k|^2 - D over all control pairs.
  void RefineBetas(Eigen::VectorXd& betas) const {
    const int nk = static_cast<int>(betas.size());
    const int np = static_cast<int>(pairs_.size());
    Eigen::MatrixXd jac(np, nk);
    Eigen::VectorXd res(np);
    for (int iter = 0; iter < kBetaIterations; ++iter) {
      for (int p = 0; p < np; ++p) {
        Eigen::Vector3d diff = Eigen::Vector3d::Zero();
        for (int k = 0; k < nk; ++k) diff += betas(k) * KernelDiff(k, p);
        res(p) = diff.squaredNorm() - world_dist2_[p];
        for (int k = 0; k < nk; ++k) {
          jac(p, k) = 2.0 * diff.dot(KernelDiff(k, p));
        }
      }
      const Eigen::VectorXd step =
          jac.completeOrthogonalDecomposition().solve(-res);
      if (!step.allFinite()) return;
      betas += step;
      if (step.norm() <= 1e-15 * std::max(1.0, betas.norm())) return;
    }
  }

  Candidate Evaluate(const Eigen::VectorXd& betas) const {
    const int nc = frame_.num_controls;
    std::vector<Eigen::Vector3d> cam_controls(nc, Eigen::Vector3d::Zero());
    for (int k = 0; k < betas.size(); ++k) {
      for (int j = 0; j < nc; ++j) cam_controls[j] += betas(k) * KernelBlock(k, j);
    }
    const size_t n = corrs_.size();
    std::vector<Eigen::Vector3d> cam(n, Eigen::Vector3d::Zero());
    std::vector<Eigen::Vector3d> world(n);
    double mean_depth = 0.0;
    for (size_t i = 0; i < n; ++i) {
      for (int j = 0; j < nc; ++j) {
        cam[i] += frame_.alphas(static_cast<int>(i), j) * cam_controls[j];
      }
      world[i] = corrs_[i].point3d;
      mean_depth += cam[i].z();
    }
    if (mean_depth < 0.0) {
      for (auto& c : cam) c = -c;
    }
    Candidate out;
    out.pose = AlignRigid(world, cam);
    double err = 0.0;
    for (const auto& c : corrs_) {
      const double e = ReprojectionError(out.pose, camera_, c);
      err += std::isfinite(e) ? e : 1e12;
    }
    out.error = std::isfinite(err) ? err : std::numeric_limits<double>::max();
    return out;
  }

  std::span<const Correspondence2D3D> corrs_;
  const CameraIntrinsics& camera_;
  ControlFrame frame_;
  Eigen::MatrixXd kernel_;
  std::vector<std::pair<int, int>> pairs_;
  std::vector<double> world_dist2_;
};

}  // namespace

Pose EPnP(std::span<const Correspondence2D3D> corrs,
          const CameraIntrinsics& camera) {
  if (corrs.size() < 4) {
    throw Error(ErrorCode::kMinimalSampleUnavailable,
                "EPnP needs at least 4 correspondences, got " +
                    std::to_string(corrs.size()));
  }
  EPnPSolver solver(corrs, camera);
  return solver.Solve();
}

}  // namespace pram
