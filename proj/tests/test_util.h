#pragma once

#include <algorithm>
#include <random>
#include <vector>

#include "pram/geometry.h"

namespace pram::testing {

inline CameraIntrinsics TestCamera() {
  return {500.0, 500.0, 320.0, 240.0, 640.0, 480.0};
}

inline Eigen::Vector3d RandomUnit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector3d v(n(rng), n(rng), n(rng));
  return v.normalized();
}

inline Pose RandomPose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, 3.14159);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Pose pose;
  pose.rotation = RotationFromAxisAngle(RandomUnit(rng) * angle(rng));
  pose.translation = Eigen::Vector3d(u(rng), u(rng), u(rng));
  return pose;
}

// Pose perturbed by a rotation of `angle_rad` about a random axis and a
// camera-center shift of `shift_m` in a random direction.
inline Pose Perturb(const Pose& pose, double angle_rad, double shift_m,
                    std::mt19937_64& rng) {
  Pose out;
  out.rotation = RotationFromAxisAngle(RandomUnit(rng) * angle_rad) *
                 pose.rotation;
  const Eigen::Vector3d center = pose.Center() + RandomUnit(rng) * shift_m;
  out.translation = -out.rotation * center;
  return out;
}

// Noiseless correspondences of points sampled inside the camera frustum at
// depths in [2, 8] m.
inline std::vector<Correspondence2D3D> RandomCorrespondences(
    const Pose& pose, const CameraIntrinsics& camera, int n,
    std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(20.0, camera.width - 20.0);
  std::uniform_real_distribution<double> v(20.0, camera.height - 20.0);
  std::uniform_real_distribution<double> depth(2.0, 8.0);
  std::vector<Correspondence2D3D> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Correspondence2D3D c;
    c.point2d = Eigen::Vector2d(u(rng), v(rng));
    c.point3d = Unproject(pose, camera, c.point2d, depth(rng));
    c.point2d = ProjectUnchecked(pose, camera, c.point3d);
    out.push_back(c);
  }
  return out;
}

inline double TranslationError(const Pose& a, const Pose& b) {
  return (a.translation - b.translation).norm();
}

inline double RotationError(const Pose& a, const Pose& b) {
  return RotationAngleBetween(a.rotation, b.rotation);
}

}  // namespace pram::testing

#include "pram/map_model.h"

namespace pram::testing {

inline Descriptor RandomDescriptor(int dim, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Descriptor d(dim);
  for (int i = 0; i < dim; ++i) d(i) = n(rng);
  return d.normalized();
}

// A small valid map with randomized sizes, values and covisibility.
inline SceneMap RandomSceneMap(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> num_labels(1, 5), num_points(1, 6), track_len(1, 4);
  std::uniform_real_distribution<float> coord(-10.0f, 10.0f);
  std::uniform_int_distribution<std::uint64_t> frame(0, 40), kp(0, 500);
  const int dims[] = {4, 8, 32};
  SceneMap map;
  map.descriptor_dim = dims[std::uniform_int_distribution<int>(0, 2)(rng)];
  map.build_config.lambda_l = static_cast<std::uint64_t>(num_labels(rng));
  map.build_config.lambda_o = std::uniform_real_distribution<double>(0.0, 50.0)(rng);
  map.build_config.lambda_v = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
  map.build_config.enable_pruning = rng() % 2 == 0;
  map.build_config.up_axis = static_cast<UpAxis>(rng() % 3);
  map.build_config.seed = rng();
  std::uint64_t next_id = rng() % 1000;
  for (std::uint32_t label = 1; label <= map.build_config.lambda_l; ++label) {
    Landmark l;
    l.label = label;
    const int n = num_points(rng);
    for (int i = 0; i < n; ++i) {
      Point3D p;
      p.id = next_id;
      next_id += 1 + rng() % 7;
      p.position = Eigen::Vector3f(coord(rng), coord(rng), coord(rng));
      p.descriptor = RandomDescriptor(map.descriptor_dim, rng);
      const int len = track_len(rng);
      for (int t = 0; t < len; ++t) p.track.push_back({frame(rng), kp(rng)});
      p.landmark_label = label;
      l.point_ids.push_back(p.id);
      if (i == 0) l.vrf.source_frame_id = p.track.front().frame_id;
      map.points.push_back(std::move(p));
    }
    l.vrf.intrinsics = {300.0 + coord(rng), 310.0 + coord(rng), 320.0 + coord(rng),
                        240.0 + coord(rng), 640.0, 480.0};
    l.vrf.pose = RandomPose(rng);
    l.centroid2d = Eigen::Vector2f(coord(rng), coord(rng));
    map.landmarks.push_back(std::move(l));
  }
  const size_t labels = map.landmarks.size();
  map.covisibility.assign(labels + 1, {});
  for (std::uint32_t a = 1; a <= labels; ++a) {
    for (std::uint32_t b = a + 1; b <= labels; ++b) {
      if (rng() % 2 == 0) {
        map.covisibility[a].push_back(b);
        map.covisibility[b].push_back(a);
      }
    }
  }
  for (auto& row : map.covisibility) std::sort(row.begin(), row.end());
  map.Reindex();
  return map;
}

}  // namespace pram::testing
