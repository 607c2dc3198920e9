#include "pram/map_builder.h"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "kdtree.h"
#include "pram/birch.h"
#include "pram/error.h"

namespace pram {
namespace {

// Distinct landmark points seen by each frame, with the keypoint of the
// first observation. Points are visited in the given order.
std::map<std::uint64_t, std::vector<std::pair<std::uint64_t, std::uint64_t>>>
ObservationsByFrame(std::span<const std::uint64_t> point_ids, const Reconstruction& recon) {
  std::map<std::uint64_t, std::vector<std::pair<std::uint64_t, std::uint64_t>>> out;
  for (std::uint64_t id : point_ids) {
    std::set<std::uint64_t> seen;
    for (const TrackEntry& t : recon.PointById(id).track) {
      if (seen.insert(t.frame_id).second) {
        out[t.frame_id].emplace_back(id, t.keypoint_index);
      }
    }
  }
  return out;
}

double Median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

std::vector<double> NeighborCovarianceTraces(std::span<const Eigen::Vector3d> points,
                                             size_t num_neighbors) {
  std::vector<double> traces(points.size(), 0.0);
  if (points.empty()) return traces;
  const detail::KdTree3 tree(points);
  const size_t k = std::min(points.size(), num_neighbors + 1);
  if (k < 2) return traces;
  for (size_t i = 0; i < points.size(); ++i) {
    const std::vector<size_t> nn = tree.Nearest(points[i], k);
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (size_t j : nn) mean += points[j];
    mean /= static_cast<double>(nn.size());
    double sum = 0.0;
    for (size_t j : nn) sum += (points[j] - mean).squaredNorm();
    traces[i] = sum / static_cast<double>(nn.size() - 1);
  }
  return traces;
}

std::vector<std::uint64_t> FilterPoints(const Reconstruction& recon, size_t lambda_n,
                                        double lambda_v) {
  std::vector<std::uint64_t> kept;
  kept.reserve(recon.points.size());
  if (recon.points.size() <= lambda_n) {
    for (const ReconPoint& p : recon.points) kept.push_back(p.id);
    return kept;
  }
  std::vector<Eigen::Vector3d> positions;
  positions.reserve(recon.points.size());
  for (const ReconPoint& p : recon.points) positions.push_back(p.position);
  const std::vector<double> traces = NeighborCovarianceTraces(positions, lambda_n);
  for (size_t i = 0; i < recon.points.size(); ++i) {
    if (traces[i] <= lambda_v) kept.push_back(recon.points[i].id);
  }
  return kept;
}

Eigen::Vector2d ProjectToGround(const Eigen::Vector3d& x, UpAxis up) {
  switch (up) {
    case UpAxis::kX:
      return {x.y(), x.z()};
    case UpAxis::kY:
      return {x.x(), x.z()};
    case UpAxis::kZ:
      break;
  }
  return {x.x(), x.y()};
}

size_t SelectDescriptor(std::span<const Descriptor> descriptors) {
  const size_t n = descriptors.size();
  if (n <= 2) return 0;
  size_t best = 0;
  double best_median = std::numeric_limits<double>::infinity();
  std::vector<double> dists;
  for (size_t i = 0; i < n; ++i) {
    dists.clear();
    for (size_t j = 0; j < n; ++j) {
      if (j != i) {
        dists.push_back((descriptors[i] - descriptors[j]).cast<double>().norm());
      }
    }
    const double m = Median(dists);
    if (m < best_median) {
      best_median = m;
      best = i;
    }
  }
  return best;
}

double ObservedFraction(std::uint64_t frame_id, std::span<const std::uint64_t> point_ids,
                        const Reconstruction& recon) {
  if (point_ids.empty()) return 0.0;
  size_t observed = 0;
  for (std::uint64_t id : point_ids) {
    const auto& track = recon.PointById(id).track;
    observed += std::any_of(track.begin(), track.end(),
                            [&](const TrackEntry& t) { return t.frame_id == frame_id; });
  }
  return static_cast<double>(observed) / static_cast<double>(point_ids.size());
}

VrfSelection SelectVrf(std::span<const std::uint64_t> point_ids,
                       const Reconstruction& recon) {
  if (point_ids.empty()) throw Error(ErrorCode::kInvalidArgument, "empty landmark");
  const auto by_frame = ObservationsByFrame(point_ids, recon);
  std::uint64_t best_frame = 0;
  size_t best_count = 0;
  for (const auto& [frame_id, obs] : by_frame) {  // ascending frame id
    if (obs.size() > best_count) {
      best_count = obs.size();
      best_frame = frame_id;
    }
  }
  const Frame& frame = recon.FrameById(best_frame);
  VrfSelection out;
  out.vrf = {recon.CameraOf(frame), frame.pose, frame.id};
  out.observed_fraction =
      static_cast<double>(best_count) / static_cast<double>(point_ids.size());
  return out;
}

PruneResult PruneLandmarkPoints(std::span<const std::uint64_t> point_ids,
                                const Reconstruction& recon, double lambda_o) {
  std::vector<std::uint64_t> ids(point_ids.begin(), point_ids.end());
  std::sort(ids.begin(), ids.end());
  const auto by_frame = ObservationsByFrame(ids, recon);

  PruneResult result;
  for (const auto& [frame_id, _] : by_frame) result.frame_order.push_back(frame_id);
  std::stable_sort(result.frame_order.begin(), result.frame_order.end(),
                   [&](std::uint64_t a, std::uint64_t b) {
                     return by_frame.at(a).size() > by_frame.at(b).size();
                   });

  struct KeptOnFrame {
    const Frame* frame;
    const CameraIntrinsics* camera;
    std::vector<std::pair<std::uint64_t, Eigen::Vector2d>> projections;
  };
  std::vector<KeptOnFrame> earlier;
  std::set<std::uint64_t> decided;

  for (std::uint64_t frame_id : result.frame_order) {
    const Frame& frame = recon.FrameById(frame_id);
    KeptOnFrame current{&frame, &recon.CameraOf(frame), {}};
    for (const auto& [pid, kp] : by_frame.at(frame_id)) {
      if (decided.contains(pid)) {
        result.dropped_observations.push_back({frame_id, kp});
        continue;
      }
      decided.insert(pid);
      const Eigen::Vector3d& x = recon.PointById(pid).position;

      std::optional<PruneWitness> witness;
      for (const KeptOnFrame& prev : earlier) {
        const auto proj = Project(prev.frame->pose, *prev.camera, x);
        if (!proj) continue;
        for (const auto& [qid, q] : prev.projections) {
          const double d = (*proj - q).norm();
          if (d < lambda_o && (!witness || d < witness->distance_px)) {
            witness = PruneWitness{pid, prev.frame->id, qid, d};
          }
        }
        if (witness) break;
      }
      if (witness) {
        result.witnesses.push_back(*witness);
        continue;
      }
      result.kept_points.push_back(pid);
      result.kept_observations.push_back({pid, {frame_id, kp}});
      if (const auto proj = Project(frame.pose, *current.camera, x)) {
        current.projections.emplace_back(pid, *proj);
      }
    }
    earlier.push_back(std::move(current));
  }
  std::sort(result.kept_points.begin(), result.kept_points.end());
  std::sort(result.kept_observations.begin(), result.kept_observations.end());
  return result;
}

SceneMap BuildMap(const Reconstruction& recon, const BuilderConfig& config,
                  BuildReport* report) {
  config.Validate();
  std::vector<std::uint64_t> filtered =
      FilterPoints(recon, config.lambda_n, config.lambda_v);
  std::sort(filtered.begin(), filtered.end());
  if (filtered.size() < config.lambda_l) {
    throw Error(ErrorCode::kTooFewPoints,
                std::to_string(filtered.size()) + " points survive filtering, " +
                    std::to_string(config.lambda_l) + " landmarks requested");
  }

  std::vector<Eigen::Vector2d> ground;
  ground.reserve(filtered.size());
  for (std::uint64_t id : filtered) {
    ground.push_back(ProjectToGround(recon.PointById(id).position, config.up_axis));
  }
  const std::vector<std::uint32_t> labels =
      ClusterLandmarks(ground, static_cast<size_t>(config.lambda_l));

  const size_t num_labels = config.lambda_l;
  std::vector<std::vector<std::uint64_t>> members(num_labels + 1);
  for (size_t i = 0; i < filtered.size(); ++i) members[labels[i]].push_back(filtered[i]);

  SceneMap map;
  map.descriptor_dim = recon.descriptor_dim;
  map.build_config = config;
  if (report) {
    *report = {};
    report->num_input_points = recon.points.size();
    report->num_filtered_points = filtered.size();
    report->num_input_frames = recon.frames.size();
  }

  std::vector<Descriptor> track_descriptors;
  for (std::uint32_t label = 1; label <= num_labels; ++label) {
    const auto& ids = members[label];
    Landmark landmark;
    landmark.label = label;
    landmark.vrf = SelectVrf(ids, recon).vrf;

    std::map<std::uint64_t, std::vector<TrackEntry>> retained;
    if (config.enable_pruning) {
      PruneResult pruned = PruneLandmarkPoints(ids, recon, config.lambda_o);
      for (const auto& [pid, obs] : pruned.kept_observations) retained[pid].push_back(obs);
      if (report) {
        report->witnesses.insert(report->witnesses.end(), pruned.witnesses.begin(),
                                 pruned.witnesses.end());
      }
    } else {
      for (std::uint64_t pid : ids) {
        auto track = recon.PointById(pid).track;
        std::sort(track.begin(), track.end());
        retained[pid] = std::move(track);
      }
    }

    Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
    for (auto& [pid, track] : retained) {
      const ReconPoint& src = recon.PointById(pid);
      auto full_track = src.track;
      std::sort(full_track.begin(), full_track.end());
      track_descriptors.clear();
      for (const TrackEntry& t : full_track) {
        track_descriptors.push_back(recon.KeypointAt(t).descriptor);
      }
      Point3D p;
      p.id = pid;
      p.position = src.position.cast<float>();
      p.descriptor = track_descriptors[SelectDescriptor(track_descriptors)];
      p.track = std::move(track);
      p.landmark_label = label;
      map.points.push_back(std::move(p));
      landmark.point_ids.push_back(pid);
      centroid += ProjectToGround(src.position, config.up_axis);
    }
    landmark.centroid2d = (centroid / static_cast<double>(retained.size())).cast<float>();
    map.landmarks.push_back(std::move(landmark));
  }
  std::sort(map.points.begin(), map.points.end(),
            [](const Point3D& a, const Point3D& b) { return a.id < b.id; });

  std::map<std::uint64_t, std::set<std::uint32_t>> labels_by_frame;
  for (const Point3D& p : map.points) {
    for (const TrackEntry& t : p.track) labels_by_frame[t.frame_id].insert(p.landmark_label);
  }
  std::vector<std::set<std::uint32_t>> adjacency(num_labels + 1);
  for (const auto& [_, seen] : labels_by_frame) {
    for (std::uint32_t a : seen) {
      for (std::uint32_t b : seen) {
        if (a != b) adjacency[a].insert(b);
      }
    }
  }
  map.covisibility.resize(num_labels + 1);
  for (size_t a = 1; a <= num_labels; ++a) {
    map.covisibility[a].assign(adjacency[a].begin(), adjacency[a].end());
  }

  map.Reindex();
  map.Validate();
  if (report) report->num_retained_points = map.points.size();
  return map;
}

std::vector<TrainingSample> AssignTrainingLabels(const Reconstruction& recon,
                                                 const SceneMap& map) {
  std::vector<TrainingSample> samples;
  samples.reserve(recon.frames.size());
  for (const Frame& f : recon.frames) {
    TrainingSample s;
    s.frame_id = f.id;
    s.keypoints = f.keypoints;
    s.labels.reserve(f.keypoints.size());
    for (const Keypoint2D& kp : f.keypoints) {
      const bool mapped = kp.point3d_id && map.HasPoint(*kp.point3d_id);
      s.labels.push_back(mapped ? map.PointById(*kp.point3d_id).landmark_label : 0);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace pram
