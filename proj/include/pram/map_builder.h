#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "pram/map_model.h"

namespace pram {

// Trace of the sample covariance of `points[index]` together with its
// `num_neighbors` nearest neighbors, in squared position units.
std::vector<double> NeighborCovarianceTraces(std::span<const Eigen::Vector3d> points,
                                             size_t num_neighbors);

// Ids of points whose neighbor covariance trace is <= lambda_v, in
// reconstruction order. With no more than lambda_n points all are retained.
std::vector<std::uint64_t> FilterPoints(const Reconstruction& recon, size_t lambda_n,
                                        double lambda_v);

Eigen::Vector2d ProjectToGround(const Eigen::Vector3d& x, UpAxis up = UpAxis::kZ);

// Index of the descriptor with the smallest median distance to the other
// members; the lowest index wins ties. Expects a non-empty list.
size_t SelectDescriptor(std::span<const Descriptor> descriptors);

// Fraction of `point_ids` observed by `frame_id`.
double ObservedFraction(std::uint64_t frame_id, std::span<const std::uint64_t> point_ids,
                        const Reconstruction& recon);

struct VrfSelection {
  VirtualReferenceFrame vrf;
  double observed_fraction = 0.0;
};

// Frame observing the most landmark points; the lowest frame id wins ties.
VrfSelection SelectVrf(std::span<const std::uint64_t> point_ids,
                       const Reconstruction& recon);

// Evidence for one pruned point: its projection on `frame_id` lands
// `distance_px` from that of `witness_point_id`, kept by the same frame.
struct PruneWitness {
  std::uint64_t point_id = 0;
  std::uint64_t frame_id = 0;
  std::uint64_t witness_point_id = 0;
  double distance_px = 0.0;
};

struct PruneResult {
  // Frames observing the landmark, in processing order.
  std::vector<std::uint64_t> frame_order;
  std::vector<std::uint64_t> kept_points;  // ascending id
  // One entry per kept point: its observation in the frame that kept it.
  std::vector<std::pair<std::uint64_t, TrackEntry>> kept_observations;
  std::vector<PruneWitness> witnesses;
  // Later-frame observations of already-kept points.
  std::vector<TrackEntry> dropped_observations;
};

PruneResult PruneLandmarkPoints(std::span<const std::uint64_t> point_ids,
                                const Reconstruction& recon, double lambda_o);

struct BuildReport {
  size_t num_input_points = 0;
  size_t num_filtered_points = 0;
  size_t num_retained_points = 0;
  size_t num_input_frames = 0;
  std::vector<PruneWitness> witnesses;
};

// Throws kInvalidArgument for a bad config and kTooFewPoints when fewer than
// lambda_l points survive filtering.
SceneMap BuildMap(const Reconstruction& recon, const BuilderConfig& config,
                  BuildReport* report = nullptr);

struct TrainingSample {
  std::uint64_t frame_id = 0;
  std::vector<Keypoint2D> keypoints;
  std::vector<std::uint32_t> labels;  // 0 for keypoints without a map point
};

std::vector<TrainingSample> AssignTrainingLabels(const Reconstruction& recon,
                                                 const SceneMap& map);

}  // namespace pram
