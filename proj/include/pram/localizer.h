#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pram/geometry.h"
#include "pram/map_model.h"
#include "pram/recognition.h"

namespace pram {

struct LocalizerParams {
  double lambda_s = 0.9;        // outlier confidence threshold
  std::uint64_t lambda_i = 64;  // inliers needed to accept a landmark
  std::uint64_t lambda_c = 20;  // candidate landmarks tried at most
  double ratio_test = 0.9;
  bool refine = true;
  RansacParams ransac;
  RefineParams refine_params;
  double refine_window_px = 12.0;

  // Throws kInvalidArgument.
  void Validate() const;
};

enum class LocalizationStatus : std::uint8_t { kFailed = 0, kLocalized = 1 };

struct LocalizationResult {
  LocalizationStatus status = LocalizationStatus::kFailed;
  Pose pose;
  // Pose accepted by verification, before covisibility refinement.
  Pose initial_pose;
  std::uint32_t used_landmark = 0;
  std::uint64_t num_inliers = 0;
  std::uint64_t initial_inliers = 0;
  std::uint64_t candidates_tried = 0;
  bool refined = false;
  // Inlier correspondences under `pose`.
  std::vector<Correspondence2D3D> inliers;

  bool localized() const { return status == LocalizationStatus::kLocalized; }
};

struct FilteredKeypoints {
  std::vector<size_t> indices;  // into the query keypoints, ascending
  std::vector<std::uint32_t> labels;
  std::vector<double> confidences;  // probability of the assigned label
};

// Drops keypoints whose outlier probability exceeds lambda_s; survivors take
// the best non-zero label.
FilteredKeypoints RemoveOutliers(const RecognitionOutput& rec, double lambda_s);

// Labels by descending mean confidence, then larger group, then lower label;
// at most lambda_c of them.
std::vector<std::uint32_t> RankLandmarks(std::span<const std::uint32_t> labels,
                                         std::span<const double> confidences,
                                         std::uint64_t lambda_c);

// Mutual nearest neighbours in descriptor space between the query keypoints
// and the landmark points visible in its virtual reference frame. Matches
// whose best/second-best distance ratio exceeds `ratio_test` are dropped.
std::vector<Correspondence2D3D> MatchLandmark(std::span<const Keypoint2D> query,
                                              const Landmark& landmark,
                                              const SceneMap& map, double ratio_test);

struct CovisRefinement {
  Pose pose;
  std::uint64_t num_inliers = 0;
  bool refined = false;
  std::vector<Correspondence2D3D> inliers;
};

// Re-matches the points of `landmark` and its covisibility neighbours by
// projecting them with `init`, then re-estimates the pose. Returns `init`
// unrefined when the enlarged set has fewer than `init_inliers` inliers.
CovisRefinement CovisRefine(const Pose& init, std::uint64_t init_inliers,
                            std::uint32_t landmark, std::span<const Keypoint2D> keypoints,
                            const SceneMap& map, const CameraIntrinsics& camera,
                            const LocalizerParams& params);

// Runs the pipeline after recognition; `rec` rows align with `keypoints`.
// Throws kLengthMismatch or kShapeMismatch.
LocalizationResult LocalizeRecognized(std::span<const Keypoint2D> keypoints,
                                      const RecognitionOutput& rec, const SceneMap& map,
                                      const CameraIntrinsics& camera,
                                      const LocalizerParams& params);

LocalizationResult Localize(std::span<const Keypoint2D> keypoints, const RecognizerModel& model,
                            const SceneMap& map, const CameraIntrinsics& camera,
                            const LocalizerParams& params);

// Same as Localize on each query, spread over `num_threads` workers; results
// follow input order.
std::vector<LocalizationResult> LocalizeBatch(
    std::span<const std::vector<Keypoint2D>> queries, const RecognizerModel& model,
    const SceneMap& map, const CameraIntrinsics& camera, const LocalizerParams& params,
    unsigned num_threads = 0);

}  // namespace pram
