#include "pram/localizer.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <exception>
#include <map>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "pram/error.h"

namespace pram {
namespace {

Eigen::MatrixXd DescriptorRows(std::span<const Descriptor* const> descs, int dim) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(descs.size()), dim);
  for (size_t i = 0; i < descs.size(); ++i) {
    if (descs[i]->size() != dim) {
      throw Error(ErrorCode::kShapeMismatch, "descriptor length " +
                                                 std::to_string(descs[i]->size()) +
                                                 ", expected " + std::to_string(dim));
    }
    m.row(static_cast<Eigen::Index>(i)) = descs[i]->cast<double>().transpose();
  }
  return m;
}

// Squared L2 distances, rows = a, cols = b.
Eigen::MatrixXd SquaredDistances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd d = -2.0 * a * b.transpose();
  d.colwise() += a.rowwise().squaredNorm();
  d.rowwise() += b.rowwise().squaredNorm().transpose();
  return d.cwiseMax(0.0);
}

bool PassesRatio(double best_sq, double second_sq, double ratio) {
  if (!std::isfinite(second_sq)) return true;
  if (second_sq <= 0.0) return false;
  return std::sqrt(best_sq / second_sq) <= ratio;
}

std::vector<Correspondence2D3D> Inliers(const Pose& pose, const CameraIntrinsics& camera,
                                        std::span<const Correspondence2D3D> corrs,
                                        double threshold) {
  std::vector<Correspondence2D3D> out;
  for (const auto& c : corrs) {
    if (ReprojectionError(pose, camera, c) <= threshold) out.push_back(c);
  }
  return out;
}

struct Verified {
  Pose pose;
  std::vector<Correspondence2D3D> inliers;
};

// RANSAC, then a robust polish on the consensus set; inliers are recounted
// under the polished pose. A `prior` pose competes with the RANSAC hypothesis
// and wins ties.
Verified Verify(std::span<const Correspondence2D3D> corrs, const CameraIntrinsics& camera,
                const LocalizerParams& params, const Pose* prior = nullptr) {
  const double threshold = params.ransac.inlier_px_threshold;
  const RansacResult ransac = RansacPnP(corrs, camera, params.ransac);
  Verified out{ransac.pose, Inliers(ransac.pose, camera, corrs, threshold)};
  if (prior) {
    auto inliers = Inliers(*prior, camera, corrs, threshold);
    if (inliers.size() >= out.inliers.size()) out = {*prior, std::move(inliers)};
  }
  try {
    out.pose = RefinePose(out.pose, out.inliers, camera, params.refine_params).pose;
    out.inliers = Inliers(out.pose, camera, corrs, threshold);
  } catch (const Error&) {
  }
  return out;
}

void CheckCompatible(const RecognizerModel& model, const SceneMap& map) {
  if (model.descriptor_dim != map.descriptor_dim) {
    throw Error(ErrorCode::kShapeMismatch,
                "model descriptor dim " + std::to_string(model.descriptor_dim) +
                    " vs map " + std::to_string(map.descriptor_dim));
  }
  if (static_cast<size_t>(model.num_classes) != map.NumLandmarks() + 1) {
    throw Error(ErrorCode::kShapeMismatch,
                "model has " + std::to_string(model.num_classes) + " classes, map has " +
                    std::to_string(map.NumLandmarks()) + " landmarks");
  }
}

}  // namespace

void LocalizerParams::Validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (!(lambda_s > 0.0 && lambda_s <= 1.0)) fail("lambda_s must be in (0, 1]");
  if (lambda_i < 4) fail("lambda_i must be at least 4");
  if (lambda_c < 1) fail("lambda_c must be at least 1");
  if (!(ratio_test > 0.0 && ratio_test <= 1.0)) fail("ratio_test must be in (0, 1]");
  if (!(refine_window_px > 0.0)) fail("refine_window_px must be positive");
  if (!(ransac.inlier_px_threshold > 0.0)) fail("RANSAC threshold must be positive");
}

FilteredKeypoints RemoveOutliers(const RecognitionOutput& rec, double lambda_s) {
  FilteredKeypoints out;
  const Eigen::MatrixXd& s = rec.confidences;
  if (s.cols() < 2) return out;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    if (s(i, 0) > lambda_s) continue;
    Eigen::Index best = 1;
    for (Eigen::Index c = 2; c < s.cols(); ++c) {
      if (s(i, c) > s(i, best)) best = c;
    }
    out.indices.push_back(static_cast<size_t>(i));
    out.labels.push_back(static_cast<std::uint32_t>(best));
    out.confidences.push_back(s(i, best));
  }
  return out;
}

std::vector<std::uint32_t> RankLandmarks(std::span<const std::uint32_t> labels,
                                         std::span<const double> confidences,
                                         std::uint64_t lambda_c) {
  if (labels.size() != confidences.size()) {
    throw Error(ErrorCode::kLengthMismatch, "labels and confidences differ in length");
  }
  struct Group {
    double sum = 0.0;
    size_t count = 0;
  };
  std::map<std::uint32_t, Group> groups;
  for (size_t i = 0; i < labels.size(); ++i) {
    groups[labels[i]].sum += confidences[i];
    ++groups[labels[i]].count;
  }
  struct Entry {
    std::uint32_t label;
    double mean;
    size_t count;
  };
  std::vector<Entry> entries;
  for (const auto& [label, g] : groups) {
    entries.push_back({label, g.sum / static_cast<double>(g.count), g.count});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.mean != b.mean) return a.mean > b.mean;
    if (a.count != b.count) return a.count > b.count;
    return a.label < b.label;
  });
  std::vector<std::uint32_t> out;
  for (const auto& e : entries) {
    if (out.size() >= lambda_c) break;
    out.push_back(e.label);
  }
  return out;
}

std::vector<Correspondence2D3D> MatchLandmark(std::span<const Keypoint2D> query,
                                              const Landmark& landmark,
                                              const SceneMap& map, double ratio_test) {
  std::vector<const Point3D*> points;
  for (std::uint64_t id : landmark.point_ids) {
    const Point3D& p = map.PointById(id);
    if (Project(landmark.vrf.pose, landmark.vrf.intrinsics, p.position.cast<double>())) {
      points.push_back(&p);
    }
  }
  if (points.empty() || query.empty()) return {};

  std::vector<const Descriptor*> qd, pd;
  for (const auto& kp : query) qd.push_back(&kp.descriptor);
  for (const Point3D* p : points) pd.push_back(&p->descriptor);
  const Eigen::MatrixXd dist =
      SquaredDistances(DescriptorRows(qd, map.descriptor_dim), DescriptorRows(pd, map.descriptor_dim));

  std::vector<Eigen::Index> best_query(points.size());
  for (Eigen::Index j = 0; j < dist.cols(); ++j) dist.col(j).minCoeff(&best_query[j]);

  std::vector<Correspondence2D3D> out;
  for (Eigen::Index i = 0; i < dist.rows(); ++i) {
    Eigen::Index best = 0;
    double d1 = std::numeric_limits<double>::infinity();
    double d2 = d1;
    for (Eigen::Index j = 0; j < dist.cols(); ++j) {
      const double d = dist(i, j);
      if (d < d1) {
        d2 = d1;
        d1 = d;
        best = j;
      } else if (d < d2) {
        d2 = d;
      }
    }
    if (best_query[best] != i || !PassesRatio(d1, d2, ratio_test)) continue;
    Correspondence2D3D c;
    c.point2d = {query[i].u, query[i].v};
    c.point3d = points[best]->position.cast<double>();
    out.push_back(c);
  }
  return out;
}

CovisRefinement CovisRefine(const Pose& init, std::uint64_t init_inliers,
                            std::uint32_t landmark, std::span<const Keypoint2D> keypoints,
                            const SceneMap& map, const CameraIntrinsics& camera,
                            const LocalizerParams& params) {
  CovisRefinement fallback{init, init_inliers, false, {}};
  if (!init.IsFinite() || map.Neighbors(landmark).empty()) return fallback;

  std::vector<std::uint32_t> labels = map.Neighbors(landmark);
  labels.insert(labels.begin(), landmark);

  // Projected points bucketed on a grid of window-sized cells.
  struct Projected {
    const Point3D* point;
    Eigen::Vector2d uv;
  };
  std::vector<Projected> projected;
  for (std::uint32_t label : labels) {
    for (std::uint64_t id : map.LandmarkByLabel(label).point_ids) {
      const Point3D& p = map.PointById(id);
      if (auto uv = Project(init, camera, p.position.cast<double>())) {
        projected.push_back({&p, *uv});
      }
    }
  }
  const double w = params.refine_window_px;
  auto cell_of = [w](const Eigen::Vector2d& uv) {
    return std::pair<long, long>{static_cast<long>(std::floor(uv.x() / w)),
                                 static_cast<long>(std::floor(uv.y() / w))};
  };
  std::map<std::pair<long, long>, std::vector<size_t>> grid;
  for (size_t j = 0; j < projected.size(); ++j) grid[cell_of(projected[j].uv)].push_back(j);

  // Best keypoint per map point: (distance, keypoint index).
  std::unordered_map<size_t, std::pair<double, size_t>> claims;
  for (size_t i = 0; i < keypoints.size(); ++i) {
    const Keypoint2D& kp = keypoints[i];
    if (kp.descriptor.size() != map.descriptor_dim) {
      throw Error(ErrorCode::kShapeMismatch, "query descriptor length mismatch");
    }
    const Eigen::Vector2d uv(kp.u, kp.v);
    const auto [cx, cy] = cell_of(uv);
    double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
    size_t best = projected.size();
    for (long dx = -1; dx <= 1; ++dx) {
      for (long dy = -1; dy <= 1; ++dy) {
        auto it = grid.find({cx + dx, cy + dy});
        if (it == grid.end()) continue;
        for (size_t j : it->second) {
          if ((projected[j].uv - uv).norm() > w) continue;
          const double d = (projected[j].point->descriptor - kp.descriptor).squaredNorm();
          if (d < d1 || (d == d1 && j < best)) {
            d2 = d1;
            d1 = d;
            best = j;
          } else if (d < d2) {
            d2 = d;
          }
        }
      }
    }
    if (best == projected.size() || !PassesRatio(d1, d2, params.ratio_test)) continue;
    auto [it, fresh] = claims.try_emplace(best, d1, i);
    if (!fresh && d1 < it->second.first) it->second = {d1, i};
  }

  std::vector<std::pair<size_t, size_t>> matched;  // keypoint, projected
  for (const auto& [j, claim] : claims) matched.emplace_back(claim.second, j);
  std::sort(matched.begin(), matched.end());
  std::vector<Correspondence2D3D> corrs;
  for (const auto& [i, j] : matched) {
    Correspondence2D3D c;
    c.point2d = {keypoints[i].u, keypoints[i].v};
    c.point3d = projected[j].point->position.cast<double>();
    corrs.push_back(c);
  }

  try {
    Verified v = Verify(corrs, camera, params, &init);
    if (v.inliers.size() < init_inliers) return fallback;
    return {v.pose, v.inliers.size(), true, std::move(v.inliers)};
  } catch (const Error&) {
    return fallback;
  }
}

LocalizationResult Localize(std::span<const Keypoint2D> keypoints, const RecognizerModel& model,
                            const SceneMap& map, const CameraIntrinsics& camera,
                            const LocalizerParams& params) {
  params.Validate();
  CheckCompatible(model, map);
  return LocalizeRecognized(keypoints, Recognize(keypoints, model, camera.width, camera.height),
                            map, camera, params);
}

LocalizationResult LocalizeRecognized(std::span<const Keypoint2D> keypoints,
                                      const RecognitionOutput& rec, const SceneMap& map,
                                      const CameraIntrinsics& camera,
                                      const LocalizerParams& params) {
  params.Validate();
  if (static_cast<size_t>(rec.confidences.rows()) != keypoints.size()) {
    throw Error(ErrorCode::kLengthMismatch,
                std::to_string(rec.confidences.rows()) + " recognition rows for " +
                    std::to_string(keypoints.size()) + " keypoints");
  }
  if (static_cast<size_t>(rec.confidences.cols()) != map.NumLandmarks() + 1) {
    throw Error(ErrorCode::kShapeMismatch, "recognition classes do not match the map");
  }
  const FilteredKeypoints kept = RemoveOutliers(rec, params.lambda_s);
  const std::vector<std::uint32_t> ranked =
      RankLandmarks(kept.labels, kept.confidences, params.lambda_c);

  LocalizationResult result;
  for (std::uint32_t label : ranked) {
    ++result.candidates_tried;
    std::vector<Keypoint2D> group;
    for (size_t k = 0; k < kept.indices.size(); ++k) {
      if (kept.labels[k] == label) group.push_back(keypoints[kept.indices[k]]);
    }
    const auto corrs = MatchLandmark(group, map.LandmarkByLabel(label), map, params.ratio_test);
    if (corrs.size() < params.lambda_i) continue;
    Verified v;
    try {
      v = Verify(corrs, camera, params);
    } catch (const Error&) {
      continue;
    }
    if (v.inliers.size() < params.lambda_i) continue;

    result.status = LocalizationStatus::kLocalized;
    result.used_landmark = label;
    result.initial_pose = result.pose = v.pose;
    result.initial_inliers = result.num_inliers = v.inliers.size();
    result.inliers = std::move(v.inliers);
    if (params.refine) {
      CovisRefinement r =
          CovisRefine(v.pose, result.initial_inliers, label, keypoints, map, camera, params);
      if (r.refined) {
        result.pose = r.pose;
        result.num_inliers = r.num_inliers;
        result.inliers = std::move(r.inliers);
        result.refined = true;
      }
    }
    return result;
  }
  return result;
}

std::vector<LocalizationResult> LocalizeBatch(
    std::span<const std::vector<Keypoint2D>> queries, const RecognizerModel& model,
    const SceneMap& map, const CameraIntrinsics& camera, const LocalizerParams& params,
    unsigned num_threads) {
  params.Validate();
  CheckCompatible(model, map);
  std::vector<LocalizationResult> results(queries.size());
  if (num_threads == 0) num_threads = std::max(1u, std::thread::hardware_concurrency());
  num_threads = std::min<unsigned>(num_threads, std::max<size_t>(1, queries.size()));

  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (size_t i = next++; i < queries.size(); i = next++) {
      try {
        results[i] = Localize(queries[i], model, map, camera, params);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < num_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

}  // namespace pram
