#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "pram/error.h"
#include "pram/geometry.h"

namespace pram {
namespace {

constexpr int kSampleSize = 4;
constexpr int kMinConsensus = 4;
constexpr int kMaxRefits = 5;

struct Consensus {
  std::vector<bool> mask;
  int count = 0;
  double error_sum = 0.0;

  bool BetterThan(const Consensus& other) const {
    if (count != other.count) return count > other.count;
    return error_sum < other.error_sum;
  }
};

Consensus Score(const Pose& pose, const CameraIntrinsics& camera,
                std::span<const Correspondence2D3D> corrs, double threshold) {
  Consensus c;
  c.mask.assign(corrs.size(), false);
  for (size_t i = 0; i < corrs.size(); ++i) {
    const double e = ReprojectionError(pose, camera, corrs[i]);
    if (e <= threshold) {
      c.mask[i] = true;
      ++c.count;
      c.error_sum += e;
    }
  }
  return c;
}

int RequiredIterations(int inliers, int n, double confidence, int cap) {
  const double w = static_cast<double>(inliers) / n;
  const double p_good = std::pow(w, kSampleSize);
  if (p_good >= 1.0) return 1;
  if (p_good <= 0.0) return cap;
  const double needed = std::log(1.0 - confidence) / std::log(1.0 - p_good);
  if (!std::isfinite(needed) || needed > cap) return cap;
  return std::max(1, static_cast<int>(std::ceil(needed)));
}

std::vector<Correspondence2D3D> Select(std::span<const Correspondence2D3D> corrs,
                                       const std::vector<bool>& mask) {
  std::vector<Correspondence2D3D> out;
  for (size_t i = 0; i < corrs.size(); ++i) {
    if (mask[i]) out.push_back(corrs[i]);
  }
  return out;
}

}  // namespace

RansacResult RansacPnP(std::span<const Correspondence2D3D> corrs,
                       const CameraIntrinsics& camera,
                       const RansacParams& params) {
  const int n = static_cast<int>(corrs.size());
  if (n < kSampleSize) {
    throw Error(ErrorCode::kMinimalSampleUnavailable,
                "RANSAC needs at least 4 correspondences, got " +
                    std::to_string(n));
  }

  std::mt19937_64 rng(params.seed);
  std::vector<int> indices(n);
  std::iota(indices.begin(), indices.end(), 0);
  std::vector<Correspondence2D3D> sample(kSampleSize);

  Consensus best;
  Pose best_pose;
  int budget = std::max(1, params.max_iters);
  int iter = 0;
  for (; iter < budget; ++iter) {
    // Partial Fisher-Yates draw of kSampleSize distinct indices.
    for (int k = 0; k < kSampleSize; ++k) {
      std::uniform_int_distribution<int> pick(k, n - 1);
      std::swap(indices[k], indices[pick(rng)]);
      sample[k] = corrs[indices[k]];
    }
    Pose hypothesis;
    try {
      hypothesis = EPnP(sample, camera);
    } catch (const Error&) {
      continue;
    }
    Consensus c = Score(hypothesis, camera, corrs, params.inlier_px_threshold);
    if (c.BetterThan(best)) {
      best = std::move(c);
      best_pose = hypothesis;
      budget = std::min(budget, RequiredIterations(best.count, n,
                                                   params.confidence,
                                                   params.max_iters));
    }
  }

  if (best.count < kMinConsensus) {
    throw Error(ErrorCode::kNoConsensus,
                "best consensus has " + std::to_string(best.count) +
                    " correspondences");
  }

  // Re-fit on the consensus set until it stops growing.
  for (int refit = 0; refit < kMaxRefits; ++refit) {
    Pose pose;
    try {
      pose = EPnP(Select(corrs, best.mask), camera);
    } catch (const Error&) {
      break;
    }
    Consensus c = Score(pose, camera, corrs, params.inlier_px_threshold);
    if (c.count < best.count) break;
    const bool same_set = c.mask == best.mask;
    best = std::move(c);
    best_pose = pose;
    if (same_set) break;
  }

  RansacResult result;
  result.pose = best_pose;
  result.inlier_mask = std::move(best.mask);
  result.num_inliers = best.count;
  result.iterations = iter;
  return result;
}

}  // namespace pram
