#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pram/map_model.h"

namespace pram {

// Per-keypoint class probabilities; column 0 is the outlier class.
struct RecognitionOutput {
  Eigen::MatrixXd confidences;          // n x (num_landmarks + 1), rows sum to 1
  std::vector<std::uint32_t> labels;    // row-wise argmax, lowest label on ties

  size_t size() const { return labels.size(); }
};

using MatrixRf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// y = W x + b with W stored out x in.
struct Linear {
  MatrixRf weight;
  Eigen::VectorXf bias;
};

struct LayerNormParams {
  Eigen::VectorXf weight;
  Eigen::VectorXf bias;
};

struct TransformerBlock {
  LayerNormParams norm1;
  Linear qkv;  // 3H x H, rows ordered query, key, value
  Linear out;  // H x H
  LayerNormParams norm2;
  Linear fc1;  // 2H x H
  Linear fc2;  // H x 2H
};

inline constexpr std::array<int, 3> kPositionalHidden = {32, 64, 128};

struct TransformerWeights {
  int num_heads = 4;
  Linear in_proj;            // H x D
  std::array<Linear, 4> pos;  // 2 -> 32 -> 64 -> 128 -> H, ReLU between
  std::vector<TransformerBlock> blocks;
  LayerNormParams norm;
  Linear head;  // C x H
};

struct CentroidWeights {
  MatrixRf centroids;  // num_landmarks x D, unit rows
  float temperature = 0.07f;
  float null_bias = 0.5f;
};

enum class ModelKind : std::uint8_t { kCentroid = 0, kTransformer = 1 };

struct RecognizerModel {
  ModelKind kind = ModelKind::kCentroid;
  int descriptor_dim = 0;
  int num_classes = 0;  // num_landmarks + 1
  CentroidWeights centroid;
  TransformerWeights transformer;

  int hidden_dim() const { return static_cast<int>(transformer.in_proj.weight.rows()); }
  // Throws kShapeMismatch or kInvalidArgument.
  void Validate() const;
};

// Positional MLP output for pixel (u, v) normalized to [-1, 1]^2 by the
// image size.
Eigen::VectorXd PositionalEncode(double u, double v, double width, double height,
                                 const std::array<Linear, 4>& mlp);

// n x H matrix: in_proj(descriptor) + PositionalEncode(u, v).
Eigen::MatrixXd Tokenize(std::span<const Keypoint2D> keypoints, const RecognizerModel& model,
                         double width, double height);

RecognitionOutput TransformerForward(const Eigen::MatrixXd& tokens,
                                     const RecognizerModel& model);

// Row-wise softmax with argmax labels.
RecognitionOutput SoftmaxOutput(const Eigen::MatrixXd& logits);

// Class weights: inliers m0 / m, outliers 1 - m0 / m, with m0 the number of
// zero labels. Probabilities are clamped at 1e-12 before the log.
double WeightedCeLoss(const Eigen::MatrixXd& confidences,
                      std::span<const std::uint32_t> labels);

struct HeadGradient {
  double loss = 0.0;
  Eigen::MatrixXd weight;  // C x H
  Eigen::VectorXd bias;    // C
};

// Loss and analytic gradient of a linear head (logits = F W^T + b) followed by
// softmax and the weighted cross-entropy.
HeadGradient LinearHeadGradient(const Eigen::MatrixXd& features,
                                std::span<const std::uint32_t> labels,
                                const Eigen::MatrixXd& weight, const Eigen::VectorXd& bias);

struct CentroidParams {
  float temperature = 0.07f;
  float null_bias = 0.5f;
};

// Mean descriptor of each landmark's points, renormalized.
RecognizerModel TrainCentroidRecognizer(const SceneMap& map, const CentroidParams& params = {});

// Gaussian-initialized transformer of the given shape, for tests and tooling.
RecognizerModel RandomTransformer(int descriptor_dim, int hidden_dim, int num_heads,
                                  int num_blocks, int num_classes, std::mt19937_64& rng,
                                  double scale = 0.2);

// Dispatches on the model kind. The image size feeds the positional encoding
// and is ignored by the centroid model. Throws kShapeMismatch.
RecognitionOutput Recognize(std::span<const Keypoint2D> keypoints,
                            const RecognizerModel& model, double width, double height);

// Weight container "PRAMWTS1": header, named float32 tensors, CRC-32 trailer.
struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<float> data;  // row-major
};

std::vector<NamedTensor> ModelToTensors(const RecognizerModel& model);
// Throws kShapeMismatch for missing, extra or inconsistent tensors.
RecognizerModel ModelFromTensors(ModelKind kind, int num_heads,
                                 const std::vector<NamedTensor>& tensors);

std::vector<std::uint8_t> EncodeTensors(ModelKind kind, int num_heads,
                                        const std::vector<NamedTensor>& tensors);
std::vector<std::uint8_t> SerializeWeights(const RecognizerModel& model);
// Throws kBadMagic, kUnsupportedVersion, kChecksumMismatch or kShapeMismatch.
RecognizerModel DeserializeWeights(std::span<const std::uint8_t> bytes);

void SaveWeights(const RecognizerModel& model, const std::filesystem::path& path);
RecognizerModel LoadWeights(const std::filesystem::path& path);

bool BitIdentical(const RecognizerModel& a, const RecognizerModel& b);

}  // namespace pram
