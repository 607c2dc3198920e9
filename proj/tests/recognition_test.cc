#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>

#include <gtest/gtest.h>
#include <json.hpp>
#include <zlib.h>

#include "pram/error.h"
#include "pram/recognition.h"
#include "test_util.h"

namespace pram {
namespace {

using testing::RandomDescriptor;

const std::filesystem::path kGoldenDir = PRAM_TEST_GOLDEN_DIR;

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIoError;
}

struct Golden {
  RecognizerModel model;
  nlohmann::json doc;
  std::vector<Keypoint2D> keypoints;
  double width, height;
};

const Golden& LoadGolden() {
  static const Golden g = [] {
    Golden out;
    out.model = LoadWeights(kGoldenDir / "transformer_small.wts");
    std::ifstream in(kGoldenDir / "transformer_small.json");
    out.doc = nlohmann::json::parse(in);
    out.width = out.doc["image_size"][0];
    out.height = out.doc["image_size"][1];
    for (const auto& k : out.doc["keypoints"]) {
      Keypoint2D kp;
      kp.u = k["u"];
      kp.v = k["v"];
      const auto d = k["desc"].get<std::vector<float>>();
      kp.descriptor = Eigen::Map<const Eigen::VectorXf>(d.data(), static_cast<Eigen::Index>(d.size()));
      out.keypoints.push_back(kp);
    }
    return out;
  }();
  return g;
}

Eigen::MatrixXd JsonMatrix(const nlohmann::json& j) {
  Eigen::MatrixXd m(j.size(), j[0].size());
  for (size_t i = 0; i < j.size(); ++i) {
    for (size_t k = 0; k < j[i].size(); ++k) m(i, k) = j[i][k];
  }
  return m;
}

std::vector<Keypoint2D> RandomKeypoints(int n, int dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 640.0), v(0.0, 480.0);
  std::vector<Keypoint2D> out(n);
  for (auto& kp : out) {
    kp.u = u(rng);
    kp.v = v(rng);
    kp.descriptor = RandomDescriptor(dim, rng);
  }
  return out;
}

void ExpectStochastic(const RecognitionOutput& out) {
  for (Eigen::Index i = 0; i < out.confidences.rows(); ++i) {
    EXPECT_NEAR(out.confidences.row(i).sum(), 1.0, 1e-6);
    EXPECT_GE(out.confidences.row(i).minCoeff(), 0.0);
    EXPECT_LE(out.confidences.row(i).maxCoeff(), 1.0);
    Eigen::Index arg;
    out.confidences.row(i).maxCoeff(&arg);
    EXPECT_DOUBLE_EQ(out.confidences(i, out.labels[i]), out.confidences(i, arg));
  }
}

// ---------------------------------------------------------------------------

TEST(PositionalEncode, ZeroWeightsGiveZero) {
  std::mt19937_64 rng(1);
  RecognizerModel m = RandomTransformer(8, 16, 4, 1, 3, rng);
  for (auto& layer : m.transformer.pos) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
  EXPECT_TRUE(PositionalEncode(123.0, 45.0, 640, 480, m.transformer.pos).isZero(0.0));
}

TEST(PositionalEncode, CenterIsBiasOnlyPass) {
  const Golden& g = LoadGolden();
  const auto& pos = g.model.transformer.pos;
  Eigen::VectorXd x = pos[0].bias.cast<double>();
  for (size_t k = 1; k < pos.size(); ++k) {
    x = pos[k].weight.cast<double>() * x.cwiseMax(0.0) + pos[k].bias.cast<double>();
  }
  const Eigen::VectorXd center = PositionalEncode(g.width / 2, g.height / 2, g.width, g.height, pos);
  EXPECT_LT((center - x).cwiseAbs().maxCoeff(), 1e-12);
  for (size_t i = 0; i < center.size(); ++i) {
    EXPECT_NEAR(center(i), g.doc["positional_center"][i].get<double>(), 1e-5);
  }
}

TEST(PositionalEncode, MatchesGolden) {
  const Golden& g = LoadGolden();
  const Eigen::VectorXd p = PositionalEncode(g.keypoints[0].u, g.keypoints[0].v, g.width,
                                             g.height, g.model.transformer.pos);
  ASSERT_EQ(p.size(), 16);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    EXPECT_NEAR(p(i), g.doc["positional_kp0"][i].get<double>(), 1e-5);
  }
}

TEST(PositionalEncode, RejectsBrokenChain) {
  std::mt19937_64 rng(2);
  RecognizerModel m = RandomTransformer(8, 16, 4, 1, 3, rng);
  m.transformer.pos[2].weight.resize(128, 63);
  EXPECT_EQ(CodeOf([&] { PositionalEncode(1, 1, 10, 10, m.transformer.pos); }),
            ErrorCode::kShapeMismatch);
}

TEST(Tokenize, ZeroWeightsGiveZeroTokens) {
  std::mt19937_64 rng(3);
  RecognizerModel m = RandomTransformer(8, 16, 4, 1, 3, rng);
  m.transformer.in_proj.weight.setZero();
  m.transformer.in_proj.bias.setZero();
  for (auto& layer : m.transformer.pos) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
  EXPECT_TRUE(Tokenize(RandomKeypoints(6, 8, rng), m, 640, 480).isZero(0.0));
}

TEST(Tokenize, IdentityProjectionPassesDescriptors) {
  std::mt19937_64 rng(4);
  RecognizerModel m = RandomTransformer(16, 16, 4, 1, 3, rng);
  m.transformer.in_proj.weight.setIdentity();
  m.transformer.in_proj.bias.setZero();
  for (auto& layer : m.transformer.pos) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
  const auto kps = RandomKeypoints(5, 16, rng);
  const Eigen::MatrixXd tokens = Tokenize(kps, m, 640, 480);
  for (size_t i = 0; i < kps.size(); ++i) {
    EXPECT_EQ(tokens.row(i).transpose(), kps[i].descriptor.cast<double>());
  }
}

TEST(Tokenize, MatchesGolden) {
  const Golden& g = LoadGolden();
  const Eigen::MatrixXd tokens = Tokenize(g.keypoints, g.model, g.width, g.height);
  EXPECT_LT((tokens - JsonMatrix(g.doc["tokens"])).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Tokenize, WrongDescriptorLength) {
  const Golden& g = LoadGolden();
  std::mt19937_64 rng(5);
  const auto kps = RandomKeypoints(2, 7, rng);
  EXPECT_EQ(CodeOf([&] { Tokenize(kps, g.model, 640, 480); }), ErrorCode::kShapeMismatch);
}

TEST(TransformerForward, MatchesGolden) {
  const Golden& g = LoadGolden();
  const RecognitionOutput out = Recognize(g.keypoints, g.model, g.width, g.height);
  EXPECT_LT((out.confidences - JsonMatrix(g.doc["confidences"])).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_EQ(out.labels, g.doc["labels"].get<std::vector<std::uint32_t>>());
  ExpectStochastic(out);
}

TEST(TransformerForward, PermutationEquivariant) {
  std::mt19937_64 rng(6);
  const RecognizerModel m = RandomTransformer(8, 16, 4, 3, 6, rng);
  const auto kps = RandomKeypoints(40, 8, rng);
  std::vector<size_t> perm(kps.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Keypoint2D> shuffled;
  for (size_t i : perm) shuffled.push_back(kps[i]);
  const RecognitionOutput a = Recognize(kps, m, 640, 480);
  const RecognitionOutput b = Recognize(shuffled, m, 640, 480);
  for (size_t i = 0; i < perm.size(); ++i) {
    EXPECT_LT((b.confidences.row(i) - a.confidences.row(perm[i])).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(b.labels[i], a.labels[perm[i]]);
  }
}

TEST(TransformerForward, ZeroHeadIsUniform) {
  std::mt19937_64 rng(7);
  RecognizerModel m = RandomTransformer(8, 16, 4, 2, 5, rng);
  m.transformer.head.weight.setZero();
  m.transformer.head.bias.setZero();
  const RecognitionOutput out = Recognize(RandomKeypoints(9, 8, rng), m, 640, 480);
  EXPECT_LT((out.confidences.array() - 0.2).abs().maxCoeff(), 1e-15);
  for (std::uint32_t l : out.labels) EXPECT_EQ(l, 0u);
}

TEST(TransformerForward, RejectsWrongTokenWidth) {
  const Golden& g = LoadGolden();
  EXPECT_EQ(CodeOf([&] { TransformerForward(Eigen::MatrixXd::Zero(3, 15), g.model); }),
            ErrorCode::kShapeMismatch);
}

// ---------------------------------------------------------------------------

TEST(WeightedCeLoss, OneHotIsZero) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(4, 3);
  const std::vector<std::uint32_t> labels = {0, 2, 1, 2};
  for (size_t i = 0; i < labels.size(); ++i) s(i, labels[i]) = 1.0;
  EXPECT_EQ(WeightedCeLoss(s, labels), 0.0);
}

TEST(WeightedCeLoss, UniformFixture) {
  const Eigen::MatrixXd s = Eigen::MatrixXd::Constant(4, 3, 1.0 / 3.0);
  const std::vector<std::uint32_t> labels = {0, 1, 2, 1};
  // Weights 0.25 for the three inliers and 0.75 for the outlier.
  const double oracle = -(3 * 0.25 + 0.75) * std::log(1.0 / 3.0) / 4.0;
  EXPECT_NEAR(oracle, 0.375 * std::log(3.0), 1e-15);
  EXPECT_NEAR(WeightedCeLoss(s, labels), 0.375 * std::log(3.0), 1e-9);
  EXPECT_NEAR(WeightedCeLoss(s, labels), 0.41198, 1e-5);
}

TEST(WeightedCeLoss, ClampsZeroProbability) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(2, 2);
  s(0, 0) = 1.0;
  s(1, 0) = 1.0;
  const std::vector<std::uint32_t> labels = {0, 1};
  // m0 / m = 0.5 for both; only the inlier row pays -log(1e-12).
  EXPECT_NEAR(WeightedCeLoss(s, labels), 0.5 * -std::log(1e-12) / 2.0, 1e-12);
}

TEST(WeightedCeLoss, NonNegativeOnRandomInputs) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const RecognitionOutput out = SoftmaxOutput(Eigen::MatrixXd::NullaryExpr(7, 4, [&] { return n(rng); }));
    std::vector<std::uint32_t> labels(7);
    for (auto& l : labels) l = rng() % 4;
    EXPECT_GE(WeightedCeLoss(out.confidences, labels), 0.0);
  }
}

HeadGradient NumericGradient(const Eigen::MatrixXd& f, std::span<const std::uint32_t> labels,
                             Eigen::MatrixXd w, Eigen::VectorXd b, double step) {
  const auto loss = [&](const Eigen::MatrixXd& ww, const Eigen::VectorXd& bb) {
    Eigen::MatrixXd z = f * ww.transpose();
    z.rowwise() += bb.transpose();
    return WeightedCeLoss(SoftmaxOutput(z).confidences, labels);
  };
  HeadGradient g;
  g.weight.resizeLike(w);
  g.bias.resizeLike(b);
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double keep = w.data()[i];
    w.data()[i] = keep + step;
    const double up = loss(w, b);
    w.data()[i] = keep - step;
    const double down = loss(w, b);
    w.data()[i] = keep;
    g.weight.data()[i] = (up - down) / (2 * step);
  }
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    const double keep = b(i);
    b(i) = keep + step;
    const double up = loss(w, b);
    b(i) = keep - step;
    const double down = loss(w, b);
    b(i) = keep;
    g.bias(i) = (up - down) / (2 * step);
  }
  return g;
}

double RelativeError(const HeadGradient& a, const HeadGradient& b) {
  const double diff = std::sqrt((a.weight - b.weight).squaredNorm() + (a.bias - b.bias).squaredNorm());
  const double scale = std::sqrt(b.weight.squaredNorm() + b.bias.squaredNorm());
  return diff / std::max(scale, 1e-12);
}

TEST(LinearHeadGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::MatrixXd f = Eigen::MatrixXd::NullaryExpr(16, 8, [&] { return n(rng); });
    const Eigen::MatrixXd w = Eigen::MatrixXd::NullaryExpr(4, 8, [&] { return 0.5 * n(rng); });
    const Eigen::VectorXd b = Eigen::VectorXd::NullaryExpr(4, [&] { return 0.5 * n(rng); });
    std::vector<std::uint32_t> labels(16);
    for (auto& l : labels) l = rng() % 4;
    labels[0] = 0;
    labels[1] = 1;
    const HeadGradient g = LinearHeadGradient(f, labels, w, b);
    const HeadGradient fd = NumericGradient(f, labels, w, b, 1e-5);
    EXPECT_LT(RelativeError(g, fd), 1e-5) << "trial " << trial;
  }
}

TEST(LinearHeadGradient, VanishesAtPerfectHead) {
  // Features are one-hot on the label; a large identity head is near-perfect.
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(8, 4);
  std::vector<std::uint32_t> labels(8);
  for (int i = 0; i < 8; ++i) {
    labels[i] = i % 4;
    f(i, i % 4) = 1.0;
  }
  const HeadGradient g =
      LinearHeadGradient(f, labels, 60.0 * Eigen::MatrixXd::Identity(4, 4), Eigen::VectorXd::Zero(4));
  EXPECT_LT(std::sqrt(g.weight.squaredNorm() + g.bias.squaredNorm()), 1e-8);
  EXPECT_LT(g.loss, 1e-8);
}

TEST(LinearHeadGradient, AllOutliersGiveZeroGradient) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 1.0);
  const Eigen::MatrixXd f = Eigen::MatrixXd::NullaryExpr(5, 3, [&] { return n(rng); });
  const std::vector<std::uint32_t> labels(5, 0);
  const HeadGradient g = LinearHeadGradient(f, labels, Eigen::MatrixXd::NullaryExpr(4, 3, [&] { return n(rng); }),
                                            Eigen::VectorXd::Zero(4));
  EXPECT_TRUE(g.weight.isZero(0.0));
  EXPECT_TRUE(g.bias.isZero(0.0));
  EXPECT_EQ(g.loss, 0.0);
}

TEST(LinearHeadGradient, ShapeMismatch) {
  const std::vector<std::uint32_t> labels(3, 1);
  EXPECT_EQ(CodeOf([&] {
              LinearHeadGradient(Eigen::MatrixXd::Zero(3, 5), labels, Eigen::MatrixXd::Zero(2, 4),
                                 Eigen::VectorXd::Zero(2));
            }),
            ErrorCode::kShapeMismatch);
}

// ---------------------------------------------------------------------------

SceneMap MapWithDescriptors(const std::vector<std::vector<Descriptor>>& per_landmark) {
  SceneMap map;
  map.descriptor_dim = static_cast<int>(per_landmark[0][0].size());
  std::uint64_t id = 1;
  for (size_t l = 0; l < per_landmark.size(); ++l) {
    Landmark lm;
    lm.label = static_cast<std::uint32_t>(l + 1);
    lm.vrf = {testing::TestCamera(), Pose(), 1};
    for (const Descriptor& d : per_landmark[l]) {
      Point3D p;
      p.id = id++;
      p.descriptor = d;
      p.track = {{1, p.id}};
      p.landmark_label = lm.label;
      lm.point_ids.push_back(p.id);
      map.points.push_back(p);
    }
    map.landmarks.push_back(lm);
  }
  map.covisibility.assign(per_landmark.size() + 1, {});
  map.build_config.lambda_l = per_landmark.size();
  map.Reindex();
  return map;
}

TEST(CentroidRecognizer, IdenticalDescriptorsGiveThatCentroid) {
  std::mt19937_64 rng(11);
  const Descriptor d = RandomDescriptor(16, rng);
  const SceneMap map = MapWithDescriptors({{d, d, d}, {RandomDescriptor(16, rng)}});
  const RecognizerModel m = TrainCentroidRecognizer(map);
  EXPECT_LT((m.centroid.centroids.row(0).transpose() - d).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_EQ(m.num_classes, 3);
}

TEST(CentroidRecognizer, QueryAtCentroidWins) {
  std::mt19937_64 rng(12);
  std::vector<std::vector<Descriptor>> lms;
  for (int l = 0; l < 5; ++l) lms.push_back({RandomDescriptor(32, rng), RandomDescriptor(32, rng)});
  const RecognizerModel m = TrainCentroidRecognizer(MapWithDescriptors(lms), {0.07f, -1.0f});
  Keypoint2D kp;
  kp.descriptor = m.centroid.centroids.row(2).transpose();
  const RecognitionOutput out = Recognize(std::span(&kp, 1), m, 640, 480);
  EXPECT_EQ(out.labels[0], 3u);
  ExpectStochastic(out);
}

TEST(CentroidRecognizer, OrthogonalQueryIsOutlier) {
  std::mt19937_64 rng(13);
  std::vector<std::vector<Descriptor>> lms;
  for (int l = 0; l < 4; ++l) lms.push_back({Descriptor::Unit(16, l)});
  const RecognizerModel m = TrainCentroidRecognizer(MapWithDescriptors(lms), {0.07f, 0.5f});
  Keypoint2D kp;
  kp.descriptor = Descriptor::Unit(16, 9);
  const RecognitionOutput out = Recognize(std::span(&kp, 1), m, 640, 480);
  EXPECT_EQ(out.labels[0], 0u);
  // Oracle: scores 0.5 / 0.07 versus 0 for every landmark.
  const double e0 = std::exp(0.5f / 0.07f);
  EXPECT_NEAR(out.confidences(0, 0), e0 / (e0 + 4.0), 1e-6);
}

TEST(CentroidRecognizer, PermutationEquivariantExactly) {
  std::mt19937_64 rng(14);
  std::vector<std::vector<Descriptor>> lms;
  for (int l = 0; l < 6; ++l) lms.push_back({RandomDescriptor(32, rng), RandomDescriptor(32, rng)});
  const RecognizerModel m = TrainCentroidRecognizer(MapWithDescriptors(lms));
  const auto kps = RandomKeypoints(57, 32, rng);
  std::vector<size_t> perm(kps.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Keypoint2D> shuffled;
  for (size_t i : perm) shuffled.push_back(kps[i]);
  const RecognitionOutput a = Recognize(kps, m, 640, 480);
  const RecognitionOutput b = Recognize(shuffled, m, 640, 480);
  for (size_t i = 0; i < perm.size(); ++i) {
    EXPECT_TRUE(b.confidences.row(i) == a.confidences.row(perm[i]));
    EXPECT_EQ(b.labels[i], a.labels[perm[i]]);
  }
}

TEST(Recognize, EmptyInput) {
  const Golden& g = LoadGolden();
  const RecognitionOutput out = Recognize({}, g.model, 640, 480);
  EXPECT_EQ(out.size(), 0u);
  EXPECT_EQ(out.confidences.rows(), 0);
}

TEST(Recognize, TieGoesToLowestLabel) {
  const RecognitionOutput out = SoftmaxOutput(Eigen::MatrixXd::Constant(1, 4, 0.3));
  EXPECT_EQ(out.labels[0], 0u);
  Eigen::MatrixXd z(1, 4);
  z << 0.0, 2.0, 1.0, 2.0;
  EXPECT_EQ(SoftmaxOutput(z).labels[0], 1u);
}

// ---------------------------------------------------------------------------

TEST(WeightsContainer, RoundTripsBitExact) {
  std::mt19937_64 rng(15);
  for (int i = 0; i < 1000; ++i) {
    RecognizerModel m;
    if (i % 2 == 0) {
      const int d = 2 + static_cast<int>(rng() % 6);
      const int heads = 1 + static_cast<int>(rng() % 3);
      m = RandomTransformer(d, 4 * heads, heads, static_cast<int>(rng() % 3),
                            2 + static_cast<int>(rng() % 4), rng);
    } else {
      std::vector<std::vector<Descriptor>> lms(1 + rng() % 5);
      const int dim = 4 + static_cast<int>(rng() % 30);
      for (auto& l : lms) l = {RandomDescriptor(dim, rng)};
      std::uniform_real_distribution<float> t(0.01f, 1.0f);
      m = TrainCentroidRecognizer(MapWithDescriptors(lms), {t(rng), t(rng)});
    }
    const auto bytes = SerializeWeights(m);
    const RecognizerModel back = DeserializeWeights(bytes);
    ASSERT_TRUE(BitIdentical(m, back)) << i;
    ASSERT_EQ(SerializeWeights(back), bytes) << i;
  }
}

TEST(WeightsContainer, GoldenFileReencodesIdentically) {
  const auto path = kGoldenDir / "transformer_small.wts";
  std::ifstream in(path, std::ios::binary);
  const std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
  EXPECT_EQ(SerializeWeights(LoadGolden().model), file);
}

TEST(WeightsContainer, RenamedTensorIsShapeMismatch) {
  const Golden& g = LoadGolden();
  auto tensors = ModelToTensors(g.model);
  tensors[3].name = "pos.0.bias_renamed";
  const auto bytes = EncodeTensors(ModelKind::kTransformer, 4, tensors);
  EXPECT_EQ(CodeOf([&] { DeserializeWeights(bytes); }), ErrorCode::kShapeMismatch);
}

TEST(WeightsContainer, WrongShapeIsShapeMismatch) {
  const Golden& g = LoadGolden();
  auto tensors = ModelToTensors(g.model);
  tensors[0].shape = {8, 16};
  const auto bytes = EncodeTensors(ModelKind::kTransformer, 4, tensors);
  EXPECT_EQ(CodeOf([&] { DeserializeWeights(bytes); }), ErrorCode::kShapeMismatch);
  EXPECT_EQ(CodeOf([&] { DeserializeWeights(EncodeTensors(ModelKind::kTransformer, 3,
                                                           ModelToTensors(g.model))); }),
            ErrorCode::kShapeMismatch);
}

TEST(WeightsContainer, CorruptionRejected) {
  const auto bytes = SerializeWeights(LoadGolden().model);
  for (size_t len : {size_t{0}, size_t{5}, size_t{30}, bytes.size() / 3, bytes.size() - 1}) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + len);
    const ErrorCode code = CodeOf([&] { DeserializeWeights(cut); });
    EXPECT_TRUE(code == ErrorCode::kBadMagic || code == ErrorCode::kChecksumMismatch) << len;
  }
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 1;
  EXPECT_EQ(CodeOf([&] { DeserializeWeights(flipped); }), ErrorCode::kChecksumMismatch);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(CodeOf([&] { DeserializeWeights(magic); }), ErrorCode::kBadMagic);
}

TEST(WeightsContainer, FutureVersionRejected) {
  std::vector<std::uint8_t> bytes = SerializeWeights(LoadGolden().model);
  bytes[8] = 2;
  const std::uint64_t crc = crc32(0L, bytes.data() + 8, static_cast<uInt>(bytes.size() - 16));
  std::memcpy(bytes.data() + bytes.size() - 8, &crc, 8);
  EXPECT_EQ(CodeOf([&] { DeserializeWeights(bytes); }), ErrorCode::kUnsupportedVersion);
}

TEST(WeightsContainer, SaveAndLoadFile) {
  const auto path = std::filesystem::temp_directory_path() / "pram_weights_test.wts";
  SaveWeights(LoadGolden().model, path);
  EXPECT_TRUE(BitIdentical(LoadWeights(path), LoadGolden().model));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace pram
