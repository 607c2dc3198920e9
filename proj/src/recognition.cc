#include "pram/recognition.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pram/error.h"

namespace pram {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kLogClamp = 1e-12;

[[noreturn]] void Shape(const std::string& what) {
  throw Error(ErrorCode::kShapeMismatch, what);
}

// Rows of x mapped through W (out x in) and b.
Eigen::MatrixXd Apply(const Linear& layer, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd y = x * layer.weight.cast<double>().transpose();
  y.rowwise() += layer.bias.cast<double>().transpose();
  return y;
}

Eigen::MatrixXd LayerNorm(const LayerNormParams& p, const Eigen::MatrixXd& x) {
  const Eigen::RowVectorXd w = p.weight.cast<double>().transpose();
  const Eigen::RowVectorXd b = p.bias.cast<double>().transpose();
  Eigen::MatrixXd y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const Eigen::RowVectorXd c = x.row(i).array() - mean;
    const double var = c.squaredNorm() / static_cast<double>(x.cols());
    y.row(i) = (c / std::sqrt(var + kLayerNormEps)).cwiseProduct(w) + b;
  }
  return y;
}

Eigen::MatrixXd Relu(Eigen::MatrixXd x) { return x.cwiseMax(0.0); }

void SoftmaxRowsInPlace(Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double top = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - top).exp();
    m.row(i) /= m.row(i).sum();
  }
}

Eigen::MatrixXd SelfAttention(const TransformerBlock& block, int num_heads,
                              const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows();
  const Eigen::Index h = x.cols();
  const Eigen::Index dh = h / num_heads;
  const Eigen::MatrixXd qkv = Apply(block.qkv, x);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Eigen::MatrixXd mixed(n, h);
  for (int head = 0; head < num_heads; ++head) {
    const Eigen::Index off = head * dh;
    const auto q = qkv.middleCols(off, dh);
    const auto k = qkv.middleCols(h + off, dh);
    const auto v = qkv.middleCols(2 * h + off, dh);
    Eigen::MatrixXd attn = (q * k.transpose()) * scale;
    SoftmaxRowsInPlace(attn);
    mixed.middleCols(off, dh) = attn * v;
  }
  return Apply(block.out, mixed);
}

void CheckLinear(const Linear& l, Eigen::Index out, Eigen::Index in, const std::string& name) {
  if (l.weight.rows() != out || l.weight.cols() != in || l.bias.size() != out) {
    Shape(name + " expected " + std::to_string(out) + "x" + std::to_string(in) + ", got " +
          std::to_string(l.weight.rows()) + "x" + std::to_string(l.weight.cols()) +
          " with bias " + std::to_string(l.bias.size()));
  }
}

void CheckNorm(const LayerNormParams& p, Eigen::Index h, const std::string& name) {
  if (p.weight.size() != h || p.bias.size() != h) Shape(name + " must have size " + std::to_string(h));
}

std::uint32_t ArgmaxLowest(const Eigen::RowVectorXd& row) {
  std::uint32_t best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = static_cast<std::uint32_t>(j);
  }
  return best;
}

}  // namespace

void RecognizerModel::Validate() const {
  if (descriptor_dim <= 0) Shape("descriptor dimension must be positive");
  if (num_classes < 2) Shape("need at least one landmark class besides 0");
  if (kind == ModelKind::kCentroid) {
    const CentroidWeights& c = centroid;
    if (c.centroids.rows() != num_classes - 1 || c.centroids.cols() != descriptor_dim) {
      Shape("centroids must be " + std::to_string(num_classes - 1) + "x" +
            std::to_string(descriptor_dim));
    }
    if (!(c.temperature > 0.0f)) {
      throw Error(ErrorCode::kInvalidArgument, "temperature must be positive");
    }
    for (Eigen::Index i = 0; i < c.centroids.rows(); ++i) {
      if (std::abs(c.centroids.row(i).cast<double>().norm() - 1.0) > 1e-5) {
        throw Error(ErrorCode::kInvalidArgument,
                    "centroid " + std::to_string(i + 1) + " is not unit norm");
      }
    }
    return;
  }
  const TransformerWeights& t = transformer;
  const Eigen::Index h = t.in_proj.weight.rows();
  if (h <= 0) Shape("hidden dimension must be positive");
  if (t.num_heads <= 0 || h % t.num_heads != 0) {
    Shape("hidden dimension " + std::to_string(h) + " not divisible by " +
          std::to_string(t.num_heads) + " heads");
  }
  CheckLinear(t.in_proj, h, descriptor_dim, "in_proj");
  Eigen::Index in = 2;
  for (size_t k = 0; k < t.pos.size(); ++k) {
    const Eigen::Index out = k < kPositionalHidden.size() ? kPositionalHidden[k] : h;
    CheckLinear(t.pos[k], out, in, "pos." + std::to_string(k));
    in = out;
  }
  for (size_t i = 0; i < t.blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    const TransformerBlock& b = t.blocks[i];
    CheckNorm(b.norm1, h, p + "norm1");
    CheckLinear(b.qkv, 3 * h, h, p + "attn.qkv");
    CheckLinear(b.out, h, h, p + "attn.out");
    CheckNorm(b.norm2, h, p + "norm2");
    CheckLinear(b.fc1, 2 * h, h, p + "mlp.fc1");
    CheckLinear(b.fc2, h, 2 * h, p + "mlp.fc2");
  }
  CheckNorm(t.norm, h, "norm");
  CheckLinear(t.head, num_classes, h, "head");
}

Eigen::VectorXd PositionalEncode(double u, double v, double width, double height,
                                 const std::array<Linear, 4>& mlp) {
  if (mlp[0].weight.cols() != 2) Shape("positional MLP input must be 2");
  for (size_t k = 1; k < mlp.size(); ++k) {
    if (mlp[k].weight.cols() != mlp[k - 1].weight.rows()) {
      Shape("positional MLP layer " + std::to_string(k) + " does not chain");
    }
  }
  Eigen::MatrixXd x(1, 2);
  x << (2.0 * u - width) / width, (2.0 * v - height) / height;
  for (size_t k = 0; k < mlp.size(); ++k) {
    x = Apply(mlp[k], x);
    if (k + 1 < mlp.size()) x = Relu(std::move(x));
  }
  return x.row(0).transpose();
}

Eigen::MatrixXd Tokenize(std::span<const Keypoint2D> keypoints, const RecognizerModel& model,
                         double width, double height) {
  const TransformerWeights& t = model.transformer;
  const Eigen::Index d = t.in_proj.weight.cols();
  Eigen::MatrixXd desc(static_cast<Eigen::Index>(keypoints.size()), d);
  for (size_t i = 0; i < keypoints.size(); ++i) {
    if (keypoints[i].descriptor.size() != d) {
      Shape("keypoint descriptor of length " + std::to_string(keypoints[i].descriptor.size()) +
            ", model expects " + std::to_string(d));
    }
    desc.row(static_cast<Eigen::Index>(i)) = keypoints[i].descriptor.cast<double>().transpose();
  }
  Eigen::MatrixXd tokens = Apply(t.in_proj, desc);
  for (size_t i = 0; i < keypoints.size(); ++i) {
    tokens.row(static_cast<Eigen::Index>(i)) +=
        PositionalEncode(keypoints[i].u, keypoints[i].v, width, height, t.pos).transpose();
  }
  return tokens;
}

RecognitionOutput SoftmaxOutput(const Eigen::MatrixXd& logits) {
  RecognitionOutput out;
  out.confidences = logits;
  SoftmaxRowsInPlace(out.confidences);
  out.labels.resize(static_cast<size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    out.labels[static_cast<size_t>(i)] = ArgmaxLowest(out.confidences.row(i));
  }
  return out;
}

RecognitionOutput TransformerForward(const Eigen::MatrixXd& tokens,
                                     const RecognizerModel& model) {
  if (model.kind != ModelKind::kTransformer) Shape("model is not a transformer");
  const TransformerWeights& t = model.transformer;
  if (tokens.cols() != t.in_proj.weight.rows()) {
    Shape("tokens have width " + std::to_string(tokens.cols()) + ", model hidden size is " +
          std::to_string(t.in_proj.weight.rows()));
  }
  Eigen::MatrixXd x = tokens;
  for (const TransformerBlock& b : t.blocks) {
    x += SelfAttention(b, t.num_heads, LayerNorm(b.norm1, x));
    x += Apply(b.fc2, Relu(Apply(b.fc1, LayerNorm(b.norm2, x))));
  }
  return SoftmaxOutput(Apply(t.head, LayerNorm(t.norm, x)));
}

double WeightedCeLoss(const Eigen::MatrixXd& confidences,
                      std::span<const std::uint32_t> labels) {
  const size_t m = labels.size();
  if (static_cast<size_t>(confidences.rows()) != m) {
    throw Error(ErrorCode::kLengthMismatch, "labels do not match confidence rows");
  }
  if (m == 0) return 0.0;
  const double m0 = static_cast<double>(std::count(labels.begin(), labels.end(), 0u));
  const double w_inlier = m0 / static_cast<double>(m);
  const double w_outlier = 1.0 - w_inlier;
  double sum = 0.0;
  for (size_t i = 0; i < m; ++i) {
    if (labels[i] >= static_cast<size_t>(confidences.cols())) {
      throw Error(ErrorCode::kInvalidArgument, "label out of range");
    }
    const double p = std::max(confidences(static_cast<Eigen::Index>(i), labels[i]), kLogClamp);
    sum += (labels[i] == 0 ? w_outlier : w_inlier) * std::log(p);
  }
  return -sum / static_cast<double>(m);
}

HeadGradient LinearHeadGradient(const Eigen::MatrixXd& features,
                                std::span<const std::uint32_t> labels,
                                const Eigen::MatrixXd& weight, const Eigen::VectorXd& bias) {
  const Eigen::Index n = features.rows();
  if (weight.cols() != features.cols() || bias.size() != weight.rows()) {
    Shape("head is " + std::to_string(weight.rows()) + "x" + std::to_string(weight.cols()) +
          " with bias " + std::to_string(bias.size()) + " for features of width " +
          std::to_string(features.cols()));
  }
  if (static_cast<size_t>(n) != labels.size()) {
    throw Error(ErrorCode::kLengthMismatch, "labels do not match feature rows");
  }
  Eigen::MatrixXd logits = features * weight.transpose();
  logits.rowwise() += bias.transpose();
  Eigen::MatrixXd s = logits;
  SoftmaxRowsInPlace(s);

  HeadGradient g;
  g.loss = WeightedCeLoss(s, labels);
  if (n == 0) {
    g.weight = Eigen::MatrixXd::Zero(weight.rows(), weight.cols());
    g.bias = Eigen::VectorXd::Zero(bias.size());
    return g;
  }
  const double m0 = static_cast<double>(std::count(labels.begin(), labels.end(), 0u));
  const double w_inlier = m0 / static_cast<double>(n);
  // dL/dlogits_i = (w_i / m) (s_i - onehot_i).
  Eigen::MatrixXd dz = s;
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::uint32_t y = labels[static_cast<size_t>(i)];
    dz(i, y) -= 1.0;
    dz.row(i) *= (y == 0 ? 1.0 - w_inlier : w_inlier) / static_cast<double>(n);
  }
  g.weight = dz.transpose() * features;
  g.bias = dz.colwise().sum().transpose();
  return g;
}

RecognizerModel TrainCentroidRecognizer(const SceneMap& map, const CentroidParams& params) {
  if (map.landmarks.empty()) throw Error(ErrorCode::kInvalidArgument, "map has no landmarks");
  RecognizerModel model;
  model.kind = ModelKind::kCentroid;
  model.descriptor_dim = map.descriptor_dim;
  model.num_classes = static_cast<int>(map.landmarks.size()) + 1;
  model.centroid.temperature = params.temperature;
  model.centroid.null_bias = params.null_bias;
  model.centroid.centroids.resize(static_cast<Eigen::Index>(map.landmarks.size()),
                                  map.descriptor_dim);
  for (const Landmark& l : map.landmarks) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(map.descriptor_dim);
    for (std::uint64_t id : l.point_ids) sum += map.PointById(id).descriptor.cast<double>();
    const double norm = sum.norm();
    // Antipodal descriptors can cancel; fall back to the first point.
    const Eigen::VectorXd c =
        norm > 1e-9 ? Eigen::VectorXd(sum / norm)
                    : map.PointById(l.point_ids.front()).descriptor.cast<double>();
    model.centroid.centroids.row(l.label - 1) = c.cast<float>().transpose();
  }
  model.Validate();
  return model;
}

RecognizerModel RandomTransformer(int descriptor_dim, int hidden_dim, int num_heads,
                                  int num_blocks, int num_classes, std::mt19937_64& rng,
                                  double scale) {
  std::normal_distribution<float> n(0.0f, static_cast<float>(scale));
  const auto linear = [&](int out, int in) {
    Linear l;
    l.weight = MatrixRf::NullaryExpr(out, in, [&] { return n(rng); });
    l.bias = Eigen::VectorXf::NullaryExpr(out, [&] { return n(rng); });
    return l;
  };
  const auto norm = [&](int h) {
    LayerNormParams p;
    p.weight = Eigen::VectorXf::NullaryExpr(h, [&] { return 1.0f + n(rng); });
    p.bias = Eigen::VectorXf::NullaryExpr(h, [&] { return n(rng); });
    return p;
  };
  RecognizerModel model;
  model.kind = ModelKind::kTransformer;
  model.descriptor_dim = descriptor_dim;
  model.num_classes = num_classes;
  TransformerWeights& t = model.transformer;
  t.num_heads = num_heads;
  t.in_proj = linear(hidden_dim, descriptor_dim);
  int in = 2;
  for (size_t k = 0; k < t.pos.size(); ++k) {
    const int out = k < kPositionalHidden.size() ? kPositionalHidden[k] : hidden_dim;
    t.pos[k] = linear(out, in);
    in = out;
  }
  for (int i = 0; i < num_blocks; ++i) {
    TransformerBlock b;
    b.norm1 = norm(hidden_dim);
    b.qkv = linear(3 * hidden_dim, hidden_dim);
    b.out = linear(hidden_dim, hidden_dim);
    b.norm2 = norm(hidden_dim);
    b.fc1 = linear(2 * hidden_dim, hidden_dim);
    b.fc2 = linear(hidden_dim, 2 * hidden_dim);
    t.blocks.push_back(std::move(b));
  }
  t.norm = norm(hidden_dim);
  t.head = linear(num_classes, hidden_dim);
  model.Validate();
  return model;
}

RecognitionOutput Recognize(std::span<const Keypoint2D> keypoints,
                            const RecognizerModel& model, double width, double height) {
  const Eigen::Index n = static_cast<Eigen::Index>(keypoints.size());
  if (n == 0) {
    RecognitionOutput empty;
    empty.confidences.resize(0, model.num_classes);
    return empty;
  }
  if (model.kind == ModelKind::kTransformer) {
    return TransformerForward(Tokenize(keypoints, model, width, height), model);
  }
  const CentroidWeights& c = model.centroid;
  Eigen::MatrixXd desc(n, model.descriptor_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Descriptor& d = keypoints[static_cast<size_t>(i)].descriptor;
    if (d.size() != model.descriptor_dim) {
      Shape("keypoint descriptor of length " + std::to_string(d.size()) +
            ", model expects " + std::to_string(model.descriptor_dim));
    }
    desc.row(i) = d.cast<double>().transpose();
  }
  const double inv_t = 1.0 / static_cast<double>(c.temperature);
  Eigen::MatrixXd logits(n, model.num_classes);
  logits.col(0).setConstant(static_cast<double>(c.null_bias) * inv_t);
  const Eigen::MatrixXd centroids = c.centroids.cast<double>();
  // Row-at-a-time dot products keep each row independent of its position.
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index l = 0; l < centroids.rows(); ++l) {
      logits(i, l + 1) = desc.row(i).dot(centroids.row(l)) * inv_t;
    }
  }
  return SoftmaxOutput(logits);
}

}  // namespace pram
