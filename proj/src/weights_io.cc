#include <cstring>
#include <map>
#include <numeric>

#include "binary_io.h"
#include "pram/error.h"
#include "pram/recognition.h"

namespace pram {
namespace {

constexpr char kWeightsMagic[] = "PRAMWTS1";
constexpr size_t kMagicSize = 8;
constexpr std::uint64_t kWeightsVersion = 1;
constexpr std::uint64_t kFloat32 = 0;
constexpr std::uint64_t kMaxRank = 8;

[[noreturn]] void Shape(const std::string& what) {
  throw Error(ErrorCode::kShapeMismatch, what);
}

NamedTensor FromLinearWeight(const std::string& name, const MatrixRf& w) {
  return {name + ".weight",
          {static_cast<std::uint64_t>(w.rows()), static_cast<std::uint64_t>(w.cols())},
          std::vector<float>(w.data(), w.data() + w.size())};
}

NamedTensor FromVector(const std::string& name, const Eigen::VectorXf& v) {
  return {name, {static_cast<std::uint64_t>(v.size())},
          std::vector<float>(v.data(), v.data() + v.size())};
}

void PutLinear(std::vector<NamedTensor>& out, const std::string& name, const Linear& l) {
  out.push_back(FromLinearWeight(name, l.weight));
  out.push_back(FromVector(name + ".bias", l.bias));
}

void PutNorm(std::vector<NamedTensor>& out, const std::string& name, const LayerNormParams& p) {
  out.push_back(FromVector(name + ".weight", p.weight));
  out.push_back(FromVector(name + ".bias", p.bias));
}

std::string ShapeString(const std::vector<std::uint64_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

// Consumes tensors by name, checking shapes; leftovers are an error.
class TensorTable {
 public:
  explicit TensorTable(const std::vector<NamedTensor>& tensors) {
    for (const NamedTensor& t : tensors) {
      const size_t expected = std::accumulate(t.shape.begin(), t.shape.end(), size_t{1},
                                              std::multiplies<>());
      if (t.data.size() != expected) Shape(t.name + " data does not match its shape");
      if (!table_.emplace(t.name, &t).second) Shape("duplicate tensor " + t.name);
    }
  }

  bool Has(const std::string& name) const { return table_.contains(name); }

  const NamedTensor& Take(const std::string& name, const std::vector<std::uint64_t>& shape) {
    const auto it = table_.find(name);
    if (it == table_.end()) Shape("missing tensor " + name);
    const NamedTensor& t = *it->second;
    if (t.shape != shape) {
      Shape(name + " has shape " + ShapeString(t.shape) + ", expected " + ShapeString(shape));
    }
    table_.erase(it);
    return t;
  }

  // Tensor of any rank-2 shape; returns it unchecked for dimension discovery.
  const NamedTensor& Peek(const std::string& name, size_t rank) const {
    const auto it = table_.find(name);
    if (it == table_.end()) Shape("missing tensor " + name);
    if (it->second->shape.size() != rank) Shape(name + " has the wrong rank");
    return *it->second;
  }

  MatrixRf Matrix(const std::string& name, std::uint64_t rows, std::uint64_t cols) {
    const NamedTensor& t = Take(name, {rows, cols});
    return Eigen::Map<const MatrixRf>(t.data.data(), static_cast<Eigen::Index>(rows),
                                      static_cast<Eigen::Index>(cols));
  }

  Eigen::VectorXf Vector(const std::string& name, std::uint64_t size) {
    const NamedTensor& t = Take(name, {size});
    return Eigen::Map<const Eigen::VectorXf>(t.data.data(), static_cast<Eigen::Index>(size));
  }

  Linear TakeLinear(const std::string& name, std::uint64_t out, std::uint64_t in) {
    return {Matrix(name + ".weight", out, in), Vector(name + ".bias", out)};
  }

  LayerNormParams TakeNorm(const std::string& name, std::uint64_t h) {
    return {Vector(name + ".weight", h), Vector(name + ".bias", h)};
  }

  void ExpectEmpty() const {
    if (!table_.empty()) Shape("unexpected tensor " + table_.begin()->first);
  }

 private:
  std::map<std::string, const NamedTensor*> table_;
};

bool SameFloats(const float* a, const float* b, Eigen::Index n) {
  return std::memcmp(a, b, static_cast<size_t>(n) * sizeof(float)) == 0;
}

}  // namespace

std::vector<NamedTensor> ModelToTensors(const RecognizerModel& model) {
  std::vector<NamedTensor> out;
  if (model.kind == ModelKind::kCentroid) {
    out.push_back({"centroids",
                   {static_cast<std::uint64_t>(model.centroid.centroids.rows()),
                    static_cast<std::uint64_t>(model.centroid.centroids.cols())},
                   std::vector<float>(model.centroid.centroids.data(),
                                      model.centroid.centroids.data() +
                                          model.centroid.centroids.size())});
    out.push_back({"temperature", {1}, {model.centroid.temperature}});
    out.push_back({"null_bias", {1}, {model.centroid.null_bias}});
    return out;
  }
  const TransformerWeights& t = model.transformer;
  PutLinear(out, "in_proj", t.in_proj);
  for (size_t k = 0; k < t.pos.size(); ++k) PutLinear(out, "pos." + std::to_string(k), t.pos[k]);
  for (size_t i = 0; i < t.blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    const TransformerBlock& b = t.blocks[i];
    PutNorm(out, p + "norm1", b.norm1);
    PutLinear(out, p + "attn.qkv", b.qkv);
    PutLinear(out, p + "attn.out", b.out);
    PutNorm(out, p + "norm2", b.norm2);
    PutLinear(out, p + "mlp.fc1", b.fc1);
    PutLinear(out, p + "mlp.fc2", b.fc2);
  }
  PutNorm(out, "norm", t.norm);
  PutLinear(out, "head", t.head);
  return out;
}

RecognizerModel ModelFromTensors(ModelKind kind, int num_heads,
                                 const std::vector<NamedTensor>& tensors) {
  TensorTable table(tensors);
  RecognizerModel model;
  model.kind = kind;
  if (kind == ModelKind::kCentroid) {
    const NamedTensor& c = table.Peek("centroids", 2);
    const std::uint64_t rows = c.shape[0], cols = c.shape[1];
    model.descriptor_dim = static_cast<int>(cols);
    model.num_classes = static_cast<int>(rows) + 1;
    model.centroid.centroids = table.Matrix("centroids", rows, cols);
    model.centroid.temperature = table.Take("temperature", {1}).data[0];
    model.centroid.null_bias = table.Take("null_bias", {1}).data[0];
  } else {
    const NamedTensor& in = table.Peek("in_proj.weight", 2);
    const std::uint64_t h = in.shape[0], d = in.shape[1];
    const NamedTensor& head = table.Peek("head.weight", 2);
    model.descriptor_dim = static_cast<int>(d);
    model.num_classes = static_cast<int>(head.shape[0]);
    TransformerWeights& t = model.transformer;
    t.num_heads = num_heads;
    t.in_proj = table.TakeLinear("in_proj", h, d);
    std::uint64_t width = 2;
    for (size_t k = 0; k < t.pos.size(); ++k) {
      const std::uint64_t out =
          k < kPositionalHidden.size() ? static_cast<std::uint64_t>(kPositionalHidden[k]) : h;
      t.pos[k] = table.TakeLinear("pos." + std::to_string(k), out, width);
      width = out;
    }
    for (size_t i = 0; table.Has("blocks." + std::to_string(i) + ".norm1.weight"); ++i) {
      const std::string p = "blocks." + std::to_string(i) + ".";
      TransformerBlock b;
      b.norm1 = table.TakeNorm(p + "norm1", h);
      b.qkv = table.TakeLinear(p + "attn.qkv", 3 * h, h);
      b.out = table.TakeLinear(p + "attn.out", h, h);
      b.norm2 = table.TakeNorm(p + "norm2", h);
      b.fc1 = table.TakeLinear(p + "mlp.fc1", 2 * h, h);
      b.fc2 = table.TakeLinear(p + "mlp.fc2", h, 2 * h);
      t.blocks.push_back(std::move(b));
    }
    t.norm = table.TakeNorm("norm", h);
    t.head = table.TakeLinear("head", head.shape[0], h);
  }
  table.ExpectEmpty();
  model.Validate();
  return model;
}

std::vector<std::uint8_t> EncodeTensors(ModelKind kind, int num_heads,
                                        const std::vector<NamedTensor>& tensors) {
  detail::ByteWriter w;
  w.Chars(std::string_view(kWeightsMagic, kMagicSize));
  w.U64(kWeightsVersion);
  w.U64(static_cast<std::uint64_t>(kind));
  w.U64(static_cast<std::uint64_t>(num_heads));
  w.U64(tensors.size());
  for (const NamedTensor& t : tensors) {
    w.U64(t.name.size());
    w.Chars(t.name);
    w.U64(kFloat32);
    w.U64(t.shape.size());
    for (std::uint64_t d : t.shape) w.U64(d);
    w.Raw(t.data.data(), t.data.size() * sizeof(float));
  }
  const std::uint32_t crc =
      detail::Crc32(std::span<const std::uint8_t>(w.bytes()).subspan(kMagicSize));
  w.U64(crc);
  return std::move(w.bytes());
}

std::vector<std::uint8_t> SerializeWeights(const RecognizerModel& model) {
  model.Validate();
  const int heads = model.kind == ModelKind::kTransformer ? model.transformer.num_heads : 0;
  return EncodeTensors(model.kind, heads, ModelToTensors(model));
}

RecognizerModel DeserializeWeights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagicSize || std::memcmp(bytes.data(), kWeightsMagic, kMagicSize) != 0) {
    throw Error(ErrorCode::kBadMagic, "not a PRAMWTS1 container");
  }
  if (bytes.size() < kMagicSize + 5 * sizeof(std::uint64_t)) {
    throw Error(ErrorCode::kChecksumMismatch, "weight container is truncated");
  }
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (stored != detail::Crc32(bytes.subspan(kMagicSize, bytes.size() - kMagicSize - 8))) {
    throw Error(ErrorCode::kChecksumMismatch, "weight container CRC-32 mismatch");
  }
  detail::ByteReader r(bytes.first(bytes.size() - 8), ErrorCode::kShapeMismatch);
  r.Seek(kMagicSize);
  const std::uint64_t version = r.U64();
  if (version != kWeightsVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "weights version " + std::to_string(version));
  }
  const std::uint64_t kind = r.U64();
  if (kind > 1) Shape("unknown model kind " + std::to_string(kind));
  const std::uint64_t heads = r.U64();
  if (heads > 4096) Shape("implausible head count");
  const std::uint64_t count = r.Count(32);
  std::vector<NamedTensor> tensors(count);
  for (NamedTensor& t : tensors) {
    t.name = r.Chars(r.Count(1));
    if (r.U64() != kFloat32) Shape(t.name + " is not float32");
    const std::uint64_t rank = r.U64();
    if (rank > kMaxRank) Shape(t.name + " has rank " + std::to_string(rank));
    std::uint64_t elems = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      const std::uint64_t d = r.U64();
      if (d != 0 && elems > r.remaining() / d) Shape(t.name + " is larger than the file");
      elems *= d;
      t.shape.push_back(d);
    }
    if (elems > r.remaining() / sizeof(float)) Shape(t.name + " is larger than the file");
    t.data.resize(elems);
    r.Raw(t.data.data(), elems * sizeof(float));
  }
  if (r.remaining() != 0) Shape("trailing bytes after the last tensor");
  return ModelFromTensors(static_cast<ModelKind>(kind), static_cast<int>(heads), tensors);
}

void SaveWeights(const RecognizerModel& model, const std::filesystem::path& path) {
  detail::WriteFileBytes(path, SerializeWeights(model));
}

RecognizerModel LoadWeights(const std::filesystem::path& path) {
  const auto bytes = detail::ReadFileBytes(path);
  return DeserializeWeights(bytes);
}

bool BitIdentical(const RecognizerModel& a, const RecognizerModel& b) {
  if (a.kind != b.kind || a.descriptor_dim != b.descriptor_dim ||
      a.num_classes != b.num_classes) {
    return false;
  }
  if (a.kind == ModelKind::kTransformer && a.transformer.num_heads != b.transformer.num_heads) {
    return false;
  }
  const auto ta = ModelToTensors(a);
  const auto tb = ModelToTensors(b);
  if (ta.size() != tb.size()) return false;
  for (size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].name != tb[i].name || ta[i].shape != tb[i].shape ||
        !SameFloats(ta[i].data.data(), tb[i].data.data(),
                    static_cast<Eigen::Index>(ta[i].data.size()))) {
      return false;
    }
  }
  return true;
}

}  // namespace pram
