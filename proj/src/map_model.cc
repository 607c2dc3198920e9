#include "pram/map_model.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <zlib.h>

#include "binary_io.h"
#include "pram/error.h"

namespace pram {

namespace detail {

std::uint32_t Crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  size_t offset = 0;
  while (offset < bytes.size()) {
    const size_t chunk = std::min<size_t>(bytes.size() - offset, 1u << 30);
    crc = crc32(crc, bytes.data() + offset, static_cast<uInt>(chunk));
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void WriteFileBytes(const std::filesystem::path& path,
                    std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path.string());
}

}  // namespace detail

namespace {

constexpr char kMapMagic[] = "PRAMMAP1";
constexpr size_t kMagicSize = 8;
constexpr std::uint64_t kMapVersion = 1;
constexpr double kUnitNormTolerance = 1e-6;

enum SectionTag : std::uint64_t {
  kHeader = 1,
  kLandmarks = 2,
  kPoints = 3,
  kDescriptors = 4,
  kCovisibility = 5,
};
constexpr std::uint64_t kNumSections = 5;

[[noreturn]] void Violation(const std::string& what) {
  throw Error(ErrorCode::kInvariantViolation, what);
}

bool SameBits(const void* a, const void* b, size_t n) {
  return std::memcmp(a, b, n) == 0;
}

template <typename Derived>
bool SameBits(const Eigen::DenseBase<Derived>& a,
              const Eigen::DenseBase<Derived>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  const auto ea = a.eval();
  const auto eb = b.eval();
  return SameBits(ea.data(), eb.data(),
                  sizeof(typename Derived::Scalar) * ea.size());
}

bool SameBits(double a, double b) { return SameBits(&a, &b, sizeof a); }

bool SameBits(const CameraIntrinsics& a, const CameraIntrinsics& b) {
  return SameBits(a.fx, b.fx) && SameBits(a.fy, b.fy) && SameBits(a.cx, b.cx) &&
         SameBits(a.cy, b.cy) && SameBits(a.width, b.width) &&
         SameBits(a.height, b.height);
}

bool SameBits(const Pose& a, const Pose& b) {
  return SameBits(a.rotation, b.rotation) && SameBits(a.translation, b.translation);
}

bool SameBits(const BuilderConfig& a, const BuilderConfig& b) {
  return a.lambda_l == b.lambda_l && a.lambda_n == b.lambda_n &&
         SameBits(a.lambda_v, b.lambda_v) && SameBits(a.lambda_o, b.lambda_o) &&
         a.up_axis == b.up_axis && a.enable_pruning == b.enable_pruning &&
         a.seed == b.seed;
}

void WriteIntrinsics(detail::ByteWriter& w, const CameraIntrinsics& k) {
  w.F64(k.fx);
  w.F64(k.fy);
  w.F64(k.cx);
  w.F64(k.cy);
  w.F64(k.width);
  w.F64(k.height);
}

CameraIntrinsics ReadIntrinsics(detail::ByteReader& r) {
  CameraIntrinsics k;
  k.fx = r.F64();
  k.fy = r.F64();
  k.cx = r.F64();
  k.cy = r.F64();
  k.width = r.F64();
  k.height = r.F64();
  return k;
}

// Rotation is stored as the full row-major matrix so that the container
// round-trips bit-exactly.
void WritePose(detail::ByteWriter& w, const Pose& pose) {
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) w.F64(pose.rotation(r, c));
  }
  for (int i = 0; i < 3; ++i) w.F64(pose.translation(i));
}

Pose ReadPose(detail::ByteReader& r) {
  Pose pose;
  for (int i = 0; i < 3; ++i) {
    for (int c = 0; c < 3; ++c) pose.rotation(i, c) = r.F64();
  }
  for (int i = 0; i < 3; ++i) pose.translation(i) = r.F64();
  return pose;
}

void WriteHeader(detail::ByteWriter& w, const SceneMap& map) {
  w.U64(static_cast<std::uint64_t>(map.descriptor_dim));
  w.U64(map.landmarks.size());
  w.U64(map.points.size());
  const BuilderConfig& c = map.build_config;
  w.U64(c.lambda_l);
  w.U64(c.lambda_n);
  w.F64(c.lambda_v);
  w.F64(c.lambda_o);
  w.U64(static_cast<std::uint64_t>(c.up_axis));
  w.U64(c.enable_pruning ? 1 : 0);
  w.U64(c.seed);
}

void WriteLandmarks(detail::ByteWriter& w, const SceneMap& map) {
  for (const Landmark& l : map.landmarks) {
    w.U64(l.label);
    w.U64(l.point_ids.size());
    for (std::uint64_t id : l.point_ids) w.U64(id);
    WriteIntrinsics(w, l.vrf.intrinsics);
    WritePose(w, l.vrf.pose);
    w.U64(l.vrf.source_frame_id);
    w.F32(l.centroid2d.x());
    w.F32(l.centroid2d.y());
  }
}

void WritePoints(detail::ByteWriter& w, const SceneMap& map) {
  for (const Point3D& p : map.points) {
    w.U64(p.id);
    for (int i = 0; i < 3; ++i) w.F32(p.position(i));
    w.U64(p.landmark_label);
    w.U64(p.track.size());
    for (const TrackEntry& t : p.track) {
      w.U64(t.frame_id);
      w.U64(t.keypoint_index);
    }
  }
}

void WriteDescriptors(detail::ByteWriter& w, const SceneMap& map) {
  for (const Point3D& p : map.points) {
    w.Raw(p.descriptor.data(), sizeof(float) * p.descriptor.size());
  }
}

void WriteCovisibility(detail::ByteWriter& w, const SceneMap& map) {
  std::uint64_t edges = 0;
  for (size_t a = 1; a < map.covisibility.size(); ++a) {
    for (std::uint32_t b : map.covisibility[a]) edges += (b > a);
  }
  w.U64(edges);
  for (size_t a = 1; a < map.covisibility.size(); ++a) {
    for (std::uint32_t b : map.covisibility[a]) {
      if (b > a) {
        w.U64(a);
        w.U64(b);
      }
    }
  }
}

struct SectionEntry {
  std::uint64_t tag = 0;
  std::uint64_t offset = 0;
  std::uint64_t size = 0;
};

}  // namespace

void BuilderConfig::Validate() const {
  if (lambda_l < 1) throw Error(ErrorCode::kInvalidArgument, "lambda_l must be >= 1");
  if (lambda_n < 1) throw Error(ErrorCode::kInvalidArgument, "lambda_n must be >= 1");
  if (!(lambda_v > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "lambda_v must be > 0");
  }
  if (!(lambda_o >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "lambda_o must be >= 0");
  }
}

const Point3D& SceneMap::PointById(std::uint64_t id) const {
  const auto it = point_index_.find(id);
  if (it == point_index_.end()) {
    throw Error(ErrorCode::kInvariantViolation,
                "unknown map point " + std::to_string(id));
  }
  return points[it->second];
}

void SceneMap::Reindex() {
  point_index_.clear();
  point_index_.reserve(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    if (!point_index_.emplace(points[i].id, i).second) {
      Violation("duplicate point id " + std::to_string(points[i].id));
    }
  }
}

void SceneMap::Validate() const {
  const size_t num_labels = landmarks.size();
  if (num_labels == 0) Violation("map has no landmarks");
  if (descriptor_dim <= 0) Violation("descriptor dimension must be positive");
  if (point_index_.size() != points.size()) Violation("point index is stale");

  std::vector<std::uint32_t> owner(points.size(), 0);
  for (size_t i = 0; i < num_labels; ++i) {
    const Landmark& l = landmarks[i];
    if (l.label != i + 1) {
      Violation("landmark labels must be exactly 1.." +
                std::to_string(num_labels));
    }
    if (l.point_ids.empty()) {
      Violation("landmark " + std::to_string(l.label) + " has no points");
    }
    bool vrf_observes = false;
    for (std::uint64_t id : l.point_ids) {
      const auto it = point_index_.find(id);
      if (it == point_index_.end()) {
        Violation("landmark " + std::to_string(l.label) +
                  " references unknown point " + std::to_string(id));
      }
      const Point3D& p = points[it->second];
      if (p.landmark_label != l.label) {
        Violation("point " + std::to_string(id) + " labeled " +
                  std::to_string(p.landmark_label) + " listed in landmark " +
                  std::to_string(l.label));
      }
      if (owner[it->second] != 0) {
        Violation("point " + std::to_string(id) + " is in two landmarks");
      }
      owner[it->second] = l.label;
      for (const TrackEntry& t : p.track) {
        vrf_observes |= t.frame_id == l.vrf.source_frame_id;
      }
    }
    if (!vrf_observes) {
      Violation("VRF of landmark " + std::to_string(l.label) +
                " observes none of its points");
    }
    const Pose& pose = l.vrf.pose;
    if (!pose.IsFinite() ||
        (pose.rotation * pose.rotation.transpose() - Eigen::Matrix3d::Identity())
                .norm() > 1e-9 ||
        std::abs(pose.rotation.determinant() - 1.0) > 1e-9) {
      Violation("VRF pose of landmark " + std::to_string(l.label) +
                " is not a rigid transform");
    }
    if (!l.vrf.intrinsics.IsValid()) {
      Violation("VRF intrinsics of landmark " + std::to_string(l.label) +
                " are invalid");
    }
  }

  for (size_t i = 0; i < points.size(); ++i) {
    const Point3D& p = points[i];
    if (p.landmark_label < 1 || p.landmark_label > num_labels) {
      Violation("point " + std::to_string(p.id) + " has label " +
                std::to_string(p.landmark_label) + " outside 1.." +
                std::to_string(num_labels));
    }
    if (owner[i] == 0) {
      Violation("point " + std::to_string(p.id) + " belongs to no landmark");
    }
    if (p.track.empty()) Violation("point " + std::to_string(p.id) + " has no track");
    if (p.descriptor.size() != descriptor_dim) {
      Violation("point " + std::to_string(p.id) + " descriptor has wrong size");
    }
    const double norm = p.descriptor.cast<double>().norm();
    if (!(std::abs(norm - 1.0) <= kUnitNormTolerance)) {
      Violation("point " + std::to_string(p.id) + " descriptor is not unit norm");
    }
    if (!p.position.allFinite()) {
      Violation("point " + std::to_string(p.id) + " position is not finite");
    }
  }

  if (covisibility.size() != num_labels + 1) {
    Violation("covisibility table must have one row per label");
  }
  if (!covisibility[0].empty()) Violation("covisibility row 0 must be empty");
  for (size_t a = 1; a <= num_labels; ++a) {
    const auto& row = covisibility[a];
    if (!std::is_sorted(row.begin(), row.end()) ||
        std::adjacent_find(row.begin(), row.end()) != row.end()) {
      Violation("covisibility row " + std::to_string(a) + " is not a sorted set");
    }
    for (std::uint32_t b : row) {
      if (b == a) Violation("covisibility has a self edge at " + std::to_string(a));
      if (b < 1 || b > num_labels) Violation("covisibility label out of range");
      const auto& back = covisibility[b];
      if (!std::binary_search(back.begin(), back.end(),
                              static_cast<std::uint32_t>(a))) {
        Violation("covisibility is not symmetric");
      }
    }
  }
}

bool BitIdentical(const SceneMap& a, const SceneMap& b) {
  if (a.descriptor_dim != b.descriptor_dim ||
      !SameBits(a.build_config, b.build_config) ||
      a.landmarks.size() != b.landmarks.size() ||
      a.points.size() != b.points.size() || a.covisibility != b.covisibility) {
    return false;
  }
  for (size_t i = 0; i < a.landmarks.size(); ++i) {
    const Landmark& x = a.landmarks[i];
    const Landmark& y = b.landmarks[i];
    if (x.label != y.label || x.point_ids != y.point_ids ||
        x.vrf.source_frame_id != y.vrf.source_frame_id ||
        !SameBits(x.vrf.intrinsics, y.vrf.intrinsics) ||
        !SameBits(x.vrf.pose, y.vrf.pose) || !SameBits(x.centroid2d, y.centroid2d)) {
      return false;
    }
  }
  for (size_t i = 0; i < a.points.size(); ++i) {
    const Point3D& x = a.points[i];
    const Point3D& y = b.points[i];
    if (x.id != y.id || x.landmark_label != y.landmark_label ||
        x.track != y.track || !SameBits(x.position, y.position) ||
        !SameBits(x.descriptor, y.descriptor)) {
      return false;
    }
  }
  return true;
}

std::vector<std::uint8_t> SerializeMap(const SceneMap& map) {
  detail::ByteWriter w;
  w.Chars(std::string_view(kMapMagic, kMagicSize));
  w.U64(kMapVersion);
  w.U64(kNumSections);
  const size_t table_at = w.size();
  for (std::uint64_t i = 0; i < 3 * kNumSections; ++i) w.U64(0);

  const auto section = [&](std::uint64_t index, std::uint64_t tag,
                           auto&& write_body) {
    const size_t begin = w.size();
    write_body();
    const size_t at = table_at + index * 3 * sizeof(std::uint64_t);
    w.PatchU64(at, tag);
    w.PatchU64(at + 8, begin);
    w.PatchU64(at + 16, w.size() - begin);
  };
  section(0, kHeader, [&] { WriteHeader(w, map); });
  section(1, kLandmarks, [&] { WriteLandmarks(w, map); });
  section(2, kPoints, [&] { WritePoints(w, map); });
  section(3, kDescriptors, [&] { WriteDescriptors(w, map); });
  section(4, kCovisibility, [&] { WriteCovisibility(w, map); });

  const auto& bytes = w.bytes();
  const std::uint32_t crc = detail::Crc32(
      std::span<const std::uint8_t>(bytes).subspan(kMagicSize));
  w.U64(crc);
  return std::move(w.bytes());
}

SceneMap DeserializeMap(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagicSize ||
      std::memcmp(bytes.data(), kMapMagic, kMagicSize) != 0) {
    throw Error(ErrorCode::kBadMagic, "not a PRAMMAP1 container");
  }
  // Magic + version + section count + trailer at minimum.
  if (bytes.size() < kMagicSize + 3 * sizeof(std::uint64_t)) {
    throw Error(ErrorCode::kChecksumMismatch, "container is truncated");
  }
  const auto payload = bytes.subspan(kMagicSize, bytes.size() - kMagicSize - 8);
  std::uint64_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 8, 8);
  if (stored_crc != detail::Crc32(payload)) {
    throw Error(ErrorCode::kChecksumMismatch, "map payload CRC-32 mismatch");
  }

  detail::ByteReader r(bytes.first(bytes.size() - 8),
                       ErrorCode::kInvariantViolation);
  r.Seek(kMagicSize);
  const std::uint64_t version = r.U64();
  if (version != kMapVersion) {
    throw Error(ErrorCode::kUnsupportedVersion,
                "map version " + std::to_string(version));
  }
  const std::uint64_t num_sections = r.Count(24);
  std::vector<SectionEntry> table(num_sections);
  for (auto& s : table) {
    s.tag = r.U64();
    s.offset = r.U64();
    s.size = r.U64();
    if (s.offset > bytes.size() - 8 || s.size > bytes.size() - 8 - s.offset) {
      Violation("section out of range");
    }
  }
  const auto find = [&](std::uint64_t tag) -> const SectionEntry& {
    for (const auto& s : table) {
      if (s.tag == tag) return s;
    }
    Violation("missing section " + std::to_string(tag));
  };
  const auto open = [&](std::uint64_t tag) {
    const SectionEntry& s = find(tag);
    return detail::ByteReader(bytes.subspan(s.offset, s.size),
                              ErrorCode::kInvariantViolation);
  };

  SceneMap map;
  std::uint64_t num_landmarks = 0;
  std::uint64_t num_points = 0;
  {
    auto h = open(kHeader);
    const std::uint64_t dim = h.U64();
    if (dim == 0 || dim > (1u << 20)) Violation("bad descriptor dimension");
    map.descriptor_dim = static_cast<int>(dim);
    num_landmarks = h.U64();
    num_points = h.U64();
    BuilderConfig& c = map.build_config;
    c.lambda_l = h.U64();
    c.lambda_n = h.U64();
    c.lambda_v = h.F64();
    c.lambda_o = h.F64();
    const std::uint64_t axis = h.U64();
    if (axis > 2) Violation("bad up axis");
    c.up_axis = static_cast<UpAxis>(axis);
    const std::uint64_t pruning = h.U64();
    if (pruning > 1) Violation("bad pruning flag");
    c.enable_pruning = pruning == 1;
    c.seed = h.U64();
  }
  {
    auto s = open(kLandmarks);
    if (num_landmarks > s.remaining() / 8) Violation("landmark count too large");
    map.landmarks.resize(num_landmarks);
    for (Landmark& l : map.landmarks) {
      const std::uint64_t label = s.U64();
      if (label > 0xffffffffull) Violation("landmark label out of range");
      l.label = static_cast<std::uint32_t>(label);
      const std::uint64_t n = s.Count(8);
      l.point_ids.resize(n);
      for (auto& id : l.point_ids) id = s.U64();
      l.vrf.intrinsics = ReadIntrinsics(s);
      l.vrf.pose = ReadPose(s);
      l.vrf.source_frame_id = s.U64();
      l.centroid2d.x() = s.F32();
      l.centroid2d.y() = s.F32();
    }
  }
  {
    auto s = open(kPoints);
    if (num_points > s.remaining() / 8) Violation("point count too large");
    map.points.resize(num_points);
    for (Point3D& p : map.points) {
      p.id = s.U64();
      for (int i = 0; i < 3; ++i) p.position(i) = s.F32();
      const std::uint64_t label = s.U64();
      if (label > 0xffffffffull) Violation("point label out of range");
      p.landmark_label = static_cast<std::uint32_t>(label);
      const std::uint64_t n = s.Count(16);
      p.track.resize(n);
      for (auto& t : p.track) {
        t.frame_id = s.U64();
        t.keypoint_index = s.U64();
      }
    }
  }
  {
    auto s = open(kDescriptors);
    const size_t per_point = sizeof(float) * static_cast<size_t>(map.descriptor_dim);
    if (s.remaining() != per_point * map.points.size()) {
      Violation("descriptor section has wrong size");
    }
    for (Point3D& p : map.points) {
      p.descriptor.resize(map.descriptor_dim);
      s.Raw(p.descriptor.data(), per_point);
    }
  }
  {
    auto s = open(kCovisibility);
    const std::uint64_t edges = s.Count(16);
    map.covisibility.assign(num_landmarks + 1, {});
    for (std::uint64_t e = 0; e < edges; ++e) {
      const std::uint64_t a = s.U64();
      const std::uint64_t b = s.U64();
      if (a < 1 || b < 1 || a > num_landmarks || b > num_landmarks || a >= b) {
        Violation("bad covisibility edge");
      }
      map.covisibility[a].push_back(static_cast<std::uint32_t>(b));
      map.covisibility[b].push_back(static_cast<std::uint32_t>(a));
    }
    for (auto& row : map.covisibility) std::sort(row.begin(), row.end());
  }
  map.Reindex();
  map.Validate();
  return map;
}

void SaveMap(const SceneMap& map, const std::filesystem::path& path) {
  detail::WriteFileBytes(path, SerializeMap(map));
}

SceneMap LoadMap(const std::filesystem::path& path) {
  const auto bytes = detail::ReadFileBytes(path);
  return DeserializeMap(bytes);
}

}  // namespace pram
