#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include <gtest/gtest.h>
#include <json.hpp>
#include <zlib.h>

#include "pram/error.h"
#include "pram/map_model.h"
#include "test_util.h"

namespace pram {
namespace {

using testing::RandomSceneMap;

const std::filesystem::path kToyFixture =
    std::filesystem::path(PRAM_TEST_DATA_DIR) / "toy_reconstruction.json";

std::string ReadText(const std::filesystem::path& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIoError;
}

std::uint64_t ReadU64(const std::vector<std::uint8_t>& bytes, size_t at) {
  std::uint64_t v;
  std::memcpy(&v, bytes.data() + at, 8);
  return v;
}

void WriteU64(std::vector<std::uint8_t>& bytes, size_t at, std::uint64_t v) {
  std::memcpy(bytes.data() + at, &v, 8);
}

// Recomputes the trailing checksum so that edits reach validation.
void Reseal(std::vector<std::uint8_t>& bytes) {
  const uLong crc = crc32(0L, bytes.data() + 8, static_cast<uInt>(bytes.size() - 16));
  WriteU64(bytes, bytes.size() - 8, crc);
}

SceneMap MinimalMap() {
  SceneMap map;
  map.descriptor_dim = 4;
  map.build_config.lambda_l = 1;
  Point3D p;
  p.id = 5;
  p.position = {1.0f, 2.0f, 3.0f};
  p.descriptor = Descriptor::Unit(4, 2);
  p.track = {{9, 0}};
  p.landmark_label = 1;
  map.points.push_back(p);
  Landmark l;
  l.label = 1;
  l.point_ids = {5};
  l.vrf = {testing::TestCamera(), Pose(), 9};
  map.landmarks.push_back(l);
  map.covisibility.assign(2, {});
  map.Reindex();
  return map;
}

TEST(MapContainer, MinimalMapRoundTrips) {
  const SceneMap map = MinimalMap();
  map.Validate();
  const SceneMap back = DeserializeMap(SerializeMap(map));
  EXPECT_TRUE(BitIdentical(map, back));
}

TEST(MapContainer, RandomMapsRoundTripBitExact) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const SceneMap map = RandomSceneMap(rng);
    const auto bytes = SerializeMap(map);
    const SceneMap back = DeserializeMap(bytes);
    ASSERT_TRUE(BitIdentical(map, back)) << "map " << i;
    ASSERT_EQ(SerializeMap(back), bytes) << "map " << i;
  }
}

TEST(MapContainer, StartsWithMagicAndVersion) {
  const auto bytes = SerializeMap(MinimalMap());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "PRAMMAP1");
  EXPECT_EQ(ReadU64(bytes, 8), 1u);
  EXPECT_EQ(ReadU64(bytes, bytes.size() - 8),
            crc32(0L, bytes.data() + 8, static_cast<uInt>(bytes.size() - 16)));
}

TEST(MapContainer, FlippedPayloadByteFailsChecksum) {
  std::mt19937_64 rng(3);
  const auto bytes = SerializeMap(RandomSceneMap(rng));
  for (size_t at = 8; at + 8 < bytes.size(); at += 13) {
    auto bad = bytes;
    bad[at] ^= 0x20;
    EXPECT_EQ(CodeOf([&] { DeserializeMap(bad); }), ErrorCode::kChecksumMismatch)
        << "offset " << at;
  }
}

TEST(MapContainer, TruncatedStreamIsRejected) {
  const auto bytes = SerializeMap(MinimalMap());
  for (size_t len : {size_t{0}, size_t{4}, size_t{8}, size_t{20}, bytes.size() / 2,
                     bytes.size() - 1}) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + len);
    const ErrorCode code = CodeOf([&] { DeserializeMap(cut); });
    EXPECT_TRUE(code == ErrorCode::kChecksumMismatch || code == ErrorCode::kBadMagic)
        << "length " << len;
  }
}

TEST(MapContainer, WrongMagicIsRejected) {
  auto bytes = SerializeMap(MinimalMap());
  bytes[7] = '2';
  EXPECT_EQ(CodeOf([&] { DeserializeMap(bytes); }), ErrorCode::kBadMagic);
}

TEST(MapContainer, FutureVersionIsRejected) {
  auto bytes = SerializeMap(MinimalMap());
  WriteU64(bytes, 8, 2);
  Reseal(bytes);
  EXPECT_EQ(CodeOf([&] { DeserializeMap(bytes); }), ErrorCode::kUnsupportedVersion);
}

TEST(MapContainer, PointWithAbsentLabelViolatesInvariants) {
  std::mt19937_64 rng(5);
  SceneMap map;
  do {
    map = RandomSceneMap(rng);
  } while (map.landmarks.size() < 2);
  auto bytes = SerializeMap(map);
  // Section table entry 2 is the points section: id, xyz f32, then label.
  const size_t entry = 24 + 2 * 24;
  const size_t points_at = ReadU64(bytes, entry + 8);
  ASSERT_EQ(ReadU64(bytes, points_at), map.points[0].id);
  WriteU64(bytes, points_at + 8 + 12, 99);
  Reseal(bytes);
  EXPECT_EQ(CodeOf([&] { DeserializeMap(bytes); }), ErrorCode::kInvariantViolation);
}

TEST(MapContainer, SaveAndLoadFile) {
  std::mt19937_64 rng(8);
  const SceneMap map = RandomSceneMap(rng);
  const auto path = std::filesystem::temp_directory_path() / "pram_map_test.bin";
  SaveMap(map, path);
  EXPECT_TRUE(BitIdentical(map, LoadMap(path)));
  std::filesystem::remove(path);
  EXPECT_EQ(CodeOf([&] { LoadMap(path); }), ErrorCode::kIoError);
}

TEST(SceneMapInvariants, PartitionAndSymmetry) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 50; ++i) {
    const SceneMap map = RandomSceneMap(rng);
    map.Validate();
    size_t total = 0;
    for (const Landmark& l : map.landmarks) total += l.point_ids.size();
    EXPECT_EQ(total, map.points.size());
    for (std::uint32_t a = 1; a <= map.NumLandmarks(); ++a) {
      for (std::uint32_t b : map.Neighbors(a)) {
        const auto& back = map.Neighbors(b);
        EXPECT_TRUE(std::find(back.begin(), back.end(), a) != back.end());
      }
    }
  }
}

TEST(SceneMapInvariants, AsymmetricCovisibilityRejected) {
  SceneMap map = MinimalMap();
  Landmark second = map.landmarks[0];
  second.label = 2;
  second.point_ids = {6};
  Point3D p = map.points[0];
  p.id = 6;
  p.landmark_label = 2;
  map.points.push_back(p);
  map.landmarks.push_back(second);
  map.covisibility = {{}, {2}, {}};
  map.Reindex();
  EXPECT_EQ(CodeOf([&] { map.Validate(); }), ErrorCode::kInvariantViolation);
  map.covisibility = {{}, {2}, {1}};
  map.Validate();
}

TEST(SceneMapInvariants, NonUnitDescriptorRejected) {
  SceneMap map = MinimalMap();
  map.points[0].descriptor *= 1.01f;
  EXPECT_EQ(CodeOf([&] { map.Validate(); }), ErrorCode::kInvariantViolation);
}

TEST(Reconstruction, LoadsToyFixture) {
  const Reconstruction recon = LoadReconstruction(kToyFixture);
  EXPECT_EQ(recon.descriptor_dim, 4);
  EXPECT_EQ(recon.frames.size(), 2u);
  EXPECT_EQ(recon.points.size(), 8u);
  for (const ReconPoint& p : recon.points) {
    for (const TrackEntry& t : p.track) {
      EXPECT_EQ(recon.KeypointAt(t).point3d_id, p.id);
    }
  }
  for (const Frame& f : recon.frames) {
    for (const Keypoint2D& kp : f.keypoints) {
      EXPECT_NEAR(kp.descriptor.cast<double>().norm(), 1.0, 1e-6);
    }
  }
}

TEST(Reconstruction, JsonRoundTrip) {
  const Reconstruction recon = LoadReconstruction(kToyFixture);
  const Reconstruction back = ParseReconstruction(ReconstructionToJson(recon));
  ASSERT_EQ(back.frames.size(), recon.frames.size());
  for (size_t i = 0; i < recon.frames.size(); ++i) {
    EXPECT_LT((back.frames[i].pose.rotation - recon.frames[i].pose.rotation).norm(), 1e-12);
    ASSERT_EQ(back.frames[i].keypoints.size(), recon.frames[i].keypoints.size());
    for (size_t k = 0; k < recon.frames[i].keypoints.size(); ++k) {
      EXPECT_EQ(back.frames[i].keypoints[k].descriptor,
                recon.frames[i].keypoints[k].descriptor);
    }
  }
}

nlohmann::json ToyJson() { return nlohmann::json::parse(ReadText(kToyFixture)); }

ErrorCode ParseCode(const nlohmann::json& doc) {
  return CodeOf([&] { ParseReconstruction(doc.dump()); });
}

TEST(Reconstruction, TrackToMissingFrameIsLinkageError) {
  auto doc = ToyJson();
  doc["points"][0]["track"][0][0] = 77;
  EXPECT_EQ(ParseCode(doc), ErrorCode::kLinkageError);
}

TEST(Reconstruction, TrackBeyondKeypointsIsLinkageError) {
  auto doc = ToyJson();
  doc["points"][0]["track"][0][1] = 1000;
  EXPECT_EQ(ParseCode(doc), ErrorCode::kLinkageError);
}

TEST(Reconstruction, KeypointWithoutTrackEntryIsLinkageError) {
  auto doc = ToyJson();
  doc["points"][0]["track"].erase(0);
  EXPECT_EQ(ParseCode(doc), ErrorCode::kLinkageError);
}

TEST(Reconstruction, MixedDescriptorDimensions) {
  auto doc = ToyJson();
  doc["frames"][1]["keypoints"][2]["desc"] = {0.6, 0.8, 0.0};
  EXPECT_EQ(ParseCode(doc), ErrorCode::kDescriptorDimMismatch);
}

TEST(Reconstruction, NearUnitDescriptorRenormalized) {
  auto doc = ToyJson();
  doc["frames"][0]["keypoints"][0]["desc"] = {0.6005, 0.8, 0.0, 0.0};
  const Reconstruction recon = ParseReconstruction(doc.dump());
  const Descriptor& d = recon.frames[0].keypoints[0].descriptor;
  EXPECT_NEAR(d.cast<double>().norm(), 1.0, 1e-7);
  EXPECT_NEAR(d(0), 0.6005 / std::hypot(0.6005, 0.8), 1e-7);
}

TEST(Reconstruction, FarFromUnitDescriptorRejected) {
  auto doc = ToyJson();
  doc["frames"][0]["keypoints"][0]["desc"] = {0.7, 0.8, 0.0, 0.0};
  EXPECT_EQ(ParseCode(doc), ErrorCode::kParseError);
}

TEST(Reconstruction, MalformedJsonIsParseError) {
  EXPECT_EQ(CodeOf([] { ParseReconstruction("{\"version\": 1,"); }),
            ErrorCode::kParseError);
  auto doc = ToyJson();
  doc.erase("cameras");
  EXPECT_EQ(ParseCode(doc), ErrorCode::kParseError);
}

TEST(Reconstruction, MissingFileIsIoError) {
  EXPECT_EQ(CodeOf([] { LoadReconstruction("/nonexistent/recon.json"); }),
            ErrorCode::kIoError);
}

}  // namespace
}  // namespace pram
