#include <pybind11/eigen.h>
#include <pybind11/iostream.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <iostream>
#include <string>
#include <vector>

#include "pram/cli.h"
#include "pram/error.h"
#include "pram/geometry.h"
#include "pram/localizer.h"
#include "pram/map_builder.h"
#include "pram/map_model.h"
#include "pram/recognition.h"
#include "pram/synth_bench.h"

namespace py = pybind11;
using namespace pram;

namespace {

using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;
using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using FloatRows = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<Correspondence2D3D> Correspondences(const Points2& uv, const Points3& xyz) {
  if (uv.rows() != xyz.rows()) {
    throw Error(ErrorCode::kLengthMismatch, "points2d and points3d differ in length");
  }
  std::vector<Correspondence2D3D> out(static_cast<size_t>(uv.rows()));
  for (Eigen::Index i = 0; i < uv.rows(); ++i) {
    out[size_t(i)].point2d = uv.row(i).transpose();
    out[size_t(i)].point3d = xyz.row(i).transpose();
  }
  return out;
}

std::vector<Keypoint2D> Keypoints(const Points2& uv, const FloatRows& desc) {
  if (uv.rows() != desc.rows()) {
    throw Error(ErrorCode::kLengthMismatch, "uv and descriptors differ in length");
  }
  std::vector<Keypoint2D> out(static_cast<size_t>(uv.rows()));
  for (Eigen::Index i = 0; i < uv.rows(); ++i) {
    out[size_t(i)].u = uv(i, 0);
    out[size_t(i)].v = uv(i, 1);
    out[size_t(i)].descriptor = desc.row(i).transpose();
  }
  return out;
}

py::tuple KeypointArrays(const std::vector<Keypoint2D>& kps, int dim) {
  Points2 uv(Eigen::Index(kps.size()), 2);
  FloatRows desc(Eigen::Index(kps.size()), dim);
  for (size_t i = 0; i < kps.size(); ++i) {
    uv(Eigen::Index(i), 0) = kps[i].u;
    uv(Eigen::Index(i), 1) = kps[i].v;
    desc.row(Eigen::Index(i)) = kps[i].descriptor.transpose();
  }
  return py::make_tuple(uv, desc);
}

py::bytes ToBytes(const std::vector<std::uint8_t>& v) {
  return {reinterpret_cast<const char*>(v.data()), v.size()};
}

std::vector<std::uint8_t> FromBytes(const py::bytes& b) {
  const std::string s = b;
  return {s.begin(), s.end()};
}

template <typename T>
std::string Repr(const char* name, const T& fields) {
  return std::string(name) + "(" + fields + ")";
}

}  // namespace

PYBIND11_MODULE(_pram, m) {
  m.doc() = "PRAM visual localization core";

  static py::exception<Error> error(m, "PramError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = error;
      py::object instance = exc(e.what());
      instance.attr("code") = std::string(ErrorCodeName(e.code()));
      PyErr_SetObject(error.ptr(), instance.ptr());
    }
  });

  // -- geometry -------------------------------------------------------------
  py::class_<CameraIntrinsics>(m, "CameraIntrinsics")
      .def(py::init<>())
      .def(py::init([](double fx, double fy, double cx, double cy, double w, double h) {
             return CameraIntrinsics{fx, fy, cx, cy, w, h};
           }),
           py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("width"),
           py::arg("height"))
      .def_readwrite("fx", &CameraIntrinsics::fx)
      .def_readwrite("fy", &CameraIntrinsics::fy)
      .def_readwrite("cx", &CameraIntrinsics::cx)
      .def_readwrite("cy", &CameraIntrinsics::cy)
      .def_readwrite("width", &CameraIntrinsics::width)
      .def_readwrite("height", &CameraIntrinsics::height)
      .def("is_valid", &CameraIntrinsics::IsValid)
      .def("__repr__", [](const CameraIntrinsics& k) {
        return Repr("CameraIntrinsics", "fx=" + std::to_string(k.fx) + ", fy=" +
                                            std::to_string(k.fy) + ", cx=" +
                                            std::to_string(k.cx) + ", cy=" + std::to_string(k.cy));
      });

  py::class_<Pose>(m, "Pose")
      .def(py::init<>())
      .def(py::init([](const Eigen::Matrix3d& r, const Eigen::Vector3d& t) { return Pose{r, t}; }),
           py::arg("rotation"), py::arg("translation"))
      .def_readwrite("rotation", &Pose::rotation)
      .def_readwrite("translation", &Pose::translation)
      .def_static("from_quaternion", &Pose::FromQuaternion, py::arg("wxyz"),
                  py::arg("translation"))
      .def("quaternion", &Pose::Quaternion)
      .def("center", &Pose::Center)
      .def("inverse", &Pose::Inverse)
      .def("transform", &Pose::Transform);

  m.def("look_at", &LookAt, py::arg("eye"), py::arg("target"),
        py::arg("up") = Eigen::Vector3d::UnitZ());
  m.def("rotation_angle_between", &RotationAngleBetween);
  m.def("rotation_from_axis_angle", &RotationFromAxisAngle);
  m.def("project", &Project, py::arg("pose"), py::arg("camera"), py::arg("point"));

  m.def(
      "epnp",
      [](const Points2& uv, const Points3& xyz, const CameraIntrinsics& cam) {
        return EPnP(Correspondences(uv, xyz), cam);
      },
      py::arg("points2d"), py::arg("points3d"), py::arg("camera"));

  py::class_<RansacParams>(m, "RansacParams")
      .def(py::init<>())
      .def_readwrite("max_iters", &RansacParams::max_iters)
      .def_readwrite("inlier_px_threshold", &RansacParams::inlier_px_threshold)
      .def_readwrite("confidence", &RansacParams::confidence)
      .def_readwrite("seed", &RansacParams::seed);

  py::class_<RansacResult>(m, "RansacResult")
      .def_readonly("pose", &RansacResult::pose)
      .def_readonly("inlier_mask", &RansacResult::inlier_mask)
      .def_readonly("num_inliers", &RansacResult::num_inliers)
      .def_readonly("iterations", &RansacResult::iterations);

  m.def(
      "ransac_pnp",
      [](const Points2& uv, const Points3& xyz, const CameraIntrinsics& cam,
         const RansacParams& params) { return RansacPnP(Correspondences(uv, xyz), cam, params); },
      py::arg("points2d"), py::arg("points3d"), py::arg("camera"),
      py::arg("params") = RansacParams{});

  m.def(
      "refine_pose",
      [](const Pose& init, const Points2& uv, const Points3& xyz, const CameraIntrinsics& cam) {
        return RefinePose(init, Correspondences(uv, xyz), cam, RefineParams{}).pose;
      },
      py::arg("init"), py::arg("points2d"), py::arg("points3d"), py::arg("camera"));

  // -- synthetic scenes -----------------------------------------------------
  py::class_<SceneSpec>(m, "SceneSpec")
      .def(py::init<>())
      .def_readwrite("num_clusters", &SceneSpec::num_clusters)
      .def_readwrite("points_per_cluster", &SceneSpec::points_per_cluster)
      .def_readwrite("cluster_spread_m", &SceneSpec::cluster_spread_m)
      .def_readwrite("scene_extent_m", &SceneSpec::scene_extent_m)
      .def_readwrite("num_ref_frames", &SceneSpec::num_ref_frames)
      .def_readwrite("descriptor_dim", &SceneSpec::descriptor_dim)
      .def_readwrite("descriptor_noise_sigma", &SceneSpec::descriptor_noise_sigma)
      .def_readwrite("outlier_keypoint_fraction", &SceneSpec::outlier_keypoint_fraction)
      .def_readwrite("detection_rate", &SceneSpec::detection_rate)
      .def_readwrite("camera", &SceneSpec::camera)
      .def_readwrite("seed", &SceneSpec::seed)
      .def("validate", &SceneSpec::Validate);

  py::class_<Reconstruction>(m, "Reconstruction")
      .def_property_readonly("num_points", [](const Reconstruction& r) { return r.points.size(); })
      .def_property_readonly("num_frames", [](const Reconstruction& r) { return r.frames.size(); })
      .def_readonly("descriptor_dim", &Reconstruction::descriptor_dim)
      .def("to_json", &ReconstructionToJson)
      .def("save", [](const Reconstruction& r, const std::filesystem::path& p) {
        SaveReconstruction(r, p);
      });
  m.def("load_reconstruction", &LoadReconstruction, py::arg("path"));
  m.def("parse_reconstruction", &ParseReconstruction, py::arg("json_text"));

  py::class_<SyntheticScene>(m, "SyntheticScene")
      .def_readonly("spec", &SyntheticScene::spec)
      .def_readonly("recon", &SyntheticScene::recon)
      .def_property_readonly("point_cluster",
                             [](const SyntheticScene& s) { return s.truth.point_cluster; })
      .def_property_readonly("frame_poses",
                             [](const SyntheticScene& s) { return s.truth.frame_poses; });
  m.def("generate_scene", &GenerateScene, py::arg("spec"));

  py::class_<QueryNoise>(m, "QueryNoise")
      .def(py::init<>())
      .def_readwrite("sigma", &QueryNoise::sigma)
      .def_readwrite("outlier_fraction", &QueryNoise::outlier_fraction)
      .def_readwrite("pixel_noise_px", &QueryNoise::pixel_noise_px)
      .def_readwrite("detection_rate", &QueryNoise::detection_rate)
      .def_readwrite("min_visible", &QueryNoise::min_visible);

  m.def(
      "render_query",
      [](const SyntheticScene& scene, const Pose& pose, const QueryNoise& noise,
         std::uint64_t seed) {
        const RenderedQuery q = RenderQuery(scene, pose, noise, seed);
        py::dict d;
        const py::tuple arrays = KeypointArrays(q.keypoints, scene.spec.descriptor_dim);
        d["uv"] = arrays[0];
        d["descriptors"] = arrays[1];
        d["num_visible"] = q.num_visible;
        d["insufficient_visibility"] = q.insufficient_visibility;
        return d;
      },
      py::arg("scene"), py::arg("pose"), py::arg("noise") = QueryNoise{}, py::arg("seed") = 0);

  py::class_<QuerySet>(m, "QuerySet")
      .def_readonly("camera", &QuerySet::camera)
      .def_readonly("gt_poses", &QuerySet::gt_poses)
      .def("__len__", &QuerySet::size)
      .def("keypoints",
           [](const QuerySet& s, size_t i) {
             const auto& kps = s.keypoints.at(i);
             const int dim = kps.empty() ? 0 : int(kps.front().descriptor.size());
             return KeypointArrays(kps, dim);
           })
      .def("to_json", &QuerySetToJson)
      .def("save", [](const QuerySet& s, const std::filesystem::path& p) { SaveQuerySet(s, p); });
  m.def("make_queries", &MakeQueries, py::arg("scene"), py::arg("count"),
        py::arg("noise") = QueryNoise{}, py::arg("seed") = 0);
  m.def("load_query_set", &LoadQuerySet, py::arg("path"));

  // -- map ------------------------------------------------------------------
  py::enum_<UpAxis>(m, "UpAxis")
      .value("X", UpAxis::kX)
      .value("Y", UpAxis::kY)
      .value("Z", UpAxis::kZ);

  py::class_<BuilderConfig>(m, "BuilderConfig")
      .def(py::init<>())
      .def_readwrite("lambda_l", &BuilderConfig::lambda_l)
      .def_readwrite("lambda_n", &BuilderConfig::lambda_n)
      .def_readwrite("lambda_v", &BuilderConfig::lambda_v)
      .def_readwrite("lambda_o", &BuilderConfig::lambda_o)
      .def_readwrite("up_axis", &BuilderConfig::up_axis)
      .def_readwrite("enable_pruning", &BuilderConfig::enable_pruning)
      .def_readwrite("seed", &BuilderConfig::seed)
      .def("validate", &BuilderConfig::Validate);

  py::class_<SceneMap>(m, "SceneMap")
      .def_readonly("descriptor_dim", &SceneMap::descriptor_dim)
      .def_readonly("build_config", &SceneMap::build_config)
      .def_readonly("covisibility", &SceneMap::covisibility)
      .def_property_readonly("num_points", [](const SceneMap& s) { return s.points.size(); })
      .def_property_readonly("num_landmarks", &SceneMap::NumLandmarks)
      .def("landmark_point_ids",
           [](const SceneMap& s, std::uint32_t label) { return s.LandmarkByLabel(label).point_ids; })
      .def("vrf_pose", [](const SceneMap& s, std::uint32_t label) {
        return s.LandmarkByLabel(label).vrf.pose;
      })
      .def("validate", &SceneMap::Validate)
      .def("serialize", [](const SceneMap& s) { return ToBytes(SerializeMap(s)); })
      .def("save", [](const SceneMap& s, const std::filesystem::path& p) { SaveMap(s, p); });
  m.def("deserialize_map", [](const py::bytes& b) { return DeserializeMap(FromBytes(b)); });
  m.def("load_map", &LoadMap, py::arg("path"));
  m.def("maps_bit_identical",
        [](const SceneMap& a, const SceneMap& b) { return BitIdentical(a, b); });
  m.def(
      "build_map",
      [](const Reconstruction& recon, const BuilderConfig& config) {
        py::gil_scoped_release release;
        return BuildMap(recon, config);
      },
      py::arg("recon"), py::arg("config") = BuilderConfig{});

  // -- recognition ----------------------------------------------------------
  py::class_<CentroidParams>(m, "CentroidParams")
      .def(py::init<>())
      .def_readwrite("temperature", &CentroidParams::temperature)
      .def_readwrite("null_bias", &CentroidParams::null_bias);

  py::class_<RecognizerModel>(m, "RecognizerModel")
      .def_readonly("descriptor_dim", &RecognizerModel::descriptor_dim)
      .def_readonly("num_classes", &RecognizerModel::num_classes)
      .def_property_readonly("kind",
                             [](const RecognizerModel& r) {
                               return r.kind == ModelKind::kCentroid ? "centroid" : "transformer";
                             })
      .def("serialize", [](const RecognizerModel& r) { return ToBytes(SerializeWeights(r)); })
      .def("save", [](const RecognizerModel& r, const std::filesystem::path& p) {
        SaveWeights(r, p);
      });
  m.def("deserialize_weights", [](const py::bytes& b) { return DeserializeWeights(FromBytes(b)); });
  m.def("load_weights", &LoadWeights, py::arg("path"));
  m.def("train_centroid_recognizer", &TrainCentroidRecognizer, py::arg("map"),
        py::arg("params") = CentroidParams{});
  m.def(
      "recognize",
      [](const Points2& uv, const FloatRows& desc, const RecognizerModel& model, double width,
         double height) {
        const RecognitionOutput out = Recognize(Keypoints(uv, desc), model, width, height);
        return py::make_tuple(out.labels, out.confidences);
      },
      py::arg("uv"), py::arg("descriptors"), py::arg("model"), py::arg("width"),
      py::arg("height"));

  // -- localization ---------------------------------------------------------
  py::class_<LocalizerParams>(m, "LocalizerParams")
      .def(py::init<>())
      .def_readwrite("lambda_s", &LocalizerParams::lambda_s)
      .def_readwrite("lambda_i", &LocalizerParams::lambda_i)
      .def_readwrite("lambda_c", &LocalizerParams::lambda_c)
      .def_readwrite("ratio_test", &LocalizerParams::ratio_test)
      .def_readwrite("refine", &LocalizerParams::refine)
      .def_readwrite("ransac", &LocalizerParams::ransac)
      .def_readwrite("refine_window_px", &LocalizerParams::refine_window_px)
      .def("validate", &LocalizerParams::Validate);

  py::class_<LocalizationResult>(m, "LocalizationResult")
      .def_property_readonly("localized", &LocalizationResult::localized)
      .def_readonly("pose", &LocalizationResult::pose)
      .def_readonly("initial_pose", &LocalizationResult::initial_pose)
      .def_readonly("used_landmark", &LocalizationResult::used_landmark)
      .def_readonly("num_inliers", &LocalizationResult::num_inliers)
      .def_readonly("initial_inliers", &LocalizationResult::initial_inliers)
      .def_readonly("candidates_tried", &LocalizationResult::candidates_tried)
      .def_readonly("refined", &LocalizationResult::refined)
      .def("to_json_line",
           [](const LocalizationResult& r, size_t index) { return ResultToJsonLine(index, r); });

  m.def(
      "localize",
      [](const Points2& uv, const FloatRows& desc, const RecognizerModel& model,
         const SceneMap& map, const CameraIntrinsics& cam, const LocalizerParams& params) {
        const auto kps = Keypoints(uv, desc);
        py::gil_scoped_release release;
        return Localize(kps, model, map, cam, params);
      },
      py::arg("uv"), py::arg("descriptors"), py::arg("model"), py::arg("map"), py::arg("camera"),
      py::arg("params") = LocalizerParams{});
  m.def(
      "localize_queries",
      [](const QuerySet& queries, const RecognizerModel& model, const SceneMap& map,
         const LocalizerParams& params, unsigned threads) {
        py::gil_scoped_release release;
        return LocalizeBatch(queries.keypoints, model, map, queries.camera, params, threads);
      },
      py::arg("queries"), py::arg("model"), py::arg("map"), py::arg("params") = LocalizerParams{},
      py::arg("threads") = 0);

  // -- evaluation -----------------------------------------------------------
  py::class_<MapStats>(m, "MapStats")
      .def_readonly("num_points_before", &MapStats::num_points_before)
      .def_readonly("num_points_filtered", &MapStats::num_points_filtered)
      .def_readonly("num_points_after", &MapStats::num_points_after)
      .def_readonly("num_ref_frames_before", &MapStats::num_ref_frames_before)
      .def_readonly("num_vrfs", &MapStats::num_vrfs)
      .def_readonly("serialized_bytes", &MapStats::serialized_bytes)
      .def_readonly("mean_track_length", &MapStats::mean_track_length)
      .def("to_json", &MapStatsToJson);
  m.def("map_stats", &ComputeMapStats, py::arg("before"), py::arg("after"));

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("median_position_error_cm", &EvalReport::median_position_error_cm)
      .def_readonly("median_orientation_error_deg", &EvalReport::median_orientation_error_deg)
      .def_readonly("failure_rate", &EvalReport::failure_rate)
      .def_property_readonly("success_ratios",
                             [](const EvalReport& r) {
                               py::dict d;
                               for (const auto& [t, ratio] : r.success_ratios) {
                                 d[py::make_tuple(t.position_cm, t.rotation_deg)] = ratio;
                               }
                               return d;
                             })
      .def_property_readonly("matcher_invocations",
                             [](const EvalReport& r) {
                               return py::make_tuple(r.matcher.mean, r.matcher.median,
                                                     r.matcher.max);
                             })
      .def("to_json", &EvalReportToJson);
  m.def(
      "evaluate",
      [](const std::vector<LocalizationResult>& results, const std::vector<Pose>& truths,
         const std::vector<std::pair<double, double>>& thresholds) {
        std::vector<SuccessThreshold> ts;
        for (const auto& [cm, deg] : thresholds) ts.push_back({cm, deg});
        if (ts.empty()) ts = kDefaultThresholds;
        return Evaluate(results, truths, ts);
      },
      py::arg("results"), py::arg("truths"),
      py::arg("thresholds") = std::vector<std::pair<double, double>>{});
  m.def("pose_errors", &PoseErrors, py::arg("estimate"), py::arg("truth"));

  // -- command line ---------------------------------------------------------
  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "pram");
        std::vector<const char*> argv;
        for (const std::string& a : args) argv.push_back(a.c_str());
        py::scoped_ostream_redirect out(std::cout, py::module_::import("sys").attr("stdout"));
        py::scoped_estream_redirect err(std::cerr, py::module_::import("sys").attr("stderr"));
        return cli::Run(static_cast<int>(argv.size()), argv.data(), std::cout, std::cerr);
      },
      py::arg("args"));
}
