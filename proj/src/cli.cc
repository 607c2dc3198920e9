#include "pram/cli.h"

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pram/error.h"
#include "pram/localizer.h"
#include "pram/map_builder.h"
#include "pram/map_model.h"
#include "pram/recognition.h"
#include "pram/synth_bench.h"

namespace pram::cli {
namespace {

struct SynthOptions {
  SceneSpec spec;
  std::string output;
  size_t num_queries = 0;
  std::string queries_output;
  QueryNoise noise;
  std::uint64_t query_seed = 1;
};

struct BuildOptions {
  std::string scene;
  std::string output;
  BuilderConfig config;
  bool no_prune = false;
  std::string up_axis = "z";
};

struct TrainOptions {
  std::string map;
  std::string output;
  CentroidParams params;
};

struct LocalizeOptions {
  std::string map;
  std::string weights;
  std::string queries;
  std::string output;
  LocalizerParams params;
  bool no_refine = false;
  unsigned threads = 0;
};

struct EvalOptions {
  std::string results;
  std::string queries;
  std::string output;
  std::vector<std::string> thresholds;
  std::string map;
  std::string scene;
};

struct StatsOptions {
  std::string map;
  std::string scene;
};

// Raised for argument values that parse but violate a type invariant.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void WriteText(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIoError, "cannot write " + path);
  f << text;
  if (!f) throw Error(ErrorCode::kIoError, "write failed for " + path);
}

UpAxis ParseUpAxis(const std::string& s) {
  if (s == "x") return UpAxis::kX;
  if (s == "y") return UpAxis::kY;
  if (s == "z") return UpAxis::kZ;
  throw UsageError("--up-axis must be x, y or z");
}

std::vector<SuccessThreshold> ParseThresholds(const std::vector<std::string>& items) {
  if (items.empty()) return kDefaultThresholds;
  std::vector<SuccessThreshold> out;
  for (const std::string& item : items) {
    const auto comma = item.find(',');
    SuccessThreshold t;
    try {
      if (comma == std::string::npos) throw std::invalid_argument(item);
      t.position_cm = std::stod(item.substr(0, comma));
      t.rotation_deg = std::stod(item.substr(comma + 1));
    } catch (const std::exception&) {
      throw UsageError("--threshold expects CM,DEG, got '" + item + "'");
    }
    if (!(t.position_cm >= 0.0 && t.rotation_deg >= 0.0)) {
      throw UsageError("thresholds must be nonnegative");
    }
    out.push_back(t);
  }
  return out;
}

void AddSynth(CLI::App& app, SynthOptions& o) {
  SceneSpec& s = o.spec;
  app.add_option("-o,--output", o.output, "Reconstruction JSON to write")->required();
  app.add_option("--seed", s.seed, "Generator seed")->capture_default_str();
  app.add_option("--clusters", s.num_clusters, "Number of wall-patch clusters")
      ->capture_default_str();
  app.add_option("--points-per-cluster", s.points_per_cluster, "3D points per cluster")
      ->capture_default_str();
  app.add_option("--frames", s.num_ref_frames, "Reference frames")->capture_default_str();
  app.add_option("--extent", s.scene_extent_m, "Scene extent, m")->capture_default_str();
  app.add_option("--spread", s.cluster_spread_m, "Patch half-width, m")->capture_default_str();
  app.add_option("--dim", s.descriptor_dim, "Descriptor dimension")->capture_default_str();
  app.add_option("--sigma", s.descriptor_noise_sigma, "Observation descriptor noise")
      ->capture_default_str();
  app.add_option("--outlier-fraction", s.outlier_keypoint_fraction,
                 "Fraction of keypoints without a 3D point")
      ->capture_default_str();
  app.add_option("--detection-rate", s.detection_rate, "Chance a visible point is detected")
      ->capture_default_str();
  app.add_option("--queries", o.num_queries, "Number of query images to render")
      ->capture_default_str();
  app.add_option("--queries-output", o.queries_output, "Query set JSON to write");
  app.add_option("--query-seed", o.query_seed, "Query rendering seed")->capture_default_str();
  app.add_option("--query-sigma", o.noise.sigma, "Query descriptor noise")->capture_default_str();
  app.add_option("--query-outliers", o.noise.outlier_fraction, "Query outlier keypoint fraction")
      ->capture_default_str();
  app.add_option("--pixel-noise", o.noise.pixel_noise_px, "Query pixel noise, px")
      ->capture_default_str();
}

void AddBuilderFlags(CLI::App& app, BuildOptions& o) {
  BuilderConfig& c = o.config;
  app.add_option("--lambda-l", c.lambda_l, "lambda_l: number of landmarks")
      ->capture_default_str();
  app.add_option("--lambda-n", c.lambda_n, "lambda_n: neighbours for spatial filtering")
      ->capture_default_str();
  app.add_option("--lambda-v", c.lambda_v, "lambda_v: neighbour covariance trace threshold, m^2")
      ->capture_default_str();
  app.add_option("--lambda-o", c.lambda_o, "lambda_o: pruning radius, px")->capture_default_str();
  app.add_option("--up-axis", o.up_axis, "Vertical axis (x, y or z)")->capture_default_str();
  app.add_flag("--no-prune", o.no_prune, "Disable landmark-wise pruning");
  app.add_option("--seed", c.seed, "Clustering seed")->capture_default_str();
}

void AddLocalizerFlags(CLI::App& app, LocalizeOptions& o) {
  LocalizerParams& p = o.params;
  app.add_option("--lambda-s", p.lambda_s, "lambda_s: outlier confidence threshold")
      ->capture_default_str();
  app.add_option("--lambda-i", p.lambda_i, "lambda_i: inliers needed to accept a landmark")
      ->capture_default_str();
  app.add_option("--lambda-c", p.lambda_c, "lambda_c: candidate landmarks tried at most")
      ->capture_default_str();
  app.add_option("--ratio", p.ratio_test, "Descriptor ratio test threshold")
      ->capture_default_str();
  app.add_option("--inlier-px", p.ransac.inlier_px_threshold, "RANSAC inlier threshold, px")
      ->capture_default_str();
  app.add_option("--ransac-iters", p.ransac.max_iters, "RANSAC iteration cap")
      ->capture_default_str();
  app.add_option("--refine-window", p.refine_window_px, "Covisibility search window, px")
      ->capture_default_str();
  app.add_flag("--no-refine", o.no_refine, "Skip covisibility refinement");
  app.add_option("--seed", p.ransac.seed, "RANSAC seed")->capture_default_str();
  app.add_option("--threads", o.threads, "Worker threads (0 = hardware)")->capture_default_str();
}

int DoSynth(const SynthOptions& o, std::ostream& out, std::ostream& log, bool verbose) {
  if (o.num_queries > 0 && o.queries_output.empty()) {
    throw UsageError("--queries needs --queries-output");
  }
  const SyntheticScene scene = GenerateScene(o.spec);
  SaveReconstruction(scene.recon, o.output);
  if (o.num_queries > 0) {
    SaveQuerySet(MakeQueries(scene, o.num_queries, o.noise, o.query_seed), o.queries_output);
  }
  if (verbose) {
    log << "synth: " << scene.recon.points.size() << " points, " << scene.recon.frames.size()
        << " frames\n";
  }
  out << SceneSpecToJson(o.spec) << '\n';
  return kExitOk;
}

int DoBuild(const BuildOptions& o, std::ostream& out, std::ostream& log, bool verbose) {
  const Reconstruction recon = LoadReconstruction(o.scene);
  const auto start = std::chrono::steady_clock::now();
  const SceneMap map = BuildMap(recon, o.config);
  SaveMap(map, o.output);
  if (verbose) {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    log << "build-map: " << dt.count() << " s\n";
  }
  out << MapStatsToJson(ComputeMapStats(recon, map)) << '\n';
  return kExitOk;
}

int DoTrain(const TrainOptions& o, std::ostream& out) {
  const SceneMap map = LoadMap(o.map);
  const RecognizerModel model = TrainCentroidRecognizer(map, o.params);
  SaveWeights(model, o.output);
  out << nlohmann::json{{"kind", "centroid"},
                        {"num_classes", model.num_classes},
                        {"descriptor_dim", model.descriptor_dim}}
             .dump()
      << '\n';
  return kExitOk;
}

int DoLocalize(const LocalizeOptions& o, std::ostream& out, std::ostream& log, bool verbose) {
  const SceneMap map = LoadMap(o.map);
  const RecognizerModel model = LoadWeights(o.weights);
  const QuerySet queries = LoadQuerySet(o.queries);
  const auto start = std::chrono::steady_clock::now();
  const auto results =
      LocalizeBatch(queries.keypoints, model, map, queries.camera, o.params, o.threads);
  std::ostringstream lines;
  for (size_t i = 0; i < results.size(); ++i) lines << ResultToJsonLine(i, results[i]) << '\n';
  WriteText(o.output, lines.str(), out);
  if (verbose) {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    log << "localize: " << results.size() << " queries in " << dt.count() << " s\n";
  }
  return kExitOk;
}

int DoEval(const EvalOptions& o, std::ostream& out) {
  const auto thresholds = ParseThresholds(o.thresholds);
  if (o.map.empty() != o.scene.empty()) throw UsageError("--map and --scene go together");
  const auto results = LoadResults(o.results);
  const QuerySet queries = LoadQuerySet(o.queries);
  EvalReport report = Evaluate(results, queries.gt_poses, thresholds);
  if (!o.map.empty()) {
    report.map_stats = ComputeMapStats(LoadReconstruction(o.scene), LoadMap(o.map));
  }
  WriteText(o.output, EvalReportToJson(report) + "\n", out);
  return kExitOk;
}

int DoStats(const StatsOptions& o, std::ostream& out) {
  const SceneMap map = LoadMap(o.map);
  if (!o.scene.empty()) {
    out << MapStatsToJson(ComputeMapStats(LoadReconstruction(o.scene), map)) << '\n';
    return kExitOk;
  }
  size_t observations = 0;
  for (const Point3D& p : map.points) observations += p.track.size();
  const nlohmann::json j = {{"num_points_after", map.points.size()},
                            {"num_vrfs", map.landmarks.size()},
                            {"serialized_bytes", SerializeMap(map).size()},
                            {"descriptor_dim", map.descriptor_dim},
                            {"num_observations", observations}};
  out << j.dump(2) << '\n';
  return kExitOk;
}

std::string DefaultsFooter() {
  const BuilderConfig b;
  const LocalizerParams l;
  std::ostringstream s;
  s << "Hyperparameter defaults: lambda_l=" << b.lambda_l << " lambda_n=" << b.lambda_n
    << " lambda_v=" << b.lambda_v << " lambda_o=" << b.lambda_o << " lambda_s=" << l.lambda_s
    << " lambda_i=" << l.lambda_i << " lambda_c=" << l.lambda_c;
  return s.str();
}

}  // namespace

int Run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"PRAM visual localization: synthetic scenes, map building, localization"};
  app.name("pram");
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Print progress to standard error");

  SynthOptions synth;
  BuildOptions build;
  TrainOptions train;
  LocalizeOptions loc;
  EvalOptions eval;
  StatsOptions stats;

  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic reconstruction");
  AddSynth(*synth_cmd, synth);

  CLI::App* build_cmd = app.add_subcommand("build-map", "Build a landmark map; prints map stats");
  build_cmd->add_option("scene", build.scene, "Reconstruction JSON")
      ->required()
      ->check(CLI::ExistingFile);
  build_cmd->add_option("-o,--output", build.output, "Map container to write")->required();
  AddBuilderFlags(*build_cmd, build);

  CLI::App* train_cmd =
      app.add_subcommand("train-recognizer", "Fit the centroid landmark recognizer");
  train_cmd->add_option("map", train.map, "Map container")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("-o,--output", train.output, "Weights container to write")->required();
  train_cmd->add_option("--temperature", train.params.temperature, "Softmax temperature")
      ->capture_default_str();
  train_cmd->add_option("--null-bias", train.params.null_bias, "Outlier class score")
      ->capture_default_str();

  CLI::App* loc_cmd = app.add_subcommand("localize", "Localize queries; writes JSON lines");
  loc_cmd->add_option("map", loc.map, "Map container")->required()->check(CLI::ExistingFile);
  loc_cmd->add_option("weights", loc.weights, "Weights container")
      ->required()
      ->check(CLI::ExistingFile);
  loc_cmd->add_option("queries", loc.queries, "Query set JSON")
      ->required()
      ->check(CLI::ExistingFile);
  loc_cmd->add_option("-o,--output", loc.output, "Results file (default: standard output)");
  AddLocalizerFlags(*loc_cmd, loc);

  CLI::App* eval_cmd = app.add_subcommand("eval", "Score results against ground truth poses");
  eval_cmd->add_option("results", eval.results, "Results JSON lines")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("queries", eval.queries, "Query set JSON holding ground truth")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("-o,--output", eval.output, "Report file (default: standard output)");
  eval_cmd->add_option("--threshold", eval.thresholds,
                       "Success threshold CM,DEG; repeatable (default 5,5 and 25,2)");
  eval_cmd->add_option("--map", eval.map, "Map container for map stats")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--scene", eval.scene, "Reconstruction the map was built from")
      ->check(CLI::ExistingFile);

  CLI::App* stats_cmd = app.add_subcommand("stats", "Print map statistics");
  stats_cmd->add_option("map", stats.map, "Map container")->required()->check(CLI::ExistingFile);
  stats_cmd->add_option("--scene", stats.scene, "Reconstruction the map was built from")
      ->check(CLI::ExistingFile);

  for (CLI::App* sub : app.get_subcommands({})) sub->footer(DefaultsFooter());
  app.footer(DefaultsFooter());

  auto usage_of = [&]() -> std::string {
    for (CLI::App* sub : app.get_subcommands()) return sub->help();
    return app.help();
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << usage_of();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << usage_of();
    return kExitUsage;
  }

  CLI::App* used = app.get_subcommands().front();
  try {
    build.config.enable_pruning = !build.no_prune;
    build.config.up_axis = ParseUpAxis(build.up_axis);
    loc.params.refine = !loc.no_refine;
    if (used == synth_cmd) synth.spec.Validate();
    if (used == build_cmd) build.config.Validate();
    if (used == loc_cmd) loc.params.Validate();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << used->help();
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n\n" << used->help();
    return kExitUsage;
  }

  try {
    if (used == synth_cmd) return DoSynth(synth, out, err, verbose);
    if (used == build_cmd) return DoBuild(build, out, err, verbose);
    if (used == train_cmd) return DoTrain(train, out);
    if (used == loc_cmd) return DoLocalize(loc, out, err, verbose);
    if (used == eval_cmd) return DoEval(eval, out);
    return DoStats(stats, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << used->help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace pram::cli
