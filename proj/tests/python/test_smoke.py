import json
import math

import numpy as np
import pytest

import pram


@pytest.fixture(scope="module")
def small_scene():
    spec = pram.SceneSpec()
    spec.num_clusters = 4
    spec.points_per_cluster = 200
    spec.num_ref_frames = 40
    spec.seed = 7
    return pram.generate_scene(spec)


@pytest.fixture(scope="module")
def small_map(small_scene):
    cfg = pram.BuilderConfig()
    cfg.lambda_l = 4
    return pram.build_map(small_scene.recon, cfg)


def camera():
    return pram.CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640.0, 480.0)


def test_epnp_recovers_pose():
    rng = np.random.default_rng(0)
    truth = pram.look_at(np.array([0.3, -2.0, 0.5]), np.zeros(3))
    xyz = rng.uniform(-0.5, 0.5, size=(30, 3))
    uv = np.array([pram.project(truth, camera(), p) for p in xyz])
    est = pram.epnp(uv, xyz, camera())
    assert pram.rotation_angle_between(est.rotation, truth.rotation) < 1e-6
    assert np.linalg.norm(est.translation - truth.translation) < 1e-6


def test_ransac_rejects_outliers():
    rng = np.random.default_rng(1)
    truth = pram.look_at(np.array([0.0, -3.0, 0.2]), np.zeros(3))
    xyz = rng.uniform(-1.0, 1.0, size=(100, 3))
    uv = np.array([pram.project(truth, camera(), p) for p in xyz])
    bad = np.arange(100) < 30
    uv[bad] = rng.uniform([0, 0], [640, 480], size=(30, 2))
    result = pram.ransac_pnp(uv, xyz, camera())
    mask = np.array(result.inlier_mask)
    assert mask[~bad].all()
    assert result.num_inliers >= 70


def test_errors_carry_code():
    with pytest.raises(pram.PramError) as info:
        pram.epnp(np.zeros((2, 2)), np.zeros((2, 3)), camera())
    assert info.value.code == "MinimalSampleUnavailable"
    with pytest.raises(pram.PramError) as info:
        pram.deserialize_map(b"not a map at all")
    assert info.value.code in ("BadMagic", "ParseError")


def test_scene_and_map(small_scene, small_map):
    assert small_scene.recon.num_points == 800
    assert small_scene.recon.num_frames == 40
    assert small_map.num_landmarks == 4
    assert 0 < small_map.num_points <= small_scene.recon.num_points
    small_map.validate()
    stats = pram.map_stats(small_scene.recon, small_map)
    assert stats.num_vrfs == 4
    assert stats.num_points_after <= stats.num_points_filtered
    assert json.loads(stats.to_json())["serialized_bytes"] == stats.serialized_bytes


def test_map_round_trip(small_map, tmp_path):
    blob = small_map.serialize()
    again = pram.deserialize_map(blob)
    assert pram.maps_bit_identical(small_map, again)
    path = tmp_path / "map.bin"
    small_map.save(path)
    assert pram.maps_bit_identical(small_map, pram.load_map(path))


def test_localize_queries(small_scene, small_map):
    model = pram.train_centroid_recognizer(small_map)
    assert model.kind == "centroid"
    assert model.num_classes == 5
    assert pram.deserialize_weights(model.serialize()).num_classes == 5

    queries = pram.make_queries(small_scene, 10, pram.QueryNoise(), seed=3)
    params = pram.LocalizerParams()
    params.lambda_i = 40
    results = pram.localize_queries(queries, model, small_map, params)
    assert len(results) == 10
    report = pram.evaluate(results, queries.gt_poses)
    assert report.failure_rate <= 0.1
    assert report.success_ratios[(5.0, 5.0)] >= 0.9
    for r in results:
        if r.localized:
            assert r.num_inliers >= params.lambda_i
            assert 1 <= r.candidates_tried <= params.lambda_c

    uv, desc = queries.keypoints(0)
    single = pram.localize(uv, desc, model, small_map, queries.camera, params)
    assert single.localized == results[0].localized
    line = json.loads(single.to_json_line(0))
    assert line["query"] == 0


def test_recognize_shapes(small_scene, small_map):
    model = pram.train_centroid_recognizer(small_map)
    q = pram.render_query(small_scene, small_scene.frame_poses[0], pram.QueryNoise(), 5)
    labels, conf = pram.recognize(q["uv"], q["descriptors"], model, 640.0, 480.0)
    assert conf.shape == (len(q["uv"]), 5)
    assert np.allclose(conf.sum(axis=1), 1.0)
    assert len(labels) == len(q["uv"])


def test_evaluate_known_perturbation():
    truth = pram.look_at(np.array([1.0, 2.0, 0.5]), np.zeros(3))
    axis = np.array([0.0, 0.0, 1.0]) * math.radians(1.0)
    rot = pram.rotation_from_axis_angle(axis) @ truth.rotation
    center = truth.center() + np.array([0.03, 0.0, 0.0])
    est = pram.Pose(rot, -rot @ center)
    cm, deg = pram.pose_errors(est, truth)
    assert cm == pytest.approx(3.0, abs=1e-9)
    assert deg == pytest.approx(1.0, abs=1e-9)


def test_cli_help_and_usage(capfd):
    assert pram.run_cli(["build-map", "--help"]) == 0
    out = capfd.readouterr().out
    assert "--lambda-l" in out and "lambda_o=25" in out
    assert pram.run_cli(["build-map"]) == 2
