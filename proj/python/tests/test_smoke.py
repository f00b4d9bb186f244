import math

import numpy as np
import pytest

import ndp_ood as nd


def test_closed_form_scores():
    assert nd.entropy_score(np.zeros(4)) == pytest.approx(math.log(4), abs=1e-12)
    assert nd.energy_score(np.zeros(2)) == pytest.approx(-math.log(2), abs=1e-12)
    assert nd.extended_energy_score(np.full(6, 0.3)) == pytest.approx(math.log(2), abs=1e-12)


def test_zero_head_matches_static():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(500, 8))
    params = nd.init_params(8, 16, 3)
    assert np.all(params.w_s == 0)
    np.testing.assert_array_equal(nd.ndp_score(logits, params), nd.static_scores(logits))
    params.w_s = rng.normal(size=32)
    w = nd.ndp_weight(logits, params)
    assert w.shape == (500,) and np.all(w >= 1.0)


def test_dbscan_two_blobs():
    a = np.zeros((10, 3), np.float32)
    b = a + np.float32(10)
    a[:, 0] = np.arange(10) * 0.1
    b[:, 0] += np.arange(10) * 0.1
    ids = nd.dbscan(np.vstack([a, b]), 0.15, 3)
    assert list(ids) == [0] * 10 + [1] * 10


def test_metrics_and_panoptic():
    s = np.array([0.1, 0.4, 0.35, 0.8])
    y = np.array([0, 0, 1, 1], np.uint8)
    assert nd.auroc(s, y) == pytest.approx(0.75)
    p = nd.panoptic_scores([list(range(60)), list(range(200, 210))], [list(range(100))])
    assert p["pq"] == 0.4 and p["uq"] == 0.6


def test_scene_and_raise():
    spec = nd.ClassSpec.synthetic_default()
    scene = nd.generate_scene(4000, 5, spec)
    assert scene["points"].shape == (4000, 3)
    out = nd.perlin_raise(scene["points"], scene["semantic"], scene["instance"], spec, seed=2)
    raised = out["raised"]
    assert len(raised) > 0
    dz = out["points"][raised, 2].astype(np.float64) - scene["points"][raised, 2]
    assert np.all(dz >= 0) and np.all(dz <= 0.4)
    assert np.all(scene["semantic"][raised] == spec.road_id)
    assert np.all(out["semantic"][raised] == spec.aux_ood_id)


def test_io_round_trip(tmp_path):
    pts = np.random.default_rng(1).normal(size=(50, 3)).astype(np.float32)
    nd.write_points(tmp_path / "a.bin", pts)
    np.testing.assert_array_equal(nd.read_points(tmp_path / "a.bin"), pts)
    # Score files hold float32.
    s = np.linspace(0, 1, 50)
    nd.write_scores(tmp_path / "a.score", s)
    np.testing.assert_array_equal(nd.read_scores(tmp_path / "a.score"), s.astype(np.float32))


def test_bad_shape_raises():
    with pytest.raises(ValueError):
        nd.dbscan(np.zeros((4, 2), np.float32), 0.5, 2)


def test_tiny_pipeline(tmp_path):
    cfg = "\n".join([
        "scene.train_scenes = 4",
        "scene.test_scenes = 2",
        "train.epochs = 1",
        "train.lr = 0.01",
    ])
    report = nd.run_pipeline(cfg, tmp_path / "run")
    for k in ("point.auroc", "point.ap", "point.fpr95", "object.pq", "object.uq"):
        assert k in report
    model = nd.load_model(tmp_path / "run" / "model.ckpt")
    pts = nd.read_points(sorted((tmp_path / "run" / "test").glob("*.bin"))[0])
    scores = model.score(pts).astype(np.float32)
    np.testing.assert_array_equal(scores, nd.read_scores(sorted((tmp_path / "run" / "scores").glob("*.score"))[0]))
