"""Smoke tests for the python bindings.

Runs standalone (python3 test_smoke.py) or under pytest.
"""

import math

import numpy as np

import pmf


def test_version_and_constants():
    assert pmf.__version__
    assert pmf.IGNORE == -1


def test_projection_round_trip():
    scene = pmf.synth_scene(seed=3, points=600, height=32, width=32, classes=4)
    scan = pmf.project_perspective(
        scene["points"], scene["labels"], scene["T"], scene["R0"], 32, 32
    )
    features = scan["features"]
    assert features.shape == (5, 32, 32)
    valid = scan["valid_mask"]
    assert valid.any()
    # d channel equals the point range at every valid pixel
    d = features[0]
    xyz = features[1:4]
    norms = np.sqrt((xyz ** 2).sum(axis=0))
    assert np.abs(d[valid] - norms[valid]).max() < 1e-9
    # invalid pixels carry all-zero features
    assert np.abs(features[:, ~valid]).max() == 0.0


def test_spherical_projection():
    scene = pmf.synth_scene(seed=4, points=400, height=32, width=32, classes=4)
    scan = pmf.project_spherical(
        scene["points"], scene["labels"], fov_up=60.0, fov_down=-60.0, height=32, width=32
    )
    assert scan["features"].shape == (5, 32, 32)
    assert scan["valid_mask"].any()


def test_loss_surface():
    probs = np.full((2, 1, 1), 0.5)
    labels = np.zeros((1, 1), dtype=np.int32)
    ce = pmf.focal_loss(probs, labels, gamma=0.0)
    assert abs(ce - math.log(2.0)) < 1e-12
    assert pmf.focal_loss(np.array([[[1.0]], [[0.0]]]), labels, gamma=2.0) == 0.0

    uniform = np.full((4, 1, 1), 0.25)
    assert pmf.entropy_map(uniform)[0, 0] == 1.0
    assert pmf.confidence_map(uniform)[0, 0] == 0.0

    gate = np.array([[0.9]])
    other = np.array([[0.6]])
    assert abs(pmf.importance_map(gate, other, tau=0.7)[0, 0] - 0.3) < 1e-12
    assert pmf.importance_map(np.array([[0.65]]), other, tau=0.7)[0, 0] == 0.0

    p = np.array([[[0.7]], [[0.3]]])
    assert pmf.kl_map(p, p)[0, 0] == 0.0

    hard = np.zeros((3, 2, 2))
    lab = np.array([[0, 1], [2, 1]], dtype=np.int32)
    for (h, w), c in np.ndenumerate(lab):
        hard[c, h, w] = 1.0
    assert pmf.lovasz_softmax(hard, lab) < 1e-12


def test_miou():
    pred = np.array([0, 1, 1, 0], dtype=np.int32)
    truth = np.array([0, 1, 0, 0], dtype=np.int32)
    rep = pmf.miou(pred, truth, num_classes=2)
    assert abs(rep["iou"][0] - 2.0 / 3.0) < 1e-12
    assert abs(rep["iou"][1] - 0.5) < 1e-12
    assert abs(rep["miou"] - (2.0 / 3.0 + 0.5) / 2.0) < 1e-12


def test_cosine_lr():
    assert pmf.cosine_lr(0, 100, 0.001) == 0.001
    assert abs(pmf.cosine_lr(50, 100, 0.001) - 0.0005) < 1e-12
    assert abs(pmf.cosine_lr(100, 100, 0.001)) < 1e-18


def test_short_training_run():
    out = pmf.train_synthetic(seed=2, scenes=2, points=500, steps=30, batch_size=2)
    assert out["lidar_total"].shape == (30,)
    assert np.isfinite(out["lidar_total"]).all()
    assert out["lidar_total"][-1] < out["lidar_total"][0]
    assert 0.0 <= out["valid_pixel_accuracy"] <= 1.0


def test_errors_are_typed():
    try:
        pmf.entropy_map(np.array([[[0.9]], [[0.3]]]))
    except Exception as e:  # noqa: BLE001
        assert "entropy_map" in str(e)
    else:
        raise AssertionError("expected a validation error")


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print(f"ok: {test.__name__}")
    print(f"{len(tests)} python smoke tests passed")


if __name__ == "__main__":
    main()
