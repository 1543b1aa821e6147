import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tacsal.datagen import (EDGE_RANGES, PairedSample, PoseRanges, build_condepnet_dataset,
                            build_posenet_dataset, build_saliency_dataset, cone_beside_edge,
                            gaussian_noise_depth, label_to_pose, pose_label, read_dataset,
                            sample_cone_pool, sample_contact_poses, sample_gaussian_pool,
                            split_indices, write_dataset)
from tacsal.imagery import minmax_normalize
from tacsal.simworld import ContactPose, render_edge_depth, sensor_grid


def test_pose_sampling_within_ranges():
    r = PoseRanges(y=(-2.0, 1.0), z=(4.0, 5.0), rz=(-30.0, 30.0))
    poses = sample_contact_poses(500, r, seed=3)
    ys = np.array([p.y for p in poses])
    assert ys.min() >= -2 and ys.max() <= 1
    assert all(4 <= p.z <= 5 and -30 <= p.rz <= 30 for p in poses)
    assert poses == sample_contact_poses(500, r, seed=3)
    assert poses != sample_contact_poses(500, r, seed=4)


def test_degenerate_range_is_constant():
    poses = sample_contact_poses(5, PoseRanges(y=(1.0, 1.0)), 0)
    assert all(p.y == 1.0 for p in poses)


def test_bad_ranges_rejected():
    with pytest.raises(ValueError):
        PoseRanges(y=(2.0, 1.0))
    with pytest.raises(ValueError):
        sample_contact_poses(0)


@given(st.integers(1, 300), st.floats(0, 1), st.integers(0, 1000))
def test_split_is_a_partition(n, frac, seed):
    train, hold = split_indices(n, frac, seed)
    assert len(set(train) & set(hold)) == 0
    assert sorted([*train, *hold]) == list(range(n))
    assert len(hold) == round(n * frac)


def test_condepnet_pairs_are_renderer_labelled():
    data = build_condepnet_dataset(20, seed=1)
    for s in data:
        y, rz, z = s.meta["pose"]
        assert np.array_equal(s.target, render_edge_depth(ContactPose(y, rz, z)))
        assert s.input.shape == s.target.shape == (64, 64)
        assert s.meta["source"] == "edge"
    assert sum(s.meta["split"] == "holdout" for s in data) == 2


def test_condepnet_items_do_not_depend_on_count():
    a = build_condepnet_dataset(5, seed=2)
    b = build_condepnet_dataset(8, seed=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.input, y.input)


def test_paired_sample_shape_check():
    with pytest.raises(ValueError):
        PairedSample(np.zeros((64, 64)), np.zeros((32, 32)))


def test_cone_pool_support_inside_aperture():
    _, _, inside = sensor_grid()
    for m in sample_cone_pool(30, seed=5):
        assert m.max() > 0
        assert np.all(m[~inside] == 0)
        assert 0 <= m.min() and m.max() <= 1


def test_gaussian_noise_closed_form():
    u, v, inside = sensor_grid()
    cov = np.array([[4.0, 1.0], [1.0, 2.0]])
    g = gaussian_noise_depth(0.7, (1.0, -2.0), cov)
    d = np.stack([u - 1.0, v + 2.0], axis=-1)
    q = np.einsum("...i,ij,...j->...", d, np.linalg.inv(cov), d)
    assert np.allclose(g, np.where(inside, 0.7 * np.exp(-0.5 * q), 0.0))


@pytest.mark.parametrize("cov", [np.eye(2) * -1, np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros((2, 2))])
def test_gaussian_noise_rejects_bad_cov(cov):
    with pytest.raises(ValueError):
        gaussian_noise_depth(0.5, (0, 0), cov)


def test_gaussian_pool_deterministic():
    a, b = sample_gaussian_pool(4, 9), sample_gaussian_pool(4, 9)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_saliency_targets_are_normalised_clean_maps():
    targets = [render_edge_depth(p) for p in sample_contact_poses(10, EDGE_RANGES, 0)]
    pool = sample_cone_pool(10, 1)
    data = build_saliency_dataset(targets, pool, pairing_seed=7, n=40)
    for i, s in enumerate(data):
        k = s.meta["target_index"]
        assert k == i % 10
        assert np.array_equal(s.target, minmax_normalize(targets[k]))
        # overlay never removes depth
        assert np.all(s.input >= targets[k] - 1e-12)
        assert 1 <= len(s.meta["noise_indices"]) <= 3
        assert s.input.max() <= 1.0


def test_saliency_clean_and_empty_records():
    targets = [render_edge_depth(p) for p in sample_contact_poses(4, EDGE_RANGES, 0)]
    pool = sample_cone_pool(5, 1)
    data = build_saliency_dataset(targets, pool, 3, n=400, clean_fraction=0.2, empty_fraction=0.1)
    empty = [s for s in data if s.meta["empty"]]
    clean = [s for s in data if not s.meta["noise_indices"]]
    assert 20 <= len(empty) <= 65 and 50 <= len(clean) <= 120
    for s in empty:
        assert s.target.max() == 0
    for s in clean:
        if not s.meta["empty"]:
            assert np.array_equal(s.input, targets[s.meta["target_index"]])


def test_saliency_pairing_seed_changes_composites():
    targets = [render_edge_depth(ContactPose(0.0, 0.0, 5.0))]
    pool = sample_cone_pool(5, 1)
    a = build_saliency_dataset(targets, pool, 1, n=3)
    b = build_saliency_dataset(targets, pool, 2, n=3)
    assert not all(np.array_equal(x.input, y.input) for x, y in zip(a, b))
    with pytest.raises(ValueError):
        build_saliency_dataset([], pool, 1)


@given(st.floats(-6, 6), st.floats(-179, 179))
def test_pose_label_round_trip(y, rz):
    lab = pose_label(ContactPose(y, rz, 4.0))
    assert lab[1] ** 2 + lab[2] ** 2 == pytest.approx(1.0)
    y2, rz2 = label_to_pose(lab)
    assert y2 == pytest.approx(y)
    assert rz2 == pytest.approx(rz, abs=1e-9)


@given(st.floats(-3, 3), st.floats(-45, 45), st.floats(7, 14), st.floats(-10, 10))
def test_cone_beside_edge_geometry(y, rz, offset, slide):
    pose = ContactPose(y, rz, 4.0)
    cone = cone_beside_edge(pose, offset, slide, np.random.default_rng(0))
    u, v = cone.center
    a = math.radians(rz)
    # signed distance from the edge line, positive on the free side
    assert y + u * math.cos(a) - v * math.sin(a) == pytest.approx(offset, abs=1e-9)


@pytest.mark.parametrize("mode", ["none", "cones", "gaussian"])
def test_posenet_dataset_labels(mode):
    data = build_posenet_dataset(15, EDGE_RANGES, mode, seed=4)
    for s in data:
        assert np.allclose(s.label, pose_label(s.pose))
        clean = render_edge_depth(s.pose)
        if mode == "none":
            assert np.array_equal(s.depth, clean)
        else:
            assert np.all(s.depth >= clean - 1e-12)
            assert 7 <= s.meta["offset"] <= 14


def test_posenet_dataset_rejects_unknown_mode():
    with pytest.raises(ValueError):
        build_posenet_dataset(3, noise_mode="speckle")


def test_dataset_round_trip(tmp_path):
    data = build_condepnet_dataset(6, seed=0)
    recs = [{"input": s.input, "target": s.target, "pose": s.meta["pose"]} for s in data]
    write_dataset(tmp_path, "pairs", recs)
    records, x, y = read_dataset(tmp_path, "pairs")
    assert [r["pose"] for r in records] == [s.meta["pose"] for s in data]
    assert np.max(np.abs(x - np.stack([s.input for s in data]))) <= 0.5 / 255 + 1e-12
    assert np.max(np.abs(y - np.stack([s.target for s in data]))) <= 0.5 / 255 + 1e-12
    # content addressing: rewriting adds no new objects
    before = sorted(p.name for p in (tmp_path / "objects").rglob("*.pgm"))
    write_dataset(tmp_path, "pairs2", recs)
    assert sorted(p.name for p in (tmp_path / "objects").rglob("*.pgm")) == before
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path, "missing")
