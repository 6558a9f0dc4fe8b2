import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from socialmae.errors import DegenerateInputError, SceneFormatError, SceneValidationError
from socialmae.scene import (
    Scene,
    SynthConfig,
    center_scene,
    load_scene,
    pad_scene,
    save_scene,
    scene_from_dict,
    scene_to_dict,
    synth_scene,
)

from conftest import make_scene


def _doc(n=2, j=3, t=4, d=2, **extra):
    doc = {
        "coord_dim": d,
        "fps": 15.0,
        "pelvis_index": 0,
        "persons": [
            {"id": f"a{i}", "trajectory": np.ones((t, j, d)).tolist(), "visibility": np.ones((t, j)).tolist()}
            for i in range(n)
        ],
    }
    doc.update(extra)
    return doc


def test_load_scene_shapes(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(_doc()))
    scene = load_scene(path)
    assert scene.trajectories.shape == (2, 3, 4, 2)
    assert scene.visibility.shape == (2, 3, 4)
    assert scene.person_ids == ("a0", "a1")


def test_person_in_two_groups_rejected(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(_doc(groups=[[0, 1], [1]])))
    with pytest.raises(SceneValidationError):
        load_scene(path)


def test_invisible_nonzero_rejected(tmp_path):
    doc = _doc()
    doc["persons"][0]["visibility"][2][1] = 0
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(SceneValidationError):
        load_scene(path)


def test_format_error_names_field():
    doc = _doc()
    del doc["persons"][1]["visibility"]
    with pytest.raises(SceneFormatError, match="visibility"):
        scene_from_dict(doc)
    with pytest.raises(SceneFormatError, match="coord_dim"):
        scene_from_dict({k: v for k, v in _doc().items() if k != "coord_dim"})


def test_partition_must_cover_everyone():
    with pytest.raises(SceneValidationError):
        make_scene(n=3, group_labels=[[0, 1]])


def test_json_round_trip_all_fields(tmp_path):
    scene = synth_scene(SynthConfig(num_persons=5, num_groups=2, coord_dim=2), seed=4)
    path = tmp_path / "scene.json"
    save_scene(scene, path)
    back = load_scene(path)
    assert back == scene
    np.testing.assert_array_equal(back.trajectories, scene.trajectories)
    assert back.group_labels == scene.group_labels
    np.testing.assert_array_equal(back.interaction_actions, scene.interaction_actions)


def test_center_single_person_2d():
    traj = np.zeros((1, 2, 3, 2))
    traj[0, 0, :] = [[0, 0], [1, 1], [2, 3]]
    traj[0, 1, :] = [[5, 5], [6, 6], [7, 7]]
    scene = Scene(trajectories=traj, visibility=np.ones((1, 2, 3), bool))
    c = center_scene(scene)
    np.testing.assert_array_equal(c.global_offsets, [[2, 3]])
    np.testing.assert_array_equal(c.scene.trajectories, traj - [2, 3])


def test_center_already_centered_is_identity():
    traj = np.random.default_rng(1).normal(size=(2, 3, 5, 3))
    traj[:, 0, -1] = 0.0
    scene = Scene(trajectories=traj, visibility=np.ones((2, 3, 5), bool))
    c = center_scene(scene)
    np.testing.assert_array_equal(c.global_offsets, 0.0)
    np.testing.assert_array_equal(c.scene.trajectories, traj)


def test_center_partial_visibility():
    t = 15
    traj = np.zeros((1, 2, t, 3))
    vis = np.zeros((1, 2, t), bool)
    vis[0, :, :10] = True
    traj[0, :, :10] = np.random.default_rng(2).normal(size=(2, 10, 3))
    traj[0, 0, 9] = [1, 1, 1]
    c = center_scene(Scene(trajectories=traj, visibility=vis))
    np.testing.assert_array_equal(c.global_offsets, [[1, 1, 1]])
    np.testing.assert_array_equal(c.scene.trajectories[0, :, 10:], 0.0)
    np.testing.assert_array_equal(c.scene.trajectories[0, 0, 9], 0.0)


def test_center_without_visible_pelvis():
    traj = np.zeros((1, 2, 3, 3))
    vis = np.zeros((1, 2, 3), bool)
    vis[0, 1] = True
    traj[0, 1] = 1.0
    with pytest.raises(DegenerateInputError):
        center_scene(Scene(trajectories=traj, visibility=vis))


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 4), st.integers(1, 8), st.sampled_from([2, 3]))
def test_center_restore_round_trip(seed, n, j, t, d):
    rng = np.random.default_rng(seed)
    vis = rng.random((n, j, t)) < 0.7
    vis[:, 0, rng.integers(0, t)] = True
    traj = np.where(vis[..., None], rng.normal(scale=10, size=(n, j, t, d)), 0.0)
    scene = Scene(trajectories=traj, visibility=vis)
    c = center_scene(scene)
    np.testing.assert_allclose(c.restore().trajectories, traj, atol=1e-9, rtol=0)
    for i in range(n):
        last = np.flatnonzero(vis[i, 0])[-1]
        assert np.all(c.scene.trajectories[i, 0, last] == 0.0)


def test_pad_adds_invisible_person():
    scene = make_scene(n=2, group_labels=[[0, 1]])
    padded = pad_scene(scene, 3, 3, 4)
    assert padded.num_persons == 3
    assert not padded.visibility[2].any()
    np.testing.assert_array_equal(padded.trajectories[2], 0.0)
    assert padded.padded.tolist() == [False, False, True]
    assert padded.group_labels == ((0, 1), (2,))
    assert padded.real_groups() == [[0, 1]]


def test_pad_identity():
    scene = make_scene()
    assert pad_scene(scene, 2, 3, 4) == scene


def test_pad_frames():
    scene = make_scene(t=10)
    padded = pad_scene(scene, 2, 3, 15)
    assert not padded.visibility[:, :, 10:].any()
    assert padded.visibility[:, :, :10].all()


def test_pad_rejects_shrinking():
    with pytest.raises(ValueError):
        pad_scene(make_scene(), 1, 3, 4)


@given(st.integers(0, 1000), st.integers(0, 2), st.integers(0, 2), st.integers(0, 5))
def test_pad_preserves_existing_values(seed, dn, dj, dt):
    scene = make_scene(n=2, j=2, t=3, seed=seed)
    padded = pad_scene(scene, 2 + dn, 2 + dj, 3 + dt)
    np.testing.assert_array_equal(padded.trajectories[:2, :2, :3], scene.trajectories)
    np.testing.assert_array_equal(padded.visibility[:2, :2, :3], scene.visibility)
    padded.validate()


def test_synth_deterministic():
    cfg = SynthConfig()
    a, b = synth_scene(cfg, 7), synth_scene(cfg, 7)
    assert json.dumps(scene_to_dict(a)) == json.dumps(scene_to_dict(b))
    assert synth_scene(cfg, 8) != a


def test_synth_groupmates_share_pelvis_velocity():
    scene = synth_scene(SynthConfig(num_persons=4, num_groups=2, noise=0.0), seed=3)
    vel = np.diff(scene.trajectories[:, 0], axis=1)  # [N, T-1, D]
    for group in scene.group_labels:
        for i in group[1:]:
            np.testing.assert_allclose(vel[i], vel[group[0]], atol=1e-12)
    a, b = scene.group_labels[0][0], scene.group_labels[1][0]
    assert not np.allclose(vel[a], vel[b])


def test_synth_group_count():
    scene = synth_scene(SynthConfig(num_persons=6, num_groups=3), seed=11)
    assert len(scene.group_labels) == 3
    assert sorted(i for g in scene.group_labels for i in g) == list(range(6))


def test_synth_too_many_groups():
    with pytest.raises(ValueError):
        synth_scene(SynthConfig(num_persons=2, num_groups=3), seed=0)


def test_synth_labels_in_range():
    cfg = SynthConfig(num_persons=5, num_groups=2)
    for seed in range(10):
        s = synth_scene(cfg, seed)
        assert s.pose_actions.min() >= 0 and s.pose_actions.max() < cfg.num_pose_classes
        assert s.interaction_actions.shape == (5, cfg.num_interactions)
        # only persons with a groupmate carry interaction labels
        for g in s.group_labels:
            for i in g:
                assert s.interaction_actions[i].any() == (len(g) > 1)


def test_window_slices_frames():
    scene = make_scene(t=6)
    w = scene.window(2, 5)
    np.testing.assert_array_equal(w.trajectories, scene.trajectories[:, :, 2:5])
