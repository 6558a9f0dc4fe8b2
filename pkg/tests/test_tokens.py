from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from socialmae.dct import encode_scene
from socialmae.scene import Scene, center_scene
from socialmae.tokens import MaskPlan, apply_mask, build_tokens, mask_count, sample_tube_mask

from conftest import make_scene


def tokens_for(scene):
    c = center_scene(scene)
    return build_tokens(c, encode_scene(c))


def test_token_count():
    assert len(tokens_for(make_scene(n=3, j=13, t=5))) == 39


def test_index_bijection():
    batch = tokens_for(make_scene(n=3, j=4))
    pairs = set(zip(batch.person_index.tolist(), batch.joint_type_index.tolist()))
    assert len(pairs) == 12
    for k in range(12):
        assert (batch.person_index[k], batch.joint_type_index[k]) == (k // 4, k % 4)


def test_pelvis_token_carries_offset():
    scene = make_scene(n=2, j=3, t=4)
    c = center_scene(scene)
    batch = build_tokens(c, encode_scene(c))
    np.testing.assert_array_equal(batch.global_offset[3], scene.trajectories[1, 0, -1])
    np.testing.assert_array_equal(batch.global_offset[3], c.global_offsets[1])


def test_content_axis_major():
    scene = make_scene(n=1, j=2, t=4, d=3)
    c = center_scene(scene)
    block = encode_scene(c)
    batch = build_tokens(c, block)
    assert batch.content.shape == (2, 12)
    np.testing.assert_array_equal(batch.content[1, 4:8], block.coeffs[0, 1, 1])


def test_shape_mismatch_rejected():
    c = center_scene(make_scene())
    block = encode_scene(center_scene(make_scene(n=3)))
    with pytest.raises(ValueError):
        build_tokens(c, block)


def test_person_permutation_keeps_token_multiset():
    scene = make_scene(n=3, j=4, t=5, seed=9)
    perm = [2, 0, 1]
    permuted = Scene(trajectories=scene.trajectories[perm], visibility=scene.visibility[perm])
    a, b = tokens_for(scene), tokens_for(permuted)

    def bag(batch):
        return Counter((tuple(np.round(row, 12)), int(jt)) for row, jt in zip(batch.content, batch.joint_type_index))

    assert bag(a) == bag(b)
    assert not np.array_equal(a.content, b.content)


def test_half_up_rounding():
    assert mask_count(39, 0.5) == 20
    assert mask_count(10, 0.45) == 5  # 4.5 rounds up, not to even
    assert mask_count(8, 0.5) == 4
    assert len(sample_tube_mask(39, 0.5, 0).masked) == 20


def test_sampling_deterministic():
    assert sample_tube_mask(30, 0.5, 42) == sample_tube_mask(30, 0.5, 42)
    assert sample_tube_mask(30, 0.5, 42) != sample_tube_mask(30, 0.5, 43)


def test_mask_frequency_uniform():
    counts = np.zeros(10)
    for seed in range(10_000):
        counts[list(sample_tube_mask(10, 0.5, seed).masked)] += 1
    freq = counts / 10_000
    assert np.all(np.abs(freq - 0.5) <= 0.02)


@pytest.mark.parametrize("k,ratio", [(1, 0.5), (2, 0.1), (4, 0.9), (5, 0.0), (5, 1.0)])
def test_infeasible_masks(k, ratio):
    with pytest.raises(ValueError):
        sample_tube_mask(k, ratio, 0)


def test_apply_mask_cardinality():
    batch = tokens_for(make_scene(n=2, j=4))
    plan = sample_tube_mask(8, 0.5, 1)
    visible, masked = apply_mask(batch, plan)
    assert len(visible) == 4
    assert masked == list(plan.masked)
    np.testing.assert_array_equal(visible.content, batch.content[list(plan.visible)])


def test_apply_empty_plan_returns_everything():
    batch = tokens_for(make_scene(n=2, j=3))
    visible, masked = apply_mask(batch, MaskPlan.unmasked(6))
    assert masked == []
    np.testing.assert_array_equal(visible.content, batch.content)


def test_apply_mask_out_of_range():
    batch = tokens_for(make_scene(n=1, j=3))
    with pytest.raises(ValueError):
        apply_mask(batch, MaskPlan(masked=(5,), visible=(0, 1), ratio=0.5))
    with pytest.raises(ValueError):
        MaskPlan(masked=(1,), visible=(1, 2), ratio=0.5)


@given(st.integers(2, 60), st.floats(0.05, 0.95), st.integers(0, 2**31))
def test_plan_partitions_indices(k, ratio, seed):
    m = mask_count(k, ratio)
    if not 1 <= m <= k - 1:
        return
    plan = sample_tube_mask(k, ratio, seed)
    assert len(plan.masked) == m
    assert sorted(plan.masked + plan.visible) == list(range(k))
    assert not set(plan.masked) & set(plan.visible)


def test_sentinel_never_reaches_visible_view():
    scene = make_scene(n=3, j=4, t=6)
    batch = tokens_for(scene)
    for seed in range(50):
        plan = sample_tube_mask(len(batch), 0.5, seed)
        content = batch.content.copy()
        content[list(plan.masked)] = -7.77e30
        poisoned = type(batch)(**{**batch.__dict__, "content": content})
        visible, _ = apply_mask(poisoned, plan)
        assert not np.any(visible.content == -7.77e30)
