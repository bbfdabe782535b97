import json

import numpy as np
import numpy.testing as npt
import pytest
from dataclasses import replace

from dualmotion.common import ArgumentError, ArtifactIOError, StructureError
from dualmotion.motion_data import (
    BodyPart, BodySplit, GaitConfigSampler, GestureMode, MotionSequence, Skeleton, SyntheticGaitConfig,
    build_aux_sequence, generate_synthetic_dataset, load_motion, make_train_test_split, merge_parts,
    prune_sequence, prune_skeleton, remove_global_translation, save_motion, split_sequence, synthesize_motion,
    window_sequence,
)


def _chain(n):
    return Skeleton(tuple(f"j{i}" for i in range(n)), tuple([-1] + list(range(n - 1))))


# -- skeleton and split --------------------------------------------------------

def test_skeleton_rejects_two_roots():
    with pytest.raises(StructureError):
        Skeleton(("a", "b"), (-1, -1))


def test_skeleton_rejects_cycles():
    with pytest.raises(StructureError):
        Skeleton(("a", "b", "c"), (-1, 2, 1))


def test_skeleton_rejects_out_of_range_parent():
    with pytest.raises(StructureError):
        Skeleton(("a", "b"), (-1, 5))


def test_topological_order_puts_parents_first():
    skeleton = Skeleton(("c", "root", "b"), (2, -1, 1))
    order = skeleton.topological_order()
    assert order == [1, 2, 0]


def test_walker_shape(walker, walker_split):
    assert walker.joint_count == 12
    assert walker.dim == 36
    walker_split.validate_for(walker)


def test_split_rejects_overlap():
    with pytest.raises(StructureError):
        BodySplit((0, 1), (1, 2))


def test_split_must_cover_skeleton():
    with pytest.raises(StructureError):
        BodySplit((0,), (1,)).validate_for(_chain(3))


def test_split_first_part_takes_its_columns():
    seq = MotionSequence(_chain(2), np.arange(12, dtype=float).reshape(2, 6))
    part = split_sequence(seq, BodySplit((0,), (1,)), BodyPart.PART1)
    npt.assert_array_equal(part, seq.frames[:, :3])


def test_split_merge_round_trip_over_random_splits(rng):
    skeleton = _chain(4)
    seq = MotionSequence(skeleton, rng.normal(size=(5, 12)))
    for _ in range(10):
        perm = rng.permutation(4)
        cut = int(rng.integers(1, 4))
        split = BodySplit(tuple(perm[:cut]), tuple(perm[cut:]))
        merged = merge_parts(split_sequence(seq, split, "part1"), split_sequence(seq, split, "part2"), split)
        npt.assert_array_equal(merged, seq.frames)


# -- preprocessing --------------------------------------------------------------

def test_remove_global_translation_is_translation_invariant(rng):
    seq = MotionSequence(_chain(3), rng.normal(size=(4, 9)))
    shifted = seq.with_frames(seq.frames + np.tile([1.0, 2.0, 3.0], 3))
    npt.assert_allclose(remove_global_translation(shifted).frames, remove_global_translation(seq).frames,
                        atol=1e-12)


def test_remove_global_translation_zeroes_root_and_is_idempotent(rng):
    seq = MotionSequence(_chain(3), rng.normal(size=(4, 9)))
    once = remove_global_translation(seq)
    assert np.all(once.frames[:, :3] == 0.0)
    npt.assert_array_equal(remove_global_translation(once).frames, once.frames)


def test_aux_sequence_midpoint():
    skeleton = _chain(1)
    future = MotionSequence(skeleton, np.array([[0.0] * 3, [7.0] * 3, [1.0] * 3]))
    npt.assert_allclose(build_aux_sequence(future).frames[1], [0.5] * 3)


def test_aux_sequence_keeps_linear_future():
    future = MotionSequence(_chain(1), np.linspace(0.0, 1.0, 5)[:, None] * np.array([[1.0, 2.0, 3.0]]))
    npt.assert_allclose(build_aux_sequence(future).frames, future.frames, atol=1e-12)


def test_aux_sequence_is_linear_with_exact_endpoints(rng):
    future = MotionSequence(_chain(2), rng.normal(size=(32, 6)))
    aux = build_aux_sequence(future).frames
    assert np.array_equal(aux[0], future.frames[0])
    assert np.array_equal(aux[-1], future.frames[-1])
    npt.assert_allclose(np.diff(aux, n=2, axis=0), 0.0, atol=1e-12)


def test_aux_sequence_needs_two_frames():
    with pytest.raises(ArgumentError):
        build_aux_sequence(MotionSequence(_chain(1), np.zeros((1, 3))))


def test_prune_skeleton_reparents_to_nearest_kept_ancestor(walker):
    pruned, index_map = prune_skeleton(walker, [0, 1, 4, 8, 9])
    assert pruned.joint_names == ("root", "spine", "l_wrist", "l_hip", "l_knee")
    # l_wrist hangs from spine once shoulder and elbow are gone
    assert pruned.parents == (-1, 0, 1, 0, 3)
    npt.assert_allclose(pruned.rest_offsets[2], (0.18, 0.05 - 0.28 - 0.25, 0.0))
    assert index_map == {0: 0, 1: 1, 4: 2, 8: 3, 9: 4}


def test_prune_requires_root(walker):
    with pytest.raises(StructureError):
        prune_skeleton(walker, [1, 2])


def test_prune_sequence_keeps_columns(rng):
    seq = MotionSequence(_chain(3), rng.normal(size=(2, 9)))
    pruned = prune_sequence(seq, [0, 2])
    npt.assert_array_equal(pruned.frames, seq.frames[:, [0, 1, 2, 6, 7, 8]])


def test_window_sequence_counts_pairs(rng):
    seq = MotionSequence(_chain(1), rng.normal(size=(20, 3)))
    pairs = window_sequence(seq, 4, 6, stride=5)
    assert len(pairs) == 3
    npt.assert_array_equal(pairs[1][1].frames, seq.frames[9:15])


def test_train_test_split_is_disjoint_and_seeded():
    train, test = make_train_test_split(50, 0.2, seed=3)
    assert not set(train) & set(test)
    assert sorted(train + test) == list(range(50))
    assert len(test) == 10
    assert (train, test) == make_train_test_split(50, 0.2, seed=3)


# -- motion files ---------------------------------------------------------------

def test_motion_file_round_trip(tmp_path, walker, rng):
    seq = MotionSequence(walker, rng.normal(size=(3, 36)), fps=25.0)
    loaded = load_motion(save_motion(seq, tmp_path / "m.json"))
    assert loaded.skeleton == walker
    assert loaded.fps == 25.0
    assert np.array_equal(loaded.frames, seq.frames)


def test_motion_file_field_order(tmp_path):
    path = save_motion(MotionSequence(_chain(1), np.zeros((1, 3))), tmp_path / "m.json")
    assert path.read_text().startswith('{"fps"')
    assert list(json.loads(path.read_text())) == ["fps", "joints", "parents", "frames"]


def test_load_motion_reports_path(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ArtifactIOError) as info:
        load_motion(bad)
    assert info.value.path == str(bad)


# -- synthetic walker -----------------------------------------------------------

def test_synthetic_pair_shapes(walker):
    sampler = GaitConfigSampler.fixed(SyntheticGaitConfig(seed=7))
    pairs = generate_synthetic_dataset(walker, 1, 16, 32, sampler, seed=7)
    past, future = pairs[0]
    assert past.frames.shape == (16, 36)
    assert future.frames.shape == (32, 36)


def test_synthetic_dataset_is_deterministic(walker):
    first = generate_synthetic_dataset(walker, 3, 8, 8, seed=7)
    second = generate_synthetic_dataset(walker, 3, 8, 8, seed=7)
    for (p1, f1), (p2, f2) in zip(first, second):
        assert np.array_equal(p1.frames, p2.frames)
        assert np.array_equal(f1.frames, f2.frames)


def test_zero_count_is_empty(walker):
    assert generate_synthetic_dataset(walker, 0, 4, 4) == []


def test_short_horizons_rejected(walker):
    with pytest.raises(ArgumentError):
        generate_synthetic_dataset(walker, 1, 1, 4)


def test_skeleton_without_offsets_rejected():
    with pytest.raises(StructureError):
        generate_synthetic_dataset(_chain(2), 1, 4, 4)


def test_root_is_pinned(walker):
    seq = synthesize_motion(walker, SyntheticGaitConfig(turn_rate=0.02, noise_std=0.01, seed=1), 20)
    assert np.all(seq.frames[:, :3] == 0.0)


def test_gesture_changes_only_upper_body(walker, walker_split):
    base = SyntheticGaitConfig(stride_amplitude=0.5, arm_swing_amplitude=0.3, noise_std=0.01, seed=4)
    other = replace(base, gesture_mode=GestureMode.WAVE, arm_swing_amplitude=0.1, gesture_frequency=1.3)
    a, b = synthesize_motion(walker, base, 24), synthesize_motion(walker, other, 24)
    lower, upper = walker_split.columns("part1"), walker_split.columns("part2")
    assert np.array_equal(a.frames[:, lower], b.frames[:, lower])
    assert np.abs(a.frames[:, upper] - b.frames[:, upper]).max() > 0.05


def test_stride_changes_only_lower_body(walker, walker_split):
    base = SyntheticGaitConfig(gesture_mode=GestureMode.CLAP, noise_std=0.01, seed=4)
    other = replace(base, stride_amplitude=0.1, stride_frequency=1.5, turn_rate=0.03)
    a, b = synthesize_motion(walker, base, 24), synthesize_motion(walker, other, 24)
    upper, lower = walker_split.columns("part2"), walker_split.columns("part1")
    assert np.array_equal(a.frames[:, upper], b.frames[:, upper])
    assert np.abs(a.frames[:, lower] - b.frames[:, lower]).max() > 0.05


def test_bone_lengths_are_preserved(walker):
    seq = synthesize_motion(walker, SyntheticGaitConfig(gesture_mode=GestureMode.REACH, turn_rate=0.02), 12)
    joints = seq.joints()
    for joint, parent in enumerate(walker.parents):
        if parent < 0:
            continue
        lengths = np.linalg.norm(joints[:, joint] - joints[:, parent], axis=-1)
        npt.assert_allclose(lengths, np.linalg.norm(walker.rest_offsets[joint]), atol=1e-12)


def test_regime_switch_is_continuous(walker):
    past = SyntheticGaitConfig(stride_frequency=0.7, phase=0.3)
    future = replace(past, stride_frequency=1.5)
    seq = synthesize_motion(walker, past, 40, future_config=future, switch_frame=16)
    steps = np.abs(np.diff(seq.frames, axis=0)).max(axis=1)
    assert steps.max() < 0.1


def test_config_validation():
    with pytest.raises(ArgumentError):
        SyntheticGaitConfig(stride_amplitude=-1.0)
    with pytest.raises(ArgumentError):
        SyntheticGaitConfig(stride_frequency=0.0)
