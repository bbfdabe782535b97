"""
Motion Data Model and Synthetic Walker Generator

This module provides the skeleton/sequence data model, body splitting,
preprocessing, the motion file format and a forward-kinematics generator
of synthetic walking motions whose upper- and lower-body factors are
independent by construction.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.spatial.transform import Rotation

from .common import ArgumentError, ArtifactIOError, StructureError

logger = logging.getLogger(__name__)

WALKER_JOINTS = (
    "root", "spine",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "r_hip", "r_knee",
)
WALKER_PARENTS = (-1, 0, 1, 2, 3, 1, 5, 6, 0, 8, 0, 10)
# Rest bone vectors (parent -> joint), y up, z forward, x to the walker's left.
WALKER_OFFSETS = (
    (0.0, 0.0, 0.0), (0.0, 0.5, 0.0),
    (0.18, 0.05, 0.0), (0.0, -0.28, 0.0), (0.0, -0.25, 0.0),
    (-0.18, 0.05, 0.0), (0.0, -0.28, 0.0), (0.0, -0.25, 0.0),
    (0.1, 0.0, 0.0), (0.0, -0.45, 0.0), (-0.1, 0.0, 0.0), (0.0, -0.45, 0.0),
)
WALKER_LOWER = (0, 8, 9, 10, 11)
WALKER_UPPER = (1, 2, 3, 4, 5, 6, 7)

LOWER_ROLES = frozenset({"l_hip", "l_knee", "r_hip", "r_knee"})


@dataclass(frozen=True)
class Skeleton:
    """Joint hierarchy; ``rest_offsets`` is only needed for synthesis"""
    joint_names: Tuple[str, ...]
    parents: Tuple[int, ...]
    rest_offsets: Optional[Tuple[Tuple[float, float, float], ...]] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(str(n) for n in self.joint_names))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        n = len(self.joint_names)
        if n == 0:
            raise StructureError("skeleton has no joints")
        if len(self.parents) != n:
            raise StructureError(f"{n} joint names but {len(self.parents)} parent entries")
        if len(set(self.joint_names)) != n:
            raise StructureError("joint names must be unique")
        if self.parents.count(-1) != 1:
            raise StructureError(f"expected exactly one root, found {self.parents.count(-1)}")
        for joint, parent in enumerate(self.parents):
            if parent != -1 and not 0 <= parent < n:
                raise StructureError(f"joint {joint} has invalid parent {parent}")
            if parent == joint:
                raise StructureError(f"joint {joint} is its own parent")
        for joint in range(n):
            steps, cursor = 0, joint
            while self.parents[cursor] != -1:
                cursor = self.parents[cursor]
                steps += 1
                if steps > n:
                    raise StructureError(f"joint hierarchy has a cycle through joint {joint}")
        if self.rest_offsets is not None:
            offsets = tuple(tuple(float(v) for v in o) for o in self.rest_offsets)
            if len(offsets) != n or any(len(o) != 3 for o in offsets):
                raise StructureError("rest_offsets must hold one 3-vector per joint")
            object.__setattr__(self, "rest_offsets", offsets)

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    @property
    def dim(self) -> int:
        return 3 * self.joint_count

    @property
    def root_index(self) -> int:
        return self.parents.index(-1)

    def children(self, joint: int) -> List[int]:
        return [j for j, p in enumerate(self.parents) if p == joint]

    def topological_order(self) -> List[int]:
        """Joints ordered so that every parent precedes its children."""
        order, frontier = [], [self.root_index]
        while frontier:
            joint = frontier.pop(0)
            order.append(joint)
            frontier.extend(self.children(joint))
        return order


class BodyPart(str, Enum):
    PART1 = "part1"
    PART2 = "part2"


@dataclass(frozen=True)
class BodySplit:
    """Disjoint partition of the joints into the bottom-path part and the rest"""
    part1: Tuple[int, ...]
    part2: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "part1", tuple(sorted(int(j) for j in self.part1)))
        object.__setattr__(self, "part2", tuple(sorted(int(j) for j in self.part2)))
        if not self.part1 or not self.part2:
            raise StructureError("both body parts must be nonempty")
        if set(self.part1) & set(self.part2):
            raise StructureError(f"body parts overlap on joints {sorted(set(self.part1) & set(self.part2))}")
        if len(set(self.part1)) != len(self.part1) or len(set(self.part2)) != len(self.part2):
            raise StructureError("body parts contain duplicate joints")

    def joints(self, part: BodyPart | str) -> Tuple[int, ...]:
        return self.part1 if BodyPart(part) is BodyPart.PART1 else self.part2

    def columns(self, part: BodyPart | str) -> np.ndarray:
        """Pose-vector column indices (x, y, z per joint) of one part."""
        joints = np.asarray(self.joints(part), dtype=np.int64)
        return (3 * joints[:, None] + np.arange(3)[None, :]).reshape(-1)

    def validate_for(self, skeleton: Skeleton) -> None:
        if sorted(self.part1 + self.part2) != list(range(skeleton.joint_count)):
            raise StructureError(
                f"split {self.part1}/{self.part2} does not partition the {skeleton.joint_count} joints")


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """Frame-major pose matrix [L x 3N] on a skeleton"""
    skeleton: Skeleton
    frames: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise StructureError(f"frames must be a nonempty matrix, got shape {frames.shape}")
        if frames.shape[1] != self.skeleton.dim:
            raise StructureError(f"frames have {frames.shape[1]} columns, skeleton needs {self.skeleton.dim}")
        if not np.all(np.isfinite(frames)):
            raise StructureError("frames contain non-finite entries")
        if not self.fps > 0:
            raise ArgumentError(f"fps must be positive, got {self.fps}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    def joints(self) -> np.ndarray:
        """Frames reshaped to [L, N, 3]."""
        return self.frames.reshape(self.length, self.skeleton.joint_count, 3)

    def with_frames(self, frames: np.ndarray) -> "MotionSequence":
        return MotionSequence(self.skeleton, frames, self.fps)


def walker_skeleton() -> Skeleton:
    """The bundled 12-joint desk-scale skeleton."""
    return Skeleton(WALKER_JOINTS, WALKER_PARENTS, WALKER_OFFSETS)


def default_walker_split() -> BodySplit:
    """part1 = lower body (root, hips, knees), part2 = upper body."""
    return BodySplit(WALKER_LOWER, WALKER_UPPER)


# ---------------------------------------------------------------------------
# Splitting and preprocessing
# ---------------------------------------------------------------------------

def split_sequence(seq: MotionSequence, split: BodySplit, part: BodyPart | str) -> np.ndarray:
    """Column-selected copy of one body part, shape [L, 3*|part|]."""
    split.validate_for(seq.skeleton)
    return seq.frames[:, split.columns(part)].copy()


def merge_parts(part1_cols: np.ndarray, part2_cols: np.ndarray, split: BodySplit) -> np.ndarray:
    """Inverse of split_sequence: scatter both parts back into joint order."""
    part1_cols, part2_cols = np.asarray(part1_cols), np.asarray(part2_cols)
    if part1_cols.shape[0] != part2_cols.shape[0]:
        raise StructureError("parts have different frame counts")
    if part1_cols.shape[1] != 3 * len(split.part1) or part2_cols.shape[1] != 3 * len(split.part2):
        raise StructureError("part widths do not match the split")
    frames = np.empty((part1_cols.shape[0], 3 * (len(split.part1) + len(split.part2))), dtype=np.float64)
    frames[:, split.columns(BodyPart.PART1)] = part1_cols
    frames[:, split.columns(BodyPart.PART2)] = part2_cols
    return frames


def remove_global_translation(seq: MotionSequence, root_index: Optional[int] = None) -> MotionSequence:
    """Subtract the root position from every joint, frame by frame."""
    root = seq.skeleton.root_index if root_index is None else int(root_index)
    if not 0 <= root < seq.skeleton.joint_count:
        raise StructureError(f"root index {root} out of range")
    joints = seq.joints()
    centered = joints - joints[:, root:root + 1, :]
    return seq.with_frames(centered.reshape(seq.length, -1))


def linear_bridge(frames, length: Optional[int] = None):
    """
    Linear interpolation from the first to the last frame along axis -2

    Accepts numpy arrays or torch tensors with any leading batch dims.
    Endpoints are copied bitwise; frame k of n is
    first + k/(n-1) * (last - first).

    Args:
        frames: Frames [..., L, D] with L >= 2
        length: Frames in the bridge; defaults to L

    Returns:
        Bridge [..., length, D] of the input's array type
    """
    count = frames.shape[-2]
    if count < 2:
        raise ArgumentError(f"aux sequence needs at least 2 frames, got {count}")
    length = count if length is None else int(length)
    if length < 2:
        raise ArgumentError(f"aux sequence length must be at least 2, got {length}")
    first, last = frames[..., :1, :], frames[..., -1:, :]
    weights = (np.arange(length, dtype=np.float64) / (length - 1))[:, None]
    if isinstance(frames, torch.Tensor):
        weights = torch.as_tensor(weights, dtype=frames.dtype, device=frames.device)
    bridge = first + weights * (last - first)
    bridge[..., 0, :] = first[..., 0, :]
    bridge[..., -1, :] = last[..., 0, :]
    return bridge


def build_aux_sequence(future: MotionSequence, length: Optional[int] = None) -> MotionSequence:
    """Linear bridge between the first and last future frame (same length unless given)."""
    return future.with_frames(linear_bridge(future.frames, length))


def prune_skeleton(skeleton: Skeleton, keep: Sequence[int]) -> Tuple[Skeleton, Dict[int, int]]:
    """Keep a subset of joints, re-parenting each to its nearest kept ancestor.

    Returns:
        The pruned skeleton and the old-index -> new-index map
    """
    kept = sorted(set(int(j) for j in keep))
    if not kept:
        raise StructureError("cannot prune to an empty joint set")
    if skeleton.root_index not in kept:
        raise StructureError("the root joint must be kept")
    if kept[0] < 0 or kept[-1] >= skeleton.joint_count:
        raise StructureError("keep set references joints outside the skeleton")
    index_map = {old: new for new, old in enumerate(kept)}
    parents, offsets = [], []
    for old in kept:
        offset = np.array(skeleton.rest_offsets[old]) if skeleton.rest_offsets else None
        parent = skeleton.parents[old]
        while parent != -1 and parent not in index_map:
            if offset is not None:
                offset = offset + np.array(skeleton.rest_offsets[parent])
            parent = skeleton.parents[parent]
        parents.append(-1 if parent == -1 else index_map[parent])
        if offset is not None:
            offsets.append(tuple(offset.tolist()))
    pruned = Skeleton(tuple(skeleton.joint_names[j] for j in kept), tuple(parents),
                      tuple(offsets) if skeleton.rest_offsets else None)
    return pruned, index_map


def prune_sequence(seq: MotionSequence, keep: Sequence[int]) -> MotionSequence:
    pruned, index_map = prune_skeleton(seq.skeleton, keep)
    joints = seq.joints()[:, sorted(index_map), :]
    return MotionSequence(pruned, joints.reshape(seq.length, -1), seq.fps)


def window_sequence(seq: MotionSequence, H: int, T: int, stride: int = 1) -> List[Tuple[MotionSequence, MotionSequence]]:
    """Slice a long recording into (past[H], future[T]) pairs."""
    if H < 1 or T < 1 or stride < 1:
        raise ArgumentError("H, T and stride must be positive")
    pairs = []
    for start in range(0, seq.length - H - T + 1, stride):
        window = seq.frames[start:start + H + T]
        pairs.append((seq.with_frames(window[:H]), seq.with_frames(window[H:])))
    return pairs


def make_train_test_split(count: int, test_fraction: float, seed: int) -> Tuple[List[int], List[int]]:
    """Seeded disjoint train/test index lists."""
    if not 0.0 <= test_fraction < 1.0:
        raise ArgumentError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    order = np.random.default_rng(seed).permutation(count)
    n_test = int(round(count * test_fraction))
    if count > 1 and test_fraction > 0:
        n_test = min(max(n_test, 1), count - 1)
    return sorted(order[n_test:].tolist()), sorted(order[:n_test].tolist())


# ---------------------------------------------------------------------------
# Motion file format
# ---------------------------------------------------------------------------

def save_motion(seq: MotionSequence, path: Path | str) -> Path:
    """Write the canonical motion document (fps, joints, parents, frames)."""
    path = Path(path)
    document = {
        "fps": seq.fps,
        "joints": list(seq.skeleton.joint_names),
        "parents": list(seq.skeleton.parents),
        "frames": seq.frames.tolist(),
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(document, f)
            f.write("\n")
    except OSError as e:
        raise ArtifactIOError(path, f"could not write motion file: {e}") from e
    return path


def load_motion(path: Path | str) -> MotionSequence:
    """Read a motion document; walker skeletons regain their rest offsets."""
    path = Path(path)
    try:
        with open(path, 'r') as f:
            document = json.load(f)
    except OSError as e:
        raise ArtifactIOError(path, f"could not read motion file: {e}") from e
    except json.JSONDecodeError as e:
        raise ArtifactIOError(path, f"malformed motion file: {e}") from e
    missing = [key for key in ("fps", "joints", "parents", "frames") if key not in document]
    if missing:
        raise StructureError(f"motion file {path} lacks fields {missing}")
    offsets = WALKER_OFFSETS if tuple(document["joints"]) == WALKER_JOINTS else None
    skeleton = Skeleton(tuple(document["joints"]), tuple(document["parents"]), offsets)
    return MotionSequence(skeleton, np.asarray(document["frames"], dtype=np.float64), document["fps"])


# ---------------------------------------------------------------------------
# Synthetic walker
# ---------------------------------------------------------------------------

class GestureMode(str, Enum):
    NONE = "none"
    WAVE = "wave"
    REACH = "reach"
    CLAP = "clap"


@dataclass(frozen=True)
class SyntheticGaitConfig:
    """Parameters of one synthetic motion regime"""
    stride_frequency: float = 1.0
    stride_amplitude: float = 0.4
    arm_swing_amplitude: float = 0.3
    turn_rate: float = 0.0
    gesture_mode: GestureMode = GestureMode.NONE
    phase: float = 0.0
    noise_std: float = 0.0
    seed: int = 0
    gesture_frequency: float = 0.8
    gesture_phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "gesture_mode", GestureMode(self.gesture_mode))
        if self.stride_amplitude < 0 or self.arm_swing_amplitude < 0:
            raise ArgumentError("amplitudes must be non-negative")
        if not self.stride_frequency > 0 or not self.gesture_frequency > 0:
            raise ArgumentError("frequencies must be positive")
        if self.noise_std < 0:
            raise ArgumentError("noise_std must be non-negative")


LOWER_FIELDS = ("stride_frequency", "stride_amplitude", "turn_rate", "phase")
UPPER_FIELDS = ("arm_swing_amplitude", "gesture_mode", "gesture_frequency", "gesture_phase")


@dataclass(frozen=True)
class GaitConfigSampler:
    """Distribution over SyntheticGaitConfig plus the future-regime switch"""
    stride_frequency: Tuple[float, float] = (0.6, 1.6)
    stride_amplitude: Tuple[float, float] = (0.2, 0.7)
    arm_swing_amplitude: Tuple[float, float] = (0.0, 0.5)
    turn_rate: Tuple[float, float] = (-0.03, 0.03)
    gesture_frequency: Tuple[float, float] = (0.4, 1.5)
    gesture_modes: Tuple[str, ...] = tuple(m.value for m in GestureMode)
    noise_std: float = 0.0
    lower_switch_prob: float = 0.5
    upper_switch_prob: float = 0.5
    fixed_config: Optional[SyntheticGaitConfig] = None

    @classmethod
    def fixed(cls, config: SyntheticGaitConfig) -> "GaitConfigSampler":
        """Degenerate sampler that always yields ``config`` and never switches."""
        return cls(fixed_config=config, lower_switch_prob=0.0, upper_switch_prob=0.0)

    def _draw_lower(self, rng: np.random.Generator) -> dict:
        return {
            "stride_frequency": float(rng.uniform(*self.stride_frequency)),
            "stride_amplitude": float(rng.uniform(*self.stride_amplitude)),
            "turn_rate": float(rng.uniform(*self.turn_rate)),
            "phase": float(rng.uniform(0.0, 2 * np.pi)),
        }

    def _draw_upper(self, rng: np.random.Generator) -> dict:
        return {
            "arm_swing_amplitude": float(rng.uniform(*self.arm_swing_amplitude)),
            "gesture_mode": GestureMode(self.gesture_modes[int(rng.integers(len(self.gesture_modes)))]),
            "gesture_frequency": float(rng.uniform(*self.gesture_frequency)),
            "gesture_phase": float(rng.uniform(0.0, 2 * np.pi)),
        }

    def sample(self, rng: np.random.Generator) -> SyntheticGaitConfig:
        if self.fixed_config is not None:
            return self.fixed_config
        lower = self._draw_lower(rng)
        upper = self._draw_upper(rng)
        return SyntheticGaitConfig(noise_std=self.noise_std, seed=int(rng.integers(2**32)), **lower, **upper)

    def resample_future(self, config: SyntheticGaitConfig, rng: np.random.Generator) -> SyntheticGaitConfig:
        """Independently re-draw the lower and/or upper group for the future regime."""
        if self.fixed_config is not None:
            return config
        lower = self._draw_lower(rng)
        upper = self._draw_upper(rng)
        switch_lower = rng.random() < self.lower_switch_prob
        switch_upper = rng.random() < self.upper_switch_prob
        updates = {}
        if switch_lower:
            updates.update({k: v for k, v in lower.items() if k != "phase"})
        if switch_upper:
            updates.update({k: v for k, v in upper.items() if k != "gesture_phase"})
        return replace(config, **updates)


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _regime_weights(frames: int, switch_frame: Optional[int], blend_frames: int) -> np.ndarray:
    if switch_frame is None:
        return np.zeros(frames)
    t = np.arange(frames, dtype=np.float64)
    return _smoothstep((t - switch_frame + 1) / max(blend_frames, 1))


def _blend(a: float, b: float, w: np.ndarray) -> np.ndarray:
    return (1.0 - w) * a + w * b


def _gesture_angles(mode: GestureMode, psi: np.ndarray, side: str) -> Dict[str, np.ndarray]:
    """Euler-angle (xyz) offsets for spine, upper arm and forearm under a gesture."""
    zeros = np.zeros((psi.shape[0], 3))
    spine, upper_arm, forearm = zeros.copy(), zeros.copy(), zeros.copy()
    sign = 1.0 if side == "l" else -1.0
    if mode is GestureMode.WAVE and side == "r":
        upper_arm[:, 2] = -2.6
        forearm[:, 2] = 0.6 * np.sin(2 * psi)
    elif mode is GestureMode.REACH:
        spine[:, 0] = 0.25
        upper_arm[:, 0] = -1.2 - 0.3 * np.sin(psi)
    elif mode is GestureMode.CLAP:
        upper_arm[:, 0] = -1.3
        upper_arm[:, 1] = -sign * 0.6 * (0.5 + 0.5 * np.sin(2 * psi))
    return {"spine": spine, "upper_arm": upper_arm, "forearm": forearm}


def _joint_angle_tracks(skeleton: Skeleton, past: SyntheticGaitConfig, future: SyntheticGaitConfig,
                        frames: int, fps: float, weights: np.ndarray) -> np.ndarray:
    """Per-joint local Euler angles [N, L, 3] driving forward kinematics."""
    stride_freq = _blend(past.stride_frequency, future.stride_frequency, weights)
    stride_amp = _blend(past.stride_amplitude, future.stride_amplitude, weights)
    turn = _blend(past.turn_rate, future.turn_rate, weights)
    gesture_freq = _blend(past.gesture_frequency, future.gesture_frequency, weights)
    swing_amp = _blend(past.arm_swing_amplitude, future.arm_swing_amplitude, weights)

    # Phases integrate the instantaneous frequency so regime switches stay continuous.
    phi = past.phase + 2 * np.pi * np.concatenate([[0.0], np.cumsum(stride_freq[:-1])]) / fps
    psi = past.gesture_phase + 2 * np.pi * np.concatenate([[0.0], np.cumsum(gesture_freq[:-1])]) / fps
    yaw = np.concatenate([[0.0], np.cumsum(turn[:-1])])

    angles = np.zeros((skeleton.joint_count, frames, 3))
    for joint, name in enumerate(skeleton.joint_names):
        side = name[0]
        if name in ("l_hip", "r_hip"):
            angles[joint, :, 1] = yaw
        elif name in ("l_knee", "r_knee"):
            sign = 1.0 if side == "l" else -1.0
            angles[joint, :, 0] = sign * stride_amp * np.sin(phi)
            angles[joint, :, 2] = 0.15 * stride_amp * np.cos(phi)
        elif name in ("spine", "l_elbow", "r_elbow", "l_wrist", "r_wrist"):
            part = {"spine": "spine", "l_elbow": "upper_arm", "r_elbow": "upper_arm"}.get(name, "forearm")
            old = _gesture_angles(past.gesture_mode, psi, side)[part]
            new = _gesture_angles(future.gesture_mode, psi, side)[part]
            angles[joint] = (1.0 - weights)[:, None] * old + weights[:, None] * new
            if part == "upper_arm":
                sign = -1.0 if side == "l" else 1.0
                angles[joint, :, 0] += sign * swing_amp * np.sin(psi)
            elif part == "forearm":
                angles[joint, :, 0] += -0.2
    return angles


def _forward_kinematics(skeleton: Skeleton, angles: np.ndarray) -> np.ndarray:
    """Bone-rotation forward kinematics: each joint's rotation orients its own bone.

    Returns:
        Joint positions [L, N, 3] with the root at the origin
    """
    n, frames = skeleton.joint_count, angles.shape[1]
    offsets = np.asarray(skeleton.rest_offsets)
    positions = np.zeros((frames, n, 3))
    global_rot: Dict[int, Rotation] = {}
    for joint in skeleton.topological_order():
        parent = skeleton.parents[joint]
        if parent == -1:
            global_rot[joint] = Rotation.identity(frames)
            continue
        global_rot[joint] = global_rot[parent] * Rotation.from_euler('xyz', angles[joint])
        positions[:, joint] = positions[:, parent] + global_rot[joint].apply(offsets[joint])
    return positions


def synthesize_motion(skeleton: Skeleton, config: SyntheticGaitConfig, frames: int, fps: float = 30.0,
                      future_config: Optional[SyntheticGaitConfig] = None,
                      switch_frame: Optional[int] = None, blend_frames: int = 6) -> MotionSequence:
    """
    Render a synthetic motion by forward kinematics

    Args:
        skeleton: Skeleton with rest offsets
        config: Regime of the first frames
        frames: Number of frames to render
        fps: Frame rate
        future_config: Regime blended in from ``switch_frame`` on
        switch_frame: First frame of the future regime
        blend_frames: Length of the smoothstep blend between regimes

    Returns:
        Root-centered MotionSequence
    """
    if skeleton.rest_offsets is None:
        raise StructureError("synthetic motion needs a skeleton with rest offsets")
    if frames < 1:
        raise ArgumentError("frames must be positive")
    future_config = config if future_config is None else future_config
    weights = _regime_weights(frames, switch_frame if future_config is not config else None, blend_frames)
    angles = _joint_angle_tracks(skeleton, config, future_config, frames, fps, weights)
    positions = _forward_kinematics(skeleton, angles)

    if config.noise_std > 0:
        root = skeleton.root_index
        lower = [j for j, name in enumerate(skeleton.joint_names) if name in LOWER_ROLES]
        upper = [j for j, name in enumerate(skeleton.joint_names) if name not in LOWER_ROLES and j != root]
        for stream, group in ((1, lower), (2, upper)):
            if group:
                rng = np.random.default_rng([config.seed, stream])
                positions[:, group] += rng.normal(0.0, config.noise_std, size=(frames, len(group), 3))

    seq = MotionSequence(skeleton, positions.reshape(frames, -1), fps)
    return remove_global_translation(seq)


def generate_synthetic_dataset(skeleton: Skeleton, count: int, H: int, T: int,
                               config_sampler: Optional[GaitConfigSampler] = None, seed: int = 0,
                               fps: float = 30.0) -> List[Tuple[MotionSequence, MotionSequence]]:
    """
    Generate (past, future) pairs of synthetic walking motion

    Args:
        skeleton: Skeleton with rest offsets
        count: Number of pairs
        H: Past frames
        T: Future frames
        config_sampler: Distribution over regimes
        seed: Random seed; output is a pure function of the arguments
        fps: Frame rate

    Returns:
        List of (past, future) MotionSequence pairs
    """
    if H < 2 or T < 2:
        raise ArgumentError(f"H and T must be at least 2, got H={H}, T={T}")
    if count < 0:
        raise ArgumentError(f"count must be non-negative, got {count}")
    if skeleton.rest_offsets is None:
        raise StructureError("synthetic motion needs a skeleton with rest offsets")
    if count == 0:
        return []
    sampler = config_sampler or GaitConfigSampler()
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        past_config = sampler.sample(rng)
        future_config = sampler.resample_future(past_config, rng)
        seq = synthesize_motion(skeleton, past_config, H + T, fps, future_config, switch_frame=H)
        pairs.append((seq.with_frames(seq.frames[:H]), seq.with_frames(seq.frames[H:])))
    logger.info(f"Generated {count} synthetic pairs (H={H}, T={T}, seed={seed})")
    return pairs


def config_groups(config: SyntheticGaitConfig) -> Dict[str, dict]:
    """The lower/upper/shared parameter groups of a config."""
    values = {f.name: getattr(config, f.name) for f in fields(config)}
    return {
        "lower": {k: values[k] for k in LOWER_FIELDS},
        "upper": {k: values[k] for k in UPPER_FIELDS},
        "shared": {k: values[k] for k in ("noise_std", "seed")},
    }
