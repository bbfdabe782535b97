"""
Pose Validity Prior

A normalizing flow over limb-direction vectors. Each layer is
PReLU(Q R v + b) with Q a product of Householder reflections and R upper
triangular with a positive diagonal, so the layer is invertible and its
log-determinant is available in closed form.
"""
from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from torch import nn
from tqdm import tqdm

from .common import ArgumentError, StructureError, check_finite
from .motion_data import MotionSequence, Skeleton
from .neural_primitives import (
    Adam, ParameterStore, apply_checkpoint, backward, load_checkpoint, make_generator, save_checkpoint,
)

logger = logging.getLogger(__name__)

MIN_BONE_LENGTH = 1e-8
HOUSEHOLDER_EPS = 1e-12


def limb_directions(pose: torch.Tensor, skeleton: Skeleton) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Unit parent-to-joint vectors for every non-root joint

    Args:
        pose: Joint positions [..., 3N]
        skeleton: Joint hierarchy

    Returns:
        (directions [..., 3N] with a zero root block, degenerate flags [...])
    """
    pose = torch.as_tensor(pose)
    if pose.shape[-1] != skeleton.dim:
        raise StructureError(f"pose has dim {pose.shape[-1]}, skeleton needs {skeleton.dim}")
    joints = pose.reshape(*pose.shape[:-1], skeleton.joint_count, 3)
    parents = torch.as_tensor([p if p >= 0 else j for j, p in enumerate(skeleton.parents)])
    bones = joints - joints.index_select(-2, parents)
    length = bones.norm(dim=-1, keepdim=True)
    short = length < MIN_BONE_LENGTH
    is_root = torch.zeros(skeleton.joint_count, 1, dtype=torch.bool)
    is_root[skeleton.root_index] = True
    fallback = torch.tensor([0.0, 0.0, 1.0], dtype=pose.dtype).expand_as(bones)
    dirs = torch.where(short, fallback, bones / length.clamp_min(MIN_BONE_LENGTH))
    dirs = torch.where(is_root, torch.zeros_like(dirs), dirs)
    degenerate = (short & ~is_root).squeeze(-1).any(-1)
    if bool(degenerate.any()):
        logger.debug(f"{int(degenerate.sum())} pose(s) have zero-length bones; substituted (0, 0, 1)")
    return dirs.reshape(pose.shape), degenerate


class InvertibleFcLayer(nn.Module):
    """v -> PReLU(Q R v + b) with exactly orthogonal Q and positive-diagonal R"""

    def __init__(self, dim: int):
        super().__init__()
        if dim <= 0:
            raise StructureError(f"flow dim must be positive, got {dim}")
        self.dim = dim
        self.reflections = nn.Parameter(torch.zeros(dim, dim))
        self.r_upper = nn.Parameter(torch.zeros(dim, dim))
        self.log_diag = nn.Parameter(torch.zeros(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.prelu_log_slope = nn.Parameter(torch.zeros(()))

    def reset_parameters(self, generator: Optional[torch.Generator] = None, scale: float = 0.1) -> None:
        with torch.no_grad():
            self.reflections.normal_(generator=generator)
            self.r_upper.normal_(0.0, scale, generator=generator)
            self.log_diag.normal_(0.0, scale, generator=generator)
            self.bias.normal_(0.0, scale, generator=generator)
            self.prelu_log_slope.fill_(math.log(0.5))

    def orthogonal(self) -> torch.Tensor:
        """Q = H_1 ... H_d; zero reflection vectors act as the identity."""
        eye = torch.eye(self.dim, dtype=self.reflections.dtype)
        q = eye
        for v in self.reflections:
            norm2 = v.dot(v)
            if float(norm2) < HOUSEHOLDER_EPS:
                continue
            q = q @ (eye - 2.0 * torch.outer(v, v) / norm2)
        return q

    def triangular(self) -> torch.Tensor:
        return torch.triu(self.r_upper, diagonal=1) + torch.diag(torch.exp(self.log_diag))

    @property
    def slope(self) -> torch.Tensor:
        return torch.exp(self.prelu_log_slope)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if x.shape[-1] != self.dim:
            raise StructureError(f"flow layer expects dim {self.dim}, got {x.shape[-1]}")
        weight = self.orthogonal() @ self.triangular()
        pre = x @ weight.T + self.bias
        negative = pre < 0
        out = torch.where(negative, self.slope * pre, pre)
        log_det = self.log_diag.sum() + negative.sum(-1).to(x.dtype) * self.prelu_log_slope
        return out, log_det

    def inverse(self, y: torch.Tensor) -> torch.Tensor:
        pre = torch.where(y < 0, y / self.slope, y)
        rotated = (pre - self.bias) @ self.orthogonal()
        flat = rotated.reshape(-1, self.dim)
        solved = torch.linalg.solve_triangular(self.triangular(), flat.T, upper=True).T
        return solved.reshape(y.shape)


class FlowModel(nn.Module):
    """Stack of invertible FC layers mapping limb directions to a standard normal"""

    def __init__(self, dim: int, num_layers: int = 3):
        super().__init__()
        self.dim = dim
        self.layers = nn.ModuleList([InvertibleFcLayer(dim) for _ in range(num_layers)])

    @classmethod
    def identity(cls, dim: int, num_layers: int = 3) -> "FlowModel":
        return cls(dim, num_layers)

    @classmethod
    def random(cls, dim: int, generator: Optional[torch.Generator] = None, num_layers: int = 3,
               scale: float = 0.1) -> "FlowModel":
        flow = cls(dim, num_layers)
        for layer in flow.layers:
            layer.reset_parameters(generator, scale)
        return flow

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        log_det = x.new_zeros(x.shape[:-1])
        for layer in self.layers:
            x, layer_log_det = layer(x)
            log_det = log_det + layer_log_det
        return x, log_det

    def inverse(self, o: torch.Tensor) -> torch.Tensor:
        for layer in reversed(self.layers):
            o = layer.inverse(o)
        return o

    def nll(self, x: torch.Tensor) -> torch.Tensor:
        o, log_det = self(x)
        return 0.5 * self.dim * math.log(2 * math.pi) + 0.5 * o.pow(2).sum(-1) - log_det


def identity_flow(dim: int) -> FlowModel:
    return FlowModel.identity(dim)


def flow_forward(model: FlowModel, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    return model(x)


def flow_inverse(model: FlowModel, o: torch.Tensor) -> torch.Tensor:
    return model.inverse(o)


def flow_nll(model: FlowModel, x: torch.Tensor) -> torch.Tensor:
    """Per-sample negative log-likelihood under the standard-normal base."""
    return model.nll(x)


def _stack_poses(poses) -> torch.Tensor:
    if isinstance(poses, torch.Tensor):
        return poses
    if isinstance(poses, np.ndarray):
        return torch.as_tensor(poses, dtype=torch.get_default_dtype())
    items = list(poses)
    if not items:
        raise ArgumentError("no poses to score")
    frames = [item.frames if isinstance(item, MotionSequence) else item for item in items]
    tensors = [torch.as_tensor(f, dtype=torch.get_default_dtype()) if not isinstance(f, torch.Tensor) else f
               for f in frames]
    return torch.cat([t.reshape(-1, t.shape[-1]) for t in tensors], dim=0)


def validity_objective(flow: FlowModel, generated_poses, skeleton: Skeleton) -> torch.Tensor:
    """Mean flow NLL over the limb directions of every generated frame."""
    poses = _stack_poses(generated_poses)
    if poses.numel() == 0:
        raise ArgumentError("no poses to score")
    dirs, _ = limb_directions(poses.reshape(-1, poses.shape[-1]), skeleton)
    return flow.nll(dirs).mean()


def pooled_pose_directions(dataset: Sequence[Tuple[MotionSequence, MotionSequence]], skeleton: Skeleton) -> np.ndarray:
    """Limb directions of every past and future frame in the dataset, [M, 3N]."""
    if not dataset:
        raise ArgumentError("dataset is empty")
    frames = np.concatenate([np.concatenate([past.frames, future.frames]) for past, future in dataset])
    dirs, _ = limb_directions(torch.as_tensor(frames), skeleton)
    return dirs.numpy()


def train_pose_prior(flow: FlowModel, directions: np.ndarray, epochs: int = 300, lr: float = 1e-3,
                     batch_size: int = 256, seed: int = 0, log_path: Optional[Path] = None) -> List[float]:
    """
    Fit the flow to pooled limb directions by maximum likelihood

    Returns:
        Mean training NLL of every epoch
    """
    data = torch.as_tensor(directions, dtype=torch.get_default_dtype())
    if data.shape[0] == 0:
        raise ArgumentError("no poses to train on")
    store = ParameterStore.from_module(flow)
    optimizer = Adam(store, lr=lr)
    history: List[float] = []
    for epoch in tqdm(range(epochs), desc="pose prior", leave=False):
        order = torch.randperm(data.shape[0], generator=make_generator(seed, "flow", epoch))
        total, count = 0.0, 0
        for start in range(0, data.shape[0], batch_size):
            batch = data[order[start:start + batch_size]]
            loss = flow.nll(batch).mean()
            check_finite("pose prior NLL", float(loss))
            backward(loss, store)
            optimizer.step()
            total += float(loss) * batch.shape[0]
            count += batch.shape[0]
        history.append(total / count)
        logger.info(f"pose prior epoch {epoch}: nll {history[-1]:.4f}")
    if log_path is not None:
        pd.DataFrame({"epoch": range(len(history)), "nll": history}).to_csv(log_path, index=False)
    return history


def save_flow(flow: FlowModel, directory: Path | str, skeleton: Skeleton, optimizer: Optional[Adam] = None,
              **extra) -> Path:
    config = {"dim": flow.dim, "num_layers": len(flow.layers),
              "joints": list(skeleton.joint_names), "parents": list(skeleton.parents)}
    return save_checkpoint(directory, ParameterStore.from_module(flow), "pose_prior", config, optimizer, extra)


def load_flow(directory: Path | str, skeleton: Optional[Skeleton] = None) -> FlowModel:
    """Rebuild a pose prior, refusing one trained on a different skeleton."""
    checkpoint = load_checkpoint(directory)
    if checkpoint.artifact != "pose_prior":
        raise StructureError(f"{directory} holds a '{checkpoint.artifact}' artifact, not a pose prior")
    config = checkpoint.model_config
    if skeleton is not None and (config.get("joints") != list(skeleton.joint_names)
                                 or config.get("parents") != list(skeleton.parents)):
        raise StructureError(f"pose prior {directory} was trained on a different skeleton")
    flow = FlowModel(int(config["dim"]), int(config.get("num_layers", 3)))
    apply_checkpoint(ParameterStore.from_module(flow), checkpoint)
    return flow
